//! Deterministic simulator and analysis toolkit for semi-decentralized
//! federated edge learning (SD-FEEL).
//!
//! Clients train locally with mini-batch SGD; edge servers aggregate their
//! cluster's models every `tau1` iterations and gossip with neighbouring
//! servers every `tau1*tau2` iterations via a spectrally optimized mixing
//! matrix. The library simulates this protocol and three baselines
//! (FedAvg, FEEL, HierFAVG), validates runs against their exact
//! matrix-evolution form, and computes the convergence-bound and
//! communication-latency quantities used to analyse them.

pub mod bounds;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod latency;
pub mod learner;
pub mod protocol;
pub mod rng;
pub mod spectral;
pub mod topology;

pub use error::{Result, SimError};
