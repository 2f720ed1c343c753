//! Simulated wall-clock accounting: compute and link charges per training
//! event, closed-form totals for the semi-decentralized scheme, and
//! analogous totals for the baselines.
//!
//! Rounds are synchronous: clients compute in parallel (one compute charge
//! per iteration) and uplinks within a cluster ride orthogonal channels
//! (one uplink charge per aggregation, not per client). Inter-server
//! sharing rounds are sequential in alpha but parallel across servers.
//! Downlink/broadcast time is free by default; `charge_downlink` adds an
//! equal charge on every client-server or cloud hop (gossip exchanges are
//! already symmetric and are never doubled).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::protocol::AggregationSchedule;

/// Compute and channel constants. Defaults follow a measured edge setup:
/// 138.4 MFLOPs per local iteration at 10 GFLOPS, a 21,840-parameter model
/// serialized at 32 bits per parameter (698,880 bits), 5 Mbps client-server
/// links, 50 Mbps server-server links, 2.5 Mbps client-cloud links, and a
/// 5 Mbps server-cloud hop for the hierarchical baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConstants {
    /// FLOPs per local training iteration.
    pub n_mac: f64,
    /// Device compute rate, FLOP/s.
    pub c_cpu: f64,
    /// Serialized model size in bits.
    pub m_bit: f64,
    /// Client-to-edge-server rate, bit/s.
    pub r_client_server: f64,
    /// Edge-server-to-edge-server rate, bit/s.
    pub r_server_server: f64,
    /// Client-to-cloud rate, bit/s.
    pub r_client_cloud: f64,
    /// Edge-server-to-cloud rate, bit/s (hierarchical baseline only).
    pub r_server_cloud: f64,
    /// Charge broadcast/downlink hops at the same rate as uplink.
    pub charge_downlink: bool,
}

impl Default for LatencyConstants {
    fn default() -> Self {
        Self {
            n_mac: 138.4e6,
            c_cpu: 10e9,
            m_bit: 698_880.0,
            r_client_server: 5e6,
            r_server_server: 50e6,
            r_client_cloud: 2.5e6,
            r_server_cloud: 5e6,
            charge_downlink: false,
        }
    }
}

impl LatencyConstants {
    /// Rates and the compute denominator must be strictly positive; the
    /// numerators (`n_mac`, `m_bit`) may be zero, which simply makes the
    /// corresponding charge free.
    pub fn validate(&self) -> Result<()> {
        if !(self.c_cpu > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "compute rate must be positive, got {}",
                self.c_cpu
            )));
        }
        for (name, rate) in [
            ("r_client_server", self.r_client_server),
            ("r_server_server", self.r_server_server),
            ("r_client_cloud", self.r_client_cloud),
            ("r_server_cloud", self.r_server_cloud),
        ] {
            if !(rate > 0.0) {
                return Err(SimError::InvalidArgument(format!(
                    "{name} must be positive, got {rate}"
                )));
            }
        }
        if self.n_mac < 0.0 || self.m_bit < 0.0 {
            return Err(SimError::InvalidArgument(
                "n_mac and m_bit must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// 1 when downlink is free, 2 when each broadcast hop costs as much as
    /// the uplink.
    pub(crate) fn hop_factor(&self) -> f64 {
        if self.charge_downlink {
            2.0
        } else {
            1.0
        }
    }
}

/// Compute time of one local iteration, n_mac / c_cpu.
pub fn comp_latency(c: &LatencyConstants) -> f64 {
    c.n_mac / c.c_cpu
}

/// Transmission time of `m_bit` bits over a link of `rate` bit/s.
pub fn comm_latency(m_bit: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "link rate must be positive, got {rate}"
        )));
    }
    Ok(m_bit / rate)
}

/// Time breakdown of one global round (tau1 * tau2 iterations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundCharge {
    /// Local computation, tau1*tau2 iterations of n_mac/c_cpu.
    pub compute: f64,
    /// Client-server aggregation hops (tau2 of them per global round).
    pub uplink: f64,
    /// Inter-server sharing (alpha sequential exchanges) or, for cloud
    /// baselines, the cloud hop.
    pub inter: f64,
}

impl RoundCharge {
    pub fn total(&self) -> f64 {
        self.compute + self.uplink + self.inter
    }
}

/// Per-global-round charge of the semi-decentralized scheme:
/// tau2 * (tau1 * t_cmp + t_client-server) + alpha * t_server-server.
pub fn sdfeel_round(sched: &AggregationSchedule, c: &LatencyConstants) -> Result<RoundCharge> {
    c.validate()?;
    let t_cmp = comp_latency(c);
    let t_up = comm_latency(c.m_bit, c.r_client_server)? * c.hop_factor();
    let t_share = comm_latency(c.m_bit, c.r_server_server)?;
    Ok(RoundCharge {
        compute: (sched.tau1 * sched.tau2) as f64 * t_cmp,
        uplink: sched.tau2 as f64 * t_up,
        inter: sched.alpha as f64 * t_share,
    })
}

/// Total simulated time of K iterations of the semi-decentralized scheme:
/// ceil(K / (tau1*tau2)) global rounds at the per-round charge.
pub fn sdfeel_total(k: u64, sched: &AggregationSchedule, c: &LatencyConstants) -> Result<f64> {
    let rounds = k.div_ceil(sched.global_period());
    Ok(rounds as f64 * sdfeel_round(sched, c)?.total())
}

/// The baseline training schemes with closed-form time totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineScheme {
    /// Cloud-only federated averaging: every client talks to the cloud
    /// every tau1*tau2 iterations.
    FedAvg,
    /// Single-edge-server federated learning: an edge aggregation every
    /// iteration.
    Feel,
    /// Client-edge-cloud hierarchy: edge aggregation every tau1, cloud
    /// aggregation every tau1*tau2.
    HierFavg,
}

impl FromStr for BaselineScheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Self::FedAvg),
            "feel" => Ok(Self::Feel),
            "hierfavg" => Ok(Self::HierFavg),
            other => Err(SimError::InvalidArgument(format!(
                "unknown baseline scheme '{other}' (expected fedavg, feel, or hierfavg)"
            ))),
        }
    }
}

/// Per-global-round (or per-iteration, for the edge-only scheme) charge of
/// a baseline. These formulas are this simulator's construction, built by
/// analogy with the semi-decentralized accounting; the README documents
/// each derivation.
pub fn baseline_round(
    scheme: BaselineScheme,
    sched: &AggregationSchedule,
    c: &LatencyConstants,
) -> Result<RoundCharge> {
    c.validate()?;
    let t_cmp = comp_latency(c);
    let hop = c.hop_factor();
    match scheme {
        BaselineScheme::FedAvg => Ok(RoundCharge {
            compute: sched.global_period() as f64 * t_cmp,
            uplink: 0.0,
            inter: comm_latency(c.m_bit, c.r_client_cloud)? * hop,
        }),
        BaselineScheme::Feel => Ok(RoundCharge {
            compute: t_cmp,
            uplink: comm_latency(c.m_bit, c.r_client_server)? * hop,
            inter: 0.0,
        }),
        BaselineScheme::HierFavg => Ok(RoundCharge {
            compute: sched.global_period() as f64 * t_cmp,
            uplink: sched.tau2 as f64 * comm_latency(c.m_bit, c.r_client_server)? * hop,
            inter: comm_latency(c.m_bit, c.r_server_cloud)? * hop,
        }),
    }
}

/// Total simulated time of K iterations under a baseline scheme. FedAvg
/// and the hierarchical scheme aggregate every tau1*tau2 iterations; the
/// edge-only scheme aggregates every iteration and ignores the schedule's
/// periods.
pub fn baseline_total(
    scheme: BaselineScheme,
    k: u64,
    sched: &AggregationSchedule,
    c: &LatencyConstants,
) -> Result<f64> {
    let round = baseline_round(scheme, sched, c)?;
    let rounds = match scheme {
        BaselineScheme::Feel => k,
        _ => k.div_ceil(sched.global_period()),
    };
    Ok(rounds as f64 * round.total())
}

// ---------------------------------------------------------------------------
