//! Edge-server graphs and the linear algebra of model aggregation:
//! Laplacian, gossip mixing matrix P, its consensus factor zeta, and the
//! selection/transition matrices that express a whole training iteration
//! as one right-multiplication of the stacked client-model matrix.
//!
//! Conventions: models are stacked as the columns of an M x C matrix W, so
//! every aggregation acts on the right. V (C x D) averages clients into
//! cluster models, B (D x C) broadcasts cluster models back, and the
//! gossip step right-multiplies the cluster stack by P. Under this
//! convention the column sums of P are 1 for any cluster sizes
//! (1^T P = 1^T, since 1^T L = 0), while row sums equal 1 only when all
//! cluster sizes are equal — that is the regime in which P is doubly
//! stochastic and symmetric.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ClusterAssignment;
use crate::error::{Result, SimError};
use crate::protocol::AggregationSchedule;
use crate::spectral::{matrix_power, sym_eigen};

/// Undirected, connected server graph with at least two nodes.
#[derive(Debug, Clone)]
pub struct ServerGraph {
    server_count: usize,
    /// Normalized edge list: each pair stored as (low, high), sorted.
    edges: Vec<(usize, usize)>,
}

impl ServerGraph {
    /// Validates no self-loops, no duplicate edges, indices in range,
    /// D >= 2 and connectivity (a disconnected graph has no usable gossip
    /// matrix: its second-smallest Laplacian eigenvalue is zero).
    pub fn new(server_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if server_count < 2 {
            return Err(SimError::InvalidTopology(format!(
                "need at least 2 servers, got {server_count}"
            )));
        }
        let mut normalized: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(SimError::InvalidTopology(format!(
                    "self-loop on server {a}"
                )));
            }
            if a >= server_count || b >= server_count {
                return Err(SimError::InvalidTopology(format!(
                    "edge ({a},{b}) references a server >= {server_count}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if normalized.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidTopology("duplicate edge".into()));
        }
        let graph = Self {
            server_count,
            edges: normalized,
        };
        if !graph.is_connected() {
            return Err(SimError::InvalidTopology(
                "graph is disconnected".into(),
            ));
        }
        Ok(graph)
    }

    /// Ring 0-1-2-...-(D-1)-0.
    pub fn ring(server_count: usize) -> Result<Self> {
        if server_count < 2 {
            return Err(SimError::InvalidTopology(format!(
                "ring needs at least 2 servers, got {server_count}"
            )));
        }
        let edges: Vec<(usize, usize)> = (0..server_count)
            .map(|i| (i, (i + 1) % server_count))
            .collect();
        // The 2-ring would duplicate its single edge; keep just one.
        let edges = if server_count == 2 { vec![(0, 1)] } else { edges };
        Self::new(server_count, &edges)
    }

    /// Complete graph on D servers.
    pub fn complete(server_count: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 0..server_count {
            for b in (a + 1)..server_count {
                edges.push((a, b));
            }
        }
        Self::new(server_count, &edges)
    }

    /// Ring plus `chords` distinct random non-ring edges drawn from a
    /// seeded stream.
    pub fn ring_with_chords(server_count: usize, chords: usize, seed: u64) -> Result<Self> {
        let ring = Self::ring(server_count)?;
        let ring_set: Vec<(usize, usize)> = ring.edges.clone();
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for a in 0..server_count {
            for b in (a + 1)..server_count {
                if !ring_set.contains(&(a, b)) {
                    candidates.push((a, b));
                }
            }
        }
        if chords > candidates.len() {
            return Err(SimError::InvalidTopology(format!(
                "requested {chords} chords but only {} non-ring pairs exist",
                candidates.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        candidates.shuffle(&mut rng);
        let mut edges = ring_set;
        edges.extend_from_slice(&candidates[..chords]);
        Self::new(server_count, &edges)
    }

    /// Erdos-Renyi G(D, p), redrawn until connected (bounded attempts).
    pub fn erdos_renyi(server_count: usize, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidArgument(format!(
                "edge probability must be in [0,1], got {p}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let mut edges = Vec::new();
            for a in 0..server_count {
                for b in (a + 1)..server_count {
                    if rng.random_bool(p) {
                        edges.push((a, b));
                    }
                }
            }
            if let Ok(graph) = Self::new(server_count, &edges) {
                return Ok(graph);
            }
        }
        Err(SimError::InvalidTopology(format!(
            "no connected draw of G({server_count}, {p}) within 1000 attempts"
        )))
    }

    pub fn server_count(&self) -> usize {
        self.server_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn is_connected(&self) -> bool {
        let mut adjacency = vec![Vec::new(); self.server_count];
        for &(a, b) in &self.edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut visited = vec![false; self.server_count];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1usize;
        while let Some(node) = stack.pop() {
            for &next in &adjacency[node] {
                if !visited[next] {
                    visited[next] = true;
                    count += 1;
                    stack.push(next);
                }
            }
        }
        count == self.server_count
    }
}

/// Per-server data mass |S~_d| and the grand total |S|.
#[derive(Debug, Clone)]
pub struct ClusterSizes {
    sizes: Vec<f64>,
    total: f64,
}

impl ClusterSizes {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(SimError::InvalidArgument(
                "every cluster must hold at least one sample".into(),
            ));
        }
        let sizes: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let total = sizes.iter().sum();
        Ok(Self { sizes, total })
    }

    /// Sums per-client sample counts into per-server masses.
    pub fn from_assignment(
        assignment: &ClusterAssignment,
        sample_sizes: &[usize],
    ) -> Result<Self> {
        if sample_sizes.len() != assignment.client_count() {
            return Err(SimError::InvalidArgument(format!(
                "{} sample counts for {} clients",
                sample_sizes.len(),
                assignment.client_count()
            )));
        }
        let mut counts = vec![0usize; assignment.server_count()];
        for (client, &size) in sample_sizes.iter().enumerate() {
            if size == 0 {
                return Err(SimError::InvalidArgument(format!(
                    "client {client} holds no samples"
                )));
            }
            counts[assignment.server_of(client)] += size;
        }
        Self::from_counts(&counts)
    }

    pub fn server_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Normalized cluster masses |S~_d| / |S| (sum to 1).
    pub fn fractions(&self) -> Vec<f64> {
        self.sizes.iter().map(|s| s / self.total).collect()
    }

    fn all_equal(&self) -> bool {
        self.sizes
            .iter()
            .all(|&s| (s - self.sizes[0]).abs() < 1e-12 * self.total.max(1.0))
    }
}

/// Gossip matrix P = I - c * L * Omega with c = 2/(lambda_1 + lambda_{D-1})
/// of L * Omega, Omega = diag(|S|/|S~_d|), plus its spectrum.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    matrix: Array2<f64>,
    /// Eigenvalues of P in descending order (real: P is similar to a
    /// symmetric matrix via Omega^{1/2}).
    eigenvalues: Vec<f64>,
    zeta: f64,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn server_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Consensus factor zeta = |lambda_2(P)|, the second-largest eigenvalue
    /// magnitude; 0 means one gossip round reaches exact averaging.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

/// Laplacian L = degree - adjacency of a valid (hence connected) graph.
///
/// Connectivity is enforced by the `ServerGraph` constructor, which is
/// where the invalid-topology error for disconnected input is raised.
pub fn laplacian(g: &ServerGraph) -> Array2<f64> {
    let d = g.server_count();
    let mut l = Array2::<f64>::zeros((d, d));
    for &(a, b) in g.edges() {
        l[[a, a]] += 1.0;
        l[[b, b]] += 1.0;
        l[[a, b]] -= 1.0;
        l[[b, a]] -= 1.0;
    }
    l
}

/// Builds the gossip matrix for a graph and cluster masses.
///
/// The spectrum of the (generally asymmetric) product L * Omega is computed
/// through the symmetric similar matrix Omega^{1/2} L Omega^{1/2}, keeping
/// the eigensolver symmetric-only. The scale 2/(lambda_1 + lambda_{D-1})
/// minimizes |lambda_2(P)| over single-parameter scalings.
pub fn build_mixing_matrix(g: &ServerGraph, sizes: &ClusterSizes) -> Result<MixingMatrix> {
    let d = g.server_count();
    if sizes.server_count() != d {
        return Err(SimError::InvalidArgument(format!(
            "{} cluster sizes for {} servers",
            sizes.server_count(),
            d
        )));
    }
    let l = laplacian(g);
    let omega: Vec<f64> = sizes.sizes().iter().map(|s| sizes.total() / s).collect();

    let mut sym = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            sym[[i, j]] = l[[i, j]] * (omega[i] * omega[j]).sqrt();
        }
    }
    let eig = sym_eigen(&sym)?;
    let lambda_1 = eig.eigenvalues[0];
    let lambda_second_smallest = eig.eigenvalues[d - 2];
    if lambda_second_smallest <= 1e-12 * lambda_1.max(1.0) {
        // Unreachable for a valid ServerGraph; connectivity implies a
        // strictly positive second-smallest eigenvalue.
        return Err(SimError::InvalidTopology(
            "algebraic connectivity is zero; graph is effectively disconnected".into(),
        ));
    }
    let scale = 2.0 / (lambda_1 + lambda_second_smallest);

    let mut p = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let identity = if i == j { 1.0 } else { 0.0 };
            p[[i, j]] = identity - scale * l[[i, j]] * omega[j];
        }
    }

    // P and I - scale * (Omega^{1/2} L Omega^{1/2}) are similar, so P's
    // eigenvalues follow directly from the symmetric spectrum.
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|lam| 1.0 - scale * lam).collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut magnitudes: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let zeta = magnitudes[1];

    // Column sums are 1 by construction (1^T L = 0) for any sizes.
    for j in 0..d {
        let col_sum: f64 = (0..d).map(|i| p[[i, j]]).sum();
        if (col_sum - 1.0).abs() > 1e-10 {
            return Err(SimError::Numerical(format!(
                "gossip matrix column {j} sums to {col_sum}, expected 1"
            )));
        }
    }
    if sizes.all_equal() {
        // Equal masses make Omega a multiple of I, so P is symmetric and
        // doubly stochastic; check the row sums too.
        for i in 0..d {
            let row_sum: f64 = (0..d).map(|j| p[[i, j]]).sum();
            if (row_sum - 1.0).abs() > 1e-10 {
                return Err(SimError::Numerical(format!(
                    "gossip matrix row {i} sums to {row_sum} despite equal cluster sizes"
                )));
            }
        }
    } else {
        log::warn!(
            "unequal cluster sizes: gossip matrix is column-stochastic but not doubly stochastic"
        );
    }

    Ok(MixingMatrix {
        matrix: p,
        eigenvalues,
        zeta,
    })
}

/// Consensus factor of a built mixing matrix (see `MixingMatrix::zeta`).
pub fn spectral_gap(p: &MixingMatrix) -> f64 {
    p.zeta()
}

/// The client-averaging and broadcast matrices of one aggregation event.
#[derive(Debug, Clone)]
pub struct SelectionMatrices {
    /// C x D: column d averages cluster d's clients with weights
    /// |S_i| / |S~_d|.
    v: Array2<f64>,
    /// D x C: column i selects the cluster model of client i's server.
    b: Array2<f64>,
}

impl SelectionMatrices {
    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn client_count(&self) -> usize {
        self.v.nrows()
    }

    pub fn server_count(&self) -> usize {
        self.v.ncols()
    }

    /// Intra-cluster aggregation + broadcast as one C x C matrix, H1 = V B.
    pub fn h1(&self) -> Array2<f64> {
        self.v.dot(&self.b)
    }

    /// Full inter-cluster event as one C x C matrix, H2 = V P^alpha B.
    pub fn h2(&self, p: &MixingMatrix, alpha: u64) -> Result<Array2<f64>> {
        if p.server_count() != self.server_count() {
            return Err(SimError::InvalidArgument(format!(
                "mixing matrix is {}x{0} but selection matrices expect {} servers",
                p.server_count(),
                self.server_count()
            )));
        }
        let p_alpha = matrix_power(p.matrix(), alpha as usize)?;
        Ok(self.v.dot(&p_alpha).dot(&self.b))
    }
}

/// Builds V and B from a cluster assignment and per-client sample counts.
pub fn build_selection_matrices(
    assignment: &ClusterAssignment,
    sample_sizes: &[usize],
) -> Result<SelectionMatrices> {
    let c = assignment.client_count();
    let d = assignment.server_count();
    if sample_sizes.len() != c {
        return Err(SimError::InvalidArgument(format!(
            "{} sample counts for {c} clients",
            sample_sizes.len()
        )));
    }
    if sample_sizes.iter().any(|&s| s == 0) {
        return Err(SimError::InvalidArgument(
            "every client must hold at least one sample".into(),
        ));
    }
    let mut cluster_mass = vec![0.0f64; d];
    for (client, &size) in sample_sizes.iter().enumerate() {
        cluster_mass[assignment.server_of(client)] += size as f64;
    }
    let mut v = Array2::<f64>::zeros((c, d));
    let mut b = Array2::<f64>::zeros((d, c));
    for client in 0..c {
        let server = assignment.server_of(client);
        v[[client, server]] = sample_sizes[client] as f64 / cluster_mass[server];
        b[[server, client]] = 1.0;
    }
    Ok(SelectionMatrices { v, b })
}

/// Client weights m_i = |S_i| / |S| as a vector.
pub fn client_weights(sample_sizes: &[usize]) -> Vec<f64> {
    let total: f64 = sample_sizes.iter().map(|&s| s as f64).sum();
    sample_sizes.iter().map(|&s| s as f64 / total).collect()
}

/// The rank-one consensus projector M = m 1^T for weights m.
pub fn consensus_projector(weights: &[f64]) -> Array2<f64> {
    let c = weights.len();
    let mut m = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        for j in 0..c {
            m[[i, j]] = weights[i];
        }
    }
    m
}

/// The C x C transition applied at the end of iteration k (1-based):
/// V P^alpha B at inter-cluster events (k divisible by tau1*tau2), V B at
/// intra-only events (k divisible by tau1), identity otherwise.
pub fn transition_matrix(
    k: u64,
    sched: &AggregationSchedule,
    sel: &SelectionMatrices,
    p: &MixingMatrix,
) -> Result<Array2<f64>> {
    if k < 1 {
        return Err(SimError::InvalidArgument(
            "iteration index starts at 1".into(),
        ));
    }
    if k % sched.global_period() == 0 {
        sel.h2(p, sched.alpha)
    } else if k % sched.tau1 == 0 {
        Ok(sel.h1())
    } else {
        Ok(Array2::<f64>::eye(sel.client_count()))
    }
}

// ---------------------------------------------------------------------------
