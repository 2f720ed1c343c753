//! Synthetic labeled datasets, Dirichlet non-IID partitioning across
//! clients, and client-to-server cluster assignment.
//!
//! The learning task is a desk-scale stand-in: Gaussian class blobs with a
//! convex classifier downstream. Every generator is a pure function of its
//! seed so datasets, partitions and therefore whole runs are reproducible
//! bit for bit.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Result, SimError};

/// A dense feature matrix (one row per sample) with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// N x F feature matrix, one row per sample.
    pub features: Array2<f64>,
    /// Class index per sample, each in `[0, num_classes)`.
    pub labels: Vec<usize>,
    /// Number of distinct classes.
    pub num_classes: usize,
}

impl LabeledDataset {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension F.
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Client-to-server map: client `i` reports to server `map[i]`.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    server_count: usize,
    map: Vec<usize>,
}

impl ClusterAssignment {
    /// Validates that the map is total, targets are in range and every
    /// server has at least one client.
    pub fn new(map: Vec<usize>, server_count: usize) -> Result<Self> {
        if server_count == 0 {
            return Err(SimError::InvalidArgument(
                "cluster assignment needs at least one server".into(),
            ));
        }
        if map.is_empty() {
            return Err(SimError::InvalidArgument(
                "cluster assignment needs at least one client".into(),
            ));
        }
        let mut seen = vec![false; server_count];
        for (client, &server) in map.iter().enumerate() {
            if server >= server_count {
                return Err(SimError::InvalidArgument(format!(
                    "client {client} assigned to server {server}, but only {server_count} servers exist"
                )));
            }
            seen[server] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(SimError::InvalidArgument(format!(
                "server {empty} has no clients"
            )));
        }
        Ok(Self { server_count, map })
    }

    pub fn client_count(&self) -> usize {
        self.map.len()
    }

    pub fn server_count(&self) -> usize {
        self.server_count
    }

    /// Server index of a client.
    pub fn server_of(&self, client: usize) -> usize {
        self.map[client]
    }

    /// Clients of one server, in ascending client order.
    pub fn clients_of(&self, server: usize) -> Vec<usize> {
        self.map
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == server)
            .map(|(c, _)| c)
            .collect()
    }
}

/// How clients are laid out over servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentPolicy {
    /// Consecutive blocks of near-equal size: with C = 50 and D = 10,
    /// server d gets clients [5d, 5d+5).
    Contiguous,
    /// Client i reports to server i mod D.
    RoundRobin,
}

/// Per-client lists of sample indices into a dataset; a partition of
/// `0..N` with every list non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    client_indices: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Validates disjointness, exact coverage of `0..total_samples`, and
    /// non-emptiness of every client list.
    pub fn new(client_indices: Vec<Vec<usize>>, total_samples: usize) -> Result<Self> {
        let mut seen = vec![false; total_samples];
        let mut covered = 0usize;
        for (client, list) in client_indices.iter().enumerate() {
            if list.is_empty() {
                return Err(SimError::InvalidArgument(format!(
                    "client {client} received an empty shard"
                )));
            }
            for &idx in list {
                if idx >= total_samples {
                    return Err(SimError::InvalidArgument(format!(
                        "sample index {idx} out of range for {total_samples} samples"
                    )));
                }
                if seen[idx] {
                    return Err(SimError::InvalidArgument(format!(
                        "sample index {idx} assigned to more than one client"
                    )));
                }
                seen[idx] = true;
                covered += 1;
            }
        }
        if covered != total_samples {
            return Err(SimError::InvalidArgument(format!(
                "partition covers {covered} of {total_samples} samples"
            )));
        }
        Ok(Self { client_indices })
    }

    pub fn client_count(&self) -> usize {
        self.client_indices.len()
    }

    /// Sample indices held by one client.
    pub fn shard(&self, client: usize) -> &[usize] {
        &self.client_indices[client]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.client_indices
    }

    /// Size of the smallest shard (relevant for batch-size validation).
    pub fn min_shard_len(&self) -> usize {
        self.client_indices.iter().map(|l| l.len()).min().unwrap_or(0)
    }

    /// Total number of samples across all shards.
    pub fn total_samples(&self) -> usize {
        self.client_indices.iter().map(|l| l.len()).sum()
    }

    /// Client weights m_i = |S_i| / |S|.
    pub fn client_weights(&self) -> Vec<f64> {
        let total = self.total_samples() as f64;
        self.client_indices
            .iter()
            .map(|l| l.len() as f64 / total)
            .collect()
    }
}

/// Deterministic Gaussian class blobs: class c has unit-covariance samples
/// around `separation * u_c`, where `u_c` cycles through signed coordinate
/// axes (axis `c mod dim`, sign flipping every `dim` classes). Samples are
/// laid out class-major: rows `[c*per_class, (c+1)*per_class)` carry label c.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(SimError::InvalidArgument(
            "synthetic data needs at least 2 classes".into(),
        ));
    }
    if dim < 1 || per_class < 1 {
        return Err(SimError::InvalidArgument(
            "synthetic data needs dim >= 1 and per_class >= 1".into(),
        ));
    }
    if !(separation > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "class separation must be positive, got {separation}"
        )));
    }
    let n = num_classes * per_class;
    let mut features = Array2::<f64>::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..num_classes {
        let axis = class % dim;
        let sign = if (class / dim) % 2 == 0 { 1.0 } else { -1.0 };
        for s in 0..per_class {
            let row = class * per_class + s;
            for col in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let mean = if col == axis { sign * separation } else { 0.0 };
                features[[row, col]] = mean + noise;
            }
            labels.push(class);
        }
    }
    Ok(LabeledDataset {
        features,
        labels,
        num_classes,
    })
}

/// Splits samples over clients with per-class Dirichlet proportions.
///
/// For each class, proportions are drawn as normalized Gamma(concentration)
/// variates (the standard Dirichlet construction) from a ChaCha8 stream
/// seeded with `seed`, then converted to integer counts with the
/// largest-remainder rule so class totals are conserved exactly. Clients
/// left empty after rounding are repaired by stealing one sample from the
/// currently largest client.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    concentration: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients < 1 {
        return Err(SimError::InvalidArgument(
            "partition needs at least one client".into(),
        ));
    }
    if !(concentration > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "dirichlet concentration must be positive, got {concentration}"
        )));
    }
    if labels.len() < num_clients {
        return Err(SimError::InvalidArgument(format!(
            "cannot give each of {num_clients} clients a non-empty shard from {} samples",
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| {
        SimError::InvalidArgument(format!("invalid gamma shape {concentration}: {e}"))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_clients];

    for class in 0..num_classes {
        let class_indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if class_indices.is_empty() {
            continue;
        }
        // Dirichlet draw as gamma ratios; redraw in the rare event of
        // underflow to an all-zero vector (possible at tiny concentration).
        let proportions = loop {
            let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum.is_finite() && sum > 0.0 {
                break draws.iter().map(|d| d / sum).collect::<Vec<f64>>();
            }
        };
        // Largest-remainder rounding: floors first, then distribute the
        // shortfall to the largest fractional parts (ties to lower client).
        let total = class_indices.len();
        let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..num_clients).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &client in order.iter().take(total - assigned) {
            counts[client] += 1;
        }
        let mut cursor = 0usize;
        for (client, &count) in counts.iter().enumerate() {
            lists[client].extend_from_slice(&class_indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Empty-client repair: move one sample from the most-loaded client
    // (ties to the lowest index) until every shard is non-empty. Possible
    // because N >= num_clients was checked above.
    while let Some(empty) = lists.iter().position(|l| l.is_empty()) {
        let donor = (0..num_clients)
            .max_by(|&a, &b| lists[a].len().cmp(&lists[b].len()).then(b.cmp(&a)))
            .expect("at least one client exists");
        let moved = lists[donor].pop().expect("donor shard is non-empty");
        lists[empty].push(moved);
    }

    PartitionPlan::new(lists, labels.len())
}

/// Lays clients out over servers.
pub fn assign_clusters(
    client_count: usize,
    server_count: usize,
    policy: AssignmentPolicy,
) -> Result<ClusterAssignment> {
    if server_count < 1 {
        return Err(SimError::InvalidArgument(
            "need at least one server".into(),
        ));
    }
    if client_count < server_count {
        return Err(SimError::InvalidArgument(format!(
            "need at least as many clients as servers ({client_count} < {server_count})"
        )));
    }
    let map = match policy {
        AssignmentPolicy::Contiguous => {
            // Near-equal consecutive blocks; the first (C mod D) servers
            // take one extra client.
            let base = client_count / server_count;
            let extra = client_count % server_count;
            let mut map = Vec::with_capacity(client_count);
            for server in 0..server_count {
                let size = base + usize::from(server < extra);
                map.extend(std::iter::repeat_n(server, size));
            }
            map
        }
        AssignmentPolicy::RoundRobin => {
            (0..client_count).map(|i| i % server_count).collect()
        }
    };
    ClusterAssignment::new(map, server_count)
}

/// Renders dataset + partition as CSV, one row per sample:
/// `index,client,class,f0,f1,...`.
pub fn export_csv(dataset: &LabeledDataset, plan: &PartitionPlan) -> Result<String> {
    if plan.total_samples() != dataset.len() {
        return Err(SimError::InvalidArgument(format!(
            "partition covers {} samples but dataset has {}",
            plan.total_samples(),
            dataset.len()
        )));
    }
    let mut owner = vec![0usize; dataset.len()];
    for (client, list) in plan.shards().iter().enumerate() {
        for &idx in list {
            owner[idx] = client;
        }
    }
    let dim = dataset.feature_dim();
    let mut out = String::from("index,client,class");
    for col in 0..dim {
        out.push_str(&format!(",f{col}"));
    }
    out.push('\n');
    for idx in 0..dataset.len() {
        out.push_str(&format!("{idx},{},{}", owner[idx], dataset.labels[idx]));
        for col in 0..dim {
            out.push_str(&format!(",{}", dataset.features[[idx, col]]));
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
