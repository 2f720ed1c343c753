//! Training protocols: the semi-decentralized scheme and its baselines
//! (cloud-only averaging, single-edge-server learning with client
//! scheduling, and the client-edge-cloud hierarchy), plus the pooled-SGD
//! reference and the matrix-evolution replay used as the correctness
//! oracle.
//!
//! Client models are the columns of an M x C matrix W. One iteration is a
//! local mini-batch SGD step on every column followed by a linear
//! transition: identity on plain iterations, intra-cluster
//! average-and-broadcast every `tau1` iterations, and additionally `alpha`
//! gossip rounds among servers every `tau1*tau2`. Aggregations reduce in
//! ascending client order, so results are independent of any future
//! parallelism in the gradient loop.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ClusterAssignment, LabeledDataset, PartitionPlan};
use crate::error::{Result, SimError};
use crate::latency::{comm_latency, comp_latency, LatencyConstants};
use crate::learner::{accuracy, gradient, loss, model_dim};
use crate::rng::SeedSplitter;
use crate::spectral::weighted_col_norm_sq;
use crate::topology::{transition_matrix, ClusterSizes, MixingMatrix, SelectionMatrices};

/// Aggregation cadence: intra-cluster every `tau1` iterations; an
/// inter-cluster event every `tau1*tau2` iterations runs `alpha` gossip
/// rounds among servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationSchedule {
    /// Local iterations between intra-cluster aggregations.
    pub tau1: u64,
    /// Intra-cluster aggregations between inter-cluster events.
    pub tau2: u64,
    /// Gossip rounds per inter-cluster event.
    pub alpha: u64,
}

impl AggregationSchedule {
    pub fn new(tau1: u64, tau2: u64, alpha: u64) -> Result<Self> {
        if tau1 < 1 || tau2 < 1 || alpha < 1 {
            return Err(SimError::InvalidArgument(format!(
                "schedule periods must all be >= 1, got tau1={tau1}, tau2={tau2}, alpha={alpha}"
            )));
        }
        Ok(Self { tau1, tau2, alpha })
    }

    /// Iterations between inter-cluster events.
    pub fn global_period(&self) -> u64 {
        self.tau1 * self.tau2
    }
}

/// Everything a training run needs. The referenced dataset, partition and
/// assignment are shared across schemes so comparisons see identical data.
#[derive(Debug, Clone)]
pub struct RunSetup<'a> {
    pub train: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub plan: &'a PartitionPlan,
    pub assignment: &'a ClusterAssignment,
    pub sched: AggregationSchedule,
    pub eta: f64,
    pub batch_size: usize,
    /// Total local iterations K, a positive multiple of tau1*tau2.
    pub total_iterations: u64,
    /// Per-client participation probability at aggregation events; 1 means
    /// nobody ever drops and the dropout stream is never consumed.
    pub keep_probability: f64,
    pub latency: LatencyConstants,
    /// Evaluate the trace every this many iterations (the final iteration
    /// is always recorded).
    pub trace_every: u64,
    /// Clients scheduled per round by the single-edge-server baseline.
    pub feel_participants: usize,
    pub master_seed: u64,
}

impl RunSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        let period = self.sched.global_period();
        if self.total_iterations == 0 || self.total_iterations % period != 0 {
            return Err(SimError::Config(format!(
                "total_iterations = {} must be a positive multiple of tau1*tau2 = {period}",
                self.total_iterations
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.plan.min_shard_len() {
            return Err(SimError::Config(format!(
                "batch_size = {} must be in 1..={} (the smallest client shard)",
                self.batch_size,
                self.plan.min_shard_len()
            )));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(SimError::Config(format!(
                "keep_probability = {} must lie in (0, 1]",
                self.keep_probability
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(SimError::Config(format!(
                "eta = {} must be finite and non-negative",
                self.eta
            )));
        }
        if self.trace_every == 0 {
            return Err(SimError::Config("trace_every must be >= 1".into()));
        }
        if self.plan.client_count() != self.assignment.client_count() {
            return Err(SimError::Config(format!(
                "partition has {} clients but the cluster assignment has {}",
                self.plan.client_count(),
                self.assignment.client_count()
            )));
        }
        if self.plan.total_samples() != self.train.len() {
            return Err(SimError::Config(format!(
                "partition covers {} samples, training set holds {}",
                self.plan.total_samples(),
                self.train.len()
            )));
        }
        if self.test.num_classes != self.train.num_classes
            || self.test.feature_dim() != self.train.feature_dim()
        {
            return Err(SimError::Config(
                "test set shape does not match the training set".into(),
            ));
        }
        self.latency.validate()?;
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub scheme: &'static str,
    pub k: u64,
    pub sim_time_s: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    /// Consensus deviation: the m-weighted squared distance of client
    /// models from their weighted mean.
    pub consensus_e_k: f64,
    /// Squared gradient norm of the full training objective at the
    /// weighted average model.
    pub grad_sq_norm: f64,
    pub seed: u64,
}

/// Raw material for the matrix-evolution replay: the initial stacked
/// model matrix, the per-iteration gradient matrices G_k, and the
/// post-transition states W_k the run actually produced.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub initial: Array2<f64>,
    pub gradients: Vec<Array2<f64>>,
    pub states: Vec<Array2<f64>>,
}

/// A completed run: its trace, the final client-model matrix, and (when
/// requested) the recorded evolution.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub final_models: Array2<f64>,
    pub evolution: Option<Evolution>,
}

/// Epoch-style mini-batch stream for one client: the shard is shuffled,
/// consumed in disjoint batches, and reshuffled whenever fewer than a full
/// batch remains.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(shard: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > shard.len() {
            return Err(SimError::InvalidArgument(format!(
                "batch size {batch_size} must be in 1..={}",
                shard.len()
            )));
        }
        let mut sampler = Self {
            pool: shard.to_vec(),
            cursor: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sampler.pool.shuffle(&mut sampler.rng);
        Ok(sampler)
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.pool.len() {
            self.pool.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = &self.pool[self.cursor..self.cursor + self.batch_size];
        self.cursor += self.batch_size;
        batch
    }
}

/// Data-size-weighted average of one cluster's client models (columns of
/// `models`, matched with `sizes`).
pub fn intra_cluster_aggregate(models: ArrayView2<f64>, sizes: &[usize]) -> Result<Array1<f64>> {
    if models.ncols() == 0 || sizes.is_empty() {
        return Err(SimError::InvalidState(
            "cannot aggregate an empty cluster".into(),
        ));
    }
    if models.ncols() != sizes.len() {
        return Err(SimError::InvalidArgument(format!(
            "{} models for {} sizes",
            models.ncols(),
            sizes.len()
        )));
    }
    let mass: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mut out = Array1::<f64>::zeros(models.nrows());
    for (j, &size) in sizes.iter().enumerate() {
        out.scaled_add(size as f64 / mass, &models.column(j));
    }
    Ok(out)
}

/// Copies a cluster model into every listed client column.
pub fn broadcast(model: ArrayView1<f64>, clients: &[usize], w: &mut Array2<f64>) -> Result<()> {
    if model.len() != w.nrows() {
        return Err(SimError::InvalidArgument(format!(
            "model dimension {} does not match state dimension {}",
            model.len(),
            w.nrows()
        )));
    }
    for &i in clients {
        if i >= w.ncols() {
            return Err(SimError::InvalidArgument(format!(
                "client {i} out of range for {} columns",
                w.ncols()
            )));
        }
        w.column_mut(i).assign(&model);
    }
    Ok(())
}

/// `alpha` gossip rounds over the cluster-model stack (columns = servers):
/// each round replaces column d with sum_j p[j,d] * column j, i.e. one
/// right-multiplication by the mixing matrix.
pub fn inter_cluster_aggregate(
    cluster_models: &Array2<f64>,
    mixing: &MixingMatrix,
    alpha: u64,
) -> Result<Array2<f64>> {
    if alpha < 1 {
        return Err(SimError::InvalidArgument("alpha must be >= 1".into()));
    }
    if cluster_models.ncols() != mixing.server_count() {
        return Err(SimError::InvalidArgument(format!(
            "{} cluster models for a {}-server mixing matrix",
            cluster_models.ncols(),
            mixing.server_count()
        )));
    }
    let mut out = cluster_models.clone();
    for _ in 0..alpha {
        out = out.dot(mixing.matrix());
    }
    Ok(out)
}

/// Bernoulli participation: each listed client is kept independently with
/// probability `beta`, in input order. `beta = 1` keeps everyone without
/// touching the stream, so dropout-free runs are unaffected by its seed.
pub fn apply_dropout(
    participants: &[usize],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(SimError::InvalidArgument(format!(
            "keep probability must lie in (0, 1], got {beta}"
        )));
    }
    if beta == 1.0 {
        return Ok(participants.to_vec());
    }
    Ok(participants
        .iter()
        .copied()
        .filter(|_| rng.random_bool(beta))
        .collect())
}

/// Per-cluster aggregation of surviving clients, falling back to the
/// previous cluster model when a cluster has no survivors this round.
/// Survivor weights are renormalized within each cluster, so a cluster's
/// output is the size-weighted mean of whoever showed up.
pub fn cluster_aggregate_with_fallback(
    w: &Array2<f64>,
    assignment: &ClusterAssignment,
    sample_sizes: &[usize],
    survivors: &[usize],
    previous: &Array2<f64>,
) -> Result<Array2<f64>> {
    let d = assignment.server_count();
    if previous.ncols() != d || previous.nrows() != w.nrows() {
        return Err(SimError::InvalidArgument(
            "previous cluster-model stack has the wrong shape".into(),
        ));
    }
    let alive: std::collections::HashSet<usize> = survivors.iter().copied().collect();
    let mut out = Array2::<f64>::zeros((w.nrows(), d));
    for server in 0..d {
        let members: Vec<usize> = assignment
            .clients_of(server)
            .iter()
            .copied()
            .filter(|i| alive.contains(i))
            .collect();
        if members.is_empty() {
            out.column_mut(server).assign(&previous.column(server));
            continue;
        }
        let mut stack = Array2::<f64>::zeros((w.nrows(), members.len()));
        let mut sizes = Vec::with_capacity(members.len());
        for (j, &i) in members.iter().enumerate() {
            stack.column_mut(j).assign(&w.column(i));
            sizes.push(sample_sizes[i]);
        }
        let model = intra_cluster_aggregate(stack.view(), &sizes)?;
        out.column_mut(server).assign(&model);
    }
    Ok(out)
}

/// Shared run machinery: model state, batch streams, the clock, and trace
/// evaluation.
struct Engine<'a> {
    setup: &'a RunSetup<'a>,
    scheme: &'static str,
    w: Array2<f64>,
    samplers: Vec<BatchSampler>,
    dropout_rng: ChaCha8Rng,
    weights: Vec<f64>,
    m_vec: Array1<f64>,
    all_train: Vec<usize>,
    all_test: Vec<usize>,
    sample_sizes: Vec<usize>,
    clock: f64,
    trace: Vec<TraceRecord>,
    last_traced: Option<u64>,
    t_cmp: f64,
}

impl<'a> Engine<'a> {
    fn new(setup: &'a RunSetup<'a>, scheme: &'static str) -> Result<Self> {
        setup.validate()?;
        let c = setup.plan.client_count();
        let dim = model_dim(setup.train.feature_dim(), setup.train.num_classes);
        let splitter = SeedSplitter::new(setup.master_seed);
        let samplers: Vec<BatchSampler> = (0..c)
            .map(|i| BatchSampler::new(setup.plan.shard(i), setup.batch_size, splitter.client_seed(i)))
            .collect::<Result<_>>()?;
        let weights = setup.plan.client_weights();
        let mut engine = Self {
            setup,
            scheme,
            w: Array2::zeros((dim, c)),
            samplers,
            dropout_rng: ChaCha8Rng::seed_from_u64(splitter.dropout_seed()),
            m_vec: Array1::from_vec(weights.clone()),
            weights,
            all_train: (0..setup.train.len()).collect(),
            all_test: (0..setup.test.len()).collect(),
            sample_sizes: (0..c).map(|i| setup.plan.shard(i).len()).collect(),
            clock: 0.0,
            trace: Vec::new(),
            last_traced: None,
            t_cmp: comp_latency(&setup.latency),
        };
        engine.record_trace(0)?;
        Ok(engine)
    }

    /// Mini-batch gradients of every client at its current model, stacked
    /// as columns.
    fn gradient_matrix(&mut self) -> Result<Array2<f64>> {
        let mut g = Array2::<f64>::zeros(self.w.raw_dim());
        for i in 0..self.w.ncols() {
            let params = self.w.column(i).to_owned();
            let batch = self.samplers[i].next_batch().to_vec();
            let gi = gradient(params.as_slice().unwrap(), self.setup.train, &batch)?;
            g.column_mut(i).assign(&gi);
        }
        Ok(g)
    }

    /// Applies one local SGD step to every client and charges its compute
    /// time.
    fn apply_local_step(&mut self, g: &Array2<f64>) {
        self.w.scaled_add(-self.setup.eta, g);
        self.clock += self.t_cmp;
    }

    /// Clients surviving this aggregation event.
    fn survivors(&mut self) -> Result<Vec<usize>> {
        let everyone: Vec<usize> = (0..self.w.ncols()).collect();
        apply_dropout(&everyone, self.setup.keep_probability, &mut self.dropout_rng)
    }

    /// The m-weighted average model, the analysis object of the bound —
    /// well-defined between synchronization points too.
    fn average_model(&self) -> Array1<f64> {
        self.w.dot(&self.m_vec)
    }

    fn record_trace(&mut self, k: u64) -> Result<()> {
        if self.last_traced == Some(k) {
            return Ok(());
        }
        let u = self.average_model();
        let u_slice = u.as_slice().unwrap();
        let train_loss = loss(u_slice, self.setup.train, &self.all_train)?;
        let test_acc = accuracy(u_slice, self.setup.test, &self.all_test)?;
        let deviation = &self.w - &u.view().insert_axis(ndarray::Axis(1));
        let consensus_e_k = weighted_col_norm_sq(&deviation, &self.weights)?;
        let grad = gradient(u_slice, self.setup.train, &self.all_train)?;
        let grad_sq_norm = grad.iter().map(|x| x * x).sum();
        self.trace.push(TraceRecord {
            scheme: self.scheme,
            k,
            sim_time_s: self.clock,
            train_loss,
            test_acc,
            consensus_e_k,
            grad_sq_norm,
            seed: self.setup.master_seed,
        });
        self.last_traced = Some(k);
        Ok(())
    }

    fn maybe_trace(&mut self, k: u64) -> Result<()> {
        if k % self.setup.trace_every == 0 || k == self.setup.total_iterations {
            self.record_trace(k)?;
        }
        Ok(())
    }

    fn finish(self, evolution: Option<Evolution>) -> RunResult {
        RunResult {
            trace: self.trace,
            final_models: self.w,
            evolution,
        }
    }
}

/// Runs the semi-decentralized scheme: local SGD everywhere, size-weighted
/// intra-cluster aggregation + broadcast every tau1 iterations, and alpha
/// gossip rounds across servers every tau1*tau2. With `record` set, the
/// per-iteration gradient and state matrices are kept for the evolution
/// replay (meaningful for dropout-free runs).
pub fn run_sdfeel(
    setup: &RunSetup,
    mixing: &MixingMatrix,
    record: bool,
) -> Result<RunResult> {
    let mut engine = Engine::new(setup, "sdfeel")?;
    if mixing.server_count() != setup.assignment.server_count() {
        return Err(SimError::InvalidArgument(format!(
            "mixing matrix has {} servers, assignment has {}",
            mixing.server_count(),
            setup.assignment.server_count()
        )));
    }
    let d = setup.assignment.server_count();
    let mut cluster_model = Array2::<f64>::zeros((engine.w.nrows(), d));
    let t_up = comm_latency(setup.latency.m_bit, setup.latency.r_client_server)?
        * setup.latency.hop_factor();
    let t_share = comm_latency(setup.latency.m_bit, setup.latency.r_server_server)?;
    let sched = setup.sched;

    let initial = engine.w.clone();
    let mut gradients = Vec::new();
    let mut states = Vec::new();

    for k in 1..=setup.total_iterations {
        let g = engine.gradient_matrix()?;
        engine.apply_local_step(&g);
        if record {
            gradients.push(g);
        }

        if k % sched.tau1 == 0 {
            let survivors = engine.survivors()?;
            cluster_model = cluster_aggregate_with_fallback(
                &engine.w,
                setup.assignment,
                &engine.sample_sizes,
                &survivors,
                &cluster_model,
            )?;
            engine.clock += t_up;
            if k % sched.global_period() == 0 {
                cluster_model = inter_cluster_aggregate(&cluster_model, mixing, sched.alpha)?;
                engine.clock += sched.alpha as f64 * t_share;
            }
            for server in 0..d {
                broadcast(
                    cluster_model.column(server),
                    &setup.assignment.clients_of(server),
                    &mut engine.w,
                )?;
            }
        }

        if record {
            states.push(engine.w.clone());
        }
        engine.maybe_trace(k)?;
    }

    let evolution = record.then_some(Evolution {
        initial,
        gradients,
        states,
    });
    Ok(engine.finish(evolution))
}

/// Replays a recorded run purely by matrix algebra: starting from the
/// initial stack, each iteration applies W <- (W - eta*G_k) * T_k with the
/// transition matrix of that iteration. Ground truth for the simulator.
pub fn evolution_oracle(
    initial: &Array2<f64>,
    gradients: &[Array2<f64>],
    eta: f64,
    sched: &AggregationSchedule,
    sel: &SelectionMatrices,
    mixing: &MixingMatrix,
) -> Result<Vec<Array2<f64>>> {
    if initial.ncols() != sel.client_count() {
        return Err(SimError::InvalidArgument(format!(
            "initial stack has {} columns, selection matrices expect {}",
            initial.ncols(),
            sel.client_count()
        )));
    }
    let mut w = initial.clone();
    let mut states = Vec::with_capacity(gradients.len());
    for (idx, g) in gradients.iter().enumerate() {
        if g.raw_dim() != w.raw_dim() {
            return Err(SimError::InvalidArgument(format!(
                "gradient {idx} has shape {:?}, state has {:?}",
                g.shape(),
                w.shape()
            )));
        }
        let t = transition_matrix(idx as u64 + 1, sched, sel, mixing)?;
        w = (&w - &(g * eta)).dot(&t);
        states.push(w.clone());
    }
    Ok(states)
}

/// Pooled mini-batch SGD reference: one virtual node takes the m-weighted
/// average of the per-client mini-batch gradients each iteration,
/// consuming exactly the same per-client batch streams as the distributed
/// runs. Returns the model at every step, including the initial one.
pub fn run_pooled_reference(setup: &RunSetup) -> Result<Vec<Array1<f64>>> {
    setup.validate()?;
    let c = setup.plan.client_count();
    let dim = model_dim(setup.train.feature_dim(), setup.train.num_classes);
    let splitter = SeedSplitter::new(setup.master_seed);
    let mut samplers: Vec<BatchSampler> = (0..c)
        .map(|i| BatchSampler::new(setup.plan.shard(i), setup.batch_size, splitter.client_seed(i)))
        .collect::<Result<_>>()?;
    let weights = setup.plan.client_weights();
    let mut u = Array1::<f64>::zeros(dim);
    let mut states = Vec::with_capacity(setup.total_iterations as usize + 1);
    states.push(u.clone());
    for _ in 1..=setup.total_iterations {
        let mut step = Array1::<f64>::zeros(dim);
        for i in 0..c {
            let batch = samplers[i].next_batch().to_vec();
            let gi = gradient(u.as_slice().unwrap(), setup.train, &batch)?;
            step.scaled_add(weights[i], &gi);
        }
        u.scaled_add(-setup.eta, &step);
        states.push(u.clone());
    }
    Ok(states)
}

/// Cloud-only federated averaging: every tau1*tau2 iterations the cloud
/// takes the m-weighted average over surviving clients and broadcasts it
/// to everyone.
pub fn run_fedavg(setup: &RunSetup) -> Result<RunResult> {
    let mut engine = Engine::new(setup, "fedavg")?;
    let period = setup.sched.global_period();
    let t_cloud = comm_latency(setup.latency.m_bit, setup.latency.r_client_cloud)?
        * setup.latency.hop_factor();
    let everyone: Vec<usize> = (0..engine.w.ncols()).collect();
    let mut global = Array1::<f64>::zeros(engine.w.nrows());

    for k in 1..=setup.total_iterations {
        let g = engine.gradient_matrix()?;
        engine.apply_local_step(&g);

        if k % period == 0 {
            let survivors = engine.survivors()?;
            if !survivors.is_empty() {
                let mass: f64 = survivors.iter().map(|&i| engine.weights[i]).sum();
                let mut avg = Array1::<f64>::zeros(engine.w.nrows());
                for &i in &survivors {
                    avg.scaled_add(engine.weights[i] / mass, &engine.w.column(i));
                }
                global = avg;
            }
            broadcast(global.view(), &everyone, &mut engine.w)?;
            engine.clock += t_cloud;
        }
        engine.maybe_trace(k)?;
    }
    Ok(engine.finish(None))
}

/// Uniform without-replacement draw of `count` clients from the pool,
/// returned in ascending order. The pool's order is this stream's state.
pub(crate) fn schedule_participants(
    pool: &mut [usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let (chosen, _) = pool.partial_shuffle(rng, count);
    let mut picked = chosen.to_vec();
    picked.sort_unstable();
    picked
}

/// Single-edge-server baseline: all clients form one cluster; each round
/// the server schedules `feel_participants` clients uniformly at random,
/// the scheduled (and surviving) clients take one local step from the
/// current global model, and the server aggregates over them with
/// renormalized weights. Unscheduled clients stay frozen on the last
/// broadcast model.
pub fn run_feel(setup: &RunSetup) -> Result<RunResult> {
    let c = setup.plan.client_count();
    if setup.feel_participants == 0 || setup.feel_participants > c {
        return Err(SimError::Config(format!(
            "feel_participants = {} must be in 1..={c}",
            setup.feel_participants
        )));
    }
    let mut engine = Engine::new(setup, "feel")?;
    let splitter = SeedSplitter::new(setup.master_seed);
    let mut schedule_rng = ChaCha8Rng::seed_from_u64(splitter.schedule_seed());
    let mut pool: Vec<usize> = (0..c).collect();
    let everyone: Vec<usize> = (0..c).collect();
    let t_up = comm_latency(setup.latency.m_bit, setup.latency.r_client_server)?
        * setup.latency.hop_factor();
    let mut global = Array1::<f64>::zeros(engine.w.nrows());

    for k in 1..=setup.total_iterations {
        let scheduled = schedule_participants(&mut pool, setup.feel_participants, &mut schedule_rng);
        let participants = apply_dropout(
            &scheduled,
            setup.keep_probability,
            &mut engine.dropout_rng,
        )?;

        if !participants.is_empty() {
            let mass: f64 = participants.iter().map(|&i| engine.weights[i]).sum();
            let mut avg = Array1::<f64>::zeros(engine.w.nrows());
            for &i in &participants {
                let batch = engine.samplers[i].next_batch().to_vec();
                let gi = gradient(global.as_slice().unwrap(), setup.train, &batch)?;
                let mut stepped = global.clone();
                stepped.scaled_add(-setup.eta, &gi);
                avg.scaled_add(engine.weights[i] / mass, &stepped);
            }
            global = avg;
        }
        broadcast(global.view(), &everyone, &mut engine.w)?;
        engine.clock += engine.t_cmp + t_up;
        engine.maybe_trace(k)?;
    }
    Ok(engine.finish(None))
}

/// Client-edge-cloud hierarchy: intra-cluster aggregation every tau1
/// iterations exactly as in the semi-decentralized scheme, but every
/// tau1*tau2 the cloud replaces gossip with the exact mass-weighted global
/// average of the cluster models.
pub fn run_hierfavg(setup: &RunSetup) -> Result<RunResult> {
    let mut engine = Engine::new(setup, "hierfavg")?;
    let d = setup.assignment.server_count();
    let mut cluster_model = Array2::<f64>::zeros((engine.w.nrows(), d));
    let cluster_sizes = ClusterSizes::from_assignment(setup.assignment, &engine.sample_sizes)?;
    let fractions = Array1::from_vec(cluster_sizes.fractions());
    let t_up = comm_latency(setup.latency.m_bit, setup.latency.r_client_server)?
        * setup.latency.hop_factor();
    let t_cloud = comm_latency(setup.latency.m_bit, setup.latency.r_server_cloud)?
        * setup.latency.hop_factor();
    let sched = setup.sched;

    for k in 1..=setup.total_iterations {
        let g = engine.gradient_matrix()?;
        engine.apply_local_step(&g);

        if k % sched.tau1 == 0 {
            let survivors = engine.survivors()?;
            cluster_model = cluster_aggregate_with_fallback(
                &engine.w,
                setup.assignment,
                &engine.sample_sizes,
                &survivors,
                &cluster_model,
            )?;
            engine.clock += t_up;
            if k % sched.global_period() == 0 {
                let global = cluster_model.dot(&fractions);
                for server in 0..d {
                    cluster_model.column_mut(server).assign(&global);
                }
                engine.clock += t_cloud;
            }
            for server in 0..d {
                broadcast(
                    cluster_model.column(server),
                    &setup.assignment.clients_of(server),
                    &mut engine.w,
                )?;
            }
        }
        engine.maybe_trace(k)?;
    }
    Ok(engine.finish(None))
}

// ---------------------------------------------------------------------------
