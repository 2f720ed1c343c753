//! Experiment orchestration: materializes a [`RunConfig`] into data,
//! partition, topology and run setup; executes schemes; and writes the CSV
//! artifacts (trace files, sweep tables, bound reports) plus a TOML
//! metadata sidecar with the resolved config, estimated constants, and the
//! convergence-bound breakdown.
//!
//! All output is a pure function of (config, seed, build): files are
//! written atomically, floats use Rust's shortest round-trip formatting,
//! and every random stream derives from the master seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::bounds::{
    check_learning_rate, compute_lambda, compute_v123, monotonicity_scan, convergence_bound,
    BoundParams, ScanAxis, ScanRow,
};
use crate::config::{PartitionKind, RunConfig, Scheme, TopologyKind};
use crate::data::{
    assign_clusters, dirichlet_partition, generate_synthetic, AssignmentPolicy, ClusterAssignment,
    LabeledDataset, PartitionPlan,
};
use crate::error::{Result, SimError};
use crate::learner::{estimate_constants, gradient, loss, model_dim, AssumptionConstants};
use crate::protocol::{
    run_fedavg, run_feel, run_hierfavg, run_sdfeel, AggregationSchedule, RunResult, RunSetup,
    TraceRecord,
};
use crate::rng::SeedSplitter;
use crate::topology::{build_mixing_matrix, ClusterSizes, MixingMatrix, ServerGraph};

/// Version plus a short commit hash, stamped at compile time.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("SDFEEL_BUILD_ID"));

/// A fully materialized experiment: everything the runners borrow.
#[derive(Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub plan: PartitionPlan,
    pub assignment: ClusterAssignment,
    pub graph: ServerGraph,
    pub mixing: MixingMatrix,
}

/// Builds datasets, partition, cluster assignment and gossip topology from
/// a validated config. Deterministic in (config, seed).
pub fn build_experiment(config: &RunConfig) -> Result<Experiment> {
    config.validate()?;
    let splitter = SeedSplitter::new(config.seed);
    let d = &config.data;
    let train = generate_synthetic(
        d.classes,
        d.features,
        d.train_per_class,
        d.separation,
        splitter.data_seed(),
    )?;
    let test = generate_synthetic(
        d.classes,
        d.features,
        d.test_per_class,
        d.separation,
        splitter.test_seed(),
    )?;
    let plan = match d.partition {
        PartitionKind::Dirichlet => dirichlet_partition(
            &train.labels,
            d.clients,
            d.dirichlet_alpha,
            splitter.partition_seed(),
        )?,
        PartitionKind::Even => {
            let mut shards = vec![Vec::new(); d.clients];
            for idx in 0..train.len() {
                shards[idx % d.clients].push(idx);
            }
            PartitionPlan::new(shards, train.len())?
        }
    };
    if plan.min_shard_len() < config.training.batch_size {
        return Err(SimError::Config(format!(
            "training.batch_size = {} exceeds the smallest client shard ({} samples) \
             produced by the data.partition settings; lower the batch size, raise \
             data.train_per_class, or use partition = \"even\"",
            config.training.batch_size,
            plan.min_shard_len()
        )));
    }
    let assignment = assign_clusters(d.clients, config.topology.servers, AssignmentPolicy::Contiguous)?;
    let t = &config.topology;
    let graph = match t.kind {
        TopologyKind::Ring => ServerGraph::ring(t.servers)?,
        TopologyKind::Complete => ServerGraph::complete(t.servers)?,
        TopologyKind::Chords => {
            ServerGraph::ring_with_chords(t.servers, t.chords, splitter.topology_seed())?
        }
        TopologyKind::ErdosRenyi => {
            ServerGraph::erdos_renyi(t.servers, t.edge_probability, splitter.topology_seed())?
        }
    };
    let shard_sizes: Vec<usize> = (0..plan.client_count())
        .map(|i| plan.shard(i).len())
        .collect();
    let sizes = ClusterSizes::from_assignment(&assignment, &shard_sizes)?;
    let mixing = build_mixing_matrix(&graph, &sizes)?;
    Ok(Experiment {
        config: config.clone(),
        train,
        test,
        plan,
        assignment,
        graph,
        mixing,
    })
}

impl Experiment {
    /// The run setup shared by every scheme of this experiment.
    pub fn setup(&self) -> Result<RunSetup<'_>> {
        let c = &self.config;
        Ok(RunSetup {
            train: &self.train,
            test: &self.test,
            plan: &self.plan,
            assignment: &self.assignment,
            sched: AggregationSchedule::new(c.schedule.tau1, c.schedule.tau2, c.schedule.alpha)?,
            eta: c.training.eta,
            batch_size: c.training.batch_size,
            total_iterations: c.training.iterations,
            keep_probability: c.training.keep_probability,
            latency: c.latency,
            trace_every: c.trace_every,
            feel_participants: c.training.feel_participants,
            master_seed: c.seed,
        })
    }

    /// Runs one concrete scheme.
    pub fn run(&self, scheme: Scheme) -> Result<RunResult> {
        let setup = self.setup()?;
        match scheme {
            Scheme::Sdfeel => run_sdfeel(&setup, &self.mixing, false),
            Scheme::Fedavg => run_fedavg(&setup),
            Scheme::Feel => run_feel(&setup),
            Scheme::Hierfavg => run_hierfavg(&setup),
            Scheme::All => Err(SimError::InvalidArgument(
                "expand scheme = all before running".into(),
            )),
        }
    }

}

/// Renders trace records as CSV with the documented column order.
pub fn trace_csv(records: &[TraceRecord]) -> String {
    let mut out =
        String::from("scheme,k,sim_time_s,train_loss,test_acc,consensus_E_k,grad_sq_norm,seed\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scheme,
            r.k,
            r.sim_time_s,
            r.train_loss,
            r.test_acc,
            r.consensus_e_k,
            r.grad_sq_norm,
            r.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Writes a file atomically: to a sibling temp path first, then rename.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct ConstantsMeta {
    l: f64,
    sigma: f64,
    kappa: f64,
    /// Estimated initial optimality gap: loss at the zero model minus the
    /// loss after `estimation.delta_steps` full-gradient steps at 1/l.
    delta: f64,
}

#[derive(Serialize)]
struct BoundMeta {
    zeta: f64,
    admissible: bool,
    first_condition: f64,
    second_condition: f64,
    lambda: f64,
    v1: f64,
    v2: f64,
    v3: f64,
    optimality_term: f64,
    noise_term: f64,
    consensus_noise_term: f64,
    divergence_term: f64,
    rhs_total: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    build_id: &'static str,
    config: &'a RunConfig,
    constants: ConstantsMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<BoundMeta>,
}

/// Full-gradient descent from the zero model at step size 1/l; the loss
/// drop estimates the initial optimality gap.
fn estimate_delta(train: &LabeledDataset, l: f64, steps: usize) -> Result<f64> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(SimError::Numerical(format!(
            "cannot estimate the optimality gap with smoothness estimate {l}"
        )));
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let dim = model_dim(train.feature_dim(), train.num_classes);
    let mut w = vec![0.0_f64; dim];
    let start = loss(&w, train, &all)?;
    let step = 1.0 / l;
    for _ in 0..steps {
        let g = gradient(&w, train, &all)?;
        for (wi, gi) in w.iter_mut().zip(g.iter()) {
            *wi -= step * gi;
        }
    }
    let end = loss(&w, train, &all)?;
    Ok((start - end).max(0.0))
}

/// Estimated constants plus the bound breakdown for this experiment.
fn analyze(exp: &Experiment) -> Result<(ConstantsMeta, Option<BoundMeta>)> {
    let c = &exp.config;
    let splitter = SeedSplitter::new(c.seed);
    let constants = estimate_constants(
        &exp.train,
        &exp.plan,
        c.estimation.probe_points,
        c.training.batch_size,
        splitter.probe_seed(),
    )?;
    let delta = estimate_delta(&exp.train, constants.l, c.estimation.delta_steps)?;
    let meta = ConstantsMeta {
        l: constants.l,
        sigma: constants.sigma,
        kappa: constants.kappa,
        delta,
    };
    if c.training.eta <= 0.0 {
        return Ok((meta, None));
    }
    let params = BoundParams {
        zeta: exp.mixing.zeta(),
        alpha: c.schedule.alpha,
        tau1: c.schedule.tau1,
        tau2: c.schedule.tau2,
        eta: c.training.eta,
        k: c.training.iterations,
        constants: AssumptionConstants {
            l: constants.l,
            sigma: constants.sigma,
            kappa: constants.kappa,
        },
        weights: exp.plan.client_weights(),
        delta,
    };
    let check = check_learning_rate(&params)?;
    let bound = if check.admissible {
        let b = convergence_bound(&params)?;
        BoundMeta {
            zeta: params.zeta,
            admissible: true,
            first_condition: check.first_condition,
            second_condition: check.second_condition,
            lambda: b.lambda,
            v1: b.v1,
            v2: b.v2,
            v3: b.v3,
            optimality_term: b.optimality_term,
            noise_term: b.noise_term,
            consensus_noise_term: b.consensus_noise_term,
            divergence_term: b.divergence_term,
            rhs_total: b.rhs_total,
        }
    } else {
        let lambda = compute_lambda(params.zeta, params.alpha)?;
        let v3 = compute_v123(
            params.zeta,
            params.alpha,
            params.tau1,
            params.tau2,
            params.eta,
            params.constants.l,
        )
        .map(|(_, _, v3)| v3)
        .unwrap_or(f64::NAN);
        BoundMeta {
            zeta: params.zeta,
            admissible: false,
            first_condition: check.first_condition,
            second_condition: check.second_condition,
            lambda,
            v1: f64::NAN,
            v2: f64::NAN,
            v3,
            optimality_term: f64::NAN,
            noise_term: f64::NAN,
            consensus_noise_term: f64::NAN,
            divergence_term: f64::NAN,
            rhs_total: f64::NAN,
        }
    };
    Ok((meta, Some(bound)))
}

/// Runs the configured scheme(s), writing one `trace_<scheme>.csv` per
/// scheme plus a `metadata.toml` sidecar. Returns the written paths.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let exp = build_experiment(config)?;
    let out_dir = PathBuf::from(&config.out_dir);
    let mut written = Vec::new();
    for scheme in config.scheme.expand() {
        let result = exp.run(scheme)?;
        let path = out_dir.join(format!("trace_{}.csv", scheme.name()));
        write_atomic(&path, &trace_csv(&result.trace))?;
        log::info!(
            "{}: {} trace rows -> {}",
            scheme.name(),
            result.trace.len(),
            path.display()
        );
        written.push(path);
    }
    let (constants, bound) = analyze(&exp)?;
    let metadata = Metadata {
        build_id: BUILD_ID,
        config: &exp.config,
        constants,
        bound,
    };
    let text = toml::to_string(&metadata)
        .map_err(|e| SimError::Io(std::io::Error::other(format!("metadata encoding: {e}"))))?;
    let path = out_dir.join("metadata.toml");
    write_atomic(&path, &text)?;
    written.push(path);
    Ok(written)
}

/// The knobs a sweep may turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Tau1,
    Tau2,
    Alpha,
    Beta,
    Eta,
    Topology,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Tau1 => "tau1",
            SweepAxis::Tau2 => "tau2",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Eta => "eta",
            SweepAxis::Topology => "topology",
        }
    }

    /// Returns the base config with this axis set to the given value.
    pub fn apply(&self, base: &RunConfig, token: &str) -> Result<RunConfig> {
        let mut config = base.clone();
        let parse_u64 = |what: &str| -> Result<u64> {
            token.parse::<u64>().map_err(|_| {
                SimError::Config(format!("{what} sweep value '{token}' is not a positive integer"))
            })
        };
        let parse_f64 = |what: &str| -> Result<f64> {
            token.parse::<f64>().map_err(|_| {
                SimError::Config(format!("{what} sweep value '{token}' is not a number"))
            })
        };
        match self {
            SweepAxis::Tau1 => config.schedule.tau1 = parse_u64("tau1")?,
            SweepAxis::Tau2 => config.schedule.tau2 = parse_u64("tau2")?,
            SweepAxis::Alpha => config.schedule.alpha = parse_u64("alpha")?,
            SweepAxis::Beta => config.training.keep_probability = parse_f64("beta")?,
            SweepAxis::Eta => config.training.eta = parse_f64("eta")?,
            SweepAxis::Topology => config.topology.kind = token.parse()?,
        }
        Ok(config)
    }
}

impl FromStr for SweepAxis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau1" => Ok(SweepAxis::Tau1),
            "tau2" => Ok(SweepAxis::Tau2),
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "eta" => Ok(SweepAxis::Eta),
            "topology" => Ok(SweepAxis::Topology),
            other => Err(SimError::Config(format!(
                "unknown sweep axis '{other}' (expected tau1, tau2, alpha, beta, eta, or topology)"
            ))),
        }
    }
}

/// Outcome of a sweep: the aggregated CSV path, per-cell trace paths, and
/// the cells that failed (reported, not fatal).
#[derive(Debug)]
pub struct SweepOutcome {
    pub aggregate: PathBuf,
    pub cell_files: Vec<PathBuf>,
    pub failures: Vec<(String, u64, SimError)>,
}

/// Runs one configuration per (value, seed) pair, writes each cell's trace
/// atomically, and aggregates all cells into one long-format CSV. A
/// failing cell is recorded and the sweep continues; the sweep as a whole
/// fails only if no cell succeeds.
pub fn run_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(SimError::Config("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(SimError::Config("sweep needs at least one seed".into()));
    }
    if base.scheme == Scheme::All {
        return Err(SimError::Config(
            "sweep requires a single scheme, not scheme = \"all\"".into(),
        ));
    }
    let out_dir = PathBuf::from(&base.out_dir);
    let mut aggregate = String::from("axis,value,seed,k,sim_time_s,train_loss,test_acc\n");
    let mut cell_files = Vec::new();
    let mut failures = Vec::new();
    let mut succeeded = 0usize;

    for token in values {
        for &seed in seeds {
            let cell = (|| -> Result<RunResult> {
                let mut config = axis.apply(base, token)?;
                config.seed = seed;
                let exp = build_experiment(&config)?;
                exp.run(config.scheme)
            })();
            match cell {
                Ok(result) => {
                    let path =
                        out_dir.join(format!("sweep_{}_{}_s{}.csv", axis.label(), token, seed));
                    write_atomic(&path, &trace_csv(&result.trace))?;
                    cell_files.push(path);
                    for r in &result.trace {
                        writeln!(
                            aggregate,
                            "{},{},{},{},{},{},{}",
                            axis.label(),
                            token,
                            seed,
                            r.k,
                            r.sim_time_s,
                            r.train_loss,
                            r.test_acc
                        )
                        .expect("writing to a String cannot fail");
                    }
                    succeeded += 1;
                }
                Err(e) => {
                    log::error!("sweep cell {}={token} seed={seed} failed: {e}", axis.label());
                    failures.push((token.clone(), seed, e));
                }
            }
        }
    }
    if succeeded == 0 {
        let (token, seed, e) = failures.pop().expect("at least one cell ran");
        return Err(SimError::InvalidState(format!(
            "every sweep cell failed; last: {}={token} seed={seed}: {e}",
            axis.label()
        )));
    }
    let aggregate_path = out_dir.join(format!("sweep_{}.csv", axis.label()));
    write_atomic(&aggregate_path, &aggregate)?;
    Ok(SweepOutcome {
        aggregate: aggregate_path,
        cell_files,
        failures,
    })
}

fn scan_rows_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("axis,value,Lambda,V1,V2,V3,rhs_total,admissible\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.axis, r.value, r.lambda, r.v1, r.v2, r.v3, r.rhs_total, r.admissible
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn bound_params_for(exp: &Experiment) -> Result<BoundParams> {
    let c = &exp.config;
    if c.training.eta <= 0.0 {
        return Err(SimError::Config(
            "training.eta must be positive to evaluate the convergence bound".into(),
        ));
    }
    let splitter = SeedSplitter::new(c.seed);
    let constants = estimate_constants(
        &exp.train,
        &exp.plan,
        c.estimation.probe_points,
        c.training.batch_size,
        splitter.probe_seed(),
    )?;
    let delta = estimate_delta(&exp.train, constants.l, c.estimation.delta_steps)?;
    Ok(BoundParams {
        zeta: exp.mixing.zeta(),
        alpha: c.schedule.alpha,
        tau1: c.schedule.tau1,
        tau2: c.schedule.tau2,
        eta: c.training.eta,
        k: c.training.iterations,
        constants,
        weights: exp.plan.client_weights(),
        delta,
    })
}

/// The bound breakdown of this configuration as a one-row CSV (plus
/// header). Inadmissible learning rates yield `admissible = false` with
/// NaN amplifiers instead of an error.
pub fn bounds_csv(config: &RunConfig) -> Result<String> {
    let exp = build_experiment(config)?;
    let params = bound_params_for(&exp)?;
    let check = check_learning_rate(&params)?;
    let header = "zeta,lambda,v1,v2,v3,admissible,optimality_term,noise_term,\
                  consensus_noise_term,divergence_term,rhs_total\n";
    let row = if check.admissible {
        let b = convergence_bound(&params)?;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            params.zeta,
            b.lambda,
            b.v1,
            b.v2,
            b.v3,
            b.admissible,
            b.optimality_term,
            b.noise_term,
            b.consensus_noise_term,
            b.divergence_term,
            b.rhs_total
        )
    } else {
        let lambda = compute_lambda(params.zeta, params.alpha)?;
        let v3 = compute_v123(
            params.zeta,
            params.alpha,
            params.tau1,
            params.tau2,
            params.eta,
            params.constants.l,
        )
        .map(|(_, _, v3)| v3)
        .unwrap_or(f64::NAN);
        format!(
            "{},{},NaN,NaN,{},false,NaN,NaN,NaN,NaN,NaN\n",
            params.zeta, lambda, v3
        )
    };
    Ok(format!("{header}{row}"))
}

/// A monotonicity scan along one bound axis, as the documented CSV table.
pub fn bounds_scan_csv(config: &RunConfig, axis: ScanAxis, grid: &[f64]) -> Result<String> {
    let exp = build_experiment(config)?;
    let params = bound_params_for(&exp)?;
    let rows = monotonicity_scan(&params, axis, grid)?;
    Ok(scan_rows_csv(&rows))
}

/// The gossip matrix of this configuration in long CSV form: one `zeta`
/// row, one `eigenvalue` row per server (descending), and one `p` row per
/// matrix entry.
pub fn topology_csv(config: &RunConfig) -> Result<String> {
    let exp = build_experiment(config)?;
    let mut out = String::from("quantity,i,j,value\n");
    writeln!(out, "zeta,,,{}", exp.mixing.zeta()).expect("writing to a String cannot fail");
    for (i, ev) in exp.mixing.eigenvalues().iter().enumerate() {
        writeln!(out, "eigenvalue,{i},,{ev}").expect("writing to a String cannot fail");
    }
    let p = exp.mixing.matrix();
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            writeln!(out, "p,{i},{j},{}", p[[i, j]]).expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}
