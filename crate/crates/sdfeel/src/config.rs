//! Typed run configuration: TOML with dotted sections, defaults matching
//! the reference experimental setup, and cross-field validation. Every key
//! is optional; an empty file yields the documented default run (50
//! clients over a ring of 10 servers, tau1 = 2, tau2 = 1, alpha = 5,
//! batch 10, eta 0.01).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::latency::LatencyConstants;

/// Which training protocol to run; `all` runs every scheme on the same
/// data partition and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sdfeel,
    Fedavg,
    Feel,
    Hierfavg,
    All,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Sdfeel => "sdfeel",
            Scheme::Fedavg => "fedavg",
            Scheme::Feel => "feel",
            Scheme::Hierfavg => "hierfavg",
            Scheme::All => "all",
        }
    }

    /// The concrete schemes this choice expands to.
    pub fn expand(&self) -> Vec<Scheme> {
        match self {
            Scheme::All => vec![Scheme::Sdfeel, Scheme::Fedavg, Scheme::Feel, Scheme::Hierfavg],
            single => vec![*single],
        }
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdfeel" => Ok(Scheme::Sdfeel),
            "fedavg" => Ok(Scheme::Fedavg),
            "feel" => Ok(Scheme::Feel),
            "hierfavg" => Ok(Scheme::Hierfavg),
            "all" => Ok(Scheme::All),
            other => Err(SimError::Config(format!(
                "unknown scheme '{other}' (expected sdfeel, fedavg, feel, hierfavg, or all)"
            ))),
        }
    }
}

/// Shape of the edge-server graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
    Chords,
    ErdosRenyi,
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Complete => "complete",
            TopologyKind::Chords => "chords",
            TopologyKind::ErdosRenyi => "erdos_renyi",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "complete" => Ok(TopologyKind::Complete),
            "chords" => Ok(TopologyKind::Chords),
            "erdos_renyi" => Ok(TopologyKind::ErdosRenyi),
            other => Err(SimError::Config(format!(
                "unknown topology '{other}' (expected ring, complete, chords, or erdos_renyi)"
            ))),
        }
    }
}

/// How training samples are split across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Label-skewed split: per-class Dirichlet draw over clients.
    Dirichlet,
    /// Round-robin by sample index; near-IID and immune to tiny shards.
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub tau1: u64,
    pub tau2: u64,
    pub alpha: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            tau1: 2,
            tau2: 1,
            alpha: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub eta: f64,
    pub batch_size: usize,
    /// Total local iterations K; must be a positive multiple of tau1*tau2.
    pub iterations: u64,
    /// Participation probability beta at aggregation events.
    pub keep_probability: f64,
    /// Clients scheduled per round by the single-edge-server baseline.
    pub feel_participants: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            batch_size: 10,
            iterations: 120,
            keep_probability: 1.0,
            feel_participants: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    /// Number of edge servers D.
    pub servers: usize,
    /// Extra edges on top of the ring; used only when kind = "chords".
    pub chords: usize,
    /// Edge probability; used only when kind = "erdos_renyi".
    pub edge_probability: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Ring,
            servers: 10,
            chords: 2,
            edge_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of clients C.
    pub clients: usize,
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Distance between class centers, in units of the noise scale.
    pub separation: f64,
    pub partition: PartitionKind,
    /// Dirichlet concentration; smaller means more label skew.
    pub dirichlet_alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clients: 50,
            classes: 10,
            features: 16,
            train_per_class: 200,
            test_per_class: 50,
            separation: 3.0,
            partition: PartitionKind::Dirichlet,
            dirichlet_alpha: 0.5,
        }
    }
}

/// Knobs for the constants estimator and the optimality-gap reference
/// recorded in the metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Random probe points for the smoothness/non-IIDness estimates.
    pub probe_points: usize,
    /// Full-gradient descent steps used to estimate the initial
    /// optimality gap Delta.
    pub delta_steps: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            probe_points: 8,
            delta_steps: 5000,
        }
    }
}

/// A complete run description. All keys are optional in the TOML file;
/// unknown keys are rejected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub seed: u64,
    pub out_dir: String,
    /// Evaluate the trace every this many iterations.
    pub trace_every: u64,
    pub schedule: ScheduleConfig,
    pub training: TrainingConfig,
    pub topology: TopologyConfig,
    pub data: DataConfig,
    pub latency: LatencyConstants,
    pub estimation: EstimationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Sdfeel,
            seed: 17,
            out_dir: "out".into(),
            trace_every: 10,
            schedule: ScheduleConfig::default(),
            training: TrainingConfig::default(),
            topology: TopologyConfig::default(),
            data: DataConfig::default(),
            latency: LatencyConstants::default(),
            estimation: EstimationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Cross-field validity; error messages name every key involved.
    pub fn validate(&self) -> Result<()> {
        let period = self.schedule.tau1 * self.schedule.tau2;
        if self.schedule.tau1 < 1 || self.schedule.tau2 < 1 || self.schedule.alpha < 1 {
            return Err(SimError::Config(format!(
                "schedule.tau1, schedule.tau2 and schedule.alpha must all be >= 1, \
                 got {}, {}, {}",
                self.schedule.tau1, self.schedule.tau2, self.schedule.alpha
            )));
        }
        if self.training.iterations == 0 || self.training.iterations % period != 0 {
            return Err(SimError::Config(format!(
                "training.iterations = {} must be a positive multiple of \
                 schedule.tau1 * schedule.tau2 = {period}",
                self.training.iterations
            )));
        }
        if !(self.training.keep_probability > 0.0 && self.training.keep_probability <= 1.0) {
            return Err(SimError::Config(format!(
                "training.keep_probability = {} must lie in (0, 1]",
                self.training.keep_probability
            )));
        }
        if !(self.training.eta >= 0.0 && self.training.eta.is_finite()) {
            return Err(SimError::Config(format!(
                "training.eta = {} must be finite and non-negative",
                self.training.eta
            )));
        }
        if self.training.batch_size == 0 {
            return Err(SimError::Config("training.batch_size must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(SimError::Config("trace_every must be >= 1".into()));
        }
        if self.topology.servers < 2 {
            return Err(SimError::Config(format!(
                "topology.servers = {} must be >= 2",
                self.topology.servers
            )));
        }
        if self.data.clients < self.topology.servers {
            return Err(SimError::Config(format!(
                "data.clients = {} must be >= topology.servers = {}",
                self.data.clients, self.topology.servers
            )));
        }
        if self.training.feel_participants == 0
            || self.training.feel_participants > self.data.clients
        {
            return Err(SimError::Config(format!(
                "training.feel_participants = {} must be in 1..=data.clients = {}",
                self.training.feel_participants, self.data.clients
            )));
        }
        if self.data.classes < 2 {
            return Err(SimError::Config(format!(
                "data.classes = {} must be >= 2",
                self.data.classes
            )));
        }
        if self.data.features == 0 {
            return Err(SimError::Config("data.features must be >= 1".into()));
        }
        if self.data.train_per_class == 0 || self.data.test_per_class == 0 {
            return Err(SimError::Config(
                "data.train_per_class and data.test_per_class must be >= 1".into(),
            ));
        }
        if self.data.classes * self.data.train_per_class < self.data.clients {
            return Err(SimError::Config(format!(
                "data.classes * data.train_per_class = {} cannot cover \
                 data.clients = {} with non-empty shards",
                self.data.classes * self.data.train_per_class,
                self.data.clients
            )));
        }
        if !(self.data.separation > 0.0 && self.data.separation.is_finite()) {
            return Err(SimError::Config(format!(
                "data.separation = {} must be finite and positive",
                self.data.separation
            )));
        }
        if !(self.data.dirichlet_alpha > 0.0 && self.data.dirichlet_alpha.is_finite()) {
            return Err(SimError::Config(format!(
                "data.dirichlet_alpha = {} must be finite and positive",
                self.data.dirichlet_alpha
            )));
        }
        if self.topology.kind == TopologyKind::Chords && self.topology.chords == 0 {
            return Err(SimError::Config(
                "topology.chords must be >= 1 when topology.kind = \"chords\"".into(),
            ));
        }
        if self.topology.kind == TopologyKind::ErdosRenyi
            && !(self.topology.edge_probability > 0.0 && self.topology.edge_probability <= 1.0)
        {
            return Err(SimError::Config(format!(
                "topology.edge_probability = {} must lie in (0, 1] when \
                 topology.kind = \"erdos_renyi\"",
                self.topology.edge_probability
            )));
        }
        if self.estimation.probe_points < 2 {
            return Err(SimError::Config(format!(
                "estimation.probe_points = {} must be >= 2",
                self.estimation.probe_points
            )));
        }
        if self.estimation.delta_steps == 0 {
            return Err(SimError::Config("estimation.delta_steps must be >= 1".into()));
        }
        self.latency.validate()?;
        Ok(())
    }
}

/// Reads and validates a TOML run configuration. Missing keys take the
/// documented defaults; unknown keys are rejected by name.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        SimError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}

/// Same as [`parse_config`] on in-memory text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| SimError::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let config = parse_config_str("").unwrap();
        assert_eq!(config.data.clients, 50);
        assert_eq!(config.topology.servers, 10);
        assert_eq!(config.topology.kind, TopologyKind::Ring);
        assert_eq!(config.schedule.tau1, 2);
        assert_eq!(config.schedule.tau2, 1);
        assert_eq!(config.schedule.alpha, 5);
        assert_eq!(config.training.batch_size, 10);
        assert!((config.training.eta - 0.01).abs() < 1e-15);
        assert_eq!(config.scheme, Scheme::Sdfeel);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = parse_config_str("learning_rate = 0.1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "message was: {msg}");

        let err = parse_config_str("[training]\nbatchsize = 10").unwrap_err();
        assert!(err.to_string().contains("batchsize"));
    }

    #[test]
    fn cross_field_violations_name_both_fields() {
        let err = parse_config_str(
            "[schedule]\ntau1 = 3\ntau2 = 2\n[training]\niterations = 10",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("training.iterations"), "message was: {msg}");
        assert!(msg.contains("schedule.tau1 * schedule.tau2 = 6"), "message was: {msg}");

        let err = parse_config_str("[training]\nkeep_probability = 0.0").unwrap_err();
        assert!(err.to_string().contains("training.keep_probability"));

        let err = parse_config_str("[data]\nclients = 4").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data.clients") && msg.contains("topology.servers"));
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let config = parse_config_str(
            "seed = 3\n[schedule]\nalpha = 2\n[topology]\nkind = \"complete\"\nservers = 4",
        )
        .unwrap();
        assert_eq!(config.seed, 3);
        assert_eq!(config.schedule.alpha, 2);
        assert_eq!(config.schedule.tau1, 2, "untouched keys keep defaults");
        assert_eq!(config.topology.kind, TopologyKind::Complete);
        assert_eq!(config.data.clients, 50);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn scheme_and_topology_parse_from_str() {
        assert_eq!("all".parse::<Scheme>().unwrap(), Scheme::All);
        assert_eq!(Scheme::All.expand().len(), 4);
        assert_eq!(
            "erdos_renyi".parse::<TopologyKind>().unwrap(),
            TopologyKind::ErdosRenyi
        );
        assert!("mesh".parse::<TopologyKind>().is_err());
    }
}
