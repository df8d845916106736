//! Discrete-event protocol engine: round lifecycle (downlink, edge training,
//! uplink, distillation), lagged uplinks, edge arrival/departure, teacher
//! ensembles and the temporal memory.

mod audit;
mod engine;
mod event;
mod memory;

pub use audit::{AccessLog, AccessRecord, Actor, DataTag, Purpose};
pub use engine::{
    run_phase0, run_phase1, run_phase2, run_simulation, RoundCounters, RunSummary, SimOutput,
};
pub use event::{EventKind, SimEvent};
pub use memory::{EdgeArtifact, TemporalMemory};

use crate::data::{NoiseSpec, PartitionSpec};
use crate::distill::{DistillConfig, TeacherMode};
use crate::error::{Error, Result};
use crate::nn::{Activation, TrainSchedule};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// The eight experiment variants: teacher preparation (Independent-scratch,
/// Independent, Cloned) crossed with the ensemble and memory enhancements
/// (P = plain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Variant {
    IsPP,
    IPP,
    IEP,
    IPM,
    CPP,
    CEP,
    CPM,
    CEM,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::IsPP,
        Variant::IPP,
        Variant::IEP,
        Variant::IPM,
        Variant::CPP,
        Variant::CEP,
        Variant::CPM,
        Variant::CEM,
    ];

    pub fn mode(self) -> TeacherMode {
        match self {
            Variant::IsPP => TeacherMode::Scratch,
            Variant::IPP | Variant::IEP | Variant::IPM => TeacherMode::Independent,
            Variant::CPP | Variant::CEP | Variant::CPM | Variant::CEM => TeacherMode::Cloned,
        }
    }

    pub fn ensemble_size(self) -> usize {
        match self {
            Variant::IEP | Variant::CEP | Variant::CEM => 3,
            _ => 1,
        }
    }

    pub fn memory_size(self) -> usize {
        match self {
            Variant::IPM | Variant::CPM | Variant::CEM => 3,
            _ => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::IsPP => "IsPP",
            Variant::IPP => "IPP",
            Variant::IEP => "IEP",
            Variant::IPM => "IPM",
            Variant::CPP => "CPP",
            Variant::CEP => "CEP",
            Variant::CPM => "CPM",
            Variant::CEM => "CEM",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::argument(format!(
                    "unknown variant {s:?}, expected one of IsPP/IPP/IEP/IPM/CPP/CEP/CPM/CEM"
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Synthetic benchmark description. The mixture is derived from `seed`; the
/// train and test sets are separate draws from the same mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub input_dim: usize,
    /// Sub-clusters per class; more than one makes single partitions miss
    /// whole modes, so edge data carries genuinely new information.
    pub clusters_per_class: usize,
    pub difficulty: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            class_count: 10,
            samples_per_class: 200,
            test_samples_per_class: 400,
            input_dim: 20,
            clusters_per_class: 3,
            difficulty: 0.2,
            seed: 7777,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0
            || self.samples_per_class == 0
            || self.test_samples_per_class == 0
            || self.input_dim == 0
            || self.clusters_per_class == 0
        {
            return Err(Error::argument("dataset counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::argument(format!(
                "difficulty must be in [0, 1], got {}",
                self.difficulty
            )));
        }
        Ok(())
    }
}

/// What the core does with an uplink that arrives after its expected time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagPolicy {
    /// Discard late artifacts without distilling them.
    Abort,
    /// Distill late artifacts when they arrive.
    UseOnArrival,
    /// Ignore configured delays entirely (the undelayed reference).
    NoLag,
}

/// Lag configuration: per-edge uplink delays in ticks plus the policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagSpec {
    pub policy: LagPolicy,
    /// Extra uplink delay per 1-based edge id.
    pub delays: BTreeMap<usize, u64>,
}

impl Default for LagSpec {
    fn default() -> Self {
        LagSpec {
            policy: LagPolicy::UseOnArrival,
            delays: BTreeMap::new(),
        }
    }
}

impl LagSpec {
    /// Register a lag for an edge; the engine postpones its uplink by
    /// `delay_ticks`.
    pub fn schedule_lag(&mut self, edge_id: usize, delay_ticks: u64) {
        self.delays.insert(edge_id, delay_ticks);
    }
}

/// Scripted churn: when each edge joins and (optionally) leaves.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timeline {
    pub arrivals: Vec<TimedEdge>,
    pub departures: Vec<TimedEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEdge {
    pub time: u64,
    pub edge_id: usize,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionSpec,
    /// Reporting label; also the source of `distill.mode` / `ensemble_size`
    /// / `distill.memory_size` when built via [`ScenarioConfig::for_variant`].
    pub variant: Variant,
    pub distill: DistillConfig,
    pub ensemble_size: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub core_schedule: TrainSchedule,
    pub edge_schedule: TrainSchedule,
    pub distill_schedule: TrainSchedule,
    pub lag: LagSpec,
    pub noise: NoiseSpec,
    /// Empty means every edge arrives at tick 0.
    pub timeline: Timeline,
    pub phase1_ticks: u64,
    pub distill_ticks: u64,
    /// Over-fit spike detector: trailing window and absolute jump threshold.
    pub spike_window: usize,
    pub spike_threshold: f64,
    pub master_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        // the desk-scale benchmark: small hot-batch edge runs keep the
        // ensemble members diverse, a calmer distillation phase keeps the
        // core trajectory smooth
        let core_schedule = TrainSchedule {
            base_lr: 0.01,
            ..TrainSchedule::with_epochs(40)
        };
        let edge_schedule = TrainSchedule {
            base_lr: 0.03,
            batch_size: 8,
            ..TrainSchedule::with_epochs(40)
        };
        let distill_schedule = TrainSchedule {
            base_lr: 0.007,
            ..TrainSchedule::with_epochs(40)
        };
        ScenarioConfig {
            dataset: DatasetConfig::default(),
            partition: PartitionSpec {
                holdout_fraction: 0.3,
                ..PartitionSpec::default()
            },
            variant: Variant::CEM,
            distill: DistillConfig::default(),
            ensemble_size: Variant::CEM.ensemble_size(),
            hidden_dims: vec![64, 64],
            activation: Activation::Relu,
            core_schedule,
            edge_schedule,
            distill_schedule,
            lag: LagSpec::default(),
            noise: NoiseSpec::default(),
            timeline: Timeline::default(),
            phase1_ticks: 1,
            distill_ticks: 1,
            spike_window: metrics_defaults::SPIKE_WINDOW,
            spike_threshold: metrics_defaults::SPIKE_THRESHOLD,
            master_seed: 1,
        }
    }
}

use crate::metrics as metrics_defaults;

impl ScenarioConfig {
    /// Defaults with teacher mode, ensemble size and memory size taken from
    /// the variant.
    pub fn for_variant(variant: Variant) -> Self {
        let mut cfg = ScenarioConfig {
            variant,
            ensemble_size: variant.ensemble_size(),
            ..ScenarioConfig::default()
        };
        cfg.distill.mode = variant.mode();
        cfg.distill.memory_size = variant.memory_size();
        cfg
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dataset.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.dataset.class_count);
        dims
    }

    /// Largest possible teacher set: the incoming ensemble plus a full
    /// memory.
    pub fn teacher_set_ceiling(&self) -> usize {
        self.ensemble_size + self.distill.memory_size
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.partition.validate()?;
        self.distill.validate()?;
        self.noise.validate()?;
        self.core_schedule.validate()?;
        self.edge_schedule.validate()?;
        self.distill_schedule.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::argument("ensemble_size must be at least 1"));
        }
        let k = self.partition.edge_count;
        for &edge in self.lag.delays.keys() {
            if edge == 0 || edge > k {
                return Err(Error::argument(format!(
                    "lag delay for unknown edge {edge} (have 1..={k})"
                )));
            }
        }
        for &edge in &self.noise.noisy_edge_ids {
            if edge == 0 || edge > k {
                return Err(Error::argument(format!(
                    "noisy_edge_ids entry {edge} out of range (have 1..={k})"
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.timeline.arrivals {
            if a.edge_id == 0 || a.edge_id > k {
                return Err(Error::argument(format!(
                    "timeline arrival for unknown edge {} (have 1..={k})",
                    a.edge_id
                )));
            }
            if !seen.insert(a.edge_id) {
                return Err(Error::argument(format!(
                    "edge {} arrives more than once",
                    a.edge_id
                )));
            }
        }
        for d in &self.timeline.departures {
            if d.edge_id == 0 || d.edge_id > k {
                return Err(Error::argument(format!(
                    "timeline departure for unknown edge {} (have 1..={k})",
                    d.edge_id
                )));
            }
        }
        Ok(())
    }
}
