//! The event loop executing the protocol: Phase 0 core initialization, then
//! one round per edge (downlink, edge training, uplink, distillation), with
//! timeout-driven dispatch so lagged edges never block the others.

use crate::data::{partition, DatasetPartition, LabeledSet, Mixture, NoiseSpec, NoisyBatchLoss};
use crate::distill::{
    distill_phase, prepare_teacher, TeacherMode, TeacherProvenance, TeacherSet,
};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, area_deltas, consensus, edge_transfer_score, ensemble_prediction_set,
    overfit_spike_flags, prediction_set, PredictionSet, RoundRecord,
};
use crate::nn::{train_sgd, Model, TrainReport, TrainSchedule};
use crate::seed::{derive, Stream};
use crate::sim::audit::{AccessLog, Actor, DataTag, Purpose};
use crate::sim::event::{EventKind, EventQueue, Queued, SimEvent};
use crate::sim::memory::{EdgeArtifact, TemporalMemory};
use crate::sim::{LagPolicy, ScenarioConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// Protocol conservation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCounters {
    pub downlinks: usize,
    pub uplinks: usize,
    pub distills: usize,
    pub aborted_uplinks: usize,
}

/// Compact JSON-ready digest of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub master_seed: u64,
    pub rounds_completed: usize,
    pub final_core_test_acc: f64,
    pub per_round_consensus: Vec<Option<f64>>,
    pub memory_trace: Vec<usize>,
    pub noise_p: f64,
    pub lag_policy: String,
    /// The reference model for `consensus_edge1`: the first re-collected
    /// artifact, snapshotted at its uplink.
    pub edge1_consensus_reference: String,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct SimOutput {
    pub records: Vec<RoundRecord>,
    pub trace: Vec<SimEvent>,
    pub audit: AccessLog,
    pub final_core: Model,
    pub counters: RoundCounters,
    pub summary: RunSummary,
}

/// Phase 0: train the core model on the core dataset.
pub fn run_phase0(
    core_model: &Model,
    core_data: &LabeledSet,
    schedule: &TrainSchedule,
    shuffle_seed: u64,
) -> Result<TrainReport> {
    let mut loss = crate::nn::HardLabelLoss::new(core_data.labels.clone(), core_data.class_count)?;
    train_sgd(core_model, core_data.features.view(), &mut loss, schedule, shuffle_seed)
}

/// Phase 1: train `ensemble_size` copies of the dispatched model on the edge
/// data, each under a different batch-sampling seed (the sole perturbation).
/// A noise spec marks the edge as corrupted: its labels are re-shuffled
/// batchwise at every epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_phase1(
    dispatched: &Model,
    edge_data: &LabeledSet,
    schedule: &TrainSchedule,
    ensemble_size: usize,
    master_seed: u64,
    dispatch_ordinal: u64,
    edge_id: usize,
    mode: TeacherMode,
    noise: Option<&NoiseSpec>,
) -> Result<EdgeArtifact> {
    if ensemble_size == 0 {
        return Err(Error::argument("ensemble_size must be at least 1"));
    }
    let mut models = Vec::with_capacity(ensemble_size);
    for member in 0..ensemble_size {
        let shuffle = derive(master_seed, Stream::EdgeShuffle, dispatch_ordinal, member as u64);
        let report = match noise {
            Some(spec) => {
                let mut loss =
                    NoisyBatchLoss::new(edge_data, spec.clone(), schedule.batch_size)?;
                train_sgd(dispatched, edge_data.features.view(), &mut loss, schedule, shuffle)?
            }
            None => {
                let mut loss =
                    crate::nn::HardLabelLoss::new(edge_data.labels.clone(), edge_data.class_count)?;
                train_sgd(dispatched, edge_data.features.view(), &mut loss, schedule, shuffle)?
            }
        };
        models.push(report.model);
    }
    Ok(EdgeArtifact {
        models,
        round_index: 0,
        edge_id,
        mode,
        noisy: false,
        lagged: false,
        repr_index: 0,
    })
}

/// Phase 2: distill the incoming artifact (plus the memory's teachers) into
/// the core, then push the artifact into memory. Returns the training report
/// and the number of teachers used.
pub fn run_phase2(
    core_model: &Model,
    memory: &mut TemporalMemory,
    mut incoming: EdgeArtifact,
    core_data: &LabeledSet,
    cfg: &crate::distill::DistillConfig,
    schedule: &TrainSchedule,
    shuffle_seed: u64,
) -> Result<(TrainReport, usize)> {
    let mut teachers: Vec<Model> = incoming.models.clone();
    let mut provenance: Vec<TeacherProvenance> = incoming
        .models
        .iter()
        .map(|_| TeacherProvenance {
            round_index: incoming.round_index,
            edge_id: incoming.edge_id,
            mode: incoming.mode,
        })
        .collect();
    for artifact in memory.artifacts() {
        teachers.push(artifact.representative().clone());
        provenance.push(TeacherProvenance {
            round_index: artifact.round_index,
            edge_id: artifact.edge_id,
            mode: artifact.mode,
        });
    }
    let teacher_count = teachers.len();
    let set = TeacherSet::new(teachers, provenance)?;
    let report = distill_phase(core_model, &set, core_data, cfg, schedule, shuffle_seed)?;

    // The member kept as this round's memory teacher is the one the core
    // rates best on its own data (a core-side measurement only).
    if incoming.models.len() > 1 {
        let mut best = 0;
        let mut best_acc = -1.0;
        for (i, m) in incoming.models.iter().enumerate() {
            let acc = accuracy(m, core_data)?;
            if acc > best_acc {
                best_acc = acc;
                best = i;
            }
        }
        incoming.repr_index = best;
    }
    memory.push(incoming);
    Ok((report, teacher_count))
}

struct InFlight {
    dispatched: Model,
    expected_uplink: u64,
    timed_out: bool,
    dispatch_ordinal: u64,
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    parts: DatasetPartition,
    test_set: LabeledSet,
    core: Model,
    queue: EventQueue,
    dispatch_queue: VecDeque<usize>,
    in_flight: BTreeMap<usize, InFlight>,
    pending_artifacts: VecDeque<EdgeArtifact>,
    distilling: Option<(RoundRecord, usize)>,
    memory: TemporalMemory,
    round: usize,
    records: Vec<RoundRecord>,
    trace: Vec<SimEvent>,
    audit: AccessLog,
    counters: RoundCounters,
    edge1_frozen: Option<PredictionSet>,
    dispatch_ordinal: u64,
    last_time: u64,
}

/// Execute a full scenario. Deterministic for a fixed configuration: the
/// event order is total and every random draw is derived from the seeds.
pub fn run_simulation(cfg: &ScenarioConfig) -> Result<SimOutput> {
    cfg.validate()?;

    let mixture = Mixture::with_clusters(
        cfg.dataset.class_count,
        cfg.dataset.clusters_per_class,
        cfg.dataset.input_dim,
        cfg.dataset.difficulty,
        cfg.dataset.seed,
    )?;
    let train_set = mixture.sample(cfg.dataset.samples_per_class, cfg.dataset.seed, 0);
    let test_set = mixture.sample(
        cfg.dataset.test_samples_per_class,
        derive(cfg.dataset.seed, Stream::DatasetDraw, 1, 0),
        1 << 32,
    );
    let parts = partition(&train_set, &cfg.partition)?;

    let init = Model::seeded(
        &cfg.layer_dims(),
        cfg.activation,
        derive(cfg.master_seed, Stream::PhaseZeroInit, 0, 0),
    )?;

    let mut engine = Engine {
        cfg,
        parts,
        test_set,
        core: init,
        queue: EventQueue::new(),
        dispatch_queue: VecDeque::new(),
        in_flight: BTreeMap::new(),
        pending_artifacts: VecDeque::new(),
        distilling: None,
        memory: TemporalMemory::new(cfg.distill.memory_size),
        round: 0,
        records: Vec::new(),
        trace: Vec::new(),
        audit: AccessLog::new(),
        counters: RoundCounters::default(),
        edge1_frozen: None,
        dispatch_ordinal: 0,
        last_time: 0,
    };
    engine.run()
}

impl<'a> Engine<'a> {
    fn run(mut self) -> Result<SimOutput> {
        self.phase0()?;

        // scripted timeline, or every edge at tick 0
        if self.cfg.timeline.arrivals.is_empty() {
            for edge in 1..=self.cfg.partition.edge_count {
                self.queue.schedule(0, Queued::Arrival(edge));
            }
        } else {
            for a in &self.cfg.timeline.arrivals {
                self.queue.schedule(a.time, Queued::Arrival(a.edge_id));
            }
        }
        for d in &self.cfg.timeline.departures {
            self.queue.schedule(d.time, Queued::Departure(d.edge_id));
        }

        while let Some(scheduled) = self.queue.pop() {
            assert!(
                scheduled.time >= self.last_time,
                "event queue went backwards in time"
            );
            self.last_time = scheduled.time;
            let t = scheduled.time;
            match scheduled.event {
                Queued::Arrival(edge) => self.on_arrival(edge, t)?,
                Queued::Departure(edge) => self.on_departure(edge, t),
                Queued::Uplink(edge) => self.on_uplink(edge, t)?,
                Queued::DistillDone => self.on_distill_done(t)?,
                Queued::DispatchCheck => self.on_dispatch_check(t)?,
            }
        }

        self.apply_spike_flags();
        let summary = self.build_summary();
        Ok(SimOutput {
            records: self.records,
            trace: self.trace,
            audit: self.audit,
            final_core: self.core,
            counters: self.counters,
            summary,
        })
    }

    fn phase0(&mut self) -> Result<()> {
        self.audit
            .record(0, Actor::Core, DataTag::Core, Purpose::Train);
        let report = run_phase0(
            &self.core,
            &self.parts.core,
            &self.cfg.core_schedule,
            derive(self.cfg.master_seed, Stream::PhaseZeroShuffle, 0, 0),
        )
        .map_err(|e| Error::Simulation {
            round: 0,
            edge_id: 0,
            source: Box::new(e),
        })?;
        self.core = report.model;
        self.audit
            .record(0, Actor::Evaluator, DataTag::Test, Purpose::Evaluate);
        self.audit
            .record(0, Actor::Evaluator, DataTag::Core, Purpose::Evaluate);
        self.records.push(RoundRecord {
            round: 0,
            variant: self.cfg.variant.to_string(),
            core_test_acc: accuracy(&self.core, &self.test_set)?,
            edge_test_acc: None,
            core_train_acc: accuracy(&self.core, &self.parts.core)?,
            consensus_current: None,
            consensus_edge1: None,
            delta_mutual: None,
            delta_exclusive: None,
            transfer_score: None,
            noisy_flag: false,
            spike_flag: false,
            memory_size: 0,
        });
        Ok(())
    }

    fn on_arrival(&mut self, edge: usize, t: u64) -> Result<()> {
        self.trace.push(SimEvent {
            time: t,
            kind: EventKind::EdgeArrival,
            edge_id: Some(edge),
        });
        self.dispatch_queue.push_back(edge);
        self.try_dispatch(t)
    }

    fn on_departure(&mut self, edge: usize, t: u64) {
        self.trace.push(SimEvent {
            time: t,
            kind: EventKind::EdgeDeparture,
            edge_id: Some(edge),
        });
        // edges already dispatched complete their round; undelivered ones leave
        self.dispatch_queue.retain(|&e| e != edge);
    }

    fn on_dispatch_check(&mut self, t: u64) -> Result<()> {
        for flight in self.in_flight.values_mut() {
            if flight.expected_uplink <= t {
                flight.timed_out = true;
            }
        }
        self.try_dispatch(t)
    }

    /// Dispatch the next queued edge if the core is idle: not distilling and
    /// not expecting an on-time uplink.
    fn try_dispatch(&mut self, t: u64) -> Result<()> {
        if self.distilling.is_some() {
            return Ok(());
        }
        if self.in_flight.values().any(|f| !f.timed_out) {
            return Ok(());
        }
        let Some(edge) = self.dispatch_queue.pop_front() else {
            return Ok(());
        };

        let ordinal = self.dispatch_ordinal;
        self.dispatch_ordinal += 1;
        let mode = self.cfg.distill.mode;
        let dispatched = match mode {
            TeacherMode::Cloned => self.core.clone(),
            TeacherMode::Scratch => prepare_teacher(
                &self.core,
                mode,
                derive(self.cfg.master_seed, Stream::TeacherInit, ordinal, 0),
            ),
            TeacherMode::Independent => {
                // fresh seed, then core-side training so the teacher carries
                // core knowledge without sharing the student's parameters
                let fresh = prepare_teacher(
                    &self.core,
                    mode,
                    derive(self.cfg.master_seed, Stream::TeacherInit, ordinal, 0),
                );
                self.audit
                    .record(self.round, Actor::Core, DataTag::Core, Purpose::Train);
                let report = run_phase0(
                    &fresh,
                    &self.parts.core,
                    &self.cfg.core_schedule,
                    derive(
                        self.cfg.master_seed,
                        Stream::TeacherPretrainShuffle,
                        ordinal,
                        0,
                    ),
                )
                .map_err(|e| self.sim_error(edge, e))?;
                report.model
            }
        };

        self.trace.push(SimEvent {
            time: t,
            kind: EventKind::Downlink,
            edge_id: Some(edge),
        });
        self.counters.downlinks += 1;

        let delay = if self.cfg.lag.policy == LagPolicy::NoLag {
            0
        } else {
            self.cfg.lag.delays.get(&edge).copied().unwrap_or(0)
        };
        let expected = t + self.cfg.phase1_ticks;
        self.queue.schedule(expected + delay, Queued::Uplink(edge));
        if delay > 0 {
            self.queue.schedule(expected, Queued::DispatchCheck);
        }
        self.in_flight.insert(
            edge,
            InFlight {
                dispatched,
                expected_uplink: expected,
                timed_out: false,
                dispatch_ordinal: ordinal,
            },
        );
        Ok(())
    }

    fn on_uplink(&mut self, edge: usize, t: u64) -> Result<()> {
        let flight = self
            .in_flight
            .remove(&edge)
            .expect("uplink for an edge that was never dispatched");
        self.trace.push(SimEvent {
            time: t,
            kind: EventKind::Uplink,
            edge_id: Some(edge),
        });
        self.counters.uplinks += 1;

        let lagged = t > flight.expected_uplink;
        if lagged && self.cfg.lag.policy == LagPolicy::Abort {
            self.counters.aborted_uplinks += 1;
            return self.try_dispatch(t);
        }

        let noisy = self.cfg.noise.p > 0.0 && self.cfg.noise.noisy_edge_ids.contains(&edge);
        let edge_parts = &self.parts.edges[edge - 1];
        self.audit.record(
            self.round,
            Actor::Edge(edge),
            DataTag::EdgeTrain(edge),
            Purpose::Train,
        );
        let noise_spec = noisy.then(|| NoiseSpec {
            p: self.cfg.noise.p,
            noisy_edge_ids: self.cfg.noise.noisy_edge_ids.clone(),
            rng_seed: derive(
                self.cfg.master_seed,
                Stream::Noise,
                edge as u64,
                self.cfg.noise.rng_seed,
            ),
        });

        let mut artifact = run_phase1(
            &flight.dispatched,
            &edge_parts.train,
            &self.cfg.edge_schedule,
            self.cfg.ensemble_size,
            self.cfg.master_seed,
            flight.dispatch_ordinal,
            edge,
            self.cfg.distill.mode,
            noise_spec.as_ref(),
        )
        .map_err(|e| self.sim_error(edge, e))?;
        artifact.noisy = noisy;
        artifact.lagged = lagged;

        self.pending_artifacts.push_back(artifact);
        if self.distilling.is_none() {
            self.start_distill(t)?;
        }
        Ok(())
    }

    fn start_distill(&mut self, t: u64) -> Result<()> {
        let mut artifact = self
            .pending_artifacts
            .pop_front()
            .expect("start_distill without a pending artifact");
        let round = self.round + 1;
        artifact.round_index = round;
        let edge = artifact.edge_id;

        self.audit
            .record(round, Actor::Evaluator, DataTag::Test, Purpose::Evaluate);
        let before_ps = prediction_set(&self.core, &self.test_set)
            .map_err(|e| self.sim_error(edge, e))?;
        let teacher_ps = ensemble_prediction_set(&artifact.models, &self.test_set)
            .map_err(|e| self.sim_error(edge, e))?;

        let core_before = self.core.clone();
        self.audit.record(
            round,
            Actor::Core,
            DataTag::Core,
            Purpose::TeacherTargets,
        );
        self.audit
            .record(round, Actor::Core, DataTag::Core, Purpose::Train);
        let noisy = artifact.noisy;
        let (report, _teacher_count) = run_phase2(
            &self.core,
            &mut self.memory,
            artifact,
            &self.parts.core,
            &self.cfg.distill,
            &self.cfg.distill_schedule,
            derive(self.cfg.master_seed, Stream::DistillShuffle, round as u64, 0),
        )
        .map_err(|e| self.sim_error(edge, e))?;
        self.core = report.model;

        let after_ps = prediction_set(&self.core, &self.test_set)
            .map_err(|e| self.sim_error(edge, e))?;
        let (delta_mutual, delta_exclusive) = area_deltas(&before_ps, &after_ps, &teacher_ps);

        let holdout = &self.parts.edges[edge - 1].holdout;
        let transfer_score = if holdout.is_empty() {
            None
        } else {
            self.audit.record(
                round,
                Actor::Evaluator,
                DataTag::EdgeHoldout(edge),
                Purpose::Evaluate,
            );
            Some(
                edge_transfer_score(&core_before, &self.core, holdout)
                    .map_err(|e| self.sim_error(edge, e))?,
            )
        };

        if self.edge1_frozen.is_none() {
            self.edge1_frozen = Some(teacher_ps.clone());
        }
        let consensus_edge1 = self
            .edge1_frozen
            .as_ref()
            .map(|frozen| consensus(frozen, &after_ps).consensus);

        self.audit
            .record(round, Actor::Evaluator, DataTag::Core, Purpose::Evaluate);
        let record = RoundRecord {
            round,
            variant: self.cfg.variant.to_string(),
            core_test_acc: after_ps.accuracy(),
            edge_test_acc: Some(teacher_ps.accuracy()),
            core_train_acc: accuracy(&self.core, &self.parts.core)
                .map_err(|e| self.sim_error(edge, e))?,
            consensus_current: Some(consensus(&teacher_ps, &before_ps).consensus),
            consensus_edge1,
            delta_mutual: Some(delta_mutual),
            delta_exclusive: Some(delta_exclusive),
            transfer_score,
            noisy_flag: noisy,
            spike_flag: false,
            memory_size: self.memory.len(),
        };
        self.distilling = Some((record, edge));
        self.queue
            .schedule(t + self.cfg.distill_ticks, Queued::DistillDone);
        Ok(())
    }

    fn on_distill_done(&mut self, t: u64) -> Result<()> {
        let (record, edge) = self
            .distilling
            .take()
            .expect("distill completion without an active distillation");
        self.trace.push(SimEvent {
            time: t,
            kind: EventKind::DistillComplete,
            edge_id: Some(edge),
        });
        self.round = record.round;
        self.records.push(record);
        self.counters.distills += 1;

        if !self.pending_artifacts.is_empty() {
            self.start_distill(t)
        } else {
            self.try_dispatch(t)
        }
    }

    fn apply_spike_flags(&mut self) {
        let trace: Vec<f64> = self.records.iter().map(|r| r.core_train_acc).collect();
        let flags = overfit_spike_flags(&trace, self.cfg.spike_window, self.cfg.spike_threshold);
        for (record, flag) in self.records.iter_mut().zip(flags) {
            record.spike_flag = flag;
        }
    }

    fn build_summary(&self) -> RunSummary {
        RunSummary {
            variant: self.cfg.variant.to_string(),
            master_seed: self.cfg.master_seed,
            rounds_completed: self.round,
            final_core_test_acc: self
                .records
                .last()
                .map(|r| r.core_test_acc)
                .unwrap_or(0.0),
            per_round_consensus: self.records.iter().map(|r| r.consensus_current).collect(),
            memory_trace: self.records.iter().map(|r| r.memory_size).collect(),
            noise_p: self.cfg.noise.p,
            lag_policy: format!("{:?}", self.cfg.lag.policy),
            edge1_consensus_reference: "frozen_at_uplink".to_string(),
        }
    }

    fn sim_error(&self, edge_id: usize, source: Error) -> Error {
        Error::Simulation {
            round: self.round + 1,
            edge_id,
            source: Box::new(source),
        }
    }
}
