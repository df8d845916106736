//! Dataset-access accounting. Every read of a partition during a run is
//! recorded with the acting party, so the privacy invariant — the core never
//! touches an edge's data — can be checked mechanically.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Core,
    Edge(usize),
    Evaluator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataTag {
    Core,
    EdgeTrain(usize),
    EdgeHoldout(usize),
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Purpose {
    Train,
    TeacherTargets,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub round: usize,
    pub actor: Actor,
    pub data: DataTag,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AccessLog {
    records: Vec<AccessRecord>,
}

impl AccessLog {
    pub fn new() -> Self {
        AccessLog::default()
    }

    pub fn record(&mut self, round: usize, actor: Actor, data: DataTag, purpose: Purpose) {
        self.records.push(AccessRecord {
            round,
            actor,
            data,
            purpose,
        });
    }

    pub fn records(&self) -> &[AccessRecord] {
        &self.records
    }

    /// Accesses where the core side touched any edge partition.
    pub fn core_edge_violations(&self) -> Vec<AccessRecord> {
        self.records
            .iter()
            .filter(|r| {
                r.actor == Actor::Core
                    && matches!(r.data, DataTag::EdgeTrain(_) | DataTag::EdgeHoldout(_))
            })
            .copied()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violations_catch_core_reads_of_edge_data() {
        let mut log = AccessLog::new();
        log.record(0, Actor::Core, DataTag::Core, Purpose::Train);
        log.record(1, Actor::Edge(3), DataTag::EdgeTrain(3), Purpose::Train);
        log.record(1, Actor::Evaluator, DataTag::Test, Purpose::Evaluate);
        assert!(log.core_edge_violations().is_empty());

        log.record(2, Actor::Core, DataTag::EdgeTrain(1), Purpose::Train);
        let violations = log.core_edge_violations();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].data, DataTag::EdgeTrain(1));
    }
}
