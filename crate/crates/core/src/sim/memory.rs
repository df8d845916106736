//! Re-collected edge artifacts and the temporal memory that keeps the most
//! recent ones as additional distillation teachers.

use crate::distill::TeacherMode;
use crate::nn::Model;
use std::collections::VecDeque;

/// A re-collected, trained edge model (or ensemble) with its provenance.
#[derive(Debug, Clone)]
pub struct EdgeArtifact {
    /// Ensemble members; never empty.
    pub models: Vec<Model>,
    /// Round in which this artifact was distilled (assigned by the engine).
    pub round_index: usize,
    /// 1-based edge id.
    pub edge_id: usize,
    pub mode: TeacherMode,
    pub noisy: bool,
    pub lagged: bool,
    /// Which ensemble member the artifact contributes once it sits in
    /// memory; selected by the core at distillation time.
    pub repr_index: usize,
}

impl EdgeArtifact {
    /// The single model this artifact contributes as a memory teacher.
    pub fn representative(&self) -> &Model {
        &self.models[self.repr_index]
    }
}

/// Bounded FIFO of the most recent edge artifacts, oldest evicted first.
#[derive(Debug, Clone, Default)]
pub struct TemporalMemory {
    capacity: usize,
    buffer: VecDeque<EdgeArtifact>,
}

impl TemporalMemory {
    pub fn new(capacity: usize) -> Self {
        TemporalMemory {
            capacity,
            buffer: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Insert the newest artifact, evicting the oldest when full. With zero
    /// capacity nothing is ever stored.
    pub fn push(&mut self, artifact: EdgeArtifact) {
        if self.capacity == 0 {
            return;
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(artifact);
    }

    /// Stored artifacts, oldest first.
    pub fn artifacts(&self) -> impl Iterator<Item = &EdgeArtifact> {
        self.buffer.iter()
    }

    /// The teacher model each stored artifact contributes.
    pub fn teacher_models(&self) -> impl Iterator<Item = &Model> {
        self.buffer.iter().map(|a| a.representative())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn artifact(edge_id: usize, seed: u64) -> EdgeArtifact {
        EdgeArtifact {
            models: vec![Model::seeded(&[2, 3, 2], Activation::Relu, seed).unwrap()],
            round_index: 0,
            edge_id,
            mode: TeacherMode::Cloned,
            noisy: false,
            lagged: false,
            repr_index: 0,
        }
    }

    #[test]
    fn fifo_evicts_oldest_first() {
        let mut mem = TemporalMemory::new(2);
        mem.push(artifact(1, 1)); // A
        mem.push(artifact(2, 2)); // B
        assert_eq!(mem.len(), 2);
        mem.push(artifact(3, 3)); // C evicts A
        let ids: Vec<usize> = mem.artifacts().map(|a| a.edge_id).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn zero_capacity_never_stores() {
        let mut mem = TemporalMemory::new(0);
        mem.push(artifact(1, 1));
        assert!(mem.is_empty());
    }

    #[test]
    fn occupancy_never_exceeds_capacity() {
        let mut mem = TemporalMemory::new(3);
        for i in 0..10 {
            mem.push(artifact(i, i as u64));
            assert!(mem.len() <= 3);
        }
        assert_eq!(mem.len(), 3);
    }
}
