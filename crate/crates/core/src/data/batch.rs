use rand::seq::SliceRandom;

use super::{Corpus, DataError};
use crate::rng::{self, Rng};

/// Sentence indices of one joint step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Endless reshuffling iterator over target indices.
#[derive(Debug, Clone)]
struct Cycle {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycle {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Pairs each source mini-batch with an equally sized target mini-batch.
///
/// An epoch is one shuffled pass over the source corpus; the target side is
/// drawn from an independent cycle that reshuffles whenever it runs out and
/// carries over between epochs.
#[derive(Debug, Clone)]
pub struct JointBatcher {
    n_source: usize,
    batch_size: usize,
    source_rng: Rng,
    target: Cycle,
}

impl JointBatcher {
    pub fn new(
        n_source: usize,
        n_target: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Config("batch size must be at least 1".into()));
        }
        if n_source == 0 {
            return Err(DataError::Config("source corpus is empty".into()));
        }
        if n_target == 0 {
            return Err(DataError::Config(
                "target corpus is empty; MI training needs unlabeled target text".into(),
            ));
        }
        Ok(Self {
            n_source,
            batch_size,
            source_rng: rng::stream(seed, "batch/source"),
            target: Cycle::new(n_target, rng::stream(seed, "batch/target")),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_source.div_ceil(self.batch_size)
    }

    pub fn epoch(&mut self) -> Vec<BatchIndices> {
        let mut order: Vec<usize> = (0..self.n_source).collect();
        order.shuffle(&mut self.source_rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| BatchIndices {
                source: chunk.to_vec(),
                target: (0..chunk.len()).map(|_| self.target.next()).collect(),
            })
            .collect()
    }
}

pub fn make_batches(
    source: &Corpus,
    target: &Corpus,
    batch_size: usize,
    seed: u64,
) -> Result<JointBatcher, DataError> {
    JointBatcher::new(source.len(), target.len(), batch_size, seed)
}
