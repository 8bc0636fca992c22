use rand::seq::SliceRandom;

use crate::data::sample::Batch;
use crate::data::split::SampleSet;
use crate::error::{OpgError, Result};
use crate::rng;

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0xba7c4]));
    idx
}

/// One epoch of batches over a shuffled set. The final partial batch is kept.
pub struct Batches<'a> {
    set: &'a SampleSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let samples = self.order[self.pos..end]
            .iter()
            .map(|&i| self.set.samples[i].clone())
            .collect();
        self.pos = end;
        Some(Batch::new(samples).expect("sample set shares dims"))
    }
}

pub fn iterate_batches(set: &SampleSet, batch_size: usize, seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(OpgError::validation("batch size must be >= 1"));
    }
    if set.is_empty() {
        return Err(OpgError::validation("cannot batch an empty sample set"));
    }
    Ok(Batches {
        set,
        order: shuffled_indices(set.len(), seed),
        batch_size,
        pos: 0,
    })
}
