//! Minibatch streams for the three-way training loop.
//!
//! Each iteration draws a labeled source batch, a target batch and a batch
//! from the union of all training documents. An epoch is one shuffled pass
//! over the union (`⌊N / batch⌋` iterations, remainder dropped); the source
//! and target pools are cycled independently and reshuffled whenever they
//! run out.

use rand::seq::SliceRandom;

use crate::error::{DasError, Result};
use crate::rng::Rng;

/// Indices for one training iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchTriple {
    /// Positions in the labeled source set.
    pub source: Vec<usize>,
    /// Positions in the target set.
    pub target: Vec<usize>,
    /// Global positions in the union of all training documents.
    pub union: Vec<usize>,
}

#[derive(Debug, Clone)]
struct CyclingPool {
    items: Vec<usize>,
    pos: usize,
}

impl CyclingPool {
    fn new(items: Vec<usize>, rng: &mut Rng) -> Self {
        let mut pool = CyclingPool { items, pos: 0 };
        pool.items.shuffle(rng);
        pool
    }

    fn draw(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.items.len() {
            self.items.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1]
    }
}

#[derive(Debug, Clone)]
enum SourcePools {
    Plain(CyclingPool),
    /// One pool per non-empty class, drawn round-robin.
    Balanced(Vec<CyclingPool>),
}

#[derive(Debug, Clone)]
pub struct BatchStream {
    source: SourcePools,
    target: CyclingPool,
    union_len: usize,
    batch: usize,
    batches_emitted: usize,
    rng: Rng,
}

impl BatchStream {
    /// `source_labels[i]` is the class of labeled source document `i`.
    pub fn new(
        source_labels: &[usize],
        n_target: usize,
        union_len: usize,
        batch: usize,
        balance_source: bool,
        mut rng: Rng,
    ) -> Result<Self> {
        let n_source = source_labels.len();
        if batch == 0 {
            return Err(DasError::invalid("batch size must be positive"));
        }
        if batch > n_source || batch > n_target || batch > union_len {
            return Err(DasError::invalid(format!(
                "batch size {batch} exceeds a pool (source {n_source}, target {n_target}, union {union_len})"
            )));
        }
        let source = if balance_source {
            let classes = source_labels.iter().max().map_or(0, |m| m + 1);
            let mut by_class = vec![Vec::new(); classes];
            for (i, &l) in source_labels.iter().enumerate() {
                by_class[l].push(i);
            }
            SourcePools::Balanced(
                by_class
                    .into_iter()
                    .filter(|v| !v.is_empty())
                    .map(|v| CyclingPool::new(v, &mut rng))
                    .collect(),
            )
        } else {
            SourcePools::Plain(CyclingPool::new((0..n_source).collect(), &mut rng))
        };
        let target = CyclingPool::new((0..n_target).collect(), &mut rng);
        Ok(BatchStream {
            source,
            target,
            union_len,
            batch,
            batches_emitted: 0,
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.union_len / self.batch
    }

    pub fn next_epoch(&mut self) -> Vec<BatchTriple> {
        let mut order: Vec<usize> = (0..self.union_len).collect();
        order.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks_exact(self.batch) {
            let source = self.draw_source();
            let target = (0..self.batch).map(|_| self.target.draw(&mut self.rng)).collect();
            out.push(BatchTriple {
                source,
                target,
                union: chunk.to_vec(),
            });
            self.batches_emitted += 1;
        }
        out
    }

    fn draw_source(&mut self) -> Vec<usize> {
        match &mut self.source {
            SourcePools::Plain(pool) => (0..self.batch).map(|_| pool.draw(&mut self.rng)).collect(),
            SourcePools::Balanced(pools) => {
                let k = pools.len();
                let start = self.batches_emitted % k;
                (0..self.batch)
                    .map(|j| pools[(start + j) % k].draw(&mut self.rng))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use std::collections::HashSet;

    fn rng() -> Rng {
        stream(11, Stream::Shuffle)
    }

    #[test]
    fn epoch_length_is_floor_of_union_over_batch() {
        let labels = vec![0; 100];
        let mut s = BatchStream::new(&labels, 100, 200, 50, false, rng()).unwrap();
        assert_eq!(s.next_epoch().len(), 4);
        let mut s = BatchStream::new(&labels, 100, 230, 50, false, rng()).unwrap();
        assert_eq!(s.next_epoch().len(), 4);
    }

    #[test]
    fn union_indices_appear_at_most_once_per_epoch() {
        let labels = vec![0; 60];
        let mut s = BatchStream::new(&labels, 70, 130, 20, false, rng()).unwrap();
        for _ in 0..3 {
            let epoch = s.next_epoch();
            let all: Vec<usize> = epoch.iter().flat_map(|b| b.union.clone()).collect();
            let unique: HashSet<_> = all.iter().collect();
            assert_eq!(unique.len(), all.len());
            assert!(epoch.iter().all(|b| b.source.len() == 20 && b.target.len() == 20));
            assert!(all.iter().all(|&i| i < 130));
        }
    }

    #[test]
    fn balanced_source_batches_round_robin() {
        let labels: Vec<usize> = (0..300).map(|i| if i < 200 { 2 } else { i % 2 }).collect();
        let mut s = BatchStream::new(&labels, 100, 400, 50, true, rng()).unwrap();
        for b in s.next_epoch() {
            let mut counts = [0usize; 3];
            b.source.iter().for_each(|&i| counts[labels[i]] += 1);
            assert!(counts.iter().all(|&c| c == 16 || c == 17), "{counts:?}");
        }
    }

    #[test]
    fn pools_cycle_without_repeats_inside_a_pass() {
        let labels = vec![0; 10];
        let mut s = BatchStream::new(&labels, 10, 50, 5, false, rng()).unwrap();
        let epoch = s.next_epoch();
        let first_pass: HashSet<usize> = epoch[..2].iter().flat_map(|b| b.source.clone()).collect();
        assert_eq!(first_pass.len(), 10);
    }

    #[test]
    fn same_seed_same_stream_and_oversized_batch_rejected() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let mut a = BatchStream::new(&labels, 6, 12, 3, true, rng()).unwrap();
        let mut b = BatchStream::new(&labels, 6, 12, 3, true, rng()).unwrap();
        assert_eq!(a.next_epoch(), b.next_epoch());
        assert!(BatchStream::new(&labels, 2, 12, 3, false, rng()).is_err());
    }
}
