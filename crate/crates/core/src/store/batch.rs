//! Seeded batch streams for the three pairing regimes.
//!
//! Epoch `e` of a stream is a pure function of `(dataset, task, batch_size,
//! seed, e)`: the eligible pool is shuffled with a ChaCha stream keyed by the
//! task and epoch, caption choices are drawn from the same stream in shuffled
//! order, and the permutation is cut into batches. A trailing batch of one
//! sample is dropped since a single-candidate softmax carries no signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Result, StoreError, TaskKind};
use crate::linalg::Matrix;

/// Sample and caption indices of one batch, before feature lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub task: TaskKind,
    /// Indices into `Dataset::samples`.
    pub samples: Vec<usize>,
    /// Stage1: a fine caption. Task1: a global caption. Task2: a fine caption.
    pub text_a: Vec<usize>,
    /// Task1: a fine caption. Task2: a second, distinct fine caption.
    pub text_b: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub plan: BatchPlan,
    pub speech: Matrix,
    pub text_a: Matrix,
    pub text_b: Option<Matrix>,
}

impl Batch {
    pub fn task(&self) -> TaskKind {
        self.plan.task
    }

    pub fn len(&self) -> usize {
        self.plan.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.samples.is_empty()
    }

    /// `[text_a; text_b]` for two-caption batches, `text_a` otherwise.
    pub fn stacked_text(&self) -> Matrix {
        match &self.text_b {
            Some(b) => self.text_a.vstack(b),
            None => self.text_a.clone(),
        }
    }

    fn materialize(d: &Dataset, plan: BatchPlan) -> Batch {
        let speech_rows: Vec<usize> = plan
            .samples
            .iter()
            .map(|&i| d.samples()[i].speech_row)
            .collect();
        let speech = d.speech_features().gather(&speech_rows);
        let text_a = d.text_features().gather(&plan.text_a);
        let text_b = plan.text_b.as_ref().map(|b| d.text_features().gather(b));
        Batch {
            plan,
            speech,
            text_a,
            text_b,
        }
    }
}

/// Endless, seekable cursor over epochs of batches.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    task: TaskKind,
    batch_size: usize,
    seed: u64,
    pool: Vec<usize>,
    per_epoch: usize,
    cursor: usize,
    cached: Option<(usize, Vec<BatchPlan>)>,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a Dataset, task: TaskKind, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(StoreError::BatchSizeTooSmall(batch_size));
        }
        let pool = dataset.eligible(task);
        if pool.len() < batch_size {
            return Err(StoreError::TooFewEligible {
                task,
                eligible: pool.len(),
                required: batch_size,
            });
        }
        let rem = pool.len() % batch_size;
        let per_epoch = pool.len() / batch_size + usize::from(rem >= 2);
        Ok(Self {
            dataset,
            task,
            batch_size,
            seed,
            pool,
            per_epoch,
            cursor: 0,
            cached: None,
        })
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.per_epoch
    }

    /// Number of batches handed out so far.
    pub fn position(&self) -> usize {
        self.cursor
    }

    /// Moves the cursor to absolute batch index `pos`.
    pub fn seek(&mut self, pos: usize) {
        self.cursor = pos;
    }

    pub fn epoch_plans(&self, epoch: usize) -> Vec<BatchPlan> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.task.code() << 56) | epoch as u64);

        let mut order = self.pool.clone();
        order.shuffle(&mut rng);

        let samples = self.dataset.samples();
        let mut text_a = Vec::with_capacity(order.len());
        let mut text_b = Vec::with_capacity(order.len());
        for &i in &order {
            let s = &samples[i];
            match self.task {
                TaskKind::Stage1 => {
                    let fine = &s.fine_caption_rows;
                    text_a.push(fine[rng.random_range(0..fine.len())]);
                }
                TaskKind::Task1 => {
                    let global = &s.global_caption_rows;
                    let fine = &s.fine_caption_rows;
                    text_a.push(global[rng.random_range(0..global.len())]);
                    text_b.push(fine[rng.random_range(0..fine.len())]);
                }
                TaskKind::Task2 => {
                    let fine = &s.fine_caption_rows;
                    let first = rng.random_range(0..fine.len());
                    let mut second = rng.random_range(0..fine.len() - 1);
                    if second >= first {
                        second += 1;
                    }
                    text_a.push(fine[first]);
                    text_b.push(fine[second]);
                }
            }
        }

        (0..self.per_epoch)
            .map(|b| {
                let lo = b * self.batch_size;
                let hi = (lo + self.batch_size).min(order.len());
                BatchPlan {
                    task: self.task,
                    samples: order[lo..hi].to_vec(),
                    text_a: text_a[lo..hi].to_vec(),
                    text_b: (self.task != TaskKind::Stage1).then(|| text_b[lo..hi].to_vec()),
                }
            })
            .collect()
    }

    pub fn next_plan(&mut self) -> BatchPlan {
        let epoch = self.cursor / self.per_epoch;
        let within = self.cursor % self.per_epoch;
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.cached = Some((epoch, self.epoch_plans(epoch)));
        }
        self.cursor += 1;
        self.cached.as_ref().expect("epoch cached").1[within].clone()
    }

    pub fn next_batch(&mut self) -> Batch {
        let plan = self.next_plan();
        Batch::materialize(self.dataset, plan)
    }
}

/// One epoch (epoch 0) of batches for `task`.
pub fn make_batches(d: &Dataset, task: TaskKind, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let stream = BatchStream::new(d, task, batch_size, seed)?;
    Ok(stream
        .epoch_plans(0)
        .into_iter()
        .map(|p| Batch::materialize(d, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, HashSet};

    use super::*;
    use crate::store::{EmbeddingMatrix, PairedSample};

    fn dataset(n: usize, fine_per_clip: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| PairedSample {
                clip_id: format!("clip{i:02}"),
                speech_row: i,
                global_caption_rows: vec![n * fine_per_clip + i],
                fine_caption_rows: (0..fine_per_clip).map(|j| i * fine_per_clip + j).collect(),
                tags: BTreeMap::new(),
                transcript: None,
            })
            .collect();
        let text_rows = n * fine_per_clip + n;
        Dataset::new(
            samples,
            EmbeddingMatrix::new(n, 2, (0..2 * n).map(|v| v as f32).collect(), "s").unwrap(),
            EmbeddingMatrix::new(text_rows, 3, vec![0.25; 3 * text_rows], "t").unwrap(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn ten_samples_batch_four_gives_4_4_2() {
        let d = dataset(10, 2);
        let batches = make_batches(&d, TaskKind::Stage1, 4, 1).unwrap();
        let sizes: Vec<_> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let ids: HashSet<_> = batches
            .iter()
            .flat_map(|b| b.plan.samples.iter().copied())
            .collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn trailing_singleton_is_dropped() {
        let d = dataset(9, 2);
        let sizes: Vec<_> = make_batches(&d, TaskKind::Stage1, 4, 1)
            .unwrap()
            .iter()
            .map(Batch::len)
            .collect();
        assert_eq!(sizes, vec![4, 4]);
    }

    #[test]
    fn same_seed_same_stream() {
        let d = dataset(10, 3);
        for task in [TaskKind::Stage1, TaskKind::Task1, TaskKind::Task2] {
            let a: Vec<_> = make_batches(&d, task, 4, 1).unwrap().into_iter().map(|b| b.plan).collect();
            let b: Vec<_> = make_batches(&d, task, 4, 1).unwrap().into_iter().map(|b| b.plan).collect();
            assert_eq!(a, b);
            let c: Vec<_> = make_batches(&d, task, 4, 2).unwrap().into_iter().map(|b| b.plan).collect();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn task2_pair_with_exactly_two_captions_takes_both_in_seeded_order() {
        let d = dataset(6, 2);
        let mut orders = HashSet::new();
        for seed in 0..32 {
            let batches = make_batches(&d, TaskKind::Task2, 3, seed).unwrap();
            for b in &batches {
                let tb = b.plan.text_b.as_ref().unwrap();
                for (k, &s) in b.plan.samples.iter().enumerate() {
                    let pair = (b.plan.text_a[k], tb[k]);
                    let fine = &d.samples()[s].fine_caption_rows;
                    assert!(pair == (fine[0], fine[1]) || pair == (fine[1], fine[0]));
                    if s == 0 {
                        orders.insert(pair);
                    }
                }
            }
            // The order is a function of the seed alone.
            let again = make_batches(&d, TaskKind::Task2, 3, seed).unwrap();
            assert_eq!(
                batches.iter().map(|b| &b.plan).collect::<Vec<_>>(),
                again.iter().map(|b| &b.plan).collect::<Vec<_>>()
            );
        }
        assert_eq!(orders.len(), 2, "both orderings occur across seeds");
    }

    #[test]
    fn task1_pairs_global_then_fine() {
        let d = dataset(5, 2);
        for b in make_batches(&d, TaskKind::Task1, 2, 4).unwrap() {
            let tb = b.plan.text_b.as_ref().unwrap();
            for (k, &s) in b.plan.samples.iter().enumerate() {
                let smp = &d.samples()[s];
                assert!(smp.global_caption_rows.contains(&b.plan.text_a[k]));
                assert!(smp.fine_caption_rows.contains(&tb[k]));
            }
            assert_eq!(b.text_b.as_ref().unwrap().rows(), b.len());
        }
    }

    #[test]
    fn rows_line_up_with_features() {
        let d = dataset(4, 2);
        for b in make_batches(&d, TaskKind::Stage1, 2, 0).unwrap() {
            for (k, &s) in b.plan.samples.iter().enumerate() {
                let want: Vec<f64> = d
                    .speech_features()
                    .row(d.samples()[s].speech_row)
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect();
                assert_eq!(b.speech.row(k), want.as_slice());
            }
        }
    }

    #[test]
    fn preconditions() {
        let d = dataset(3, 1);
        assert!(matches!(
            make_batches(&d, TaskKind::Stage1, 1, 0).unwrap_err(),
            StoreError::BatchSizeTooSmall(1)
        ));
        assert!(matches!(
            make_batches(&d, TaskKind::Stage1, 4, 0).unwrap_err(),
            StoreError::TooFewEligible { eligible: 3, .. }
        ));
        assert!(matches!(
            make_batches(&d, TaskKind::Task2, 2, 0).unwrap_err(),
            StoreError::TooFewEligible { eligible: 0, .. }
        ));
    }

    #[test]
    fn stream_seek_matches_sequential_reads() {
        let d = dataset(11, 2);
        let mut a = BatchStream::new(&d, TaskKind::Task2, 4, 9).unwrap();
        let seq: Vec<_> = (0..10).map(|_| a.next_plan()).collect();
        let mut b = BatchStream::new(&d, TaskKind::Task2, 4, 9).unwrap();
        b.seek(7);
        assert_eq!(b.next_plan(), seq[7]);
        assert_eq!(b.position(), 8);
    }
}
