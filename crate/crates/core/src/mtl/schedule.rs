use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::Rng;

/// Draws item indices of one dataset without replacement, reshuffling when
/// a pass is exhausted.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Up to `size` indices; a batch never straddles two passes, so the last
    /// batch of a pass may be short.
    pub fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// One update's worth of data: a main-task batch and, with auxiliary tasks,
/// one batch from a uniformly chosen auxiliary task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduledStep {
    pub main: Vec<usize>,
    pub aux: Option<(usize, Vec<usize>)>,
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    samplers: Vec<EpochSampler>,
    batch_size: usize,
    rng: Rng,
}

impl Scheduler {
    /// `sizes[m]` is `|D_m|`; task 0 is the main task.
    pub fn new(sizes: &[usize], batch_size: usize, rng: Rng) -> Self {
        Self {
            samplers: sizes.iter().map(|&n| EpochSampler::new(n)).collect(),
            batch_size: batch_size.max(1),
            rng,
        }
    }

    pub fn num_aux(&self) -> usize {
        self.samplers.len().saturating_sub(1)
    }

    /// Updates in one pass over the main task.
    pub fn steps_per_epoch(&self) -> usize {
        self.samplers[0].len().div_ceil(self.batch_size)
    }

    pub fn next_step(&mut self) -> ScheduledStep {
        let main = self.samplers[0].next_batch(self.batch_size, &mut self.rng);
        let aux = match self.num_aux() {
            0 => None,
            m => {
                let task = self.rng.gen_range(1..=m);
                Some((task, self.samplers[task].next_batch(self.batch_size, &mut self.rng)))
            }
        };
        ScheduledStep { main, aux }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn single_task_steps_have_no_auxiliary_batch() {
        let mut s = Scheduler::new(&[10], 4, rng::stream(0, rng::STREAM_SCHEDULE));
        for _ in 0..10 {
            let step = s.next_step();
            assert!(step.aux.is_none());
            assert!(!step.main.is_empty());
        }
    }

    #[test]
    fn one_pass_covers_every_item_once() {
        let mut s = Scheduler::new(&[10, 7], 4, rng::stream(1, rng::STREAM_SCHEDULE));
        assert_eq!(s.steps_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_step().main).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn auxiliary_frequencies_are_uniform() {
        let mut s = Scheduler::new(&[100, 50, 60, 70], 8, rng::stream(7, rng::STREAM_SCHEDULE));
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let step = s.next_step();
            assert!(!step.main.is_empty());
            counts[step.aux.unwrap().0] += 1;
        }
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            let f = *c as f64 / 10_000.0;
            assert!((0.30..=0.37).contains(&f), "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn main_task_present_in_every_step(seed in any::<u64>(), n in 1usize..50, m in 0usize..4, b in 1usize..40) {
            let mut sizes = vec![n];
            sizes.extend(std::iter::repeat(5).take(m));
            let mut s = Scheduler::new(&sizes, b, rng::stream(seed, rng::STREAM_SCHEDULE));
            for _ in 0..200 {
                let step = s.next_step();
                prop_assert!(!step.main.is_empty());
                prop_assert_eq!(step.aux.is_some(), m > 0);
            }
        }

        #[test]
        fn no_item_repeats_within_a_pass(seed in any::<u64>(), n in 1usize..60, b in 1usize..10) {
            let mut sampler = EpochSampler::new(n);
            let mut r = rng::stream(seed, "t");
            let mut seen = Vec::new();
            while seen.len() < n {
                seen.extend(sampler.next_batch(b, &mut r));
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
