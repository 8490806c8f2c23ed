//! Compensated running moments that merge deterministically.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(mean: f64, se: f64) -> Self {
        Estimate { mean, se }
    }

    /// Within `k` standard errors of `target`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Running sums over `n` real channels plus selected cross products.
///
/// Filled by one worker per disjoint block of trajectories and merged in a
/// fixed order, so the final moments do not depend on the worker count.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    count: u64,
    sum: Vec<CompensatedSum>,
    sum_sq: Vec<CompensatedSum>,
    pairs: Vec<(usize, usize)>,
    sum_cross: Vec<CompensatedSum>,
}

impl EnsembleAccumulator {
    pub fn new(channels: usize) -> Self {
        Self::with_pairs(channels, Vec::new())
    }

    pub fn with_pairs(channels: usize, pairs: Vec<(usize, usize)>) -> Self {
        assert!(pairs.iter().all(|&(i, j)| i < channels && j < channels));
        EnsembleAccumulator {
            count: 0,
            sum: vec![CompensatedSum::default(); channels],
            sum_sq: vec![CompensatedSum::default(); channels],
            sum_cross: vec![CompensatedSum::default(); pairs.len()],
            pairs,
        }
    }

    pub fn channels(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Adds one trajectory's sample (one value per channel).
    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.sum.len(), "sample width");
        self.count += 1;
        for ((s, q), &x) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(sample) {
            s.add(x);
            q.add(x * x);
        }
        for (c, &(i, j)) in self.sum_cross.iter_mut().zip(&self.pairs) {
            c.add(sample[i] * sample[j]);
        }
    }

    pub fn merge(&mut self, other: &EnsembleAccumulator) {
        assert_eq!(self.sum.len(), other.sum.len(), "channel count");
        assert_eq!(self.pairs, other.pairs, "pair layout");
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            a.merge(b);
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            a.merge(b);
        }
        for (a, b) in self.sum_cross.iter_mut().zip(&other.sum_cross) {
            a.merge(b);
        }
    }

    pub fn mean(&self, channel: usize) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum[channel].value() / self.count as f64
    }

    /// Unbiased sample variance of one channel.
    pub fn variance(&self, channel: usize) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean(channel);
        ((self.sum_sq[channel].value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn estimate(&self, channel: usize) -> Estimate {
        let se = if self.count == 0 {
            0.0
        } else {
            (self.variance(channel) / self.count as f64).sqrt()
        };
        Estimate::new(self.mean(channel), se)
    }

    /// Sample covariance for a registered pair.
    pub fn covariance(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.pairs.iter().position(|&p| p == (i, j) || p == (j, i))?;
        if self.count < 2 {
            return Some(0.0);
        }
        let n = self.count as f64;
        Some((self.sum_cross[k].value() - n * self.mean(i) * self.mean(j)) / (n - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compensation_recovers_lost_bits() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn moments_of_known_data() {
        let mut acc = EnsembleAccumulator::with_pairs(2, vec![(0, 1)]);
        for x in [1.0, 2.0, 3.0, 4.0] {
            acc.push(&[x, 2.0 * x]);
        }
        assert_eq!(acc.mean(0), 2.5);
        assert!((acc.variance(0) - 5.0 / 3.0).abs() < 1e-14);
        assert!((acc.covariance(0, 1).unwrap() - 10.0 / 3.0).abs() < 1e-14);
        assert!(acc.covariance(1, 1).is_none());
    }

    proptest! {
        #[test]
        fn merge_is_partition_independent(
            data in prop::collection::vec(-1e6..1e6f64, 2..200),
            cut in 0usize..200,
        ) {
            let cut = cut.min(data.len());
            let mut whole = EnsembleAccumulator::new(1);
            data.iter().for_each(|&x| whole.push(&[x]));
            let mut left = EnsembleAccumulator::new(1);
            let mut right = EnsembleAccumulator::new(1);
            data[..cut].iter().for_each(|&x| left.push(&[x]));
            data[cut..].iter().for_each(|&x| right.push(&[x]));
            let mut lr = left.clone();
            lr.merge(&right);
            let mut rl = right.clone();
            rl.merge(&left);
            let scale = data.iter().map(|x| x.abs()).fold(1.0, f64::max);
            prop_assert!((lr.mean(0) - whole.mean(0)).abs() <= 1e-12 * scale);
            prop_assert!((rl.mean(0) - whole.mean(0)).abs() <= 1e-12 * scale);
            prop_assert_eq!(lr.count(), whole.count());
        }
    }
}
