//! Addressable Wiener increments.
//!
//! Every increment is a pure function of its [`NoiseKey`], so a reference and
//! a target run that share a seed see exactly the same noise no matter how
//! trajectories are scheduled across workers. Keys map onto a ChaCha8 stream
//! (one stream per trajectory) at a fixed word offset; two Gaussians are
//! produced per Box–Muller pair, terms (1, 2) from pair 0 and (3, 4) from
//! pair 1.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const STAGE_BITS: u32 = 8;
const STEP_BITS: u32 = 24;
const BIN_BITS: u32 = 24;
/// u32 words consumed by one Box–Muller pair (two u64 uniforms).
const WORDS_PER_PAIR: u128 = 4;

pub const MAX_STAGES: u32 = 1 << STAGE_BITS;
pub const MAX_STEPS: usize = 1 << STEP_BITS;
pub const MAX_BINS: usize = 1 << BIN_BITS;

/// Which of the four Wiener processes an increment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    /// Drives `a` of signal and idler.
    W1 = 1,
    /// Drives `ad` of signal and idler.
    W2 = 2,
    /// Pump `a`.
    W3 = 3,
    /// Pump `ad`.
    W4 = 4,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::W1, Term::W2, Term::W3, Term::W4];

    fn pair(self) -> u32 {
        (self as u32 - 1) / 2
    }
}

/// Deterministic address of one increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub trajectory_index: u64,
    /// Nonlinear stage (0 for the first medium, 1 for the second).
    pub stage: u32,
    pub step_index: usize,
    pub term: Term,
    pub bin_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    /// Gaussian sample with mean 0 and variance `dz`.
    pub value: f64,
}

/// Increments for one (trajectory, stage, step) across all bins, already
/// scaled by `sqrt(dz)`; `w[bin][term - 1]`.
#[derive(Debug, Clone, Default)]
pub struct StepNoise {
    pub w: Vec<[f64; 4]>,
}

impl StepNoise {
    pub fn zeros(bins: usize) -> Self {
        StepNoise {
            w: vec![[0.0; 4]; bins],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
    enabled: bool,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed, enabled: true }
    }

    /// A source whose every increment is exactly zero (the classical model).
    pub fn silent(seed: u64) -> Self {
        NoiseSource {
            seed,
            enabled: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    fn stream(&self, trajectory: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory);
        rng
    }

    fn word_pos(stage: u32, step: usize, pair: u32, bin: usize) -> u128 {
        assert!(stage < MAX_STAGES, "stage index out of range");
        assert!(step < MAX_STEPS, "step index out of range");
        assert!(bin < MAX_BINS, "bin index out of range");
        let row = ((stage as u128) << STEP_BITS | step as u128) << 1 | pair as u128;
        ((row << BIN_BITS) | bin as u128) * WORDS_PER_PAIR
    }

    /// Unit-variance Gaussian at `key`; the key's seed overrides the source seed.
    pub fn standard_normal(key: &NoiseKey) -> f64 {
        let source = NoiseSource::new(key.seed);
        let mut rng = source.stream(key.trajectory_index);
        rng.set_word_pos(Self::word_pos(key.stage, key.step_index, key.term.pair(), key.bin_index));
        let (x, y) = box_muller(rng.next_u64(), rng.next_u64());
        if key.term as u32 % 2 == 1 {
            x
        } else {
            y
        }
    }

    /// Fills `out` with the four increments of every bin for one step.
    /// Bulk generation reads the same stream words as per-key [`draw`].
    pub fn fill_step(&self, trajectory: u64, stage: u32, step: usize, dz: f64, out: &mut StepNoise) {
        let bins = out.w.len();
        if !self.enabled {
            out.w.iter_mut().for_each(|w| *w = [0.0; 4]);
            return;
        }
        let scale = dz.sqrt();
        let mut rng = self.stream(trajectory);
        for pair in 0..2u32 {
            rng.set_word_pos(Self::word_pos(stage, step, pair, 0));
            let off = 2 * pair as usize;
            for w in out.w.iter_mut().take(bins) {
                let (x, y) = box_muller(rng.next_u64(), rng.next_u64());
                w[off] = x * scale;
                w[off + 1] = y * scale;
            }
        }
    }
}

/// The increment addressed by `key`, with variance `dz`.
pub fn draw(key: &NoiseKey, dz: f64) -> NoiseDraw {
    assert!(dz > 0.0, "step length must be positive");
    NoiseDraw {
        value: NoiseSource::standard_normal(key) * dz.sqrt(),
    }
}

fn box_muller(x: u64, y: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    const FRAC_SCALE: f64 = std::f64::consts::FRAC_PI_4 / (1u64 << 50) as f64;
    // u1 in (0, 1] keeps the logarithm finite.
    let u1 = ((x >> 11) + 1) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    // Angle: three bits pick the octant, the low 50 bits place it inside.
    // Reduced-range sin_cos is much cheaper than the full-circle one.
    let octant = y >> 61;
    let (s, c) = ((y & ((1u64 << 50) - 1)) as f64 * FRAC_SCALE).sin_cos();
    let (s, c) = if octant & 1 == 1 { (c, s) } else { (s, c) };
    let (s, c) = match octant >> 1 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    };
    (r * c, r * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(traj: u64, step: usize, term: Term, bin: usize) -> NoiseKey {
        NoiseKey {
            seed: 42,
            trajectory_index: traj,
            stage: 0,
            step_index: step,
            term,
            bin_index: bin,
        }
    }

    #[test]
    fn same_key_same_value() {
        let k = key(3, 17, Term::W3, 5);
        assert_eq!(draw(&k, 0.01).value.to_bits(), draw(&k, 0.01).value.to_bits());
    }

    #[test]
    fn bulk_fill_matches_keyed_draws() {
        let src = NoiseSource::new(42);
        let mut buf = StepNoise::zeros(9);
        src.fill_step(7, 1, 3, 0.25, &mut buf);
        for bin in 0..9 {
            for term in Term::ALL {
                let k = NoiseKey { stage: 1, ..key(7, 3, term, bin) };
                let v = draw(&k, 0.25).value;
                assert_eq!(buf.w[bin][term as usize - 1].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn silent_source_is_zero() {
        let mut buf = StepNoise { w: vec![[1.0; 4]; 4] };
        NoiseSource::silent(1).fill_step(0, 0, 0, 0.1, &mut buf);
        assert!(buf.w.iter().all(|w| w.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn seed_change_decorrelates() {
        let n = 20_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let k = key(i, 0, Term::W1, 0);
            let x = draw(&k, 1.0).value;
            let y = draw(&NoiseKey { seed: 43, ..k }, 1.0).value;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let corr = sxy / (sxx * syy).sqrt();
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    // Gaussian moment oracle: mean 0, variance dz, independent terms.
    #[test]
    fn moments_over_a_million_keys() {
        let dz = 0.01;
        let src = NoiseSource::new(2024);
        let bins = 1000;
        let mut buf = StepNoise::zeros(bins);
        let (mut s1, mut s11, mut s12) = (0.0, 0.0, 0.0);
        let mut s22 = 0.0;
        let mut count = 0usize;
        for traj in 0..1000u64 {
            src.fill_step(traj, 0, 0, dz, &mut buf);
            for w in &buf.w {
                s1 += w[0];
                s11 += w[0] * w[0];
                s22 += w[1] * w[1];
                s12 += w[0] * w[1];
                count += 1;
            }
        }
        assert_eq!(count, 1_000_000);
        let n = count as f64;
        let mean = s1 / n;
        let var = s11 / n - mean * mean;
        assert!(mean.abs() < 4.0 * (dz / n).sqrt(), "mean {mean}");
        assert!((var / dz - 1.0).abs() < 0.01, "var {var}");
        let corr = (s12 / n) / ((s11 / n) * (s22 / n)).sqrt();
        assert!(corr.abs() < 4.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn keys_differing_in_one_field_differ() {
        let base = key(1, 2, Term::W1, 3);
        let v = NoiseSource::standard_normal(&base);
        let variants = [
            NoiseKey { trajectory_index: 2, ..base },
            NoiseKey { step_index: 3, ..base },
            NoiseKey { stage: 1, ..base },
            NoiseKey { term: Term::W2, ..base },
            NoiseKey { term: Term::W3, ..base },
            NoiseKey { bin_index: 4, ..base },
            NoiseKey { seed: 7, ..base },
        ];
        for k in variants {
            assert_ne!(NoiseSource::standard_normal(&k), v, "{k:?}");
        }
    }
}
