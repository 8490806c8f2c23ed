//! Slow-detector averaging, visibility, the matched-noise estimator and
//! correlation probes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QniError, Result};
use crate::field::{FieldGrid, TrajectoryState};
use crate::stats::{EnsembleAccumulator, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Detector window in bins; windows tile from the first bin and a
    /// trailing partial window is dropped.
    pub avg_bins: usize,
    /// Visibility offset as a fraction of the largest detector sum.
    pub offset_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            avg_bins: 32,
            offset_fraction: 5e-4,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.avg_bins == 0 {
            return Err(QniError::param("avg_bins", "must be at least 1"));
        }
        if self.avg_bins > bins {
            return Err(QniError::WindowTooLarge {
                window: self.avg_bins,
                bins,
            });
        }
        if !(self.offset_fraction >= 0.0 && self.offset_fraction.is_finite()) {
            return Err(QniError::param("offset_fraction", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn windows(&self, bins: usize) -> usize {
        bins / self.avg_bins.max(1)
    }
}

/// Per-trajectory detector contributions `ᾱ†ᾱ` for each window, where
/// `ᾱ = m^{-1/2} Σ α(t_i)` over the window's `m` bins.
pub fn detector_average(grid: &FieldGrid, avg_bins: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::new();
    detector_average_into(grid, avg_bins, &mut out)?;
    Ok(out)
}

pub fn detector_average_into(grid: &FieldGrid, avg_bins: usize, out: &mut Vec<Complex64>) -> Result<()> {
    if avg_bins == 0 {
        return Err(QniError::param("avg_bins", "must be at least 1"));
    }
    if avg_bins > grid.len() {
        return Err(QniError::WindowTooLarge {
            window: avg_bins,
            bins: grid.len(),
        });
    }
    let norm = 1.0 / avg_bins as f64;
    out.clear();
    out.extend(
        grid.a
            .chunks_exact(avg_bins)
            .zip(grid.ad.chunks_exact(avg_bins))
            .map(|(a, ad)| {
                let sa: Complex64 = a.iter().sum();
                let sad: Complex64 = ad.iter().sum();
                sad * sa * norm
            }),
    );
    Ok(())
}

/// Center time of each detector window.
pub fn window_centers(grid: &FieldGrid, avg_bins: usize) -> Vec<f64> {
    let m = avg_bins.max(1);
    (0..grid.len() / m)
        .map(|w| grid.shape.time_ps(w * m) + 0.5 * (m as f64 - 1.0) * grid.shape.dt_ps)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorReading {
    pub t_ps: f64,
    pub n: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilitySeries {
    pub values: Vec<f64>,
    /// The offset ε that was added to every denominator.
    pub offset: f64,
    /// Every denominator was zero; values are all zero.
    pub degenerate: bool,
}

/// `V_t = |nA_t - nB_t| / (nA_t + nB_t + ε)` with `ε = offset_fraction · max(nA + nB)`.
pub fn visibility(n_a: &[f64], n_b: &[f64], offset_fraction: f64) -> Result<VisibilitySeries> {
    if n_a.len() != n_b.len() {
        return Err(QniError::ShapeMismatch(format!(
            "visibility series lengths {} and {}",
            n_a.len(),
            n_b.len()
        )));
    }
    let sums: Vec<f64> = n_a.iter().zip(n_b).map(|(a, b)| a + b).collect();
    let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let offset = if max.is_finite() { offset_fraction * max.max(0.0) } else { 0.0 };
    let degenerate = sums.iter().all(|&s| s + offset == 0.0);
    let values = n_a
        .iter()
        .zip(n_b)
        .zip(&sums)
        .map(|((a, b), s)| {
            let den = s + offset;
            if den == 0.0 {
                0.0
            } else {
                (a - b).abs() / den
            }
        })
        .collect();
    Ok(VisibilitySeries {
        values,
        offset,
        degenerate,
    })
}

/// First-order (delta-method) standard error of `|D| / (S + ε)` given the
/// ensemble means and (co)variances of the two detector readings, each
/// already divided by the ensemble size.
pub fn visibility_error(n_a: f64, n_b: f64, var_a: f64, var_b: f64, cov_ab: f64, offset: f64) -> f64 {
    let d = n_a - n_b;
    let s = n_a + n_b + offset;
    if s == 0.0 {
        return 0.0;
    }
    let g_d = d.signum() / s;
    let g_s = -d.abs() / (s * s);
    let var_d = var_a + var_b - 2.0 * cov_ab;
    let var_s = var_a + var_b + 2.0 * cov_ab;
    let cov_ds = var_a - var_b;
    (g_d * g_d * var_d + g_s * g_s * var_s + 2.0 * g_d * g_s * cov_ds).max(0.0).sqrt()
}

/// One ensemble's mean for the estimator, tagged with its noise identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMean {
    pub size: u64,
    pub seed: u64,
    pub value: Estimate,
}

/// Background (large, reference parameters), reference (small, same
/// parameters) and target (small, perturbed parameters, matched noise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTriple {
    pub background: EnsembleMean,
    pub reference: EnsembleMean,
    pub target: EnsembleMean,
    /// Paired per-trajectory `n - n'` over the reference/target ensemble.
    pub difference: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedEstimate {
    /// `⟨n⟩_R - ⟨n'⟩_R + ⟨n'⟩_B`.
    pub corrected: Estimate,
    /// Plain target mean `⟨n⟩_R`.
    pub naive: Estimate,
}

pub fn matched_estimate(triple: &EstimatorTriple) -> Result<MatchedEstimate> {
    let (r, t) = (&triple.reference, &triple.target);
    if r.seed != t.seed {
        return Err(QniError::EstimatorContract(format!(
            "reference seed {} differs from target seed {}",
            r.seed, t.seed
        )));
    }
    if r.size != t.size {
        return Err(QniError::EstimatorContract(format!(
            "reference size {} differs from target size {}",
            r.size, t.size
        )));
    }
    let b = &triple.background;
    let mean = (t.value.mean - r.value.mean) + b.value.mean;
    let se = (triple.difference.se.powi(2) + b.value.se.powi(2)).sqrt();
    Ok(MatchedEstimate {
        corrected: Estimate::new(mean, se),
        naive: t.value,
    })
}

/// Moments of an ensemble of first-stage outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    /// Bin indices sampled on the sub-grid.
    pub bins: Vec<usize>,
    /// `⟨α_s†α_s⟩` per sampled bin.
    pub signal_flux: Vec<Complex64>,
    /// `⟨α_i†α_i⟩` per sampled bin.
    pub idler_flux: Vec<Complex64>,
    /// `⟨α_s(t) α_i(t')⟩`, row = signal bin, column = idler bin.
    pub anomalous: Vec<Vec<Complex64>>,
    pub trajectories: usize,
}

impl CorrelationTable {
    /// Sub-grid position `(signal, idler)` of the largest `|⟨α_s α_i⟩|`.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (r, row) in self.anomalous.iter().enumerate() {
            for (c, z) in row.iter().enumerate() {
                if z.norm() > best.2 {
                    best = (r, c, z.norm());
                }
            }
        }
        (best.0, best.1)
    }
}

/// Multi-time correlation fan of the signal/idler pair on every `stride`-th bin.
pub fn correlation_probe(states: &[TrajectoryState], stride: usize) -> CorrelationTable {
    let stride = stride.max(1);
    let bins: Vec<usize> = match states.first() {
        Some(s) => (0..s.signal.len()).step_by(stride).collect(),
        None => Vec::new(),
    };
    let k = bins.len();
    let mut sf = vec![Complex64::default(); k];
    let mut idf = vec![Complex64::default(); k];
    let mut an = vec![vec![Complex64::default(); k]; k];
    for st in states {
        for (x, &bs) in bins.iter().enumerate() {
            sf[x] += st.signal.ad[bs] * st.signal.a[bs];
            idf[x] += st.idler.ad[bs] * st.idler.a[bs];
            for (y, &bi) in bins.iter().enumerate() {
                an[x][y] += st.signal.a[bs] * st.idler.a[bi];
            }
        }
    }
    let n = states.len().max(1) as f64;
    sf.iter_mut().chain(idf.iter_mut()).for_each(|z| *z /= n);
    an.iter_mut().flatten().for_each(|z| *z /= n);
    CorrelationTable {
        bins,
        signal_flux: sf,
        idler_flux: idf,
        anomalous: an,
        trajectories: states.len(),
    }
}

/// Accumulates a set of real per-trajectory readings window by window.
#[derive(Debug, Clone)]
pub struct ReadingAccumulator {
    acc: EnsembleAccumulator,
}

impl ReadingAccumulator {
    pub fn new(windows: usize) -> Self {
        ReadingAccumulator {
            acc: EnsembleAccumulator::new(windows),
        }
    }

    pub fn push(&mut self, contributions: &[Complex64]) {
        let re: Vec<f64> = contributions.iter().map(|z| z.re).collect();
        self.acc.push(&re);
    }

    pub fn merge(&mut self, other: &ReadingAccumulator) {
        self.acc.merge(&other.acc);
    }

    pub fn readings(&self, centers: &[f64]) -> Vec<DetectorReading> {
        centers
            .iter()
            .enumerate()
            .map(|(w, &t)| DetectorReading {
                t_ps: t,
                n: self.acc.estimate(w),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_vacuum, FieldId, GridShape};

    fn grid(values: &[Complex64]) -> FieldGrid {
        let shape = GridShape::centered(values.len(), 2.0).unwrap();
        let mut g = make_vacuum(shape, FieldId::Signal).unwrap();
        g.a.copy_from_slice(values);
        g.ad = values.iter().map(|z| z.conj()).collect();
        g
    }

    #[test]
    fn single_bin_window_is_per_bin_flux() {
        let v = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0), Complex64::new(0.0, 3.0)];
        let g = grid(&v);
        let out = detector_average(&g, 1).unwrap();
        for (o, z) in out.iter().zip(&v) {
            assert!((o - z.norm_sqr()).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_amplitude_adds_coherently() {
        let c = Complex64::new(0.7, -0.2);
        let g = grid(&[c; 8]);
        let out = detector_average(&g, 4).unwrap();
        assert_eq!(out.len(), 2);
        for o in out {
            assert!((o.re - 4.0 * c.norm_sqr()).abs() < 1e-14 && o.im.abs() < 1e-14);
        }
    }

    #[test]
    fn trailing_partial_window_is_dropped() {
        let g = grid(&[Complex64::new(1.0, 0.0); 10]);
        assert_eq!(detector_average(&g, 4).unwrap().len(), 2);
        assert_eq!(window_centers(&g, 4).len(), 2);
    }

    #[test]
    fn window_larger_than_grid_is_error() {
        let g = grid(&[Complex64::new(1.0, 0.0); 4]);
        assert!(matches!(detector_average(&g, 5), Err(QniError::WindowTooLarge { .. })));
    }

    // Two-bin toy: field in bin 0 from path 1, same-phase field in bin 1 from
    // path 2. Separate windows see no cross term; a shared window does.
    #[test]
    fn two_bin_cross_term_needs_shared_window() {
        let one = Complex64::new(1.0, 0.0);
        let g = grid(&[one, one]);
        let fast = detector_average(&g, 1).unwrap();
        assert_eq!(fast.iter().map(|z| z.re).sum::<f64>(), 2.0);
        let slow = detector_average(&g, 2).unwrap();
        // in-phase: |1 + 1|² / 2 = 2; opposite phase cancels in a shared window
        assert!((slow[0].re - 2.0).abs() < 1e-15);
        let h = grid(&[one, -one]);
        assert!(detector_average(&h, 2).unwrap()[0].norm() < 1e-15);
        assert_eq!(detector_average(&h, 1).unwrap().iter().map(|z| z.re).sum::<f64>(), 2.0);
    }

    #[test]
    fn coarsening_equals_averaging() {
        // summing m bins then reading the result as one bin is the same number
        let v: Vec<Complex64> = (0..12).map(|k| Complex64::new(k as f64 * 0.1, 1.0 - k as f64 * 0.05)).collect();
        let g = grid(&v);
        let m = 3;
        let coarse: Vec<Complex64> = v.chunks(m).map(|c| c.iter().sum::<Complex64>() / (m as f64).sqrt()).collect();
        let cg = grid(&coarse);
        let a = detector_average(&g, m).unwrap();
        let b = detector_average(&cg, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn visibility_examples() {
        let v = visibility(&[2.0], &[2.0], 0.0).unwrap();
        assert_eq!(v.values, vec![0.0]);
        assert_eq!(visibility(&[5.0], &[0.0], 0.0).unwrap().values, vec![1.0]);
        assert_eq!(visibility(&[3.0], &[1.0], 0.0).unwrap().values, vec![0.5]);
        let off = visibility(&[3.0, 0.0], &[1.0, 0.0], 5e-4).unwrap();
        assert!((off.offset - 2e-3).abs() < 1e-15);
        assert!((off.values[0] - 2.0 / 4.002).abs() < 1e-15);
        assert!(visibility(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn all_zero_series_is_degenerate() {
        let v = visibility(&[0.0; 4], &[0.0; 4], 5e-4).unwrap();
        assert!(v.degenerate);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn visibility_stays_in_unit_interval() {
        use proptest::prelude::*;
        proptest!(|(a in prop::collection::vec(0.0..10.0f64, 1..20), b in prop::collection::vec(0.0..10.0f64, 1..20), f in 0.0..0.01f64)| {
            let n = a.len().min(b.len());
            let v = visibility(&a[..n], &b[..n], f).unwrap();
            prop_assert!(v.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
        });
    }

    #[test]
    fn delta_method_error() {
        // nA = 3, nB = 1, independent with variance 0.01 each
        let e = visibility_error(3.0, 1.0, 0.01, 0.01, 0.0, 0.0);
        // dV/dA = 1/4 - 2/16 = 0.125, dV/dB = -1/4 - 2/16 = -0.375
        let expected = (0.125f64.powi(2) * 0.01 + 0.375f64.powi(2) * 0.01).sqrt();
        assert!((e - expected).abs() < 1e-14);
    }

    fn mean(v: f64, seed: u64, size: u64) -> EnsembleMean {
        EnsembleMean { size, seed, value: Estimate::new(v, 0.1) }
    }

    #[test]
    fn identical_reference_and_target_telescope_to_background() {
        let t = EstimatorTriple {
            background: mean(0.123456789, 9, 1 << 20),
            reference: mean(0.3333333333, 1, 1 << 14),
            target: mean(0.3333333333, 1, 1 << 14),
            difference: Estimate::new(0.0, 0.0),
        };
        let m = matched_estimate(&t).unwrap();
        assert_eq!(m.corrected.mean.to_bits(), 0.123456789f64.to_bits());
        assert_eq!(m.naive.mean, 0.3333333333);
    }

    #[test]
    fn matched_background_reduces_to_naive() {
        let t = EstimatorTriple {
            background: mean(0.5, 1, 1 << 10),
            reference: mean(0.5, 1, 1 << 10),
            target: mean(0.71, 1, 1 << 10),
            difference: Estimate::new(0.21, 0.01),
        };
        let m = matched_estimate(&t).unwrap();
        assert!((m.corrected.mean - 0.71).abs() < 1e-15);
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let ok = EstimatorTriple {
            background: mean(0.5, 2, 1 << 12),
            reference: mean(0.5, 1, 1 << 10),
            target: mean(0.6, 1, 1 << 10),
            difference: Estimate::default(),
        };
        let seeds = EstimatorTriple { target: mean(0.6, 3, 1 << 10), ..ok };
        let sizes = EstimatorTriple { target: mean(0.6, 1, 1 << 9), ..ok };
        assert!(matches!(matched_estimate(&seeds), Err(QniError::EstimatorContract(_))));
        assert!(matches!(matched_estimate(&sizes), Err(QniError::EstimatorContract(_))));
        assert!(matched_estimate(&ok).is_ok());
    }
}
