//! Deterministic parallel ensembles.
//!
//! Trajectories are cut into fixed blocks of [`BLOCK`] indices. Each block is
//! accumulated sequentially by one worker and blocks are merged in index
//! order, so every output is the same bit pattern for any worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::detect::{
    detector_average_into, matched_estimate, visibility, visibility_error, window_centers, EnsembleMean,
    EstimatorTriple,
};
use crate::error::{QniError, Result};
use crate::field::{FieldGrid, GridShape};
use crate::noise::NoiseSource;
use crate::optics::{run_bench, BenchSetup, DetectorRecord};
use crate::sde::{PhotonBalanceAccumulator, Workspace};
use crate::stats::{EnsembleAccumulator, Estimate};

pub const BLOCK: u64 = 64;

/// Standard errors of detected flux a window needs before its visibility counts as a peak.
pub const RESOLVED_SE: f64 = 3.0;

/// Partial results that combine associatively.
pub trait Mergeable {
    fn merge_from(&mut self, other: &Self);
}

impl Mergeable for EnsembleAccumulator {
    fn merge_from(&mut self, other: &Self) {
        self.merge(other);
    }
}

impl Mergeable for PhotonBalanceAccumulator {
    fn merge_from(&mut self, other: &Self) {
        self.merge(other);
    }
}

impl<T: Mergeable> Mergeable for Vec<T> {
    fn merge_from(&mut self, other: &Self) {
        assert_eq!(self.len(), other.len(), "partial result layout");
        for (a, b) in self.iter_mut().zip(other) {
            a.merge_from(b);
        }
    }
}

/// Runs `body` for trajectory indices `0..trajectories` on `workers` threads
/// (0 picks the machine default) and merges per-block partial results in
/// block order. The first failing block, in index order, reports its error.
pub fn par_ensemble<A, M, F>(trajectories: u64, workers: usize, bins: usize, make: M, body: F) -> Result<A>
where
    A: Mergeable + Send,
    M: Fn() -> A + Sync,
    F: Fn(u64, &mut A, &mut Workspace) -> Result<()> + Sync,
{
    let blocks = trajectories.div_ceil(BLOCK);
    let run_block = |b: u64| -> Result<A> {
        let mut acc = make();
        let mut ws = Workspace::new(bins);
        for t in b * BLOCK..((b + 1) * BLOCK).min(trajectories) {
            body(t, &mut acc, &mut ws)?;
        }
        Ok(acc)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| QniError::param("workers", e.to_string()))?;
    let parts: Vec<Result<A>> = pool.install(|| (0..blocks).into_par_iter().map(run_block).collect());
    let mut total = make();
    for p in parts {
        total.merge_from(&p?);
    }
    Ok(total)
}

/// Channel layout for one detector window size with `w` windows:
/// `A[0..w], B[0..w], S1[0..w], S2[0..w], ΣA, ΣB, ΣS1, ΣS2`.
#[derive(Debug, Clone, PartialEq)]
struct WindowLayout {
    avg_bins: usize,
    windows: usize,
}

impl WindowLayout {
    fn channels(&self) -> usize {
        4 * self.windows + 4
    }

    fn accumulator(&self) -> EnsembleAccumulator {
        let w = self.windows;
        let mut pairs: Vec<(usize, usize)> = (0..w).map(|k| (k, w + k)).collect();
        pairs.push((4 * w, 4 * w + 1));
        EnsembleAccumulator::with_pairs(self.channels(), pairs)
    }

    fn sample(&self, rec: &DetectorRecord, scratch: &mut Vec<num_complex::Complex64>, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        let grids: [&FieldGrid; 4] = [&rec.port_a, &rec.port_b, &rec.signal1, &rec.signal2];
        for g in grids {
            detector_average_into(g, self.avg_bins, scratch)?;
            out.extend(scratch.iter().map(|z| z.re));
        }
        let w = self.windows;
        for k in 0..4 {
            let s = out[k * w..(k + 1) * w].iter().sum();
            out.push(s);
        }
        Ok(())
    }
}

/// Streams detector records into moments for several window sizes at once.
#[derive(Debug, Clone)]
pub struct BenchAccumulator {
    layouts: Vec<WindowLayout>,
    accs: Vec<EnsembleAccumulator>,
}

impl BenchAccumulator {
    pub fn new(bins: usize, window_sizes: &[usize]) -> Result<Self> {
        let mut layouts = Vec::new();
        for &m in window_sizes {
            if m == 0 {
                return Err(QniError::param("avg_bins", "must be at least 1"));
            }
            if m > bins {
                return Err(QniError::WindowTooLarge { window: m, bins });
            }
            layouts.push(WindowLayout {
                avg_bins: m,
                windows: bins / m,
            });
        }
        let accs = layouts.iter().map(|l| l.accumulator()).collect();
        Ok(BenchAccumulator { layouts, accs })
    }

    pub fn window_sizes(&self) -> Vec<usize> {
        self.layouts.iter().map(|l| l.avg_bins).collect()
    }

    pub fn count(&self) -> u64 {
        self.accs.first().map_or(0, |a| a.count())
    }

    pub fn push(&mut self, rec: &DetectorRecord) -> Result<()> {
        let mut scratch = Vec::new();
        let mut sample = Vec::new();
        for (l, acc) in self.layouts.iter().zip(&mut self.accs) {
            l.sample(rec, &mut scratch, &mut sample)?;
            acc.push(&sample);
        }
        Ok(())
    }

    /// Pushes `target - reference` channel by channel.
    pub fn push_difference(&mut self, target: &DetectorRecord, reference: &DetectorRecord) -> Result<()> {
        let mut scratch = Vec::new();
        let (mut t, mut r) = (Vec::new(), Vec::new());
        for (l, acc) in self.layouts.iter().zip(&mut self.accs) {
            l.sample(target, &mut scratch, &mut t)?;
            l.sample(reference, &mut scratch, &mut r)?;
            t.iter_mut().zip(&r).for_each(|(x, y)| *x -= y);
            acc.push(&t);
        }
        Ok(())
    }

    fn moments(&self, k: usize) -> Moments {
        Moments::from_accumulator(&self.accs[k], self.layouts[k].windows)
    }
}

impl Mergeable for BenchAccumulator {
    fn merge_from(&mut self, other: &Self) {
        assert_eq!(self.layouts, other.layouts, "window layout");
        self.accs.merge_from(&other.accs);
    }
}

/// Means, variances of the means and the A–B covariance of the means for
/// one window size.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    windows: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Per window, then the aggregate.
    cov_ab: Vec<f64>,
}

impl Moments {
    fn from_accumulator(acc: &EnsembleAccumulator, windows: usize) -> Self {
        let n = acc.count().max(1) as f64;
        let channels = acc.channels();
        let mean = (0..channels).map(|c| acc.mean(c)).collect();
        let var = (0..channels).map(|c| acc.variance(c) / n).collect();
        let mut cov_ab: Vec<f64> = (0..windows)
            .map(|k| acc.covariance(k, windows + k).unwrap_or(0.0) / n)
            .collect();
        cov_ab.push(acc.covariance(4 * windows, 4 * windows + 1).unwrap_or(0.0) / n);
        Moments {
            windows,
            mean,
            var,
            cov_ab,
        }
    }

    fn estimate(&self, c: usize) -> Estimate {
        Estimate::new(self.mean[c], self.var[c].sqrt())
    }
}

/// Aggregate readings summed over all windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateObservables {
    pub n_a: Estimate,
    pub n_b: Estimate,
    pub n_s1: Estimate,
    pub n_s2: Estimate,
    /// `|ΣA - ΣB| / (ΣA + ΣB + ε)`.
    pub v: f64,
    pub v_err: f64,
}

/// Time-resolved ensemble observables for one detector window size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowObservables {
    pub avg_bins: usize,
    pub t_ps: Vec<f64>,
    pub n_a: Vec<Estimate>,
    pub n_b: Vec<Estimate>,
    pub n_s1: Vec<Estimate>,
    pub n_s2: Vec<Estimate>,
    pub v: Vec<f64>,
    pub v_err: Vec<f64>,
    /// `v` limited to `[0, 1]`; positive-P means can stray outside at small ensembles.
    pub v_clamped: Vec<f64>,
    /// Detected flux `nA + nB` per window, with the A–B covariance in its error.
    pub detected: Vec<Estimate>,
    pub offset: f64,
    pub degenerate: bool,
    pub aggregate: AggregateObservables,
}

impl WindowObservables {
    fn from_moments(avg_bins: usize, t_ps: Vec<f64>, m: &Moments, offset_fraction: f64) -> Result<Self> {
        let w = m.windows;
        let series = |k: usize| (0..w).map(|i| m.estimate(k * w + i)).collect::<Vec<_>>();
        let (n_a, n_b, n_s1, n_s2) = (series(0), series(1), series(2), series(3));
        let a: Vec<f64> = n_a.iter().map(|e| e.mean).collect();
        let b: Vec<f64> = n_b.iter().map(|e| e.mean).collect();
        let vis = visibility(&a, &b, offset_fraction)?;
        let v_err = (0..w)
            .map(|i| visibility_error(a[i], b[i], m.var[i], m.var[w + i], m.cov_ab[i], vis.offset))
            .collect();
        let v_clamped = vis.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let detected = (0..w)
            .map(|i| Estimate::new(a[i] + b[i], (m.var[i] + m.var[w + i] + 2.0 * m.cov_ab[i]).max(0.0).sqrt()))
            .collect();

        let base = 4 * w;
        let (ta, tb) = (m.mean[base], m.mean[base + 1]);
        let agg_offset = offset_fraction * (ta + tb).max(0.0);
        let agg_v = if ta + tb + agg_offset == 0.0 {
            0.0
        } else {
            (ta - tb).abs() / (ta + tb + agg_offset)
        };
        let aggregate = AggregateObservables {
            n_a: m.estimate(base),
            n_b: m.estimate(base + 1),
            n_s1: m.estimate(base + 2),
            n_s2: m.estimate(base + 3),
            v: agg_v,
            v_err: visibility_error(ta, tb, m.var[base], m.var[base + 1], m.cov_ab[w], agg_offset),
        };
        Ok(WindowObservables {
            avg_bins,
            t_ps,
            n_a,
            n_b,
            n_s1,
            n_s2,
            v: vis.values,
            v_err,
            v_clamped,
            detected,
            offset: vis.offset,
            degenerate: vis.degenerate,
            aggregate,
        })
    }

    /// Largest visibility among windows whose detected flux is resolved,
    /// i.e. exceeds [`RESOLVED_SE`] standard errors. Near-empty windows have
    /// denominators dominated by sampling noise and are skipped; `None` when
    /// no window is resolved.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.resolved()
            .map(|i| (self.v[i], self.v_err[i]))
            .fold(None, |best, (v, e)| match best {
                Some((bv, _)) if bv >= v => best,
                _ => Some((v, e)),
            })
    }

    /// Largest visibility over every window, resolved or not.
    pub fn raw_peak(&self) -> f64 {
        self.v.iter().copied().fold(0.0, f64::max)
    }

    /// Indices of windows with resolved detected flux.
    pub fn resolved(&self) -> impl Iterator<Item = usize> + '_ {
        self.detected
            .iter()
            .enumerate()
            .filter(|(_, d)| d.mean > RESOLVED_SE * d.se)
            .map(|(i, _)| i)
    }

    /// Index of the window with the largest detected flux `nA + nB`.
    pub fn brightest(&self) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, (a, b)) in self.n_a.iter().zip(&self.n_b).enumerate() {
            if a.mean + b.mean > best.1 {
                best = (i, a.mean + b.mean);
            }
        }
        best.0
    }
}

fn centers(shape: GridShape, m: usize) -> Result<Vec<f64>> {
    let probe = crate::field::make_vacuum(shape, crate::field::FieldId::Signal)?;
    Ok(window_centers(&probe, m))
}

/// A finished plain ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub seed: u64,
    pub shape: GridShape,
    pub acc: BenchAccumulator,
}

impl EnsembleRun {
    pub fn trajectories(&self) -> u64 {
        self.acc.count()
    }

    pub fn observables(&self, offset_fraction: f64) -> Result<Vec<WindowObservables>> {
        self.acc
            .layouts
            .iter()
            .enumerate()
            .map(|(k, l)| {
                WindowObservables::from_moments(l.avg_bins, centers(self.shape, l.avg_bins)?, &self.acc.moments(k), offset_fraction)
            })
            .collect()
    }
}

pub fn run_ensemble(
    setup: &BenchSetup,
    noise: &NoiseSource,
    trajectories: u64,
    window_sizes: &[usize],
    workers: usize,
) -> Result<EnsembleRun> {
    let bins = setup.shape.bins;
    BenchAccumulator::new(bins, window_sizes)?;
    let acc = par_ensemble(
        trajectories,
        workers,
        bins,
        || BenchAccumulator::new(bins, window_sizes).expect("layout checked"),
        |t, acc, ws| {
            let rec = run_bench(t, setup, noise, ws)?;
            acc.push(&rec)
        },
    )?;
    Ok(EnsembleRun {
        seed: noise.seed(),
        shape: setup.shape,
        acc,
    })
}

/// Reference and target benches driven by identical noise, trajectory by
/// trajectory.
#[derive(Debug, Clone)]
pub struct PairedRun {
    pub seed: u64,
    pub shape: GridShape,
    pub reference: BenchAccumulator,
    pub target: BenchAccumulator,
    pub difference: BenchAccumulator,
}

#[derive(Clone)]
struct PairParts {
    reference: BenchAccumulator,
    targets: Vec<BenchAccumulator>,
    differences: Vec<BenchAccumulator>,
}

impl Mergeable for PairParts {
    fn merge_from(&mut self, other: &Self) {
        self.reference.merge_from(&other.reference);
        self.targets.merge_from(&other.targets);
        self.differences.merge_from(&other.differences);
    }
}

pub fn run_paired(
    reference: &BenchSetup,
    target: &BenchSetup,
    noise: &NoiseSource,
    trajectories: u64,
    window_sizes: &[usize],
    workers: usize,
) -> Result<PairedRun> {
    let mut runs = run_paired_many(reference, std::slice::from_ref(target), noise, trajectories, window_sizes, workers)?;
    Ok(runs.remove(0))
}

/// Pairs every target with one shared reference pass: each trajectory runs
/// the reference once and then every target on the same noise.
pub fn run_paired_many(
    reference: &BenchSetup,
    targets: &[BenchSetup],
    noise: &NoiseSource,
    trajectories: u64,
    window_sizes: &[usize],
    workers: usize,
) -> Result<Vec<PairedRun>> {
    if targets.iter().any(|t| t.shape != reference.shape) {
        return Err(QniError::EstimatorContract("reference and target grids differ".into()));
    }
    let bins = reference.shape.bins;
    let empty = BenchAccumulator::new(bins, window_sizes)?;
    let parts = par_ensemble(
        trajectories,
        workers,
        bins,
        || PairParts {
            reference: empty.clone(),
            targets: vec![empty.clone(); targets.len()],
            differences: vec![empty.clone(); targets.len()],
        },
        |t, acc, ws| {
            let r = run_bench(t, reference, noise, ws)?;
            acc.reference.push(&r)?;
            for (k, setup) in targets.iter().enumerate() {
                let g = run_bench(t, setup, noise, ws)?;
                acc.targets[k].push(&g)?;
                acc.differences[k].push_difference(&g, &r)?;
            }
            Ok(())
        },
    )?;
    Ok(parts
        .targets
        .into_iter()
        .zip(parts.differences)
        .map(|(target, difference)| PairedRun {
            seed: noise.seed(),
            shape: reference.shape,
            reference: parts.reference.clone(),
            target,
            difference,
        })
        .collect())
}

/// Naive and matched-noise corrected observables of one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectedObservables {
    pub naive: Vec<WindowObservables>,
    pub corrected: Vec<WindowObservables>,
}

/// Combines a background ensemble with a paired reference/target run.
pub fn corrected_observables(background: &EnsembleRun, paired: &PairedRun, offset_fraction: f64) -> Result<CorrectedObservables> {
    if background.acc.layouts != paired.reference.layouts || background.shape != paired.shape {
        return Err(QniError::EstimatorContract("background and paired runs use different detector layouts".into()));
    }
    let m_r = paired.reference.count();
    let mut naive = Vec::new();
    let mut corrected = Vec::new();
    for (k, l) in paired.reference.layouts.iter().enumerate() {
        let t_ps = centers(paired.shape, l.avg_bins)?;
        let bg = background.acc.moments(k);
        let rf = paired.reference.moments(k);
        let tg = paired.target.moments(k);
        let df = paired.difference.moments(k);
        let mut mix = Moments {
            windows: l.windows,
            mean: Vec::with_capacity(bg.mean.len()),
            var: Vec::with_capacity(bg.mean.len()),
            cov_ab: bg.cov_ab.iter().zip(&df.cov_ab).map(|(a, b)| a + b).collect(),
        };
        for c in 0..bg.mean.len() {
            let triple = EstimatorTriple {
                background: EnsembleMean {
                    size: background.trajectories(),
                    seed: background.seed,
                    value: bg.estimate(c),
                },
                reference: EnsembleMean {
                    size: m_r,
                    seed: paired.seed,
                    value: rf.estimate(c),
                },
                target: EnsembleMean {
                    size: paired.target.count(),
                    seed: paired.seed,
                    value: tg.estimate(c),
                },
                difference: df.estimate(c),
            };
            let est = matched_estimate(&triple)?;
            mix.mean.push(est.corrected.mean);
            mix.var.push(est.corrected.se * est.corrected.se);
        }
        naive.push(WindowObservables::from_moments(l.avg_bins, t_ps.clone(), &tg, offset_fraction)?);
        corrected.push(WindowObservables::from_moments(l.avg_bins, t_ps, &mix, offset_fraction)?);
    }
    Ok(CorrectedObservables { naive, corrected })
}
