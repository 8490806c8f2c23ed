//! Reference values computed without the propagator: closed forms for the
//! undepleted-pump limit and a hand-written drift for single-step checks.
//!
//! [`brute_force_two_bin`] is the exception; it drives the real pipeline on a
//! two-bin grid and compares it against the closed forms here.

use num_complex::Complex64;
use serde::Serialize;

use crate::detect::{detector_average, visibility};
use crate::error::Result;
use crate::field::{make_cw, make_vacuum, FieldId, GridShape, TrajectoryState};
use crate::noise::NoiseSource;
use crate::optics::{run_bench, BenchLayout, BenchSetup, PumpProfile};
use crate::sde::{propagate_segment, MaterialParams, Segment, StepPlan, Workspace};
use crate::stats::EnsembleAccumulator;

/// Largest gain `|χ|·P·z` for which the undepleted-pump forms are trusted.
pub const LOW_GAIN_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub name: &'static str,
    pub inputs: Vec<(&'static str, f64)>,
    pub expected: f64,
    /// Measured value, when the oracle was compared against a simulation.
    pub measured: Option<f64>,
    pub tolerance: f64,
    /// Inputs lie inside the range where the closed form holds.
    pub valid: bool,
    pub note: &'static str,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        match self.measured {
            Some(m) => (m - self.expected).abs() <= self.tolerance,
            None => self.valid,
        }
    }
}

/// Mean signal flux per bin after length `z` of an undepleted CW pump
/// acting on vacuum: `sinh²(|χ| P z)`.
pub fn lowgain_pair_flux(chi: f64, pump_flux: f64, z: f64) -> OracleResult {
    let g = chi.abs() * pump_flux * z;
    OracleResult {
        name: "lowgain_pair_flux",
        inputs: vec![("chi", chi), ("pump_flux", pump_flux), ("z", z)],
        expected: g.sinh().powi(2),
        measured: None,
        tolerance: 0.0,
        valid: g <= LOW_GAIN_LIMIT,
        note: "two-mode squeezing: sinh^2 of the gain",
    }
}

/// Mean per-mode readings of the two-stage interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoStageCounts {
    pub n_a: f64,
    pub n_b: f64,
    pub n_s1: f64,
    pub n_s2: f64,
    pub valid: bool,
}

impl TwoStageCounts {
    pub fn visibility(&self) -> f64 {
        let s = self.n_a + self.n_b;
        if s == 0.0 {
            0.0
        } else {
            (self.n_a - self.n_b).abs() / s
        }
    }
}

/// Undepleted-pump solution of medium 1, then idler phase `dphi` and amplitude
/// transmission `t_amp`, then medium 2 seeded by that idler, then the
/// balanced beamsplitter.
///
/// Each medium acts as `s → C s + S i†`, `i → C i + S s†` with
/// `C = cosh(|χ|Pz)`, `S = sinh(|χ|Pz)`, so
///
/// ```text
/// n_s1 = S₁²
/// n_s2 = S₂² (1 + t² S₁²)
/// n_A,B = ½(n_s1 + n_s2) ± t C₁ S₁ S₂ cos Δφ
/// ```
pub fn two_stage_interference(chi: f64, pump_flux: f64, z1: f64, z2: f64, dphi: f64, t_amp: f64) -> TwoStageCounts {
    two_stage_windowed(chi, pump_flux, z1, z2, dphi, t_amp, 1.0)
}

/// As [`two_stage_interference`] but with only a fraction `overlap` of the
/// cross term surviving detection (see [`windowed_cross_fraction`]).
pub fn two_stage_windowed(chi: f64, pump_flux: f64, z1: f64, z2: f64, dphi: f64, t_amp: f64, overlap: f64) -> TwoStageCounts {
    let g1 = chi.abs() * pump_flux * z1;
    let g2 = chi.abs() * pump_flux * z2;
    let (c1, s1, s2) = (g1.cosh(), g1.sinh(), g2.sinh());
    let n_s1 = s1 * s1;
    let n_s2 = s2 * s2 * (1.0 + t_amp * t_amp * s1 * s1);
    let cross = overlap * t_amp * c1 * s1 * s2 * dphi.cos();
    TwoStageCounts {
        n_a: 0.5 * (n_s1 + n_s2) + cross,
        n_b: 0.5 * (n_s1 + n_s2) - cross,
        n_s1,
        n_s2,
        valid: g1.max(g2) <= LOW_GAIN_LIMIT,
    }
}

/// Share of the signal–signal cross term a detector window of `window` bins
/// keeps when the two signals are offset by `offset` bins of a
/// delta-correlated (CW) source.
pub fn windowed_cross_fraction(offset: usize, window: usize) -> f64 {
    if window == 0 {
        return 0.0;
    }
    (1.0 - offset as f64 / window as f64).max(0.0)
}

/// Exact second moments of the Euler–Maruyama scheme for the two-stage bench
/// in the undepleted-pump limit, one bin of a CW pump with real `χ`.
///
/// The amplitudes `(s1, s1†, i, i†, s2, s2†)` evolve linearly, `v ← L v + ξ`,
/// so `Σ = E[v vᵀ]` obeys `Σ ← L Σ Lᵀ + Q` step by step. Unlike the continuum
/// forms this keeps the O(dz) lag of the scheme, which dominates at a handful
/// of steps.
#[allow(clippy::too_many_arguments)]
pub fn euler_two_stage(
    chi: f64,
    pump_flux: f64,
    steps: [usize; 2],
    lengths: [f64; 2],
    loss: [f64; 2],
    dphi: f64,
    t_amp: f64,
) -> TwoStageCounts {
    type M6 = [[Complex64; 6]; 6];
    let zero = Complex64::new(0.0, 0.0);
    let mut sigma: M6 = [[zero; 6]; 6];

    fn congruence(l: &M6, s: &M6) -> M6 {
        let zero = Complex64::new(0.0, 0.0);
        let mut ls = [[zero; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                ls[i][j] = (0..6).map(|k| l[i][k] * s[k][j]).sum();
            }
        }
        let mut out = [[zero; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                out[i][j] = (0..6).map(|k| ls[i][k] * l[j][k]).sum();
            }
        }
        out
    }

    // (signal, signal†) indices per stage; the idler pair is always (2, 3)
    for (stage, (sig, sigd)) in [(0usize, 1usize), (4, 5)].into_iter().enumerate() {
        if stage == 1 {
            let p = Complex64::from_polar(t_amp, dphi);
            let mut l: M6 = [[zero; 6]; 6];
            for (k, row) in l.iter_mut().enumerate() {
                row[k] = Complex64::new(1.0, 0.0);
            }
            l[2][2] = p;
            l[3][3] = p.conj();
            sigma = congruence(&l, &sigma);
        }
        let n = steps[stage];
        if n == 0 {
            continue;
        }
        let dz = lengths[stage] / n as f64;
        let a = Complex64::new(chi * pump_flux * dz, 0.0);
        let keep = Complex64::new(1.0 - loss[stage] * dz, 0.0);
        let mut l: M6 = [[zero; 6]; 6];
        for (k, row) in l.iter_mut().enumerate() {
            row[k] = Complex64::new(1.0, 0.0);
        }
        for k in [sig, sigd, 2, 3] {
            l[k][k] = keep;
        }
        l[sig][3] = a;
        l[sigd][2] = a;
        l[2][sigd] = a;
        l[3][sig] = a;
        // ξ drives (s, i) and η drives (s†, i†), each with variance a
        let mut q: M6 = [[zero; 6]; 6];
        for x in [sig, 2] {
            for y in [sig, 2] {
                q[x][y] = a;
            }
        }
        for x in [sigd, 3] {
            for y in [sigd, 3] {
                q[x][y] = a;
            }
        }
        for _ in 0..n {
            sigma = congruence(&l, &sigma);
            for i in 0..6 {
                for j in 0..6 {
                    sigma[i][j] += q[i][j];
                }
            }
        }
    }
    let n_s1 = sigma[1][0].re;
    let n_s2 = sigma[5][4].re;
    let cross = 0.5 * (sigma[1][4] + sigma[5][0]).re;
    let g = chi.abs() * pump_flux * lengths[0].max(lengths[1]);
    TwoStageCounts {
        n_a: 0.5 * (n_s1 + n_s2) + cross,
        n_b: 0.5 * (n_s1 + n_s2) - cross,
        n_s1,
        n_s2,
        valid: g <= LOW_GAIN_LIMIT,
    }
}

/// Hand-written deterministic increments `(ds, dsd, di, did, du, dud)` of one
/// Euler step for a single bin.
pub fn single_step_drift(
    chi: Complex64,
    losses: [f64; 3],
    pump: (Complex64, Complex64),
    signal: (Complex64, Complex64),
    idler: (Complex64, Complex64),
    dz: f64,
) -> [Complex64; 6] {
    let [gu, gs, gi] = losses;
    let (u, ud) = pump;
    let (s, sd) = signal;
    let (x, xd) = idler;
    let cc = chi.conj();
    [
        (cc * u * u * xd - gs * s) * dz,
        (chi * ud * ud * x - gs * sd) * dz,
        (cc * u * u * sd - gi * x) * dz,
        (chi * ud * ud * s - gi * xd) * dz,
        (-2.0 * chi * ud * s * x - gu * u) * dz,
        (-2.0 * cc * u * sd * xd - gu * ud) * dz,
    ]
}

fn check(name: &'static str, expected: f64, measured: f64, tolerance: f64, note: &'static str) -> OracleResult {
    OracleResult {
        name,
        inputs: Vec::new(),
        expected,
        measured: Some(measured),
        tolerance,
        valid: true,
        note,
    }
}

/// Runs the pipeline on a two-bin CW grid and checks it against the
/// closed forms: a dark bench at zero coupling, one Euler step against the
/// drift, and the two-bin detector window recovering the cross term a
/// one-bin detector loses to a one-bin signal delay.
pub fn brute_force_two_bin(trajectories: u64, seed: u64) -> Result<Vec<OracleResult>> {
    let shape = GridShape::centered(2, 2.0)?;
    let noise = NoiseSource::new(seed);
    let mut ws = Workspace::new(2);
    let mut out = Vec::new();

    // zero coupling
    let dark = BenchSetup::new(
        shape,
        &PumpProfile::Cw { flux: 1e4, phase: 0.0 },
        MaterialParams::ideal(0.0),
        BenchLayout { delta_tau_s_ps: 2.0, ..BenchLayout::default() },
        8,
    )?;
    let mut worst: f64 = 0.0;
    for t in 0..trajectories.min(1000) {
        let rec = run_bench(t, &dark, &noise, &mut ws)?;
        for g in [&rec.port_a, &rec.port_b, &rec.signal1, &rec.signal2] {
            worst = worst.max(g.norm_sqr_a() + g.norm_sqr_ad());
        }
    }
    out.push(check("zero_coupling_dark", 0.0, worst, 0.0, "all detector amplitudes vanish"));

    // one Euler step from a fixed state
    let chi = Complex64::new(0.02, 0.005);
    let mut params = MaterialParams::ideal(0.0);
    params.chi = chi;
    params.pump.loss_per_m = 0.1;
    params.signal.loss_per_m = 0.2;
    params.idler.loss_per_m = 0.05;
    let dz = 0.05;
    let seg = Segment::new(params, StepPlan::for_length(dz, 1)?, shape)?;
    let mut start = TrajectoryState::new(
        make_cw(shape, FieldId::Pump, 4.0, 0.2)?,
        make_vacuum(shape, FieldId::Signal)?,
        make_vacuum(shape, FieldId::Idler)?,
        0,
    )?;
    start.signal.a.fill(Complex64::new(0.3, -0.1));
    start.signal.ad.fill(Complex64::new(0.25, 0.15));
    start.idler.a.fill(Complex64::new(-0.2, 0.4));
    start.idler.ad.fill(Complex64::new(0.1, -0.35));
    let drift = single_step_drift(
        chi,
        [0.1, 0.2, 0.05],
        (start.pump.a[0], start.pump.ad[0]),
        (start.signal.a[0], start.signal.ad[0]),
        (start.idler.a[0], start.idler.ad[0]),
        dz,
    );
    let mut acc = EnsembleAccumulator::new(12);
    let mut st = start.clone();
    for t in 0..trajectories {
        st.trajectory_index = t;
        let next = propagate_segment(&st, &seg, &noise, 0)?;
        let inc = [
            next.signal.a[0] - st.signal.a[0],
            next.signal.ad[0] - st.signal.ad[0],
            next.idler.a[0] - st.idler.a[0],
            next.idler.ad[0] - st.idler.ad[0],
            next.pump.a[0] - st.pump.a[0],
            next.pump.ad[0] - st.pump.ad[0],
        ];
        let flat: Vec<f64> = inc.iter().flat_map(|z| [z.re, z.im]).collect();
        acc.push(&flat);
    }
    let mut worst_sigma: f64 = 0.0;
    for (c, d) in drift.iter().flat_map(|z| [z.re, z.im]).enumerate() {
        let e = acc.estimate(c);
        if e.se > 0.0 {
            worst_sigma = worst_sigma.max((e.mean - d).abs() / e.se);
        } else if e.mean != d {
            worst_sigma = f64::INFINITY;
        }
    }
    out.push(check("single_step_drift", 0.0, worst_sigma, 4.0, "largest |mean increment - drift| in standard errors"));

    // cross-bin recovery
    let (chi_r, flux, z) = (2e-5, 1e4, 1.0);
    let delayed = BenchSetup::new(
        shape,
        &PumpProfile::Cw { flux, phase: 0.0 },
        MaterialParams::ideal(chi_r),
        BenchLayout {
            delta_tau_s_ps: 2.0,
            ..BenchLayout::default()
        },
        8,
    )?;
    let mut fast = EnsembleAccumulator::new(4);
    let mut slow = EnsembleAccumulator::new(2);
    for t in 0..trajectories {
        let rec = run_bench(t, &delayed, &noise, &mut ws)?;
        let fa = detector_average(&rec.port_a, 1)?;
        let fb = detector_average(&rec.port_b, 1)?;
        fast.push(&[fa[0].re, fa[1].re, fb[0].re, fb[1].re]);
        let sa = detector_average(&rec.port_a, 2)?;
        let sb = detector_average(&rec.port_b, 2)?;
        slow.push(&[sa[0].re, sb[0].re]);
    }
    let expect = euler_two_stage(chi_r, flux, [8, 8], [z, z], [0.0, 0.0], 0.0, 1.0).visibility();
    let v_fast = visibility(&[fast.mean(0), fast.mean(1)], &[fast.mean(2), fast.mean(3)], 0.0)?;
    let v_slow = visibility(&[slow.mean(0)], &[slow.mean(1)], 0.0)?;
    let se = |acc: &EnsembleAccumulator, a: usize, b: usize| {
        let s = acc.mean(a) + acc.mean(b);
        (acc.estimate(a).se.powi(2) + acc.estimate(b).se.powi(2)).sqrt() / s
    };
    let tol_fast = 4.0 * se(&fast, 0, 2);
    let tol_slow = 4.0 * se(&slow, 0, 1);
    out.push(check("one_bin_misses_cross_term", 0.0, v_fast.values[0], tol_fast, "delayed signal, per-bin detector"));
    out.push(check("two_bin_recovers_cross_term", expect, v_slow.values[0], tol_slow, "delayed signal, two-bin detector"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowgain_examples() {
        assert_eq!(lowgain_pair_flux(1.0, 1.0, 0.0).expected, 0.0);
        let r = lowgain_pair_flux(0.3, 1.0, 1.0);
        assert!((r.expected - 0.0927).abs() < 1e-4);
        let g2: f64 = 0.09;
        let series = g2 * (1.0 + g2 / 3.0);
        assert!((r.expected / series - 1.0).abs() < 1e-3);
        assert!(r.valid);
        assert!(!lowgain_pair_flux(1.0, 2.0, 1.0).valid);
    }

    #[test]
    fn two_stage_examples() {
        let blocked = two_stage_interference(1e-4, 1e4, 1.0, 1.0, 0.7, 0.0);
        assert_eq!(blocked.n_a, blocked.n_b);
        let p = two_stage_interference(1e-4, 1e4, 1.0, 1.0, 0.0, 1.0);
        let q = two_stage_interference(1e-4, 1e4, 1.0, 1.0, std::f64::consts::PI, 1.0);
        assert!((p.n_a - q.n_b).abs() < 1e-15 && (p.n_b - q.n_a).abs() < 1e-15);
        let period = two_stage_interference(1e-4, 1e4, 1.0, 1.0, 0.3 + std::f64::consts::TAU, 1.0);
        let base = two_stage_interference(1e-4, 1e4, 1.0, 1.0, 0.3, 1.0);
        assert!((period.n_a - base.n_a).abs() < 1e-14);
        for k in 1..20 {
            let d = two_stage_interference(1e-4, 1e4, 1.0, 1.0, k as f64 * 0.3, 1.0);
            assert!((d.n_a - d.n_b).abs() <= (p.n_a - p.n_b).abs() + 1e-15);
        }
        // total flux conserved by the beamsplitter
        assert!((p.n_a + p.n_b - p.n_s1 - p.n_s2).abs() < 1e-15);
    }

    #[test]
    fn low_gain_visibility_tracks_transmission() {
        for t in [0.2, 0.5, 0.9] {
            let c = two_stage_interference(1e-5, 1e4, 1.0, 1.0, 0.0, t);
            assert!((c.visibility() - t).abs() < 0.02, "{t} {}", c.visibility());
        }
    }

    #[test]
    fn euler_moments_converge_to_closed_form() {
        let exact = two_stage_interference(2e-5, 1e4, 1.0, 1.0, 0.6, 0.8);
        let coarse = euler_two_stage(2e-5, 1e4, [8, 8], [1.0, 1.0], [0.0, 0.0], 0.6, 0.8);
        let fine = euler_two_stage(2e-5, 1e4, [4000, 4000], [1.0, 1.0], [0.0, 0.0], 0.6, 0.8);
        // a lag of about one step in N
        assert!((coarse.n_s1 / exact.n_s1 - 7.0 / 8.0).abs() < 0.01);
        for (x, y) in [(fine.n_a, exact.n_a), (fine.n_b, exact.n_b), (fine.n_s2, exact.n_s2)] {
            assert!((x / y - 1.0).abs() < 1e-3, "{x} {y}");
        }
        // two Euler steps by hand: n = 2a², starting from vacuum
        let a = 0.01;
        let two = euler_two_stage(a, 1.0, [2, 0], [2.0, 0.0], [0.0, 0.0], 0.0, 1.0);
        assert!((two.n_s1 - 2.0 * a * a).abs() < 1e-18);
    }

    #[test]
    fn window_fraction() {
        assert_eq!(windowed_cross_fraction(0, 1), 1.0);
        assert_eq!(windowed_cross_fraction(3, 1), 0.0);
        assert_eq!(windowed_cross_fraction(4, 16), 0.75);
        assert_eq!(windowed_cross_fraction(20, 16), 0.0);
    }

    #[test]
    fn brute_force_small() {
        for r in brute_force_two_bin(100_000, 5).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
