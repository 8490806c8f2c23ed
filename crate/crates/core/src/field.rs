//! Time-binned field grids in the doubled (α, α†) phase-space basis.
//!
//! Amplitudes carry a photons-per-picosecond flux normalization, so `|a|²`
//! is an intensity and the photon number held by one bin is `Re(ad·a)·dt`.
//! Within one trajectory `a` and `ad` are independent complex numbers; they
//! only agree as conjugates on ensemble average.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QniError, Result};

/// Which optical field a grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldId {
    #[serde(rename = "pump_u")]
    Pump,
    #[serde(rename = "signal_s")]
    Signal,
    #[serde(rename = "idler_i")]
    Idler,
    /// The first-stage signal held back while the second stage runs.
    #[serde(rename = "signal_copy_r")]
    SignalCopy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudePair {
    pub a: Complex64,
    pub ad: Complex64,
}

impl AmplitudePair {
    pub const ZERO: AmplitudePair = AmplitudePair {
        a: Complex64::new(0.0, 0.0),
        ad: Complex64::new(0.0, 0.0),
    };

    /// Normally ordered product `ad·a`; real only on ensemble average.
    pub fn intensity(&self) -> Complex64 {
        self.ad * self.a
    }
}

/// Bin geometry shared by every grid of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub bins: usize,
    pub dt_ps: f64,
    /// Time of the first bin in the co-moving frame.
    pub t0_ps: f64,
}

impl GridShape {
    pub fn new(bins: usize, dt_ps: f64, t0_ps: f64) -> Result<Self> {
        if bins == 0 {
            return Err(QniError::InvalidGrid("bin count must be at least 1".into()));
        }
        if !(dt_ps > 0.0 && dt_ps.is_finite()) {
            return Err(QniError::InvalidGrid(format!(
                "bin duration must be positive and finite, got {dt_ps}"
            )));
        }
        if !t0_ps.is_finite() {
            return Err(QniError::InvalidGrid("window start must be finite".into()));
        }
        Ok(GridShape { bins, dt_ps, t0_ps })
    }

    /// A window of `bins` bins centered on t = 0, so that the middle bin sits at 0.
    pub fn centered(bins: usize, dt_ps: f64) -> Result<Self> {
        Self::new(bins, dt_ps, -(bins as f64 / 2.0).floor() * dt_ps)
    }

    pub fn window_ps(&self) -> f64 {
        self.bins as f64 * self.dt_ps
    }

    pub fn time_ps(&self, bin: usize) -> f64 {
        self.t0_ps + bin as f64 * self.dt_ps
    }

    /// Converts a time offset to a whole number of bins.
    pub fn offset_bins(&self, offset_ps: f64) -> Result<isize> {
        let bins = offset_ps / self.dt_ps;
        let rounded = bins.round();
        if !bins.is_finite() || (bins - rounded).abs() > 1e-9 * rounded.abs().max(1.0) {
            return Err(QniError::NonIntegerShift {
                offset_ps,
                dt_ps: self.dt_ps,
            });
        }
        Ok(rounded as isize)
    }
}

/// Gaussian pulse in intensity: `flux(t) = peak · exp(-4 ln2 (t - center)² / fwhm²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Peak flux in photons/ps.
    pub peak_flux: f64,
    /// Full width at half maximum of the intensity profile.
    pub fwhm_ps: f64,
    pub center_ps: f64,
    pub phase: f64,
}

impl PulseSpec {
    /// Time-integrated photon number of the continuous pulse.
    pub fn energy_photons(&self) -> f64 {
        self.peak_flux * self.fwhm_ps * (std::f64::consts::PI / (4.0 * std::f64::consts::LN_2)).sqrt()
    }
}

/// One optical field as a sequence of time bins.
///
/// Storage is split into `a` and `ad` arrays so that the spectral step can
/// transform each half in place.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub id: FieldId,
    pub shape: GridShape,
    pub a: Vec<Complex64>,
    pub ad: Vec<Complex64>,
}

impl FieldGrid {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dt_ps(&self) -> f64 {
        self.shape.dt_ps
    }

    pub fn pair(&self, bin: usize) -> AmplitudePair {
        AmplitudePair {
            a: self.a[bin],
            ad: self.ad[bin],
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = AmplitudePair> + '_ {
        self.a
            .iter()
            .zip(&self.ad)
            .map(|(&a, &ad)| AmplitudePair { a, ad })
    }

    pub fn with_id(mut self, id: FieldId) -> Self {
        self.id = id;
        self
    }

    /// `Σ|a|²` over bins.
    pub fn norm_sqr_a(&self) -> f64 {
        self.a.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Σ|ad|²` over bins.
    pub fn norm_sqr_ad(&self) -> f64 {
        self.ad.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Single-trajectory photon number estimate `Σ Re(ad·a)·dt`.
    pub fn photon_number(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.ad)
            .map(|(a, ad)| (ad * a).re)
            .sum::<f64>()
            * self.shape.dt_ps
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().chain(&self.ad).all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn same_shape(&self, other: &FieldGrid) -> bool {
        self.shape == other.shape && self.len() == other.len()
    }

    pub fn scale(&mut self, a_factor: Complex64, ad_factor: Complex64) {
        self.a.iter_mut().for_each(|z| *z *= a_factor);
        self.ad.iter_mut().for_each(|z| *z *= ad_factor);
    }
}

pub fn make_vacuum(shape: GridShape, id: FieldId) -> Result<FieldGrid> {
    let shape = GridShape::new(shape.bins, shape.dt_ps, shape.t0_ps)?;
    Ok(FieldGrid {
        id,
        shape,
        a: vec![Complex64::new(0.0, 0.0); shape.bins],
        ad: vec![Complex64::new(0.0, 0.0); shape.bins],
    })
}

/// Coherent Gaussian pulse; `ad` is the exact conjugate of `a` at creation.
pub fn make_coherent_pulse(shape: GridShape, id: FieldId, pulse: &PulseSpec) -> Result<FieldGrid> {
    if !(pulse.peak_flux >= 0.0 && pulse.peak_flux.is_finite()) {
        return Err(QniError::param("peak_flux", "must be finite and non-negative"));
    }
    if !(pulse.fwhm_ps > 0.0 && pulse.fwhm_ps.is_finite()) {
        return Err(QniError::param("fwhm_ps", "must be positive"));
    }
    if !pulse.phase.is_finite() || !pulse.center_ps.is_finite() {
        return Err(QniError::param("pulse", "center and phase must be finite"));
    }
    let mut grid = make_vacuum(shape, id)?;
    let win_lo = shape.t0_ps;
    let win_hi = shape.t0_ps + shape.window_ps();
    let lo = pulse.center_ps - 1.5 * pulse.fwhm_ps;
    let hi = pulse.center_ps + 1.5 * pulse.fwhm_ps;
    if lo < win_lo || hi > win_hi {
        return Err(QniError::PulseOutsideWindow {
            lo_ps: lo,
            hi_ps: hi,
            win_lo_ps: win_lo,
            win_hi_ps: win_hi,
        });
    }
    if pulse.peak_flux == 0.0 {
        return Ok(grid);
    }
    let carrier = Complex64::from_polar(1.0, pulse.phase);
    let k = 4.0 * std::f64::consts::LN_2 / (pulse.fwhm_ps * pulse.fwhm_ps);
    for j in 0..shape.bins {
        let t = shape.time_ps(j) - pulse.center_ps;
        let amp = (pulse.peak_flux * (-k * t * t).exp()).sqrt();
        grid.a[j] = carrier * amp;
        grid.ad[j] = grid.a[j].conj();
    }
    Ok(grid)
}

/// Constant-flux field filling the whole window (the CW-equivalent pump).
pub fn make_cw(shape: GridShape, id: FieldId, flux: f64, phase: f64) -> Result<FieldGrid> {
    if !(flux >= 0.0 && flux.is_finite()) {
        return Err(QniError::param("flux", "must be finite and non-negative"));
    }
    let mut grid = make_vacuum(shape, id)?;
    let a = Complex64::from_polar(flux.sqrt(), phase);
    grid.a.fill(a);
    grid.ad.fill(a.conj());
    Ok(grid)
}

/// Circular shift by a whole number of bins; positive offsets delay the field.
pub fn shift_grid(grid: &FieldGrid, offset_ps: f64) -> Result<FieldGrid> {
    let mut out = grid.clone();
    shift_grid_in_place(&mut out, offset_ps)?;
    Ok(out)
}

pub fn shift_grid_in_place(grid: &mut FieldGrid, offset_ps: f64) -> Result<()> {
    let bins = grid.shape.offset_bins(offset_ps)?;
    let n = grid.len() as isize;
    if n == 0 {
        return Ok(());
    }
    let k = bins.rem_euclid(n) as usize;
    grid.a.rotate_right(k);
    grid.ad.rotate_right(k);
    Ok(())
}

/// All co-propagating fields of one stochastic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub pump: FieldGrid,
    pub signal: FieldGrid,
    pub idler: FieldGrid,
    pub signal_copy: Option<FieldGrid>,
    pub z_m: f64,
    pub trajectory_index: u64,
}

impl TrajectoryState {
    pub fn new(pump: FieldGrid, signal: FieldGrid, idler: FieldGrid, trajectory_index: u64) -> Result<Self> {
        if !(pump.same_shape(&signal) && pump.same_shape(&idler)) {
            return Err(QniError::ShapeMismatch(
                "pump, signal and idler grids must share bin count and duration".into(),
            ));
        }
        Ok(TrajectoryState {
            pump: pump.with_id(FieldId::Pump),
            signal: signal.with_id(FieldId::Signal),
            idler: idler.with_id(FieldId::Idler),
            signal_copy: None,
            z_m: 0.0,
            trajectory_index,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.pump.shape
    }

    pub fn field(&self, id: FieldId) -> Option<&FieldGrid> {
        match id {
            FieldId::Pump => Some(&self.pump),
            FieldId::Signal => Some(&self.signal),
            FieldId::Idler => Some(&self.idler),
            FieldId::SignalCopy => self.signal_copy.as_ref(),
        }
    }

    /// Photon numbers `(n_s, n_i, n_u)` of this trajectory.
    pub fn photon_numbers(&self) -> PhotonNumbers {
        PhotonNumbers {
            signal: self.signal.photon_number(),
            idler: self.idler.photon_number(),
            pump: self.pump.photon_number(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhotonNumbers {
    pub signal: f64,
    pub idler: f64,
    pub pump: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn standard() -> GridShape {
        GridShape::centered(256, 2.0).unwrap()
    }

    #[test]
    fn vacuum_is_zero() {
        let g = make_vacuum(standard(), FieldId::Signal).unwrap();
        assert_eq!(g.len(), 256);
        assert!(g.is_zero());
        assert_eq!(g.photon_number(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridShape::new(0, 2.0, 0.0).is_err());
        assert!(GridShape::new(8, 0.0, 0.0).is_err());
        assert!(GridShape::new(8, -1.0, 0.0).is_err());
        let bad = GridShape { bins: 4, dt_ps: -2.0, t0_ps: 0.0 };
        assert!(make_vacuum(bad, FieldId::Pump).is_err());
    }

    #[test]
    fn gaussian_energy_matches_closed_form() {
        let shape = standard();
        let pulse = PulseSpec { peak_flux: 4e8, fwhm_ps: 40.0, center_ps: 0.0, phase: 0.0 };
        let g = make_coherent_pulse(shape, FieldId::Pump, &pulse).unwrap();
        // center bin holds the maximum
        let (imax, _) = g
            .a
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().partial_cmp(&y.1.norm()).unwrap())
            .unwrap();
        assert_eq!(imax, 128);
        assert_eq!(shape.time_ps(imax), 0.0);
        // ∫ P exp(-4 ln2 t²/w²) dt = P w √(π / 4 ln2)
        let analytic = 4e8 * 40.0 * (PI / (4.0 * 2f64.ln())).sqrt();
        let summed = g.norm_sqr_a() * shape.dt_ps;
        assert!((summed / analytic - 1.0).abs() < 1e-3, "{summed} vs {analytic}");
        for p in g.pairs() {
            assert_eq!(p.ad, p.a.conj());
        }
    }

    #[test]
    fn zero_flux_pulse_is_vacuum() {
        let pulse = PulseSpec { peak_flux: 0.0, fwhm_ps: 40.0, center_ps: 0.0, phase: 1.0 };
        let g = make_coherent_pulse(standard(), FieldId::Pump, &pulse).unwrap();
        assert_eq!(g, make_vacuum(standard(), FieldId::Pump).unwrap());
    }

    #[test]
    fn pi_phase_negates_amplitude() {
        let p0 = PulseSpec { peak_flux: 10.0, fwhm_ps: 40.0, center_ps: 0.0, phase: 0.0 };
        let p1 = PulseSpec { phase: PI, ..p0 };
        let g0 = make_coherent_pulse(standard(), FieldId::Pump, &p0).unwrap();
        let g1 = make_coherent_pulse(standard(), FieldId::Pump, &p1).unwrap();
        for (x, y) in g0.a.iter().zip(&g1.a) {
            assert!((x + y).norm() < 1e-12 * x.norm().max(1e-300));
            assert!((x.norm_sqr() - y.norm_sqr()).abs() <= 1e-12 * x.norm_sqr());
        }
    }

    #[test]
    fn pulse_wider_than_window_is_rejected() {
        let pulse = PulseSpec { peak_flux: 1.0, fwhm_ps: 200.0, center_ps: 0.0, phase: 0.0 };
        let err = make_coherent_pulse(standard(), FieldId::Pump, &pulse).unwrap_err();
        assert!(matches!(err, QniError::PulseOutsideWindow { .. }));
        let off_center = PulseSpec { peak_flux: 1.0, fwhm_ps: 40.0, center_ps: 240.0, phase: 0.0 };
        assert!(make_coherent_pulse(standard(), FieldId::Pump, &off_center).is_err());
    }

    #[test]
    fn shift_by_twenty_ps_is_ten_bins() {
        let pulse = PulseSpec { peak_flux: 1.0, fwhm_ps: 40.0, center_ps: 0.0, phase: 0.0 };
        let g = make_coherent_pulse(standard(), FieldId::Signal, &pulse).unwrap();
        let s = shift_grid(&g, 20.0).unwrap();
        for j in 0..256 {
            assert_eq!(s.a[(j + 10) % 256], g.a[j]);
            assert_eq!(s.ad[(j + 10) % 256], g.ad[j]);
        }
        assert_eq!(shift_grid(&g, 0.0).unwrap(), g);
        assert_eq!(shift_grid(&s, -20.0).unwrap(), g);
    }

    #[test]
    fn fractional_shift_is_rejected() {
        let g = make_vacuum(standard(), FieldId::Signal).unwrap();
        assert!(matches!(
            shift_grid(&g, 3.0).unwrap_err(),
            QniError::NonIntegerShift { .. }
        ));
    }

    #[test]
    fn trajectory_rejects_mismatched_grids() {
        let a = make_vacuum(standard(), FieldId::Pump).unwrap();
        let b = make_vacuum(GridShape::centered(128, 2.0).unwrap(), FieldId::Signal).unwrap();
        assert!(TrajectoryState::new(a.clone(), b, a.clone(), 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid_from(values: &[(f64, f64, f64, f64)]) -> FieldGrid {
            let shape = GridShape::centered(values.len(), 2.0).unwrap();
            FieldGrid {
                id: FieldId::Signal,
                shape,
                a: values.iter().map(|v| Complex64::new(v.0, v.1)).collect(),
                ad: values.iter().map(|v| Complex64::new(v.2, v.3)).collect(),
            }
        }

        proptest! {
            #[test]
            fn shift_conserves_norms_and_inverts(
                values in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..64),
                k in -200i32..200,
            ) {
                let g = grid_from(&values);
                let s = shift_grid(&g, 2.0 * k as f64).unwrap();
                let mut a0: Vec<f64> = g.a.iter().map(|z| z.norm_sqr()).collect();
                let mut a1: Vec<f64> = s.a.iter().map(|z| z.norm_sqr()).collect();
                a0.sort_by(f64::total_cmp);
                a1.sort_by(f64::total_cmp);
                prop_assert_eq!(a0, a1);
                prop_assert_eq!(shift_grid(&s, -2.0 * k as f64).unwrap(), g);
            }
        }
    }
}
