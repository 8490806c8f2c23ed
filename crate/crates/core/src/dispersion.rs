//! Group-velocity offset and GVD as spectral phase multiplication.
//!
//! With the forward transform `â(ω) = Σ a(t) e^{-iωt}` a delay `τ` is the
//! factor `e^{-iωτ}`, so a field with group-velocity offset `Δv_g` (ps/m)
//! propagated over `L` is multiplied by `H(ω) = exp(-i[Δv_g L ω + ½ d₂ L ω²])`.
//! The daggered amplitude gets the mirrored conjugate `H(-ω)*`, which keeps
//! `ad` equal to `conj(a)` whenever it was before, so conjugacy survives on
//! ensemble average.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{QniError, Result};
use crate::field::FieldGrid;

/// Delay and chirp accumulated over one application length.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DispersionCoefficients {
    /// `Δv_g · L` in ps.
    pub delay_ps: f64,
    /// `d₂ · L` in ps².
    pub gvd_ps2: f64,
}

impl DispersionCoefficients {
    /// From table units: `Δv_g` in ps/m, `d₂` in ps²/km, length in m.
    pub fn from_material(dvg_ps_per_m: f64, gvd_ps2_per_km: f64, length_m: f64) -> Self {
        DispersionCoefficients {
            delay_ps: dvg_ps_per_m * length_m,
            gvd_ps2: gvd_ps2_per_km * 1e-3 * length_m,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.delay_ps == 0.0 && self.gvd_ps2 == 0.0
    }
}

/// Angular frequency (rad/ps) of DFT bin `k`, centered on the carrier.
pub fn angular_frequency(k: usize, bins: usize, dt_ps: f64) -> f64 {
    let n = bins as i64;
    let k = k as i64;
    let signed = if k < (n + 1) / 2 { k } else { k - n };
    std::f64::consts::TAU * signed as f64 / (n as f64 * dt_ps)
}

/// Precomputed spectral phase factors (1/N normalization folded in).
#[derive(Clone)]
pub struct SpectralPhasePlan {
    bins: usize,
    dt_ps: f64,
    coefficients: DispersionCoefficients,
    phase_a: Vec<Complex64>,
    phase_ad: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralPhasePlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPhasePlan")
            .field("bins", &self.bins)
            .field("dt_ps", &self.dt_ps)
            .field("coefficients", &self.coefficients)
            .finish()
    }
}

impl SpectralPhasePlan {
    pub fn new(bins: usize, dt_ps: f64, coefficients: DispersionCoefficients) -> Result<Self> {
        let mut planner = FftPlanner::new();
        Self::with_planner(&mut planner, bins, dt_ps, coefficients)
    }

    pub fn with_planner(
        planner: &mut FftPlanner<f64>,
        bins: usize,
        dt_ps: f64,
        coefficients: DispersionCoefficients,
    ) -> Result<Self> {
        if bins == 0 || !(dt_ps > 0.0) {
            return Err(QniError::InvalidGrid("dispersion plan needs bins > 0 and dt > 0".into()));
        }
        if !coefficients.delay_ps.is_finite() || !coefficients.gvd_ps2.is_finite() {
            return Err(QniError::param("dispersion", "coefficients must be finite"));
        }
        let norm = 1.0 / bins as f64;
        let phase = |w: f64| coefficients.delay_ps * w + 0.5 * coefficients.gvd_ps2 * w * w;
        let mut phase_a = Vec::with_capacity(bins);
        let mut phase_ad = Vec::with_capacity(bins);
        for k in 0..bins {
            let w = angular_frequency(k, bins, dt_ps);
            phase_a.push(Complex64::from_polar(norm, -phase(w)));
            phase_ad.push(Complex64::from_polar(norm, -phase(-w)).conj());
        }
        Ok(SpectralPhasePlan {
            bins,
            dt_ps,
            coefficients,
            phase_a,
            phase_ad,
            forward: planner.plan_fft_forward(bins),
            inverse: planner.plan_fft_inverse(bins),
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn coefficients(&self) -> DispersionCoefficients {
        self.coefficients
    }

    pub fn is_identity(&self) -> bool {
        self.coefficients.is_zero()
    }

    /// Scratch length needed by [`apply_in_place`](Self::apply_in_place).
    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    pub fn apply_in_place(&self, grid: &mut FieldGrid, scratch: &mut Vec<Complex64>) -> Result<()> {
        if grid.len() != self.bins || grid.shape.dt_ps != self.dt_ps {
            return Err(QniError::ShapeMismatch(format!(
                "plan for {} bins of {} ps applied to {} bins of {} ps",
                self.bins,
                self.dt_ps,
                grid.len(),
                grid.shape.dt_ps
            )));
        }
        if self.is_identity() {
            return Ok(());
        }
        let need = self.scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        let scratch = &mut scratch[..need];
        for (data, phase) in [(&mut grid.a, &self.phase_a), (&mut grid.ad, &self.phase_ad)] {
            self.forward.process_with_scratch(data, scratch);
            data.iter_mut().zip(phase).for_each(|(z, p)| *z *= p);
            self.inverse.process_with_scratch(data, scratch);
        }
        Ok(())
    }
}

pub fn apply_dispersion(grid: &FieldGrid, plan: &SpectralPhasePlan) -> Result<FieldGrid> {
    let mut out = grid.clone();
    let mut scratch = Vec::new();
    plan.apply_in_place(&mut out, &mut scratch)?;
    Ok(out)
}
