//! The two-stage interferometer: first medium, idler object, second medium
//! with a fresh pump, and the output beamsplitter.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QniError, Result};
use crate::field::{make_coherent_pulse, make_cw, make_vacuum, shift_grid_in_place, FieldGrid, FieldId, GridShape, PulseSpec, TrajectoryState};
use crate::noise::NoiseSource;
use crate::sde::{MaterialParams, Segment, StepPlan, Workspace};
use crate::dispersion::{DispersionCoefficients, SpectralPhasePlan};

/// What the idler meets between the two media.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectSpec {
    #[default]
    None,
    Phase {
        dphi: f64,
    },
    /// Amplitude reflectivity; the transmitted amplitude is `sqrt(1 - r²)`.
    Reflect {
        r: f64,
    },
    /// A damped excitation driven by the idler that acts back on it.
    Dynamic {
        eta: Complex64,
        /// Damping rate (1/ps).
        gamma_o: f64,
        beta0: Complex64,
        /// Switch-on time; the excitation is zero before it.
        t_o_ps: f64,
        interaction_length_m: f64,
    },
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObjectSpec::None => Ok(()),
            ObjectSpec::Phase { dphi } => {
                if dphi.is_finite() {
                    Ok(())
                } else {
                    Err(QniError::param("dphi", "must be finite"))
                }
            }
            ObjectSpec::Reflect { r } => transmission(r).map(|_| ()),
            ObjectSpec::Dynamic {
                eta,
                gamma_o,
                beta0,
                t_o_ps,
                interaction_length_m,
            } => {
                let finite = [eta.re, eta.im, gamma_o, beta0.re, beta0.im, t_o_ps, interaction_length_m]
                    .iter()
                    .all(|x| x.is_finite());
                if !finite {
                    return Err(QniError::param("object", "dynamic parameters must be finite"));
                }
                if gamma_o < 0.0 {
                    return Err(QniError::param("gamma_o", "must be non-negative"));
                }
                if interaction_length_m < 0.0 {
                    return Err(QniError::param("interaction_length_m", "must be non-negative"));
                }
                Ok(())
            }
        }
    }
}

/// Excitation amplitudes of a dynamic object at one time bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicObjectState {
    pub beta: Complex64,
    pub beta_dagger: Complex64,
    pub t_ps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchLayout {
    pub nl1_length_m: f64,
    pub nl2_length_m: f64,
    /// Delay of the stored first-stage signal at the beamsplitter.
    pub delta_tau_s_ps: f64,
    /// Delay of the idler on its way into the second medium.
    pub delta_tau_i_ps: f64,
    pub object: ObjectSpec,
}

impl Default for BenchLayout {
    fn default() -> Self {
        BenchLayout {
            nl1_length_m: 1.0,
            nl2_length_m: 1.0,
            delta_tau_s_ps: 20.0,
            delta_tau_i_ps: 0.0,
            object: ObjectSpec::None,
        }
    }
}

impl BenchLayout {
    pub fn validate(&self, shape: &GridShape) -> Result<()> {
        for (name, l) in [("nl1_length_m", self.nl1_length_m), ("nl2_length_m", self.nl2_length_m)] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(QniError::param(name, "must be positive"));
            }
        }
        shape.offset_bins(self.delta_tau_s_ps)?;
        shape.offset_bins(self.delta_tau_i_ps)?;
        self.object.validate()
    }
}

pub fn apply_phase_object(idler: &FieldGrid, dphi: f64) -> FieldGrid {
    let mut out = idler.clone();
    let p = Complex64::from_polar(1.0, dphi);
    out.scale(p, p.conj());
    out
}

fn transmission(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(QniError::param("r", format!("reflectivity {r} outside [0, 1]")));
    }
    Ok(if r == 1.0 { 0.0 } else { (1.0 - r * r).sqrt() })
}

/// Pure damping of both amplitudes by `sqrt(1 - r²)`; no noise is added.
pub fn apply_reflective_object(idler: &FieldGrid, r: f64) -> Result<FieldGrid> {
    let t = Complex64::new(transmission(r)?, 0.0);
    let mut out = idler.clone();
    out.scale(t, t);
    Ok(out)
}

/// Integrates the object excitation across the grid, driven by the
/// incoming field.
///
/// Each bin advances with the exact solution for a field held constant over
/// the bin, which stays stable however strongly the object is damped:
/// `β ← e^{-γ dt} β + η* α (1 - e^{-γ dt}) / γ`, and the twin with `η α†`.
/// Bins before the switch-on time hold zero excitation.
pub fn integrate_object_response(
    field: &FieldGrid,
    eta: Complex64,
    gamma_o: f64,
    beta0: Complex64,
    t_o_ps: f64,
) -> Result<Vec<DynamicObjectState>> {
    let shape = field.shape;
    let dt = shape.dt_ps;
    let decay = (-gamma_o * dt).exp();
    let gain = if gamma_o == 0.0 { dt } else { -(-gamma_o * dt).exp_m1() / gamma_o };
    let start = ((t_o_ps - shape.t0_ps) / dt).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(field.len());
    let (mut b, mut bd) = (beta0, beta0.conj());
    for k in 0..field.len() {
        let t_ps = shape.time_ps(k);
        if k < start {
            out.push(DynamicObjectState {
                beta: Complex64::default(),
                beta_dagger: Complex64::default(),
                t_ps,
            });
            continue;
        }
        if !(b.re.is_finite() && b.im.is_finite() && bd.re.is_finite() && bd.im.is_finite()) {
            return Err(QniError::ObjectDivergence { t_index: k });
        }
        out.push(DynamicObjectState {
            beta: b,
            beta_dagger: bd,
            t_ps,
        });
        b = decay * b + eta.conj() * field.a[k] * gain;
        bd = decay * bd + eta * field.ad[k] * gain;
    }
    Ok(out)
}

/// Two passes: integrate the excitation over time, then let it act back on
/// the field over the interaction length, `α -= ½ η β L`, `α† -= ½ η* β† L`.
pub fn apply_dynamic_object(idler: &FieldGrid, spec: &ObjectSpec) -> Result<FieldGrid> {
    let ObjectSpec::Dynamic {
        eta,
        gamma_o,
        beta0,
        t_o_ps,
        interaction_length_m,
    } = *spec
    else {
        return Err(QniError::param("object", "apply_dynamic_object needs a dynamic object"));
    };
    spec.validate()?;
    let trace = integrate_object_response(idler, eta, gamma_o, beta0, t_o_ps)?;
    let mut out = idler.clone();
    let half = 0.5 * interaction_length_m;
    for (k, st) in trace.iter().enumerate() {
        out.a[k] -= half * eta * st.beta;
        out.ad[k] -= half * eta.conj() * st.beta_dagger;
    }
    Ok(out)
}

pub fn apply_object(idler: &FieldGrid, object: &ObjectSpec) -> Result<FieldGrid> {
    match *object {
        ObjectSpec::None => Ok(idler.clone()),
        ObjectSpec::Phase { dphi } => Ok(apply_phase_object(idler, dphi)),
        ObjectSpec::Reflect { r } => apply_reflective_object(idler, r),
        ObjectSpec::Dynamic { .. } => apply_dynamic_object(idler, object),
    }
}

/// Balanced beamsplitter `A = (1 + 2)/√2`, `B = (1 - 2)/√2`, with the same
/// real coefficients on the daggered amplitudes.
pub fn apply_beamsplitter(s1: &FieldGrid, s2: &FieldGrid) -> Result<(FieldGrid, FieldGrid)> {
    if !s1.same_shape(s2) {
        return Err(QniError::ShapeMismatch("beamsplitter inputs differ in shape".into()));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = s1.clone();
    let mut b = s1.clone();
    for k in 0..s1.len() {
        a.a[k] = (s1.a[k] + s2.a[k]) * h;
        b.a[k] = (s1.a[k] - s2.a[k]) * h;
        a.ad[k] = (s1.ad[k] + s2.ad[k]) * h;
        b.ad[k] = (s1.ad[k] - s2.ad[k]) * h;
    }
    Ok((a, b))
}

/// Temporal pump profile, recreated fresh for each medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PumpProfile {
    Gaussian(PulseSpec),
    /// Constant flux across the window.
    Cw { flux: f64, phase: f64 },
}

impl PumpProfile {
    pub fn build(&self, shape: GridShape) -> Result<FieldGrid> {
        match self {
            PumpProfile::Gaussian(p) => make_coherent_pulse(shape, FieldId::Pump, p),
            PumpProfile::Cw { flux, phase } => make_cw(shape, FieldId::Pump, *flux, *phase),
        }
    }

    pub fn peak_flux(&self) -> f64 {
        match self {
            PumpProfile::Gaussian(p) => p.peak_flux,
            PumpProfile::Cw { flux, .. } => *flux,
        }
    }
}

/// Everything a trajectory needs, prepared once per scenario.
#[derive(Debug, Clone)]
pub struct BenchSetup {
    pub shape: GridShape,
    pub layout: BenchLayout,
    pump: FieldGrid,
    nl1: Segment,
    nl2: Segment,
    shift_s: isize,
    shift_i: isize,
    /// Removes the idler's first-medium group delay so that a zero idler
    /// offset meets the fresh pump.
    idler_sync: SpectralPhasePlan,
}

impl BenchSetup {
    pub fn new(shape: GridShape, pump: &PumpProfile, params: MaterialParams, layout: BenchLayout, steps_per_stage: usize) -> Result<Self> {
        layout.validate(&shape)?;
        let pump = pump.build(shape)?;
        let nl1 = Segment::new(params, StepPlan::for_length(layout.nl1_length_m, steps_per_stage)?, shape)?;
        let nl2 = Segment::new(params, StepPlan::for_length(layout.nl2_length_m, steps_per_stage)?, shape)?;
        let walk = -params.idler.dvg_ps_per_m * layout.nl1_length_m;
        let idler_sync = SpectralPhasePlan::new(shape.bins, shape.dt_ps, DispersionCoefficients { delay_ps: walk, gvd_ps2: 0.0 })?;
        Ok(BenchSetup {
            idler_sync,
            shape,
            layout,
            shift_s: shape.offset_bins(layout.delta_tau_s_ps)?,
            shift_i: shape.offset_bins(layout.delta_tau_i_ps)?,
            pump,
            nl1,
            nl2,
        })
    }

    pub fn pump(&self) -> &FieldGrid {
        &self.pump
    }

    pub fn first_stage(&self) -> &Segment {
        &self.nl1
    }

    pub fn second_stage(&self) -> &Segment {
        &self.nl2
    }

    /// A fresh first-medium input: coherent pump, vacuum signal and idler.
    pub fn initial_state(&self, trajectory_index: u64) -> Result<TrajectoryState> {
        TrajectoryState::new(
            self.pump.clone(),
            make_vacuum(self.shape, FieldId::Signal)?,
            make_vacuum(self.shape, FieldId::Idler)?,
            trajectory_index,
        )
    }

    pub fn signal_shift_bins(&self) -> isize {
        self.shift_s
    }

    pub fn idler_shift_bins(&self) -> isize {
        self.shift_i
    }
}

/// Per-bin amplitudes at the two detectors and of the two signals before
/// they meet.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub port_a: FieldGrid,
    pub port_b: FieldGrid,
    pub signal1: FieldGrid,
    pub signal2: FieldGrid,
}

/// One trajectory through the whole interferometer. Stage 0 noise drives the
/// first medium and stage 1 the second.
pub fn run_bench(trajectory_index: u64, setup: &BenchSetup, noise: &NoiseSource, workspace: &mut Workspace) -> Result<DetectorRecord> {
    let mut st = setup.initial_state(trajectory_index)?;
    setup.nl1.propagate(&mut st, noise, 0, workspace)?;

    let TrajectoryState { signal, idler, .. } = st;
    let mut s1 = signal.with_id(FieldId::SignalCopy);
    let mut idler = apply_object(&idler, &setup.layout.object)?;
    if !setup.idler_sync.is_identity() {
        setup.idler_sync.apply_in_place(&mut idler, &mut workspace.fft_scratch)?;
    }
    shift_grid_in_place(&mut idler, setup.layout.delta_tau_i_ps)?;

    let mut st2 = TrajectoryState::new(setup.pump.clone(), make_vacuum(setup.shape, FieldId::Signal)?, idler, trajectory_index)?;
    setup.nl2.propagate(&mut st2, noise, 1, workspace)?;

    shift_grid_in_place(&mut s1, setup.layout.delta_tau_s_ps)?;
    let (port_a, port_b) = apply_beamsplitter(&s1, &st2.signal)?;
    Ok(DetectorRecord {
        port_a,
        port_b,
        signal1: s1,
        signal2: st2.signal,
    })
}
