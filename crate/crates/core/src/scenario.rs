//! Scenario files: one TOML document describing the grid, pump, material,
//! bench layout, detection, ensemble and an optional sweep.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detect::DetectionConfig;
use crate::error::{QniError, Result};
use crate::field::{GridShape, PulseSpec};
use crate::optics::{BenchLayout, BenchSetup, ObjectSpec, PumpProfile};
use crate::sde::MaterialParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Offset added to the run seed when no background seed is given, keeping
/// the background ensemble's noise independent of the reference's. The sum
/// is folded into 63 bits so it stays a valid TOML integer.
pub const BACKGROUND_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub window_ps: f64,
    pub dt_ps: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            window_ps: 512.0,
            dt_ps: 2.0,
        }
    }
}

impl GridConfig {
    pub fn shape(&self) -> Result<GridShape> {
        if !(self.dt_ps > 0.0 && self.dt_ps.is_finite() && self.window_ps.is_finite()) {
            return Err(QniError::InvalidGrid("window and bin duration must be positive and finite".into()));
        }
        let bins = self.window_ps / self.dt_ps;
        if bins < 1.0 || (bins - bins.round()).abs() > 1e-9 * bins {
            return Err(QniError::InvalidGrid(format!(
                "window {} ps is not a whole number of {} ps bins",
                self.window_ps, self.dt_ps
            )));
        }
        GridShape::centered(bins.round() as usize, self.dt_ps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Multiplies every group-velocity offset.
    pub vg_scale: f64,
    /// Multiplies every GVD coefficient.
    pub gvd_scale: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            vg_scale: 1.0,
            gvd_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub nl1_length_m: f64,
    pub nl2_length_m: f64,
    pub delta_tau_s_ps: f64,
    pub delta_tau_i_ps: f64,
    pub steps_per_stage: usize,
    pub object: ObjectSpec,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        let b = BenchLayout::default();
        LayoutConfig {
            nl1_length_m: b.nl1_length_m,
            nl2_length_m: b.nl2_length_m,
            delta_tau_s_ps: b.delta_tau_s_ps,
            delta_tau_i_ps: b.delta_tau_i_ps,
            steps_per_stage: 100,
            object: b.object,
        }
    }
}

impl LayoutConfig {
    pub fn bench(&self) -> BenchLayout {
        BenchLayout {
            nl1_length_m: self.nl1_length_m,
            nl2_length_m: self.nl2_length_m,
            delta_tau_s_ps: self.delta_tau_s_ps,
            delta_tau_i_ps: self.delta_tau_i_ps,
            object: self.object,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Trajectories of a plain run, and of each reference/target ensemble.
    pub trajectories: u64,
    /// Size of the background ensemble for the matched-noise estimator.
    pub background_trajectories: u64,
    pub seed: u64,
    pub background_seed: Option<u64>,
    /// Set false for the classical (noise-free) model.
    pub quantum_noise: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            trajectories: 1 << 10,
            background_trajectories: 1 << 14,
            seed: 1,
            background_seed: None,
            quantum_noise: true,
        }
    }
}

impl EnsembleConfig {
    pub fn background_seed(&self) -> u64 {
        self.background_seed
            .unwrap_or_else(|| self.seed.wrapping_add(BACKGROUND_SEED_OFFSET) & i64::MAX as u64)
    }
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Dphi,
    R,
    /// Real part of the dynamic object's coupling.
    Eta,
    DeltaTauI,
    DeltaTauS,
    VgScale,
    GvdScale,
    AvgBins,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 8] = [
        SweepParameter::Dphi,
        SweepParameter::R,
        SweepParameter::Eta,
        SweepParameter::DeltaTauI,
        SweepParameter::DeltaTauS,
        SweepParameter::VgScale,
        SweepParameter::GvdScale,
        SweepParameter::AvgBins,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Dphi => "dphi",
            SweepParameter::R => "r",
            SweepParameter::Eta => "eta",
            SweepParameter::DeltaTauI => "delta_tau_i",
            SweepParameter::DeltaTauS => "delta_tau_s",
            SweepParameter::VgScale => "vg_scale",
            SweepParameter::GvdScale => "gvd_scale",
            SweepParameter::AvgBins => "avg_bins",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| QniError::param("sweep.parameter", format!("unknown parameter `{name}`")))
    }

    /// Object, timing and detection parameters. Varying only these keeps the
    /// pair generation statistics of the reference, which the matched-noise
    /// estimator relies on.
    pub fn is_target_variation(&self) -> bool {
        !matches!(self, SweepParameter::VgScale | SweepParameter::GvdScale)
    }

    /// Current value of this parameter in `cfg`, if it has one.
    pub fn current(&self, cfg: &ScenarioConfig) -> Option<f64> {
        match (self, cfg.layout.object) {
            (SweepParameter::Dphi, ObjectSpec::Phase { dphi }) => Some(dphi),
            (SweepParameter::Dphi, ObjectSpec::None) => Some(0.0),
            (SweepParameter::R, ObjectSpec::Reflect { r }) => Some(r),
            (SweepParameter::R, ObjectSpec::None) => Some(0.0),
            (SweepParameter::Eta, ObjectSpec::Dynamic { eta, .. }) => Some(eta.re),
            (SweepParameter::DeltaTauI, _) => Some(cfg.layout.delta_tau_i_ps),
            (SweepParameter::DeltaTauS, _) => Some(cfg.layout.delta_tau_s_ps),
            (SweepParameter::VgScale, _) => Some(cfg.scaling.vg_scale),
            (SweepParameter::GvdScale, _) => Some(cfg.scaling.gvd_scale),
            (SweepParameter::AvgBins, _) => Some(cfg.detection.avg_bins as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_pump")]
    pub pump: PumpProfile,
    #[serde(default = "MaterialParams::table_defaults")]
    pub material: MaterialParams,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_pump() -> PumpProfile {
    PumpProfile::Gaussian(PulseSpec {
        peak_flux: 4e8,
        fwhm_ps: 40.0,
        center_ps: 0.0,
        phase: 0.0,
    })
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            grid: GridConfig::default(),
            pump: default_pump(),
            material: MaterialParams::table_defaults(),
            scaling: ScalingConfig::default(),
            layout: LayoutConfig::default(),
            detection: DetectionConfig::default(),
            ensemble: EnsembleConfig::default(),
            sweep: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| QniError::param("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    /// Material after applying the dispersion scaling factors.
    pub fn effective_material(&self) -> MaterialParams {
        self.material.scaled(self.scaling.vg_scale, self.scaling.gvd_scale)
    }

    /// Checks every field and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(QniError::param(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        let shape = self.grid.shape()?;
        for (name, x) in [("vg_scale", self.scaling.vg_scale), ("gvd_scale", self.scaling.gvd_scale)] {
            if !x.is_finite() {
                return Err(QniError::param(name, "must be finite"));
            }
        }
        let material = self.effective_material();
        material.validate()?;
        self.layout.bench().validate(&shape)?;
        if self.layout.steps_per_stage == 0 {
            return Err(QniError::param("steps_per_stage", "must be at least 1"));
        }
        self.detection.validate(shape.bins)?;
        if self.ensemble.trajectories == 0 {
            return Err(QniError::param("trajectories", "must be at least 1"));
        }
        self.pump.build(shape)?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(QniError::param("sweep.values", "must be finite"));
            }
            for &v in &sweep.values {
                self.with_parameter(sweep.parameter, v)?;
            }
        }

        let mut warnings = Vec::new();
        let length = self.layout.nl1_length_m + self.layout.nl2_length_m;
        for (name, f) in [("signal", material.signal), ("idler", material.idler), ("pump", material.pump)] {
            let walk = f.dvg_ps_per_m.abs() * length;
            if walk > 0.4 * shape.window_ps() {
                warnings.push(format!(
                    "{name} walks off {walk:.1} ps over both media, more than 40% of the {:.1} ps window",
                    shape.window_ps()
                ));
            }
        }
        // Pairs stay correlated over one bin of relative walk-off; coarser
        // steps bias the Euler pair flux (low, even negative).
        let relative = (material.signal.dvg_ps_per_m - material.idler.dvg_ps_per_m).abs();
        if relative > 0.0 {
            let coherence = shape.dt_ps / relative;
            let dz = self.layout.nl1_length_m.max(self.layout.nl2_length_m) / self.layout.steps_per_stage as f64;
            if dz > 0.25 * coherence {
                warnings.push(format!(
                    "step {dz:.4} m is more than a quarter of the {coherence:.4} m signal-idler coherence length; \
                     expect step-size bias in pair flux (about {} steps per stage avoid it)",
                    (4.0 * self.layout.nl1_length_m.max(self.layout.nl2_length_m) / coherence).ceil()
                ));
            }
        }
        Ok(warnings)
    }

    /// Copy with one sweep parameter set to `value`.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<ScenarioConfig> {
        let mut out = self.clone();
        match parameter {
            SweepParameter::Dphi => out.layout.object = ObjectSpec::Phase { dphi: value },
            SweepParameter::R => out.layout.object = ObjectSpec::Reflect { r: value },
            SweepParameter::Eta => match &mut out.layout.object {
                ObjectSpec::Dynamic { eta, .. } => *eta = Complex64::new(value, eta.im),
                _ => return Err(QniError::param("eta", "sweeping eta needs a dynamic object")),
            },
            SweepParameter::DeltaTauI => out.layout.delta_tau_i_ps = value,
            SweepParameter::DeltaTauS => out.layout.delta_tau_s_ps = value,
            SweepParameter::VgScale => out.scaling.vg_scale = value,
            SweepParameter::GvdScale => out.scaling.gvd_scale = value,
            SweepParameter::AvgBins => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(QniError::param("avg_bins", format!("{value} is not a positive whole number")));
                }
                out.detection.avg_bins = value as usize;
            }
        }
        out.layout.bench().validate(&out.grid.shape()?)?;
        out.detection.validate(out.grid.shape()?.bins)?;
        Ok(out)
    }

    pub fn build_setup(&self) -> Result<BenchSetup> {
        BenchSetup::new(
            self.grid.shape()?,
            &self.pump,
            self.effective_material(),
            self.layout.bench(),
            self.layout.steps_per_stage,
        )
    }
}
