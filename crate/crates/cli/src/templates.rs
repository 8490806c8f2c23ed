//! Starter scenario files printed by `qni template`.

/// Flat pump, no dispersion, a phase sweep of the idler object.
pub const CW_PHASE_SWEEP: &str = r#"schema_version = 1

[grid]
window_ps = 32.0
dt_ps = 2.0

[pump]
kind = "cw"
flux = 10000.0
phase = 0.0

# chi = [re, im] in 1/m per (photon/ps); chi * flux * length is the stage gain
[material]
chi = [2e-5, 0.0]
pump = { loss_per_m = 0.0, dvg_ps_per_m = 0.0, gvd_ps2_per_km = 0.0, center_freq_thz = 390.5 }
signal = { loss_per_m = 0.0, dvg_ps_per_m = 0.0, gvd_ps2_per_km = 0.0, center_freq_thz = 428.0 }
idler = { loss_per_m = 0.0, dvg_ps_per_m = 0.0, gvd_ps2_per_km = 0.0, center_freq_thz = 353.0 }

[layout]
nl1_length_m = 1.0
nl2_length_m = 1.0
delta_tau_s_ps = 0.0
delta_tau_i_ps = 0.0
steps_per_stage = 100
object = { kind = "phase", dphi = 0.0 }

[detection]
avg_bins = 1

[ensemble]
trajectories = 4096
background_trajectories = 65536
seed = 1

[sweep]
parameter = "dphi"
values = [0.0, 0.7853981633974483, 1.5707963267948966, 2.356194490192345, 3.141592653589793]
"#;

/// The pulsed standard: 40 ps pump in a 512 ps window of 2 ps bins, silica
/// fibre dispersion, 20 ps signal delay, 32-bin detectors.
pub const PULSED: &str = r#"schema_version = 1

[grid]
window_ps = 512.0
dt_ps = 2.0

[pump]
kind = "gaussian"
peak_flux = 400000000.0
fwhm_ps = 40.0
center_ps = 0.0
phase = 0.0

[scaling]
vg_scale = 1.0
gvd_scale = 1.0

[layout]
nl1_length_m = 1.0
nl2_length_m = 1.0
delta_tau_s_ps = 20.0
delta_tau_i_ps = 0.0
steps_per_stage = 400

[detection]
avg_bins = 32
offset_fraction = 0.0005

[ensemble]
trajectories = 1024
background_trajectories = 16384
seed = 1
"#;

pub fn by_name(name: &str) -> Option<&'static str> {
    match name {
        "cw" => Some(CW_PHASE_SWEEP),
        "pulsed" => Some(PULSED),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qni_core::ScenarioConfig;

    #[test]
    fn templates_parse() {
        for t in [CW_PHASE_SWEEP, PULSED] {
            ScenarioConfig::from_toml(t).unwrap();
        }
        let pulsed = ScenarioConfig::from_toml(PULSED).unwrap();
        let mut defaults = ScenarioConfig::default();
        defaults.ensemble.trajectories = 1024;
        defaults.ensemble.background_trajectories = 16384;
        defaults.layout.steps_per_stage = 400;
        assert_eq!(pulsed, defaults);
    }
}
