//! Fixtures shared by the benchmarks.

use qni_core::{make_coherent_pulse, make_vacuum, FieldId, GridShape, PulseSpec, TrajectoryState};

/// A 40 ps pump pulse in a window of `bins` 2 ps bins, vacuum signal and idler.
pub fn pulsed_state(bins: usize, peak_flux: f64) -> TrajectoryState {
    let shape = GridShape::centered(bins, 2.0).expect("valid grid");
    let pump = make_coherent_pulse(
        shape,
        FieldId::Pump,
        &PulseSpec {
            peak_flux,
            fwhm_ps: 40.0,
            center_ps: 0.0,
            phase: 0.0,
        },
    )
    .expect("pulse fits");
    TrajectoryState::new(
        pump,
        make_vacuum(shape, FieldId::Signal).expect("valid grid"),
        make_vacuum(shape, FieldId::Idler).expect("valid grid"),
        0,
    )
    .expect("shapes agree")
}
