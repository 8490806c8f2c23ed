//! Positive-P ensemble simulation of a pulsed two-stage nonlinear
//! interferometer.

pub mod detect;
pub mod dispersion;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod noise;
pub mod optics;
pub mod oracles;
pub mod scenario;
pub mod sde;
pub mod stats;

pub use detect::{detector_average, matched_estimate, visibility, DetectionConfig, EstimatorTriple, MatchedEstimate};
pub use dispersion::{apply_dispersion, DispersionCoefficients, SpectralPhasePlan};
pub use ensemble::{
    corrected_observables, par_ensemble, run_ensemble, run_paired, run_paired_many, EnsembleRun, PairedRun, WindowObservables,
};
pub use error::{QniError, Result};
pub use field::{
    make_coherent_pulse, make_cw, make_vacuum, shift_grid, AmplitudePair, FieldGrid, FieldId, GridShape, PulseSpec,
    TrajectoryState,
};
pub use noise::{NoiseDraw, NoiseKey, NoiseSource, Term};
pub use optics::{
    apply_beamsplitter, apply_dynamic_object, apply_phase_object, apply_reflective_object, run_bench, BenchLayout,
    BenchSetup, DetectorRecord, DynamicObjectState, ObjectSpec, PumpProfile,
};
pub use scenario::{ScenarioConfig, SweepParameter};
pub use sde::{fwm_step, propagate_segment, FieldMaterial, MaterialParams, Segment, StepPlan, Workspace};
pub use stats::{EnsembleAccumulator, Estimate};
