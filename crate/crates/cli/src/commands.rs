//! The `run`, `sweep`, `estimate` and `check` workflows.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qni_core::ensemble::{corrected_observables, run_ensemble, run_paired_many, WindowObservables};
use qni_core::field::GridShape;
use qni_core::oracles::{brute_force_two_bin, lowgain_pair_flux, two_stage_interference, OracleResult};
use qni_core::scenario::{ScenarioConfig, SweepConfig, SweepParameter};
use qni_core::{apply_dispersion, make_coherent_pulse, DispersionCoefficients, FieldId, NoiseSource, PulseSpec, SpectralPhasePlan};

use crate::error::{CliError, CliResult};
use crate::output::{self, EstimateRow, Manifest, OutputFile};

#[derive(Debug, Clone)]
pub struct CommonOptions {
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
}

/// A parsed scenario with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub text: String,
    pub warnings: Vec<String>,
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> CliResult<LoadedConfig> {
    let config = ScenarioConfig::from_toml(text)?;
    let warnings = config.validate()?;
    Ok(LoadedConfig {
        config,
        text: text.to_string(),
        warnings,
    })
}

fn apply_seed(cfg: &mut ScenarioConfig, seed: Option<u64>) -> CliResult<()> {
    if let Some(s) = seed {
        if s > i64::MAX as u64 {
            return Err(CliError::Input(format!("seed {s} exceeds {}", i64::MAX)));
        }
        cfg.ensemble.seed = s;
    }
    Ok(())
}

fn noise_for(cfg: &ScenarioConfig, seed: u64) -> NoiseSource {
    if cfg.ensemble.quantum_noise {
        NoiseSource::new(seed)
    } else {
        NoiseSource::silent(seed)
    }
}

fn window_sizes(cfg: &ScenarioConfig) -> Vec<usize> {
    let mut w = vec![1, cfg.detection.avg_bins];
    w.dedup();
    w
}

fn toml_value(cfg: &ScenarioConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("scenario converts to a TOML value")
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        output::write_file(&self.dir.join(name), bytes)?;
        self.files.push(OutputFile {
            name: name.to_string(),
            sha256: output::sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(mut self, mut manifest: Manifest) -> CliResult<Vec<OutputFile>> {
        manifest.files = std::mem::take(&mut self.files);
        output::write_file(&self.dir.join("manifest.toml"), manifest.to_toml().as_bytes())?;
        Ok(manifest.files)
    }
}

#[allow(clippy::too_many_arguments)]
fn manifest(
    command: &str,
    cfg: &ScenarioConfig,
    text: &str,
    background_seed: Option<u64>,
    workers: usize,
    started: Instant,
    warnings: Vec<String>,
    notes: Vec<String>,
    targets: Option<&ScenarioConfig>,
) -> Manifest {
    Manifest {
        tool: "qni".into(),
        version: output::version_string(),
        command: command.into(),
        seed: cfg.ensemble.seed,
        background_seed,
        workers,
        wall_time_s: started.elapsed().as_secs_f64(),
        config_sha256: output::sha256_hex(text.as_bytes()),
        files: Vec::new(),
        warnings,
        notes,
        config: toml_value(cfg),
        targets: targets.map(toml_value),
    }
}

/// Result of `run`: observables for the un-averaged and configured windows.
pub struct RunReport {
    pub observables: Vec<WindowObservables>,
    pub files: Vec<OutputFile>,
}

pub fn run(loaded: &LoadedConfig, opts: &CommonOptions) -> CliResult<RunReport> {
    let started = Instant::now();
    let mut cfg = loaded.config.clone();
    apply_seed(&mut cfg, opts.seed)?;
    let setup = cfg.build_setup()?;
    let windows = window_sizes(&cfg);
    let noise = noise_for(&cfg, cfg.ensemble.seed);
    let ens = run_ensemble(&setup, &noise, cfg.ensemble.trajectories, &windows, opts.workers)?;
    let obs = ens.observables(cfg.detection.offset_fraction)?;

    let mut out = Outputs::new(&opts.out)?;
    let configured = obs.iter().find(|o| o.avg_bins == cfg.detection.avg_bins).expect("configured window present");
    out.write("observables.csv", &output::observables_csv(configured)?)?;
    if cfg.detection.avg_bins != 1 {
        out.write("observables_unaveraged.csv", &output::observables_csv(&obs[0])?)?;
    }
    out.write("summary.csv", &output::summary_csv(&obs)?)?;
    let m = manifest("run", &cfg, &loaded.text, None, opts.workers, started, loaded.warnings.clone(), Vec::new(), None);
    let files = out.finish(m)?;
    Ok(RunReport { observables: obs, files })
}

fn require_sweep(cfg: &ScenarioConfig) -> CliResult<SweepConfig> {
    cfg.sweep
        .clone()
        .ok_or_else(|| CliError::Input("scenario has no [sweep] section".into()))
}

pub struct SweepReport {
    pub parameter: SweepParameter,
    pub points: Vec<(f64, WindowObservables)>,
    pub files: Vec<OutputFile>,
}

pub fn sweep(loaded: &LoadedConfig, opts: &CommonOptions) -> CliResult<SweepReport> {
    let started = Instant::now();
    let mut cfg = loaded.config.clone();
    apply_seed(&mut cfg, opts.seed)?;
    let sweep = require_sweep(&cfg)?;
    let mut points = Vec::new();
    for &v in &sweep.values {
        let point = cfg.with_parameter(sweep.parameter, v)?;
        let setup = point.build_setup()?;
        let noise = noise_for(&point, point.ensemble.seed);
        let m = point.detection.avg_bins;
        let ens = run_ensemble(&setup, &noise, point.ensemble.trajectories, &[m], opts.workers)?;
        let mut obs = ens.observables(point.detection.offset_fraction)?;
        points.push((v, obs.remove(0)));
    }
    let name = sweep.parameter.name();
    let mut out = Outputs::new(&opts.out)?;
    out.write("sweep.csv", &output::sweep_csv(name, &points)?)?;
    out.write("sweep_series.csv", &output::sweep_series_csv(name, &points)?)?;
    let m = manifest("sweep", &cfg, &loaded.text, None, opts.workers, started, loaded.warnings.clone(), Vec::new(), None);
    let files = out.finish(m)?;
    Ok(SweepReport {
        parameter: sweep.parameter,
        points,
        files,
    })
}

/// Refuses target files that differ from the background in anything but the
/// swept parameter, the sweep itself, or the ensemble sizes' bookkeeping.
pub fn check_target_variation(background: &ScenarioConfig, targets: &ScenarioConfig) -> CliResult<SweepConfig> {
    let sweep = targets.sweep.clone().unwrap_or(SweepConfig {
        parameter: SweepParameter::Dphi,
        values: Vec::new(),
    });
    if !sweep.parameter.is_target_variation() {
        return Err(CliError::Input(format!(
            "`{}` changes pair generation and cannot be a matched-noise target",
            sweep.parameter.name()
        )));
    }
    let strip = |c: &ScenarioConfig| {
        let mut c = c.clone();
        c.sweep = None;
        c
    };
    let (b, t) = (strip(background), strip(targets));
    let same = match sweep.values.first() {
        Some(&v) => b.with_parameter(sweep.parameter, v)? == t.with_parameter(sweep.parameter, v)?,
        None => b == t,
    };
    if !same {
        return Err(CliError::Input(format!(
            "target scenario differs from the background outside the swept parameter `{}`",
            sweep.parameter.name()
        )));
    }
    Ok(sweep)
}

pub struct EstimateReport {
    pub parameter: SweepParameter,
    pub background_trajectories: u64,
    pub reference_trajectories: u64,
    /// `(value, naive, corrected)`; the first entry is the reference itself.
    pub points: Vec<(f64, WindowObservables, WindowObservables)>,
    pub cost_trajectories: u64,
    pub files: Vec<OutputFile>,
}

impl EstimateReport {
    /// Background-size ensembles obtained per trajectory actually run.
    pub fn cost_report(&self) -> String {
        let targets = self.points.len().saturating_sub(1) as u64;
        let naive_cost = self.background_trajectories * targets.max(1);
        format!(
            "M_B = {}, M_R = {}, targets = {}; ran {} trajectories where {} naive ones would reach the same ensemble size ({:.1}x less work, M_B/M_R = {:.1})",
            self.background_trajectories,
            self.reference_trajectories,
            targets,
            self.cost_trajectories,
            naive_cost,
            naive_cost as f64 / self.cost_trajectories as f64,
            self.background_trajectories as f64 / self.reference_trajectories as f64,
        )
    }
}

pub fn estimate(background: &LoadedConfig, targets: &LoadedConfig, opts: &CommonOptions) -> CliResult<EstimateReport> {
    let started = Instant::now();
    let mut bcfg = background.config.clone();
    let mut tcfg = targets.config.clone();
    apply_seed(&mut bcfg, opts.seed)?;
    apply_seed(&mut tcfg, opts.seed)?;
    let sweep = check_target_variation(&bcfg, &tcfg)?;

    let m_b = bcfg.ensemble.background_trajectories;
    let m_r = bcfg.ensemble.trajectories;
    if m_b == 0 {
        return Err(CliError::Input("background_trajectories must be at least 1".into()));
    }
    let windows = [bcfg.detection.avg_bins];
    let reference = bcfg.build_setup()?;
    let target_cfgs = sweep
        .values
        .iter()
        .map(|&v| tcfg.with_parameter(sweep.parameter, v))
        .collect::<Result<Vec<_>, _>>()?;
    if target_cfgs.iter().any(|c| c.detection.avg_bins != bcfg.detection.avg_bins) {
        return Err(CliError::Input("avg_bins cannot be a matched-noise target in one estimate run".into()));
    }
    let target_setups = target_cfgs.iter().map(|c| c.build_setup()).collect::<Result<Vec<_>, _>>()?;

    let bg_seed = bcfg.ensemble.background_seed();
    let bg = run_ensemble(&reference, &noise_for(&bcfg, bg_seed), m_b, &windows, opts.workers)?;
    let noise = noise_for(&bcfg, bcfg.ensemble.seed);
    // the reference itself is the first "target"
    let mut all = vec![reference.clone()];
    all.extend(target_setups);
    let paired = run_paired_many(&reference, &all, &noise, m_r, &windows, opts.workers)?;

    let off = bcfg.detection.offset_fraction;
    let ref_value = sweep.parameter.current(&bcfg).unwrap_or(f64::NAN);
    let mut points = Vec::new();
    for (k, p) in paired.iter().enumerate() {
        let c = corrected_observables(&bg, p, off)?;
        let value = if k == 0 { ref_value } else { sweep.values[k - 1] };
        points.push((value, c.naive[0].clone(), c.corrected[0].clone()));
    }

    let name = sweep.parameter.name();
    let rows: Vec<EstimateRow<'_>> = points
        .iter()
        .enumerate()
        .flat_map(|(k, (v, naive, corrected))| {
            let point = if k == 0 { "reference" } else { "target" };
            [
                EstimateRow {
                    point,
                    value: *v,
                    estimator: "naive",
                    obs: naive,
                },
                EstimateRow {
                    point,
                    value: *v,
                    estimator: "corrected",
                    obs: corrected,
                },
            ]
        })
        .collect();
    let mut out = Outputs::new(&opts.out)?;
    out.write("estimate.csv", &output::estimate_csv(name, &rows)?)?;

    let cost = m_b + m_r * (1 + sweep.values.len() as u64);
    let mut report = EstimateReport {
        parameter: sweep.parameter,
        background_trajectories: m_b,
        reference_trajectories: m_r,
        points,
        cost_trajectories: cost,
        files: Vec::new(),
    };
    let mut warnings = background.warnings.clone();
    warnings.extend(targets.warnings.iter().cloned());
    let m = manifest(
        "estimate",
        &bcfg,
        &background.text,
        Some(bg_seed),
        opts.workers,
        started,
        warnings,
        vec![report.cost_report()],
        Some(&tcfg),
    );
    report.files = out.finish(m)?;
    Ok(report)
}

/// Fast oracle checks of the core pipeline.
pub fn check(trajectories: u64, seed: u64) -> CliResult<Vec<OracleResult>> {
    let mut results = brute_force_two_bin(trajectories, seed)?;

    let flux = lowgain_pair_flux(1.0, 0.3, 1.0);
    let g: f64 = 0.3;
    results.push(OracleResult {
        measured: Some(flux.expected),
        expected: g * g * (1.0 + g * g / 3.0),
        tolerance: 1e-3 * flux.expected,
        note: "sinh^2 against its fourth-order series",
        ..flux
    });

    let blocked = two_stage_interference(1e-4, 1e4, 1.0, 1.0, 0.0, 0.0);
    results.push(OracleResult {
        name: "blocked_idler_balanced",
        inputs: vec![("t_amp", 0.0)],
        expected: 0.0,
        measured: Some(blocked.n_a - blocked.n_b),
        tolerance: 0.0,
        valid: true,
        note: "no interference without the idler",
    });

    let shape = GridShape::centered(256, 2.0)?;
    let pulse = make_coherent_pulse(
        shape,
        FieldId::Signal,
        &PulseSpec {
            peak_flux: 1.0,
            fwhm_ps: 40.0,
            center_ps: 0.0,
            phase: 0.0,
        },
    )?;
    let plan = SpectralPhasePlan::new(shape.bins, shape.dt_ps, DispersionCoefficients::from_material(-100.0, 0.489, 1.0))?;
    let moved = apply_dispersion(&pulse, &plan)?;
    let centroid = |g: &qni_core::FieldGrid| {
        let w: f64 = g.a.iter().map(|z| z.norm_sqr()).sum();
        g.a.iter().enumerate().map(|(k, z)| k as f64 * z.norm_sqr()).sum::<f64>() / w
    };
    results.push(OracleResult {
        name: "signal_walk_off_bins",
        inputs: vec![("dvg_ps_per_m", -100.0), ("length_m", 1.0), ("dt_ps", 2.0)],
        expected: -50.0,
        measured: Some(centroid(&moved) - centroid(&pulse)),
        tolerance: 1e-6,
        valid: true,
        note: "group delay moves the centroid by dvg L / dt bins",
    });
    Ok(results)
}
