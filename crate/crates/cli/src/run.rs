//! Subcommand pipelines.

use std::fs::File;
use std::io::BufWriter;
use std::sync::Arc;
use std::time::Instant;

use roughavg::averaging::{
    convergence_experiment, estimate_fbar, khasminskii_scaling, mixing_probe, solve_averaged, tabulate_fbar,
    AveragedDrift, FbarStrategy,
};
use roughavg::coefficients::{require_beta1, Preset};
use roughavg::fields::FnMatrixField;
use roughavg::gaussian_paths::{sample_bm, sample_fbm};
use roughavg::rde_solver::{solve_fast_slow, sup_distance, MixedNoise};
use roughavg::rng::{derive_seed, tag};
use roughavg::rough_integrate::{frac_integral, triplet_riemann_sum, FracOptions, TripletView};
use roughavg::rough_lift::{check_lift, RoughLift};
use roughavg::Grid;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, ValidationError};
use crate::manifest::{RunDir, RunManifest};
use crate::plots::{emit_plots_data, ExperimentReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sample,
    LiftCheck,
    IntegrateXcheck,
    Solve,
    Fbar,
    Probe,
    Converge,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::LiftCheck => "lift-check",
            Command::IntegrateXcheck => "integrate-xcheck",
            Command::Solve => "solve",
            Command::Fbar => "fbar",
            Command::Probe => "probe",
            Command::Converge => "converge",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl RunError {
    /// 2 for invalid configuration, 3 for divergence beyond the exclusion
    /// budget, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Divergence(_) => 3,
            _ => 1,
        }
    }
}

impl From<roughavg::Error> for RunError {
    fn from(e: roughavg::Error) -> Self {
        use roughavg::Error as E;
        match e {
            E::Divergence { .. } => RunError::Divergence(e.to_string()),
            E::Config(_) | E::Domain(_) | E::Dimension(_) => {
                RunError::Validation(ValidationError { field: "config".into(), message: e.to_string() })
            }
            other => RunError::Other(other.into()),
        }
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Validates the config, runs one subcommand into `config.output_dir` and
/// returns the final manifest. On failure the manifest stays `incomplete`.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    if command == Command::Report && config.input.is_none() {
        return Err(
            ValidationError { field: "input".into(), message: "report needs an input report.json".into() }.into()
        );
    }
    let mut dir = RunDir::create(&config.output_dir, command.name(), config)?;
    let result = execute(command, config, &mut dir);
    dir.finish(result.as_ref().err().map(|e| e.to_string()))?;
    result.map(|_| dir.manifest.clone())
}

fn execute(command: Command, config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let preset = config.preset()?;
    match command {
        Command::Sample => sample(config, dir),
        Command::LiftCheck => lift_check(config, dir),
        Command::IntegrateXcheck => integrate_xcheck(config, dir),
        Command::Solve => solve(preset, config, dir),
        Command::Fbar => fbar(preset, config, dir),
        Command::Probe => probe(preset, config, dir),
        Command::Converge => converge(preset, config, dir),
        Command::Report => report(config, dir),
    }
}

fn coarse_grid(config: &ExperimentConfig) -> Result<Grid<f64>> {
    Ok(Grid::horizon(config.horizon, config.coarse_steps)?)
}

fn csv_file(dir: &RunDir, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.path(name)).map_err(anyhow::Error::from)?))
}

fn sample(config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let dims = config.dims()?;
    let fine = coarse_grid(config)?.refine(config.fine_factor)?;
    let b = sample_fbm(config.hurst, dims.d, fine, config.seed)?;
    let w = sample_bm(dims.d_fast, fine, config.seed);
    dir.seed("paths", config.seed);
    b.write_csv(csv_file(dir, "fbm.csv")?)?;
    w.write_csv(csv_file(dir, "bm.csv")?)?;
    #[derive(Serialize)]
    struct Headers<H> {
        fbm: H,
        bm: H,
    }
    dir.write_json("paths.json", &Headers { fbm: b.header(), bm: w.header() })?;
    Ok(())
}

fn lift_check(config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let noise =
        MixedNoise::sample(config.hurst, config.dims()?, coarse_grid(config)?, config.fine_factor, config.seed)?;
    dir.seed("lift", config.seed);
    let diag = check_lift(&noise.lift, config.tolerances.lift);
    noise.lift.write_first_level_csv(csv_file(dir, "lift_level1.csv")?)?;
    dir.write_json("lift_check.json", &diag)?;
    if !diag.passed {
        return Err(RunError::Check(format!(
            "Chen residual {:e}, symmetry residual {:e} (tolerance {:e})",
            diag.chen_residual_rel, diag.symmetry_residual_rel, diag.tol
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct CrossCheck {
    fractional: f64,
    riemann: f64,
    relative_difference: f64,
    tolerance: f64,
    passed: bool,
}

impl CrossCheck {
    fn new(fractional: f64, riemann: f64, tolerance: f64) -> Self {
        let relative_difference = (fractional - riemann).abs() / riemann.abs().max(f64::MIN_POSITIVE);
        Self { fractional, riemann, relative_difference, tolerance, passed: relative_difference <= tolerance }
    }
}

fn sin_field() -> FnMatrixField<f64> {
    FnMatrixField::new(1, 1, 1, |u: &[f64], o: &mut [f64]| o[0] = u[0].sin())
        .with_jacobian(|u: &[f64], o: &mut [f64]| o[0] = u[0].cos())
}

/// `x = sin`, `ω = cos` on `[0, 1]` with the exact second level.
pub fn smooth_triplet(n: usize) -> roughavg::Result<TripletView<f64>> {
    let grid = Grid::<f64>::horizon(1.0, n)?;
    let times = grid.times();
    let x: Vec<f64> = times.iter().map(|t| t.sin()).collect();
    let w: Vec<f64> = times.iter().map(|t| t.cos()).collect();
    let v = move |i: usize, j: usize, out: &mut [f64]| {
        let (s, t) = (times[i], times[j]);
        let sin_sq = (t - s) / 2.0 - ((2.0 * t).sin() - (2.0 * s).sin()) / 4.0;
        out[0] = -sin_sq - s.sin() * (t.cos() - s.cos());
    };
    TripletView::from_pairs(grid, 1, 1, x, w, v, 0.5, 1e-9)
}

/// Fractional-calculus integral of `sin(x) dx` against the compensated
/// Riemann sum on one triplet.
pub fn cross_check(tv: &TripletView<f64>, quad_points: usize) -> roughavg::Result<(f64, f64, f64)> {
    let n = tv.grid().n_steps;
    let riemann = triplet_riemann_sum(tv, &sin_field(), 0, n, 1)?[0];
    let opts = FracOptions { quad_points, ..Default::default() };
    let (a, b) = (tv.grid().t_start, tv.grid().t_end);
    let frac = frac_integral(tv, &sin_field(), a, b, opts)?[0];
    Ok((frac, riemann, (frac - riemann).abs() / riemann.abs()))
}

fn integrate_xcheck(config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let smooth_n = 1024;
    let tv = smooth_triplet(smooth_n)?;
    let (f, r, _) = cross_check(&tv, smooth_n)?;
    let smooth = CrossCheck::new(f, r, config.tolerances.xcheck_smooth);

    let n = config.coarse_steps * config.fine_factor;
    let grid = Grid::horizon(config.horizon, n)?;
    let b = sample_fbm(config.hurst, 1, grid, config.seed)?;
    dir.seed("fbm", config.seed);
    let lift = RoughLift::geometric(&b, grid, 1)?;
    let beta = config.hurst - 0.05;
    let tv = TripletView::from_driver(&lift, beta)?;
    let (f, r, _) = cross_check(&tv, n)?;
    let rough = CrossCheck::new(f, r, config.tolerances.xcheck_rough);

    #[derive(Serialize)]
    struct Report<'a> {
        smooth: &'a CrossCheck,
        rough: &'a CrossCheck,
        rough_points: usize,
        holder_beta: f64,
    }
    dir.write_json("xcheck.json", &Report { smooth: &smooth, rough: &rough, rough_points: n, holder_beta: beta })?;
    if !(smooth.passed && rough.passed) {
        return Err(RunError::Check(format!(
            "schemes disagree: smooth {:e}, rough {:e}",
            smooth.relative_difference, rough.relative_difference
        )));
    }
    Ok(())
}

fn build_drift(preset: Preset, config: &ExperimentConfig, dir: &mut RunDir) -> Result<AveragedDrift<f64>> {
    let beta1 = require_beta1::<f64>(&preset)?;
    let params = config.fbar_params(beta1);
    let seed = derive_seed(config.seed, &[tag::FBAR]);
    Ok(match config.fbar.strategy {
        FbarStrategy::Exact => AveragedDrift::exact(move |x: &[f64], o: &mut [f64]| {
            o[0] = preset.exact_fbar(x[0]).expect("validated: closed form exists")
        }),
        FbarStrategy::OnTheFly => {
            dir.seed("fbar", seed);
            AveragedDrift::on_the_fly(Arc::new(preset), params, seed)?
        }
        FbarStrategy::Tabulated => {
            dir.seed("fbar", seed);
            let start = Instant::now();
            let table = tabulate_fbar(&preset, &config.fbar.lo, &config.fbar.hi, config.fbar.points, &params, seed)?;
            dir.timing("fbar_table", start.elapsed().as_secs_f64());
            dir.write_json("fbar_table.json", &table)?;
            AveragedDrift::Tabulated(table)
        }
    })
}

fn solve(preset: Preset, config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let dims = config.dims()?;
    let drift = build_drift(preset, config, dir)?;
    let idx = config.eps_schedule.len() - 1;
    let eps = config.eps_schedule[idx];
    let setup = config.setup();
    let substeps = setup.substep_factor(eps);
    let seed = derive_seed(config.seed, &[tag::CONVERGE, idx as u64, 0]);
    dir.seed(format!("eps[{idx}]/replica[0]"), seed);
    let noise = MixedNoise::sample(config.hurst, dims, coarse_grid(config)?, substeps, seed)?;
    let sol = solve_fast_slow(&preset, eps, &noise, &config.x0, &config.y0, substeps)?;
    let bar = solve_averaged(&drift, &preset, &noise.lift, &config.x0)?;

    let mut w = csv::Writer::from_writer(csv_file(dir, "solution.csv")?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=dims.m).map(|i| format!("x_{i}")));
    header.extend((1..=dims.n).map(|i| format!("y_{i}")));
    header.extend((1..=dims.m).map(|i| format!("xbar_{i}")));
    w.write_record(&header).map_err(anyhow::Error::from)?;
    for (k, t) in sol.grid.times().iter().enumerate() {
        let row = std::iter::once(*t)
            .chain(sol.x.point(k).iter().copied())
            .chain(sol.y.point(k).iter().copied())
            .chain(bar.point(k).iter().copied())
            .map(|v| v.to_string());
        w.write_record(row).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;

    #[derive(Serialize)]
    struct Summary {
        eps: f64,
        substep_factor: usize,
        sup_error: f64,
    }
    let sup_error = sup_distance(&sol.x.values, &bar.values);
    dir.write_json("solve.json", &Summary { eps, substep_factor: substeps, sup_error })?;
    Ok(())
}

fn fbar(preset: Preset, config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let drift = build_drift(preset, config, dir)?;
    #[derive(Serialize)]
    struct Summary {
        strategy: FbarStrategy,
        /// Largest deviation of the lattice values from the closed form.
        max_lattice_deviation: Option<f64>,
        xi: Option<Vec<f64>>,
        estimate: Option<Vec<f64>>,
        std_error: Option<Vec<f64>>,
        exact: Option<f64>,
    }
    let max_lattice_deviation = match &drift {
        AveragedDrift::Tabulated(t) => preset.exact_fbar(0.0).map(|_| {
            t.nodes()
                .iter()
                .zip(&t.values)
                .map(|(p, v)| (v - preset.exact_fbar(p[0]).unwrap_or(f64::NAN)).abs())
                .fold(0.0, f64::max)
        }),
        _ => None,
    };
    let mut summary = Summary {
        strategy: drift.strategy(),
        max_lattice_deviation,
        xi: None,
        estimate: None,
        std_error: None,
        exact: None,
    };
    if let Some(xi) = &config.fbar.xi {
        let beta1 = require_beta1::<f64>(&preset)?;
        let seed = derive_seed(config.seed, &[tag::FBAR]);
        let est = estimate_fbar(&preset, xi, &config.fbar_params(beta1), seed)?;
        summary.exact = preset.exact_fbar(xi[0]);
        summary.xi = Some(xi.clone());
        summary.estimate = Some(est.value);
        summary.std_error = Some(est.std_error);
    }
    dir.write_json("fbar.json", &summary)?;
    Ok(())
}

fn probe(preset: Preset, config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let beta1 = require_beta1::<f64>(&preset)?;
    let seed = derive_seed(config.seed, &[tag::PROBE]);
    dir.seed("probe", seed);
    let report = mixing_probe(&preset, &config.probe.xi, &config.probe.lags, &config.probe_params(beta1), seed)?;
    dir.write_json("probe.json", &report)?;
    Ok(())
}

fn converge(preset: Preset, config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let drift = build_drift(preset, config, dir)?;
    let setup = config.setup();
    for i in 0..config.eps_schedule.len() {
        for r in 0..config.replicas {
            dir.seed(format!("eps[{i}]/replica[{r}]"), derive_seed(config.seed, &[tag::CONVERGE, i as u64, r as u64]));
        }
    }
    let convergence = convergence_experiment(&preset, &config.eps_schedule, &setup, &drift, config.delta_override)?;
    for row in &convergence.rows {
        dir.timing(format!("eps={}", row.eps), row.runtime_secs);
    }
    let khasminskii = if config.khasminskii.enabled {
        let k = &config.khasminskii;
        let kset = roughavg::averaging::ExperimentSetup { coarse_steps: k.coarse_steps, replicas: k.replicas, ..setup };
        for r in 0..k.replicas {
            dir.seed(format!("khasminskii/replica[{r}]"), derive_seed(kset.seed, &[tag::KHAS, r as u64]));
        }
        let start = Instant::now();
        let rows = khasminskii_scaling::<f64, _>(&preset, k.eps, &k.deltas, &kset)?;
        dir.timing("khasminskii", start.elapsed().as_secs_f64());
        rows
    } else {
        Vec::new()
    };
    let report = ExperimentReport { convergence, khasminskii };
    dir.write_json("report.json", &report)?;
    emit_plots_data(&report, &dir.root)?;
    let fraction = report.convergence.exclusion_fraction();
    if fraction > config.tolerances.exclusion_budget {
        return Err(RunError::Divergence(format!(
            "{} replicas excluded ({:.2}% > budget {:.2}%)",
            report.convergence.total_excluded(),
            100.0 * fraction,
            100.0 * config.tolerances.exclusion_budget
        )));
    }
    Ok(())
}

fn report(config: &ExperimentConfig, dir: &mut RunDir) -> Result<()> {
    let input = config.input.as_ref().expect("checked in run");
    let text = std::fs::read_to_string(input).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", input.display()))?;
    let report: ExperimentReport = serde_json::from_str(&text).map_err(anyhow::Error::from)?;
    emit_plots_data(&report, &dir.root)?;
    Ok(())
}
