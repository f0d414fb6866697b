//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use roughavg::averaging::{estimate_fbar, khasminskii_scaling, mixing_probe, ExperimentSetup, FbarParams};
use roughavg::coefficients::{Dims, FnCoefficients, Preset, Regularity};
use roughavg::fields::{FnMatrixField, FnVectorField};
use roughavg::gaussian_paths::{fbm_covariance, sample_bm, sample_fbm, FbmSampler, GaussianPath, PathKind};
use roughavg::rde_solver::{solve_fast_ito, solve_frozen, solve_rde, sup_distance};
use roughavg::rough_integrate::{rough_integral, ControlledPath, TripletView};
use roughavg::rough_lift::{check_lift, lift_mixed, RoughLift};
use roughavg::stats::{loglog_slope, mean, variance};
use roughavg::Grid;
use roughavg_cli::run::{cross_check, smooth_triplet};
use roughavg_cli::{run, Command, ExperimentConfig, ExperimentReport};

type Criterion = (&'static str, Duration, Box<dyn Fn() -> Outcome>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn identity_field() -> FnMatrixField<f64> {
    FnMatrixField::new(1, 1, 1, |u: &[f64], o: &mut [f64]| o[0] = u[0])
        .with_jacobian(|_: &[f64], o: &mut [f64]| o[0] = 1.0)
}

fn lift_algebra() -> Outcome {
    let (mut chen, mut sym): (f64, f64) = (0.0, 0.0);
    for k in 0..50usize {
        let h = [0.35, 0.4, 0.5][k % 3];
        let coarse = [32, 64, 128][(k / 3) % 3];
        let factor = 32;
        let fine = Grid::horizon(1.0, coarse * factor).unwrap();
        let b = sample_fbm(h, 2, fine, k as u64).unwrap();
        let w = sample_bm(2, fine, k as u64);
        let lift = lift_mixed(&b, &w, Grid::horizon(1.0, coarse).unwrap(), factor).unwrap();
        let d = check_lift(&lift, 1e-10);
        chen = chen.max(d.chen_residual_rel);
        sym = sym.max(d.symmetry_residual_rel);
    }
    outcome(chen <= 1e-10 && sym <= 1e-10, format!("max Chen {chen:.1e}, max symmetry {sym:.1e} (tol 1e-10)"))
}

fn covariance_fidelity() -> Outcome {
    let replicas = 10_000;
    let mut worst: f64 = 0.0;
    for h in [0.35, 0.4, 0.5] {
        let grid = Grid::horizon(1.0, 64).unwrap();
        let sampler = FbmSampler::new(h, grid).unwrap();
        let idx: Vec<usize> = (1..=8).map(|k| 8 * k).collect();
        let samples: Vec<Vec<f64>> = (0..replicas)
            .map(|r| {
                let p = sampler.sample(1, r as u64);
                idx.iter().map(|&i| p.point(i)[0]).collect()
            })
            .collect();
        for a in 0..8 {
            for b in a..8 {
                let prods: Vec<f64> = samples.iter().map(|s| s[a] * s[b]).collect();
                let se = (variance(&prods) / replicas as f64).sqrt();
                let exact = fbm_covariance(grid.time(idx[a]), grid.time(idx[b]), h).unwrap();
                worst = worst.max((mean(&prods) - exact).abs() / se);
            }
        }
    }
    outcome(worst < 3.0, format!("worst |error| = {worst:.2} standard errors over 3 x 36 entries (tol 3)"))
}

fn integrator_oracles() -> Outcome {
    // Telescoping: constant integrand against a mixed lift.
    let fine = Grid::horizon(1.0, 64 * 32).unwrap();
    let b = sample_fbm(0.4, 2, fine, 3).unwrap();
    let w = sample_bm(1, fine, 4);
    let coarse = Grid::horizon(1.0, 64).unwrap();
    let lift = lift_mixed(&b, &w, coarse, 32).unwrap();
    let c = [1.0, -2.0, 0.5, 0.25, 3.0, -1.0];
    let cp = ControlledPath::constant(coarse, 2, 3, &c).unwrap();
    let got = rough_integral(&cp, &lift, 0.0, 1.0).unwrap();
    let tele = (0..2)
        .map(|r| {
            let e: f64 = (0..3).map(|j| c[r * 3 + j] * lift.point(64)[j]).sum();
            (got[r] - e).abs()
        })
        .fold(0.0, f64::max);

    // ∫ X dX = ½ X² for X = sin on [0, 1].
    let fine = Grid::<f64>::horizon(1.0, 1 << 14).unwrap();
    let path =
        GaussianPath::from_values(fine, 1, fine.times().iter().map(|t| t.sin()).collect(), PathKind::Bm).unwrap();
    let coarse = Grid::horizon(1.0, 1 << 10).unwrap();
    let lift = RoughLift::geometric(&path, coarse, 16).unwrap();
    let x: Vec<f64> = (0..coarse.len()).map(|i| path.values[i * 16]).collect();
    let cp = ControlledPath::compose(coarse, &x, &vec![1.0; x.len()], &identity_field()).unwrap();
    let half = (rough_integral(&cp, &lift, 0.0, 1.0).unwrap()[0] - 0.5 * 1f64.sin().powi(2)).abs();

    // du = u ∘ dW: u_T = exp(W_T).
    let grid = Grid::horizon(1.0, 1 << 14).unwrap();
    let zero = FnVectorField::zero(1);
    let mut strat: f64 = 0.0;
    for seed in 0..5 {
        let w = sample_bm(1, grid, seed);
        let lift = RoughLift::geometric(&w, grid, 1).unwrap();
        let sol = solve_rde(&zero, &identity_field(), &lift, &[1.0], &grid).unwrap();
        let exact = w.values[grid.n_steps].exp();
        strat = strat.max((sol.last()[0] - exact).abs() / exact);
    }

    // u' = u: u_1 = e.
    let grid = Grid::horizon(1.0, 1 << 12).unwrap();
    let flat = GaussianPath::from_values(grid, 1, vec![0.0; grid.len()], PathKind::Bm).unwrap();
    let lift = RoughLift::geometric(&flat, grid, 1).unwrap();
    let a = FnVectorField::new(1, |u: &[f64], o: &mut [f64]| o[0] = u[0]);
    let v = FnMatrixField::constant(1, 1, 1, vec![0.0]);
    let e = (solve_rde(&a, &v, &lift, &[1.0], &grid).unwrap().last()[0] - std::f64::consts::E).abs();

    outcome(
        tele < 1e-12 && half < 1e-6 && strat < 1e-2 && e < 1e-3,
        format!(
            "telescoping {tele:.1e}, half-square {half:.1e} (1e-6), exp(W) rel {strat:.1e} (1e-2), e {e:.1e} (1e-3)"
        ),
    )
}

fn cross_scheme() -> Outcome {
    let (_, _, smooth) = cross_check(&smooth_triplet(1024).unwrap(), 1024).unwrap();
    let n = 2048;
    let grid = Grid::horizon(1.0, n).unwrap();
    let b = sample_fbm(0.45, 1, grid, 0).unwrap();
    let lift = RoughLift::geometric(&b, grid, 1).unwrap();
    let tv = TripletView::from_driver(&lift, 0.4).unwrap();
    let (frac, riemann, rough) = cross_check(&tv, n).unwrap();
    outcome(
        smooth < 1e-3 && rough < 1e-2,
        format!("smooth rel {smooth:.1e} (1e-3), fBm(0.45) rel {rough:.1e} (1e-2; {frac:.6} vs {riemann:.6})"),
    )
}

fn ito_correction() -> Outcome {
    let fine = Grid::horizon(1.0, 1 << 14).unwrap();
    let (xi, eps, phi0) = (0.5f64, 0.5f64, 0.3f64);
    let a = FnVectorField::new(1, move |u: &[f64], o: &mut [f64]| o[0] = (xi - 8.0 * u[0]) / eps);
    let v = FnMatrixField::new(1, 1, 1, move |u: &[f64], o: &mut [f64]| o[0] = (xi.sin() + u[0].sin()) / eps.sqrt())
        .with_jacobian(move |u: &[f64], o: &mut [f64]| o[0] = u[0].cos() / eps.sqrt());
    let ns = [1usize << 8, 1 << 10, 1 << 12];
    let mut dist = vec![0.0; ns.len()];
    for seed in 0..8 {
        let w = sample_bm(1, fine, seed);
        for (idx, &n) in ns.iter().enumerate() {
            let coarse = Grid::horizon(1.0, n).unwrap();
            let factor = fine.n_steps / n;
            let lift = RoughLift::geometric(&w, coarse, factor).unwrap();
            let rough = solve_rde(&a, &v, &lift, &[phi0], &coarse).unwrap();
            let wc: Vec<f64> = (0..coarse.len()).map(|i| w.values[i * factor]).collect();
            let wc = GaussianPath::from_values(coarse, 1, wc, PathKind::Bm).unwrap();
            let ito = solve_fast_ito(&Preset::Nonlinear, &[xi], eps, &[phi0], &wc).unwrap();
            dist[idx] += sup_distance(&rough.values, &ito.values) / 8.0;
        }
    }
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = loglog_slope(&h, &dist);

    let xi = 8.0f64;
    let n_steps = 10_000;
    let mut samples: Vec<f64> = Vec::new();
    for seed in 0..1000 {
        let path = solve_frozen(&[xi], &[0.0], &Preset::Ou, 10.0, n_steps, seed).unwrap();
        samples.extend(path.values[n_steps / 2..].iter().step_by(50));
    }
    let m_rel = (mean(&samples) - 1.0).abs();
    let v_rel = (variance(&samples) - 1.0 / 16.0).abs() * 16.0;
    outcome(
        slope > 0.0 && m_rel < 0.02 && v_rel < 0.05,
        format!(
            "sup-distance {:.2e} -> {:.2e} -> {:.2e} (slope in h {slope:.2} > 0); OU mean rel {m_rel:.1e} (2%), variance rel {v_rel:.1e} (5%)",
            dist[0], dist[1], dist[2]
        ),
    )
}

fn fbar_oracle() -> Outcome {
    let xi: f64 = 8.0;
    let params = FbarParams { burn_in: 5.0, horizon: 50.0, replicas: 64, dt: 1e-3 };
    let m = estimate_fbar(&Preset::OuLinear, &[xi], &params, 11).unwrap().value[0];
    let sq = FnCoefficients::new(
        Dims::SCALAR,
        |_: &[f64], y: &[f64], o: &mut [f64]| o[0] = y[0] * y[0],
        |_: &[f64], o: &mut [f64]| o[0] = 0.0,
        |x: &[f64], y: &[f64], o: &mut [f64]| o[0] = x[0] - 8.0 * y[0],
        |_: &[f64], _: &[f64], o: &mut [f64]| o[0] = 1.0,
    )
    .with_regularity(Regularity::all(16.0));
    let s = estimate_fbar(&sq, &[xi], &params, 12).unwrap().value[0];
    let m_rel = (m - xi / 8.0).abs() / (xi / 8.0);
    let target = (xi / 8.0).powi(2) + 1.0 / 16.0;
    let s_rel = (s - target).abs() / target;
    outcome(
        m_rel < 0.02 && s_rel < 0.05,
        format!("mean {m:.5} vs 1 (rel {m_rel:.1e}, 2%), second moment {s:.5} vs {target} (rel {s_rel:.1e}, 5%)"),
    )
}

fn khasminskii() -> Outcome {
    let setup = ExperimentSetup {
        hurst: 0.4,
        horizon: 1.0,
        coarse_steps: 400,
        fast_resolution: 8.0,
        x0: vec![1.0],
        y0: vec![0.0],
        replicas: 1024,
        seed: 7,
    };
    let deltas = [0.02, 0.04, 0.08];
    let rows = khasminskii_scaling::<f64, _>(&Preset::Ou, 0.01, &deltas, &setup).unwrap();
    let v: Vec<f64> = rows.iter().map(|r| r.sup_mean_sq).collect();
    let slope = loglog_slope(&deltas, &v);
    outcome(
        (slope - 1.0).abs() <= 0.3,
        format!("sup E|Y - Y^|² = {:.3e}, {:.3e}, {:.3e}; slope {slope:.3} (1 ± 0.3)", v[0], v[1], v[2]),
    )
}

fn theorem_config(preset: &str, dir: &std::path::Path, eps: Vec<f64>) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        preset: preset.into(),
        hurst: 0.4,
        horizon: 1.0,
        coarse_steps: 100,
        eps_schedule: eps,
        replicas: 512,
        seed: 2024,
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    c.fbar.points = 129;
    c.fbar.lo = vec![-4.0];
    c.fbar.hi = vec![6.0];
    c.fbar.replicas = 64;
    c
}

fn read_report(dir: &std::path::Path) -> ExperimentReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn theorem_trend(tmp: &std::path::Path) -> Outcome {
    let eps = vec![0.1, 0.03, 0.01];
    let ou = tmp.join("ou");
    let deg = tmp.join("degenerate");
    if let Err(e) = run(Command::Converge, &theorem_config("ou", &ou, eps.clone())) {
        return outcome(false, format!("converge failed: {e}"));
    }
    if let Err(e) = run(Command::Converge, &theorem_config("degenerate", &deg, eps)) {
        return outcome(false, format!("converge failed: {e}"));
    }
    let rows = read_report(&ou).convergence.rows;
    let drops: Vec<(f64, f64)> = rows
        .windows(2)
        .map(|w| (w[0].mean_sup_error - w[1].mean_sup_error, 2.0 * w[0].std_error.hypot(w[1].std_error)))
        .collect();
    let trend = drops.iter().all(|(d, two_se)| d > two_se);
    let drows = read_report(&deg).convergence.rows;
    let mut flat = true;
    for i in 0..drows.len() {
        for j in i + 1..drows.len() {
            let gap = (drows[i].mean_sup_error - drows[j].mean_sup_error).abs();
            flat &= gap <= 2.0 * drows[i].std_error.hypot(drows[j].std_error) + 1e-3;
        }
    }
    let fmt = |r: &[roughavg::averaging::ConvergenceRow]| {
        r.iter().map(|r| format!("{:.4}±{:.4}", r.mean_sup_error, r.std_error)).collect::<Vec<_>>().join(", ")
    };
    outcome(
        trend && flat,
        format!(
            "ou: {} (drops {:.4}/{:.4} vs 2SE {:.4}/{:.4}); degenerate: {} ({} replicas per eps)",
            fmt(&rows),
            drops[0].0,
            drops[1].0,
            drops[0].1,
            drops[1].1,
            fmt(&drows),
            rows[0].replicas
        ),
    )
}

fn mixing() -> Outcome {
    let params = FbarParams { burn_in: 5.0 / 16.0, horizon: 5.0 / 16.0 + 50.0, replicas: 32, dt: 1e-3 };
    let report = mixing_probe(&Preset::Ou, &[0.0], &[0.05, 0.1, 0.2], &params, 4).unwrap();
    match report.fitted_rate {
        Some(rate) => outcome(
            (rate / 8.0 - 1.0).abs() <= 0.3,
            format!("fitted rate {rate:.3} vs 8 (30%), lag-0 variance {:.4}", report.autocovariance[0]),
        ),
        None => outcome(false, "no rate could be fitted".into()),
    }
}

fn determinism(tmp: &std::path::Path) -> Outcome {
    let a = theorem_config("ou", &tmp.join("det_a"), vec![0.01]);
    let b = ExperimentConfig { output_dir: tmp.join("det_b"), ..a.clone() };
    for c in [&a, &b] {
        if let Err(e) = run(Command::Converge, c) {
            return outcome(false, format!("converge failed: {e}"));
        }
    }
    let same = ["report.json", "convergence.csv", "fbar_table.json"]
        .iter()
        .all(|f| std::fs::read(a.output_dir.join(f)).unwrap() == std::fs::read(b.output_dir.join(f)).unwrap());
    outcome(same, format!("report.json, convergence.csv, fbar_table.json byte-identical: {same}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path().to_path_buf();
    let criteria: Vec<Criterion> = vec![
        ("lift algebra", Duration::from_secs(60), Box::new(lift_algebra)),
        ("covariance fidelity", Duration::from_secs(120), Box::new(covariance_fidelity)),
        ("integrator oracles", Duration::from_secs(60), Box::new(integrator_oracles)),
        ("cross-scheme equivalence", Duration::from_secs(300), Box::new(cross_scheme)),
        ("Ito correction and frozen law", Duration::from_secs(300), Box::new(ito_correction)),
        ("averaged drift oracle", Duration::from_secs(120), Box::new(fbar_oracle)),
        ("freezing error scaling", Duration::from_secs(900), Box::new(khasminskii)),
        (
            "averaging trend",
            Duration::from_secs(3600),
            Box::new({
                let t = t.clone();
                move || theorem_trend(&t)
            }),
        ),
        ("mixing probe", Duration::from_secs(120), Box::new(mixing)),
        ("determinism", Duration::from_secs(3600), Box::new(move || determinism(&t))),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed();
        let within = secs <= *limit;
        let passed = o.passed && within;
        if !passed {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {} [{:.1} s, limit {} s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            secs.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
