use roughavg::coefficients::{Dims, FnCoefficients, Preset};
use roughavg::fields::{FnMatrixField, FnVectorField};
use roughavg::gaussian_paths::{sample_bm, GaussianPath, PathKind};
use roughavg::rde_solver::{solve_fast_ito, solve_fast_slow, solve_frozen, solve_rde, sup_distance, MixedNoise};
use roughavg::rough_lift::RoughLift;
use roughavg::stats::{loglog_slope, mean, variance};
use roughavg::{Error, Grid};

fn scalar_ode(n: usize) -> f64 {
    let grid = Grid::horizon(1.0, n).unwrap();
    let path = GaussianPath::from_values(grid, 1, vec![0.0; grid.len()], PathKind::Bm).unwrap();
    let lift = RoughLift::geometric(&path, grid, 1).unwrap();
    let a = FnVectorField::new(1, |u: &[f64], o: &mut [f64]| o[0] = u[0]);
    let v = FnMatrixField::constant(1, 1, 1, vec![0.0]);
    *solve_rde(&a, &v, &lift, &[1.0], &grid).unwrap().last().first().unwrap()
}

#[test]
fn zero_coefficients_keep_initial_value() {
    let grid = Grid::horizon(1.0, 64).unwrap();
    let w = sample_bm(2, grid, 1);
    let lift = RoughLift::geometric(&w, grid, 1).unwrap();
    let a = FnVectorField::zero(3);
    let v = FnMatrixField::constant(3, 3, 2, vec![0.0; 6]);
    let sol = solve_rde(&a, &v, &lift, &[1.0, -2.0, 0.5], &grid).unwrap();
    for i in 0..grid.len() {
        assert_eq!(sol.point(i), &[1.0, -2.0, 0.5]);
    }
}

#[test]
fn exponential_ode() {
    let got = scalar_ode(1 << 12);
    assert!((got - std::f64::consts::E).abs() < 1e-3, "{got}");
}

#[test]
fn pure_drift_is_first_order() {
    let ns = [256.0, 512.0, 1024.0, 2048.0];
    let errs: Vec<f64> = ns.iter().map(|&n| (scalar_ode(n as usize) - std::f64::consts::E).abs()).collect();
    let slope = loglog_slope(&ns.iter().map(|n| 1.0 / n).collect::<Vec<_>>(), &errs);
    assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn stratonovich_linear_equation() {
    let grid = Grid::horizon(1.0, 1 << 14).unwrap();
    let a = FnVectorField::zero(1);
    let v = FnMatrixField::new(1, 1, 1, |u: &[f64], o: &mut [f64]| o[0] = u[0])
        .with_jacobian(|_: &[f64], o: &mut [f64]| o[0] = 1.0);
    for seed in 0..5 {
        let w = sample_bm(1, grid, seed);
        let lift = RoughLift::geometric(&w, grid, 1).unwrap();
        let sol = solve_rde(&a, &v, &lift, &[1.0], &grid).unwrap();
        let exact = w.values[grid.n_steps].exp();
        assert!((sol.last()[0] - exact).abs() / exact < 1e-2);
    }
}

#[test]
fn smooth_geometric_driver_pathwise_error_is_first_order() {
    // du = u dX with X = sin: u_t = exp(sin t).
    let a = FnVectorField::zero(1);
    let v = FnMatrixField::new(1, 1, 1, |u: &[f64], o: &mut [f64]| o[0] = u[0])
        .with_jacobian(|_: &[f64], o: &mut [f64]| o[0] = 1.0);
    let ns = [64usize, 256, 1024];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let grid = Grid::<f64>::horizon(1.0, n).unwrap();
            let vals = grid.times().iter().map(|t| t.sin()).collect();
            let path = GaussianPath::from_values(grid, 1, vals, PathKind::Bm).unwrap();
            let lift = RoughLift::geometric(&path, grid, 1).unwrap();
            let sol = solve_rde(&a, &v, &lift, &[1.0], &grid).unwrap();
            let exact: Vec<f64> = grid.times().iter().map(|t| t.sin().exp()).collect();
            sup_distance(&sol.values, &exact)
        })
        .collect();
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    assert!(loglog_slope(&h, &errs) >= 1.0 - 0.05, "{errs:?}");
}

#[test]
fn divergence_reports_step() {
    let grid = Grid::horizon(1.0, 64).unwrap();
    let path = GaussianPath::from_values(grid, 1, vec![0.0; grid.len()], PathKind::Bm).unwrap();
    let lift = RoughLift::geometric(&path, grid, 1).unwrap();
    let a = FnVectorField::new(1, |u: &[f64], o: &mut [f64]| o[0] = u[0] * u[0] * 1e3);
    let v = FnMatrixField::constant(1, 1, 1, vec![0.0]);
    match solve_rde(&a, &v, &lift, &[10.0], &grid) {
        Err(Error::Divergence { step, .. }) => assert!((1..=64).contains(&step)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn fast_component_time_average_matches_ou_mean() {
    let coarse = Grid::horizon(0.2, 200).unwrap();
    let mut averages = Vec::new();
    for seed in 0..4 {
        let noise = MixedNoise::<f64>::sample(0.4, Dims::SCALAR, coarse, 16, seed).unwrap();
        let sol = solve_fast_slow(&Preset::OuLinear, 1e-3, &noise, &[8.0], &[1.0], 16).unwrap();
        let y = sol.y.coordinate(0);
        averages.push(mean(&y[100..]));
        // σ = 0: the slow variable is driven by Y alone and stays near 8.
        assert!((sol.x.last()[0] - 8.0).abs() < 0.5);
    }
    for a in averages {
        assert!((a - 1.0).abs() < 0.05, "time average {a}");
    }
}

fn lag_one_autocorrelation(y: &[f64]) -> f64 {
    let m = mean(y);
    let num: f64 = y.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    num / den
}

#[test]
fn smaller_eps_decorrelates_faster() {
    let coarse = Grid::horizon(2.0, 1000).unwrap();
    let noise = MixedNoise::<f64>::sample(0.4, Dims::SCALAR, coarse, 16, 7).unwrap();
    let rho: Vec<f64> = [0.02, 0.01]
        .iter()
        .map(|&eps| {
            let sol = solve_fast_slow(&Preset::OuLinear, eps, &noise, &[0.0], &[0.0], 16).unwrap();
            lag_one_autocorrelation(&sol.y.coordinate(0)[100..])
        })
        .collect();
    assert!(rho[1] < rho[0], "{rho:?}");
    // Oracle e^{-8 Δt / ε} with Δt = 0.002.
    assert!((rho[0] - (-0.8f64).exp()).abs() < 0.1);
    assert!((rho[1] - (-1.6f64).exp()).abs() < 0.1);
}

#[test]
fn deterministic_relaxation() {
    let c = FnCoefficients::<f64>::new(
        Dims::SCALAR,
        |_, _, o| o[0] = 0.0,
        |_, o| o[0] = 0.0,
        |_, p, o| o[0] = -p[0],
        |_, _, o| o[0] = 0.0,
    );
    let coarse = Grid::horizon(1.0, 100).unwrap();
    let noise = MixedNoise::<f64>::sample(0.4, Dims::SCALAR, coarse, 64, 0).unwrap();
    let eps = 0.1;
    let sol = solve_fast_slow(&c, eps, &noise, &[0.0], &[1.0], 64).unwrap();
    let exact: Vec<f64> = coarse.times().iter().map(|t| (-t / eps).exp()).collect();
    assert!(sup_distance(&sol.y.values, &exact) < 1e-3);
}

#[test]
fn substep_constraint_is_enforced() {
    let coarse = Grid::horizon(1.0, 100).unwrap();
    let noise = MixedNoise::<f64>::sample(0.4, Dims::SCALAR, coarse, 4, 0).unwrap();
    let err = solve_fast_slow(&Preset::Ou, 0.01, &noise, &[1.0], &[0.0], 2).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("at least 4")), "{err}");
}

#[test]
fn frozen_ou_stationary_law() {
    let xi = 8.0f64;
    let (horizon, n_steps, replicas) = (10.0, 10_000, 1000);
    let mut samples: Vec<f64> = Vec::new();
    for seed in 0..replicas {
        let path = solve_frozen(&[xi], &[0.0], &Preset::Ou, horizon, n_steps, seed).unwrap();
        // Second half of the trajectory, thinned to one point per 0.05.
        samples.extend(path.values[n_steps / 2..].iter().step_by(50));
    }
    let m = mean(&samples);
    let v = variance(&samples);
    assert!((m - xi / 8.0).abs() / (xi / 8.0) < 0.02, "mean {m}");
    assert!((v - 1.0 / 16.0).abs() / (1.0 / 16.0) < 0.05, "variance {v}");
}

fn coupling_rate(preset: Preset) -> f64 {
    let (horizon, n_steps, replicas) = (0.5, 500, 64);
    let mut sq = vec![0.0f64; n_steps + 1];
    for seed in 0..replicas {
        let a = solve_frozen(&[0.5f64], &[1.0], &preset, horizon, n_steps, seed).unwrap();
        let b = solve_frozen(&[0.5f64], &[-1.0], &preset, horizon, n_steps, seed).unwrap();
        for (k, s) in sq.iter_mut().enumerate() {
            *s += (a.values[k] - b.values[k]).powi(2) / replicas as f64;
        }
    }
    let t: Vec<f64> = (0..=n_steps).step_by(50).map(|k| k as f64 * horizon / n_steps as f64).collect();
    let logs: Vec<f64> = (0..=n_steps).step_by(50).map(|k| sq[k].ln()).collect();
    -roughavg::stats::linear_fit(&t, &logs).0
}

#[test]
fn synchronous_coupling_contracts_at_declared_rate() {
    let rate = coupling_rate(Preset::Ou);
    assert!((rate - 16.0).abs() / 16.0 < 0.05, "rate {rate}");
    assert!(coupling_rate(Preset::Nonlinear) >= 12.0);
}

#[test]
fn rough_and_ito_forms_of_the_fast_equation_agree_under_refinement() {
    let fine = Grid::horizon(1.0, 1 << 14).unwrap();
    let (xi, eps, phi0) = (0.5f64, 0.5f64, 0.3f64);
    let p = Preset::Nonlinear;
    let a = FnVectorField::new(1, move |u: &[f64], o: &mut [f64]| o[0] = (xi - 8.0 * u[0]) / eps);
    let v = FnMatrixField::new(1, 1, 1, move |u: &[f64], o: &mut [f64]| o[0] = (xi.sin() + u[0].sin()) / eps.sqrt())
        .with_jacobian(move |u: &[f64], o: &mut [f64]| o[0] = u[0].cos() / eps.sqrt());
    let ns = [1usize << 8, 1 << 10, 1 << 12];
    let mut dist = vec![0.0; ns.len()];
    let seeds = 8;
    for seed in 0..seeds {
        let w = sample_bm(1, fine, seed);
        for (idx, &n) in ns.iter().enumerate() {
            let coarse = Grid::horizon(1.0, n).unwrap();
            let factor = fine.n_steps / n;
            let lift = RoughLift::geometric(&w, coarse, factor).unwrap();
            let rough = solve_rde(&a, &v, &lift, &[phi0], &coarse).unwrap();
            let w_coarse: Vec<f64> = (0..coarse.len()).map(|i| w.values[i * factor]).collect();
            let wc = GaussianPath::from_values(coarse, 1, w_coarse, PathKind::Bm).unwrap();
            let ito = solve_fast_ito(&p, &[xi], eps, &[phi0], &wc).unwrap();
            dist[idx] += sup_distance(&rough.values, &ito.values) / seeds as f64;
        }
    }
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    assert!(dist[1] < dist[0] && dist[2] < dist[1], "{dist:?}");
    assert!(loglog_slope(&h, &dist) > 0.0, "{dist:?}");
}

#[test]
fn fast_second_moment_stays_bounded_across_eps() {
    let coarse = Grid::horizon(1.0, 128).unwrap();
    for eps in [0.1, 0.03, 0.01] {
        let mut worst: f64 = 0.0;
        let mut sq = vec![0.0; coarse.len()];
        for seed in 0..10 {
            let noise = MixedNoise::<f64>::sample(0.4, Dims::SCALAR, coarse, 64, seed).unwrap();
            let sol = solve_fast_slow(&Preset::Nonlinear, eps, &noise, &[1.0], &[0.0], 64).unwrap();
            for (s, y) in sq.iter_mut().zip(&sol.y.values) {
                *s += y * y / 10.0;
            }
        }
        for s in sq {
            worst = worst.max(s);
        }
        assert!(worst < 1.0, "eps {eps}: sup E|Y|² = {worst}");
    }
}

#[test]
fn single_precision_fast_slow_runs() {
    let coarse = Grid::<f32>::horizon(1.0, 64).unwrap();
    let noise = MixedNoise::<f32>::sample(0.4, Dims::SCALAR, coarse, 32, 3).unwrap();
    let sol = solve_fast_slow(&Preset::Nonlinear, 0.1f32, &noise, &[1.0], &[0.0], 32).unwrap();
    assert!(sol.x.values.iter().all(|v| v.is_finite()));
}
