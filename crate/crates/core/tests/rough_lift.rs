use proptest::prelude::*;
use roughavg::gaussian_paths::{sample_bm, sample_fbm, GaussianPath};
use roughavg::rough_lift::{check_lift, lift_mixed, RoughLift};
use roughavg::stats::{mean, variance};
use roughavg::Grid;

fn mixed(hurst: f64, coarse: usize, factor: usize, d: usize, dw: usize, seed: u64) -> RoughLift<f64> {
    let fine = Grid::horizon(1.0, coarse * factor).unwrap();
    let b = sample_fbm(hurst, d, fine, seed).unwrap();
    let w = sample_bm(dw, fine, seed);
    lift_mixed(&b, &w, Grid::horizon(1.0, coarse).unwrap(), factor).unwrap()
}

fn subsample(p: &GaussianPath<f64>, every: usize) -> GaussianPath<f64> {
    let n = p.grid.n_steps / every;
    let grid = Grid::horizon(p.grid.t_end, n).unwrap();
    let values = (0..=n).flat_map(|i| p.point(i * every).to_vec()).collect();
    GaussianPath::from_values(grid, p.dim, values, p.kind).unwrap()
}

#[test]
fn random_lifts_satisfy_both_identities() {
    for (k, h) in [0.35, 0.4, 0.5].iter().cycle().take(12).enumerate() {
        let lift = mixed(*h, [16, 64, 128][k % 3], 32, 2, 1, k as u64);
        let diag = check_lift(&lift, 1e-10);
        assert!(diag.passed, "{diag:?}");
        assert!(diag.chen_residual_rel <= 1e-10 && diag.symmetry_residual_rel <= 1e-10);
    }
}

#[test]
fn cross_area_converges_in_fine_factor() {
    let coarse = Grid::horizon(1.0, 8).unwrap();
    let fine = Grid::horizon(1.0, 8 * 128).unwrap();
    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    for seed in 0..64 {
        let b = sample_fbm(0.4, 1, fine, seed).unwrap();
        let w = sample_bm(1, fine, seed);
        let area = |every: usize| {
            let lift = lift_mixed(&subsample(&b, every), &subsample(&w, every), coarse, 128 / every).unwrap();
            // Entry (B, W): ∫ B dW over [0, T].
            lift.z2(0, 8)[1]
        };
        let (a8, a32, a128) = (area(16), area(4), area(1));
        d1.push((a8 - a32).powi(2));
        d2.push((a32 - a128).powi(2));
    }
    assert!(mean(&d2) < mean(&d1), "{} vs {}", mean(&d2), mean(&d1));
}

#[test]
fn diagonal_second_level_has_half_the_increment_variance() {
    let h = 0.4;
    let (s, t) = (2usize, 6usize);
    let vals: Vec<f64> = (0..4000).map(|seed| mixed(h, 8, 8, 1, 1, seed).z2(s, t)[0]).collect();
    let span = (t - s) as f64 / 8.0;
    let expect = 0.5 * span.powf(2.0 * h);
    let se = (variance(&vals) / vals.len() as f64).sqrt();
    assert!((mean(&vals) - expect).abs() < 3.0 * se, "{} vs {expect}", mean(&vals));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn chen_holds_on_every_lift(
        seed in any::<u64>(),
        h in prop::sample::select(vec![0.35, 0.4, 0.45, 0.5]),
        coarse in 2usize..40,
        factor in 1usize..16,
        d in 1usize..3,
        dw in 0usize..3,
    ) {
        let lift = mixed(h, coarse, factor, d, dw, seed);
        let diag = check_lift(&lift, 1e-10);
        prop_assert!(diag.passed, "{:?}", diag);
    }
}
