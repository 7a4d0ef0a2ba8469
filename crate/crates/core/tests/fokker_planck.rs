use overhauser_core::experiment::ExperimentConfig;
use overhauser_core::feedback::{DriftDiffusion, T_C_DEFAULT_MS};
use overhauser_core::fokker_planck::FokkerPlanck;
use overhauser_core::grid::{Distribution, Grid1D};
use proptest::prelude::*;

const GAMMA_D: f64 = 1.0 / T_C_DEFAULT_MS;

fn sigma_th() -> f64 {
    overhauser_core::experiment::default_sigma_th()
}

fn conserved(d: &Distribution) -> bool {
    (d.normalization() - 1.0).abs() <= 1e-9 && d.min_density() >= 0.0
}

#[test]
fn ou_variance_relaxes_exponentially() {
    let s = sigma_th();
    let grid = Grid1D::symmetric(500.0, 4096).unwrap();
    let dd = DriftDiffusion::ornstein_uhlenbeck(grid, GAMMA_D, s).unwrap();
    let fp = FokkerPlanck::new(&dd).unwrap();
    let s0 = s / 10.0;
    let start = Distribution::gaussian(grid, 0.0, s0).unwrap();
    let mut p = start.clone();
    let mut t_prev = 0.0;
    for k in [0.25, 1.0, 3.0] {
        let t = k / GAMMA_D;
        p = fp.evolve(&p, t - t_prev, 0.05).unwrap();
        t_prev = t;
        assert!(conserved(&p));
        let expect = s * s + (s0 * s0 - s * s) * (-2.0 * GAMMA_D * t).exp();
        let got = p.moments().variance;
        assert!(
            (got / expect - 1.0).abs() < 1e-2,
            "t = {t}: {got} vs {expect}"
        );
    }
}

#[test]
fn ou_mean_decays_at_the_dark_rate() {
    let s = sigma_th();
    let grid = Grid1D::symmetric(500.0, 2048).unwrap();
    let dd = DriftDiffusion::ornstein_uhlenbeck(grid, GAMMA_D, s).unwrap();
    let start = Distribution::gaussian(grid, 100.0, 20.0).unwrap();
    let t = 20.0;
    let p = FokkerPlanck::new(&dd)
        .unwrap()
        .evolve(&start, t, 0.05)
        .unwrap();
    let expect = 100.0 * (-GAMMA_D * t).exp();
    assert!((p.moments().mean - expect).abs() < 0.01 * expect);
}

#[test]
fn stationary_state_carries_no_flux() {
    let dd = ExperimentConfig::default().fields().unwrap();
    let fp = FokkerPlanck::new(&dd).unwrap();
    let ss = fp.steady_state().unwrap();
    let peak = ss.density().iter().copied().fold(0.0, f64::max);
    // size of the two one-sided terms that cancel in each flux
    let d_max = dd.diffusion.iter().copied().fold(0.0, f64::max);
    let scale = peak * d_max / dd.grid.h();
    for j in fp.fluxes(&ss) {
        assert!(j.abs() <= 1e-12 * scale, "flux {j}");
    }
}

#[test]
fn long_evolution_reaches_the_stationary_state() {
    let cfg = ExperimentConfig::default();
    let dd = cfg.fields().unwrap();
    let fp = FokkerPlanck::new(&dd).unwrap();
    let ss = fp.steady_state().unwrap();
    let p = fp
        .evolve(&cfg.thermal().unwrap(), 12.0, cfg.dt_max)
        .unwrap();
    assert!(conserved(&p));
    assert!(p.l1_distance(&ss).unwrap() < 1e-3);
}

#[test]
fn grid_refinement_converges() {
    let base = ExperimentConfig::default();
    let variance = |n: usize| {
        let cfg = ExperimentConfig {
            grid: Grid1D::symmetric(500.0, n).unwrap(),
            ..base.clone()
        };
        FokkerPlanck::new(&cfg.fields().unwrap())
            .unwrap()
            .steady_state()
            .unwrap()
            .moments()
            .variance
    };
    let (v1, v2, v3) = (variance(1024), variance(2048), variance(4096));
    let (e1, e2) = ((v1 - v2).abs(), (v2 - v3).abs());
    assert!(e2 < e1 || e2 < 1e-6 * v3, "{v1} {v2} {v3}");
    assert!(e2 / v3 < 1e-3);
}

#[test]
fn prepared_state_is_centred_on_the_lock_point() {
    let cfg = ExperimentConfig {
        t_cpt: 2.0,
        ..ExperimentConfig::default()
    };
    let p = overhauser_core::experiment::prepare(&cfg, cfg.t_cpt).unwrap();
    assert!(p.moments().mean.abs() < 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Arbitrary smooth fields keep the density normalized and non-negative.
    #[test]
    fn evolution_conserves_probability(
        a in -2.0..2.0f64,
        k in 0.5..8.0f64,
        d0 in 5.0..500.0f64,
        d1 in 0.0..400.0f64,
        mean in -200.0..200.0f64,
        width in 5.0..80.0f64,
        t in 0.01..3.0f64,
    ) {
        let grid = Grid1D::symmetric(500.0, 512).unwrap();
        let drift = grid.centers().map(|x| -0.05 * x + 100.0 * a * (k * x / 500.0).sin()).collect();
        let diffusion = grid.centers().map(|x| d0 + d1 * (x / 300.0).cos().powi(2)).collect();
        let dd = DriftDiffusion::new(grid, drift, diffusion).unwrap();
        let start = Distribution::gaussian(grid, mean, width).unwrap();
        let p = FokkerPlanck::new(&dd).unwrap().evolve(&start, t, 0.05).unwrap();
        prop_assert!(conserved(&p));
    }
}
