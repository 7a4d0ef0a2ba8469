use overhauser_core::grid::{Distribution, Grid1D};
use overhauser_core::ramsey::{distribution_from_fid, fid_from_distribution, uniform_taus, MHZ_NS};
use proptest::prelude::*;

fn grid() -> Grid1D {
    Grid1D::symmetric(500.0, 2048).unwrap()
}

fn round_trip_l1(d: &Distribution, tau_max: f64) -> f64 {
    let taus = uniform_taus(0.25, tau_max).unwrap();
    let fid = fid_from_distribution(d, &taus).unwrap();
    let (back, meta) = distribution_from_fid(&fid, *d.grid()).unwrap();
    assert!(!meta.leakage_warning);
    back.l1_distance(d).unwrap()
}

#[test]
fn gaussian_round_trip() {
    let d = Distribution::thermal(grid(), 70.3).unwrap();
    assert!(round_trip_l1(&d, 250.0) <= 1e-3);
}

#[test]
fn bimodal_round_trip() {
    let d = Distribution::from_fn(grid(), |x| {
        (-(x - 60.0) * (x - 60.0) / 800.0).exp() + 0.5 * (-(x + 90.0) * (x + 90.0) / 450.0).exp()
    })
    .unwrap();
    assert!(round_trip_l1(&d, 250.0) <= 1e-3);
}

#[test]
fn narrowed_round_trip() {
    let d = Distribution::gaussian(grid(), 0.0, 7.0).unwrap();
    assert!(round_trip_l1(&d, 250.0) <= 1e-3);
}

/// `∫|C(τ)|² dτ` over both signs of `τ` equals `∫P² dδ` (in cycles).
#[test]
fn parseval() {
    let d = Distribution::from_fn(grid(), |x| {
        (-(x - 20.0) * (x - 20.0) / 450.0).exp() + 0.7 * (-(x + 40.0) * (x + 40.0) / 300.0).exp()
    })
    .unwrap();
    let step = 0.25;
    let taus = uniform_taus(step, 250.0).unwrap();
    let fid = fid_from_distribution(&d, &taus).unwrap();
    let last = taus.len() - 1;
    let lhs: f64 = fid
        .visibility
        .iter()
        .enumerate()
        .map(|(j, v)| if j == 0 || j == last { 0.5 } else { 1.0 } * v * v)
        .sum::<f64>()
        * 2.0
        * step
        * MHZ_NS;
    let rhs: f64 = d.density().iter().map(|p| p * p).sum::<f64>() * d.grid().h();
    assert!((lhs / rhs - 1.0).abs() < 1e-3, "{lhs} vs {rhs}");
}

#[test]
fn lorentzian_fid_is_exponential() {
    let g = Grid1D::symmetric(2000.0, 16384).unwrap();
    let hwhm = 5.0;
    let d = Distribution::lorentzian(g, 0.0, hwhm).unwrap();
    let fid = fid_from_distribution(&d, &[10.0, 30.0]).unwrap();
    for (t, v) in fid.taus.iter().zip(&fid.visibility) {
        let expect = (-2.0 * std::f64::consts::PI * hwhm * t * MHZ_NS).exp();
        // truncated tails put a little mass at δ = ±2 GHz
        assert!((v - expect).abs() < 2e-3, "{v} vs {expect}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shifted_gaussians_invert(mean in -150.0..150.0f64, sigma in 8.0..60.0f64) {
        let d = Distribution::gaussian(grid(), mean, sigma).unwrap();
        prop_assert!(round_trip_l1(&d, 250.0) <= 1e-3);
    }

    #[test]
    fn visibility_is_bounded(mean in -200.0..200.0f64, sigma in 1.0..80.0f64, tau in 0.0..250.0f64) {
        let d = Distribution::gaussian(grid(), mean, sigma).unwrap();
        let v = fid_from_distribution(&d, &[tau]).unwrap().visibility[0];
        prop_assert!(v <= 1.0 + 1e-12);
    }
}
