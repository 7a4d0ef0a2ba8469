use overhauser_core::fitting::{fit_relaxation, fit_stretched_exp, relaxation_law, stretched_exp};
use overhauser_core::ramsey::uniform_taus;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Reported standard errors match the scatter of refits under white noise,
/// and the estimates are unbiased within that scatter.
#[test]
fn noise_monte_carlo() {
    let (a, t2, alpha, noise) = (0.95, 20.0, 1.6, 0.01);
    let taus: Vec<f64> = uniform_taus(0.25, 100.0)
        .unwrap()
        .into_iter()
        .skip(1)
        .collect();
    let clean: Vec<f64> = taus
        .iter()
        .map(|t| stretched_exp(a, t2, alpha, *t))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reps = 200;
    let (mut t2s, mut alphas, mut se_t2, mut se_alpha) = (vec![], vec![], vec![], vec![]);
    for _ in 0..reps {
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| {
                let xi: f64 = StandardNormal.sample(&mut rng);
                v + noise * xi
            })
            .collect();
        let f = fit_stretched_exp(&taus, &noisy, None).unwrap();
        assert!(f.converged);
        t2s.push(f.t2_star);
        alphas.push(f.alpha);
        se_t2.push(f.std_errors[1]);
        se_alpha.push(f.std_errors[2]);
    }
    let (m_t2, sd_t2) = mean_sd(&t2s);
    let (m_al, sd_al) = mean_sd(&alphas);
    let (se_t2, _) = mean_sd(&se_t2);
    let (se_al, _) = mean_sd(&se_alpha);
    let n = (reps as f64).sqrt();
    assert!((m_t2 - t2).abs() < 4.0 * sd_t2 / n, "T2* bias {m_t2}");
    assert!((m_al - alpha).abs() < 4.0 * sd_al / n, "alpha bias {m_al}");
    assert!(
        (0.7..1.4).contains(&(sd_t2 / se_t2)),
        "T2* scatter {sd_t2} vs error {se_t2}"
    );
    assert!(
        (0.7..1.4).contains(&(sd_al / se_al)),
        "alpha scatter {sd_al} vs error {se_al}"
    );
}

#[test]
fn noiseless_gaussian_and_exponential_are_exact() {
    let taus: Vec<f64> = uniform_taus(0.25, 250.0)
        .unwrap()
        .into_iter()
        .skip(1)
        .collect();
    for (t2, alpha) in [(3.2, 2.0), (39.0, 1.0), (22.0, 1.6)] {
        let v: Vec<f64> = taus
            .iter()
            .map(|t| stretched_exp(1.0, t2, alpha, *t))
            .collect();
        let f = fit_stretched_exp(&taus, &v, None).unwrap();
        assert!((f.t2_star / t2 - 1.0).abs() < 1e-6);
        assert!((f.alpha - alpha).abs() < 1e-6);
    }
}

#[test]
fn relaxation_law_recovers_correlation_time() {
    let t: Vec<f64> = [0.0, 1.0, 3.0, 10.0, 30.0, 60.0, 100.0, 200.0].to_vec();
    let y: Vec<f64> = t
        .iter()
        .map(|x| relaxation_law(46.4, 3.2, 39.0, *x))
        .collect();
    let f = fit_relaxation(&t, &y, 39.0).unwrap();
    assert!((f.t_c / 46.4 - 1.0).abs() < 1e-6);
    assert!((f.t2_inf / 3.2 - 1.0).abs() < 1e-6);
}
