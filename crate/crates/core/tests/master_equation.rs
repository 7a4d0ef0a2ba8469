#![allow(clippy::needless_range_loop)]

//! Independent check of the Λ-system steady state: integrate the Lindblad
//! equation with RK4 from the ground state until it stops moving and compare
//! with the linear solve.

use overhauser_core::lambda::LambdaParams;
use overhauser_core::Complex;
use proptest::prelude::*;

type M = [[Complex; 3]; 3];

fn zero() -> M {
    [[Complex::new(0.0, 0.0); 3]; 3]
}

fn mul(a: &M, b: &M) -> M {
    let mut c = zero();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn dag(a: &M) -> M {
    let mut c = zero();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[j][i].conj();
        }
    }
    c
}

fn axpy(y: &M, a: f64, x: &M) -> M {
    let mut c = *y;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += x[i][j] * a;
        }
    }
    c
}

/// `dρ/dt = −i[H, ρ] + Σ (LρL† − ½{L†L, ρ})`, written out element by element.
fn rhs(p: &LambdaParams, d2: f64, rho: &M) -> M {
    let c = |x: f64| Complex::new(x, 0.0);
    let mut h = zero();
    h[0][0] = c(p.big_delta - 0.5 * d2);
    h[1][1] = c(p.big_delta + 0.5 * d2);
    h[0][2] = c(0.5 * p.omega1);
    h[2][0] = c(0.5 * p.omega1);
    h[1][2] = c(0.5 * p.omega2);
    h[2][1] = c(0.5 * p.omega2);
    let hr = mul(&h, rho);
    let rh = mul(rho, &h);
    let mut out = zero();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = Complex::new(0.0, -1.0) * (hr[i][j] - rh[i][j]);
        }
    }
    // spontaneous decay e → u, e → d
    let g = p.gamma_sp;
    let ee = rho[2][2];
    out[0][0] += ee * (g * p.branching);
    out[1][1] += ee * (g * (1.0 - p.branching));
    out[2][2] -= ee * g;
    for k in 0..2 {
        out[k][2] -= rho[k][2] * (0.5 * g);
        out[2][k] -= rho[2][k] * (0.5 * g);
    }
    // pure ground-state dephasing: L = √(γ₂/2)·diag(1, −1, 0)
    let mut l = zero();
    l[0][0] = c((0.5 * p.gamma_2).sqrt());
    l[1][1] = c(-(0.5 * p.gamma_2).sqrt());
    let lrl = mul(&mul(&l, rho), &dag(&l));
    let ldl = mul(&dag(&l), &l);
    let a = mul(&ldl, rho);
    let b = mul(rho, &ldl);
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += lrl[i][j] - (a[i][j] + b[i][j]) * 0.5;
        }
    }
    out
}

fn norm(a: &M) -> f64 {
    a.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
}

fn integrate(p: &LambdaParams, d2: f64) -> M {
    let scale = p.omega1.max(p.omega2) + p.big_delta.abs() + d2.abs() + p.gamma_sp;
    let dt = 0.5 / scale;
    let mut rho = zero();
    rho[0][0] = Complex::new(0.5, 0.0);
    rho[1][1] = Complex::new(0.5, 0.0);
    for _ in 0..5_000_000 {
        let k1 = rhs(p, d2, &rho);
        let k2 = rhs(p, d2, &axpy(&rho, 0.5 * dt, &k1));
        let k3 = rhs(p, d2, &axpy(&rho, 0.5 * dt, &k2));
        let k4 = rhs(p, d2, &axpy(&rho, dt, &k3));
        let mut next = rho;
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] += (k1[i][j] + (k2[i][j] + k3[i][j]) * 2.0 + k4[i][j]) * (dt / 6.0);
            }
        }
        rho = next;
        if norm(&k1) < 1e-11 {
            break;
        }
    }
    rho
}

fn params(omega: f64, big_delta: f64, gamma_2: f64, b: f64) -> LambdaParams {
    LambdaParams {
        omega1: omega,
        omega2: omega * 0.8,
        big_delta,
        gamma_sp: 227.0,
        branching: b,
        gamma_2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn linear_solve_matches_time_evolution(
        omega in 100.0..400.0f64,
        big_delta in -60.0..60.0f64,
        gamma_2 in 5.0..50.0f64,
        b in 0.3..0.7f64,
        d2 in -80.0..80.0f64,
    ) {
        let p = params(omega, big_delta, gamma_2, b);
        let direct = p.steady_state(d2).unwrap().rho;
        let evolved = integrate(&p, d2);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((direct[i][j] - evolved[i][j]).norm() < 1e-8,
                    "({i},{j}) {} vs {}", direct[i][j], evolved[i][j]);
            }
        }
    }

    #[test]
    fn steady_state_is_positive_semidefinite(
        omega in 10.0..2000.0f64,
        big_delta in -5000.0..5000.0f64,
        gamma_2 in 0.0..50.0f64,
        d2 in -500.0..500.0f64,
    ) {
        let r = params(omega, big_delta, gamma_2, 0.5).steady_state(d2).unwrap().rho;
        let tol = 1e-12;
        for i in 0..3 {
            prop_assert!(r[i][i].re >= -tol);
            prop_assert!(r[i][i].im.abs() <= tol);
            for j in 0..3 {
                prop_assert!((r[i][j] - r[j][i].conj()).norm() <= tol);
            }
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let minor = r[i][i].re * r[j][j].re - r[i][j].norm_sqr();
            prop_assert!(minor >= -tol, "2×2 minor {minor}");
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        prop_assert!(det.re >= -tol);
    }
}

#[test]
fn trion_population_is_a_dip_at_two_photon_resonance() {
    let p = LambdaParams::default();
    let e0 = p.steady_state(0.0).unwrap().rho_ee;
    let off = p.steady_state(200.0).unwrap().rho_ee;
    assert!(e0 < 0.5 * off, "{e0} vs {off}");
}
