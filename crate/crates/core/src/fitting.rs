//! Nonlinear least squares for coherence decays, relaxation laws and shapes.

use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Distribution;

/// Iteration cap of the damped Gauss–Newton loop.
pub const MAX_ITERATIONS: usize = 500;

/// Visibility below which the fit window ends.
pub const WINDOW_CUTOFF: f64 = 0.05;

pub const ALPHA_BOUNDS: (f64, f64) = (0.5, 3.0);
pub const AMPLITUDE_MAX: f64 = 1.2;

/// Outcome of a bounded Levenberg–Marquardt run.
#[derive(Debug, Clone)]
struct LmOutcome {
    params: Vec<f64>,
    cost: f64,
    jtj: DMatrix<f64>,
    iterations: usize,
    converged: bool,
}

/// Minimizes `Σ r²` where `model` fills the residuals and Jacobian rows.
fn levenberg_marquardt<F>(p0: &[f64], lower: &[f64], upper: &[f64], m: usize, model: F) -> LmOutcome
where
    F: Fn(&[f64], &mut DVector<f64>, &mut DMatrix<f64>),
{
    let np = p0.len();
    let clamp = |p: &mut [f64]| {
        for ((v, lo), hi) in p.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut r = DVector::zeros(m);
    let mut j = DMatrix::zeros(m, np);
    model(&p, &mut r, &mut j);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut r_try = DVector::zeros(m);
    let mut j_try = DMatrix::zeros(m, np);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut a = jtj.clone();
        for k in 0..np {
            a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = a.lu().solve(&(-g)) else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
            continue;
        };
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        clamp(&mut trial);
        model(&trial, &mut r_try, &mut j_try);
        let trial_cost = r_try.norm_squared();
        if trial_cost.is_finite() && trial_cost <= cost {
            let small_step = p
                .iter()
                .zip(&trial)
                .all(|(a, b)| (a - b).abs() <= 1e-13 * (a.abs() + 1e-300));
            let stalled = cost - trial_cost <= 1e-15 * cost;
            p = trial;
            cost = trial_cost;
            core::mem::swap(&mut r, &mut r_try);
            core::mem::swap(&mut j, &mut j_try);
            lambda = (lambda / 3.0).max(1e-12);
            if small_step || (stalled && lambda <= 1e-9) {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                // no descent direction left at floating-point resolution
                converged = true;
                break;
            }
        }
    }
    LmOutcome {
        params: p,
        cost,
        jtj: j.transpose() * &j,
        iterations,
        converged,
    }
}

/// `s²·(JᵀJ)⁻¹` with `s² = cost/(m − p)`.
fn covariance(out: &LmOutcome, m: usize) -> DMatrix<f64> {
    let np = out.params.len();
    let dof = m.saturating_sub(np).max(1) as f64;
    let s2 = out.cost / dof;
    out.jtj
        .clone()
        .try_inverse()
        .map(|inv| inv * s2)
        .unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN))
}

fn to_array<const N: usize>(m: &DMatrix<f64>) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

fn diag_sqrt<const N: usize>(c: &[[f64; N]; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for (i, v) in out.iter_mut().enumerate() {
        *v = libm::sqrt(c[i][i]);
    }
    out
}

/// `C(τ) = a·exp(−(τ/T₂*)^α)` fit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub a: f64,
    /// ns.
    pub t2_star: f64,
    pub alpha: f64,
    /// 1σ errors of `[a, t2_star, alpha]`.
    pub std_errors: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The window never fell below 1/e, so `t2_star` is extrapolated.
    pub extrapolated: bool,
    /// Points inside the fit window.
    pub n_points: usize,
}

impl FitResult {
    pub fn eval(&self, tau: f64) -> f64 {
        stretched_exp(self.a, self.t2_star, self.alpha, tau)
    }
}

pub fn stretched_exp(a: f64, t2_star: f64, alpha: f64, tau: f64) -> f64 {
    a * libm::exp(-libm::pow(tau / t2_star, alpha))
}

/// Fits `a·exp(−(τ/T₂*)^α)` to `visibility(taus)` over the window ending where
/// the visibility first drops below 0.05.
pub fn fit_stretched_exp(
    taus: &[f64],
    visibility: &[f64],
    weights: Option<&[f64]>,
) -> Result<FitResult> {
    if taus.len() != visibility.len() || weights.is_some_and(|w| w.len() != taus.len()) {
        return Err(Error::invalid("mismatched fit input lengths"));
    }
    if taus.iter().chain(visibility).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite fit input"));
    }
    if weights.is_some_and(|w| w.iter().any(|v| !(v.is_finite() && *v >= 0.0))) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let end = visibility
        .iter()
        .position(|v| *v < WINDOW_CUTOFF)
        .unwrap_or(visibility.len());
    let (t, y) = (&taus[..end], &visibility[..end]);
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bottom = visibility.iter().copied().fold(f64::INFINITY, f64::min);
    if visibility.len() >= 2 && top - bottom <= 1e-12 * top.abs().max(1e-300) {
        return Err(Error::NoDecayToFit);
    }
    if end < 6 {
        return Err(Error::InsufficientData(String::from(
            "fewer than 6 points in the fit window",
        )));
    }
    let w: Vec<f64> = match weights {
        Some(w) => w[..end].iter().map(|v| libm::sqrt(*v)).collect(),
        None => alloc::vec![1.0; end],
    };
    let inv_e = libm::exp(-1.0);
    let crossing = y.windows(2).zip(t.windows(2)).find_map(|(yy, tt)| {
        (yy[0] >= inv_e && yy[1] < inv_e)
            .then(|| tt[0] + (tt[1] - tt[0]) * (yy[0] - inv_e) / (yy[0] - yy[1]))
    });
    let extrapolated = crossing.is_none();
    let t_last = t.iter().copied().fold(0.0, f64::max);
    let t_pos_min = t
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let t0 = crossing.unwrap_or(t_last).max(t_pos_min);
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::NoDecayToFit);
    }
    let a0 = y[0].clamp(1e-3, AMPLITUDE_MAX);

    let model = |p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>| {
        let (a, tt, al) = (p[0], p[1], p[2]);
        for i in 0..t.len() {
            let x = t[i] / tt;
            let u = if x > 0.0 { libm::pow(x, al) } else { 0.0 };
            let e = libm::exp(-u);
            let f = a * e;
            r[i] = w[i] * (f - y[i]);
            jac[(i, 0)] = w[i] * e;
            jac[(i, 1)] = w[i] * f * u * al / tt;
            jac[(i, 2)] = if x > 0.0 {
                -w[i] * f * u * libm::log(x)
            } else {
                0.0
            };
        }
    };
    let lower = [1e-12, 1e-9 * t0, ALPHA_BOUNDS.0];
    let upper = [AMPLITUDE_MAX, 1e9 * t0, ALPHA_BOUNDS.1];
    let mut best: Option<LmOutcome> = None;
    for alpha0 in [1.0, 1.5, 2.0] {
        let out = levenberg_marquardt(&[a0, t0, alpha0], &lower, &upper, end, model);
        best = Some(match best {
            None => out,
            Some(b) => {
                let tie = (out.cost - b.cost).abs() <= 1e-12 * b.cost.max(1e-300);
                let better = if tie {
                    out.params[2] < b.params[2]
                } else {
                    out.cost < b.cost
                };
                if better {
                    out
                } else {
                    b
                }
            }
        });
    }
    let best = best.ok_or(Error::NoDecayToFit)?;
    let cov = to_array::<3>(&covariance(&best, end));
    Ok(FitResult {
        a: best.params[0],
        t2_star: best.params[1],
        alpha: best.params[2],
        std_errors: diag_sqrt(&cov),
        covariance: cov,
        rms_residual: libm::sqrt(best.cost / end as f64),
        converged: best.converged,
        iterations: best.iterations,
        extrapolated,
        n_points: end,
    })
}

/// `T₂*(t) = T₂*(∞)/√(1 − B·exp(−2t/T_c))` with `B = 1 − (T₂*(∞)/T₂*(0))²`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelaxFit {
    /// ms.
    pub t_c: f64,
    pub b: f64,
    /// ns.
    pub t2_inf: f64,
    /// ns.
    pub t2_zero: f64,
    /// 1σ errors of `[t_c, t2_inf]`.
    pub std_errors: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl RelaxFit {
    pub fn eval(&self, t_relax: f64) -> f64 {
        relaxation_law(self.t_c, self.t2_inf, self.t2_zero, t_relax)
    }
}

pub fn relaxation_b(t2_inf: f64, t2_zero: f64) -> f64 {
    1.0 - (t2_inf / t2_zero) * (t2_inf / t2_zero)
}

pub fn relaxation_law(t_c: f64, t2_inf: f64, t2_zero: f64, t_relax: f64) -> f64 {
    let b = relaxation_b(t2_inf, t2_zero);
    t2_inf / libm::sqrt(1.0 - b * libm::exp(-2.0 * t_relax / t_c))
}

pub fn fit_relaxation(t_relax: &[f64], t2_star: &[f64], t2_zero: f64) -> Result<RelaxFit> {
    let m = t_relax.len();
    if m != t2_star.len() {
        return Err(Error::invalid("mismatched fit input lengths"));
    }
    if m < 4 {
        return Err(Error::InsufficientData(String::from(
            "relaxation fit needs 4 points",
        )));
    }
    if t_relax.iter().chain(t2_star).any(|v| !v.is_finite())
        || !t2_zero.is_finite()
        || t2_zero <= 0.0
    {
        return Err(Error::invalid("non-finite relaxation data"));
    }
    let t_min = t2_star.iter().copied().fold(f64::INFINITY, f64::min);
    if !(t_min > 0.0 && t_min < t2_zero) {
        return Err(Error::NoDecayToFit);
    }
    let span = t_relax.iter().copied().fold(0.0, f64::max).max(1e-12);
    let model = |p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>| {
        let (tc, ti) = (p[0], p[1]);
        let b = relaxation_b(ti, t2_zero);
        for i in 0..m {
            let e = libm::exp(-2.0 * t_relax[i] / tc);
            let s = 1.0 - b * e;
            let f = ti / libm::sqrt(s);
            r[i] = f - t2_star[i];
            let ds_dti = 2.0 * ti * e / (t2_zero * t2_zero);
            let ds_dtc = -b * e * 2.0 * t_relax[i] / (tc * tc);
            let half = -0.5 * ti / (s * libm::sqrt(s));
            jac[(i, 0)] = half * ds_dtc;
            jac[(i, 1)] = 1.0 / libm::sqrt(s) + half * ds_dti;
        }
    };
    let lower = [1e-9 * span, 1e-9 * t2_zero];
    let upper = [1e9 * span, t2_zero * (1.0 - 1e-12)];
    let best = [0.1, 0.3, 1.0, 3.0]
        .iter()
        .map(|f| levenberg_marquardt(&[f * span, t_min], &lower, &upper, m, model))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(Error::NoDecayToFit)?;
    let cov = to_array::<2>(&covariance(&best, m));
    Ok(RelaxFit {
        t_c: best.params[0],
        b: relaxation_b(best.params[1], t2_zero),
        t2_inf: best.params[1],
        t2_zero,
        std_errors: diag_sqrt(&cov),
        covariance: cov,
        rms_residual: libm::sqrt(best.cost / m as f64),
        converged: best.converged,
        iterations: best.iterations,
    })
}

/// Least-squares normal density matched to a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianFit {
    /// MHz.
    pub mean: f64,
    /// MHz.
    pub sigma: f64,
    /// `‖P − N‖₂/‖P‖₂`, a scale-free shape distance.
    pub rms_residual: f64,
    pub converged: bool,
}

pub fn fit_gaussian(dist: &Distribution) -> Result<GaussianFit> {
    let mo = dist.moments();
    let xs: Vec<f64> = dist.grid().centers().collect();
    let p = dist.density();
    let m = xs.len();
    let h = dist.grid().h();
    let model = |q: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>| {
        let (mu, s) = (q[0], q[1]);
        let norm = 1.0 / (s * libm::sqrt(2.0 * core::f64::consts::PI));
        for i in 0..m {
            let z = (xs[i] - mu) / s;
            let g = norm * libm::exp(-0.5 * z * z);
            r[i] = g - p[i];
            jac[(i, 0)] = g * z / s;
            jac[(i, 1)] = g * (z * z - 1.0) / s;
        }
    };
    let s0 = libm::sqrt(mo.variance).max(h);
    let span = dist.grid().max - dist.grid().min;
    let out = levenberg_marquardt(
        &[mo.mean, s0],
        &[dist.grid().min, 0.25 * h],
        &[dist.grid().max, span],
        m,
        model,
    );
    let norm_p: f64 = p.iter().map(|v| v * v).sum();
    Ok(GaussianFit {
        mean: out.params[0],
        sigma: out.params[1],
        rms_residual: libm::sqrt(out.cost / norm_p),
        converged: out.converged,
    })
}

/// `T(t) = T∞ − (T∞ − T0)·exp(−t/T_p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaturationFit {
    pub t0: f64,
    pub t_inf: f64,
    /// Same unit as the abscissa.
    pub t_p: f64,
    /// 1σ errors of `[t0, t_inf, t_p]`.
    pub std_errors: [f64; 3],
    pub rms_residual: f64,
    pub converged: bool,
}

pub fn fit_saturation(t: &[f64], y: &[f64]) -> Result<SaturationFit> {
    let m = t.len();
    if m != y.len() {
        return Err(Error::invalid("mismatched fit input lengths"));
    }
    if m < 4 {
        return Err(Error::InsufficientData(String::from(
            "saturation fit needs 4 points",
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite saturation data"));
    }
    let (y0, y1) = (y[0], y[m - 1]);
    if (y1 - y0).abs() <= 1e-12 * y0.abs().max(1e-300) {
        return Err(Error::NoDecayToFit);
    }
    let span = t.iter().copied().fold(0.0, f64::max).max(1e-12);
    let model = |p: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>| {
        let (a, b, tp) = (p[0], p[1], p[2]);
        for i in 0..m {
            let e = libm::exp(-t[i] / tp);
            r[i] = b - (b - a) * e - y[i];
            jac[(i, 0)] = e;
            jac[(i, 1)] = 1.0 - e;
            jac[(i, 2)] = -(b - a) * e * t[i] / (tp * tp);
        }
    };
    let big = 1e9 * (y0.abs() + y1.abs());
    let best = [0.03, 0.1, 0.3, 1.0]
        .iter()
        .map(|f| {
            levenberg_marquardt(
                &[y0, y1, f * span],
                &[-big, -big, 1e-9 * span],
                &[big, big, 1e3 * span],
                m,
                model,
            )
        })
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(Error::NoDecayToFit)?;
    let cov = to_array::<3>(&covariance(&best, m));
    Ok(SaturationFit {
        t0: best.params[0],
        t_inf: best.params[1],
        t_p: best.params[2],
        std_errors: diag_sqrt(&cov),
        rms_residual: libm::sqrt(best.cost / m as f64),
        converged: best.converged,
    })
}
