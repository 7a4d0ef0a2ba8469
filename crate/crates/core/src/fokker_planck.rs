//! Finite-volume evolution of the Overhauser-shift density.
//!
//! The density obeys `∂P/∂t = −∂J/∂δ` with flux `J = v·P − D·∂P/∂δ` and zero
//! flux through both grid edges. Interface fluxes use Chang–Cooper
//! (Scharfetter–Gummel) weights, which make the discrete stationary state the
//! exact exponential `P ∝ exp(∫v/D)` and keep the implicit-Euler update an
//! M-matrix, so every step conserves mass and positivity.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feedback::DriftDiffusion;
use crate::grid::Distribution;
use crate::linalg::solve_tridiagonal;

/// Largest relative change of any cell accepted in one step.
pub const MAX_RELATIVE_CHANGE: f64 = 0.1;

/// Cells below this fraction of the peak density do not limit the step.
const DENSITY_FLOOR: f64 = 1e-3;

/// Default step cap in ms.
pub const DT_MAX_DEFAULT: f64 = 5e-3;

/// `w/(eʷ − 1)`.
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-4 {
        1.0 - 0.5 * w + w * w / 12.0
    } else {
        w / libm::expm1(w)
    }
}

/// Step statistics of one [`FokkerPlanck::evolve`] call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// Discretized operator for a fixed set of fields.
#[derive(Debug, Clone)]
pub struct FokkerPlanck {
    grid: crate::grid::Grid1D,
    /// Interface flux `F_{i+½} = a_i·P_i + b_i·P_{i+1}`.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Péclet numbers `h·v̄/D̄` per interface.
    peclet: Vec<f64>,
    rate_scale: f64,
}

impl FokkerPlanck {
    pub fn new(dd: &DriftDiffusion) -> Result<Self> {
        dd.validate()?;
        let grid = dd.grid;
        if dd.drift.len() != grid.n || dd.diffusion.len() != grid.n {
            return Err(Error::MismatchedGrids);
        }
        let h = grid.h();
        let n = grid.n;
        let mut a = Vec::with_capacity(n - 1);
        let mut b = Vec::with_capacity(n - 1);
        let mut peclet = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let v = 0.5 * (dd.drift[i] + dd.drift[i + 1]);
            let d = 0.5 * (dd.diffusion[i] + dd.diffusion[i + 1]);
            let w = h * v / d;
            if !w.is_finite() {
                return Err(Error::SingularOperator);
            }
            a.push(d / h * bernoulli(-w));
            b.push(-d / h * bernoulli(w));
            peclet.push(w);
        }
        Ok(FokkerPlanck {
            grid,
            a,
            b,
            peclet,
            rate_scale: dd.rate_scale(),
        })
    }

    /// One implicit Euler step of length `dt`.
    fn step(&self, p: &[f64], dt: f64) -> Option<Vec<f64>> {
        let n = p.len();
        let s = dt / self.grid.h();
        let mut lower = alloc::vec![0.0; n];
        let mut diag = alloc::vec![1.0; n];
        let mut upper = alloc::vec![0.0; n];
        for i in 0..n - 1 {
            diag[i] += s * self.a[i];
            upper[i] = s * self.b[i];
            diag[i + 1] -= s * self.b[i];
            lower[i + 1] = -s * self.a[i];
        }
        solve_tridiagonal(&lower, &diag, &upper, p)
    }

    /// Evolves `dist` for `t` ms with steps no longer than `dt_max` ms.
    pub fn evolve(&self, dist: &Distribution, t: f64, dt_max: f64) -> Result<Distribution> {
        self.evolve_with_stats(dist, t, dt_max).map(|(d, _)| d)
    }

    pub fn evolve_with_stats(
        &self,
        dist: &Distribution,
        t: f64,
        dt_max: f64,
    ) -> Result<(Distribution, EvolveStats)> {
        if *dist.grid() != self.grid {
            return Err(Error::MismatchedGrids);
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(
                "evolution time must be finite and non-negative",
            ));
        }
        if dt_max.is_nan() || dt_max <= 0.0 {
            return Err(Error::invalid("dt_max must be positive"));
        }
        let mut stats = EvolveStats::default();
        if t == 0.0 {
            return Ok((dist.clone(), stats));
        }
        let mut p: Vec<f64> = dist.density().to_vec();
        let mut elapsed = 0.0;
        let mut dt = (1e-3 / self.rate_scale).min(dt_max);
        stats.min_dt = f64::INFINITY;
        let dt_floor = 1e-12 * t;
        while elapsed < t {
            let last = t - elapsed <= dt * (1.0 + 1e-12);
            let this_dt = if last { t - elapsed } else { dt };
            let next = self.step(&p, this_dt).ok_or(Error::SolverDiverged)?;
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::SolverDiverged);
            }
            let change = relative_change(&p, &next);
            if change > MAX_RELATIVE_CHANGE {
                stats.rejected += 1;
                dt = 0.5 * this_dt;
                if dt < dt_floor {
                    return Err(Error::SolverDiverged);
                }
                continue;
            }
            stats.accepted += 1;
            stats.min_dt = stats.min_dt.min(this_dt);
            stats.max_dt = stats.max_dt.max(this_dt);
            elapsed = if last { t } else { elapsed + this_dt };
            // implicit Euler never creates negative mass from non-negative
            // input; tiny negative round-off is clamped
            p = next.into_iter().map(|x| x.max(0.0)).collect();
            if change < 0.25 * MAX_RELATIVE_CHANGE {
                dt = (2.0 * dt).min(dt_max);
            }
        }
        // no renormalization: a mass defect beyond 1e-9 is reported as divergence
        Distribution::new(self.grid, p)
            .map(|d| (d, stats))
            .map_err(|_| Error::SolverDiverged)
    }

    /// Stationary density: the null vector of the zero-flux operator,
    /// `P_{i+1}/P_i = exp(w_i)`.
    pub fn steady_state(&self) -> Result<Distribution> {
        let mut log_p = Vec::with_capacity(self.grid.n);
        log_p.push(0.0);
        for w in &self.peclet {
            let last = *log_p.last().unwrap_or(&0.0);
            log_p.push(last + w);
        }
        let top = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::SingularOperator);
        }
        let w = log_p.into_iter().map(|l| libm::exp(l - top)).collect();
        Distribution::from_weights(self.grid, w)
    }

    /// Probability flux through each interior interface, ms⁻¹.
    pub fn fluxes(&self, dist: &Distribution) -> Vec<f64> {
        let p = dist.density();
        (0..p.len() - 1)
            .map(|i| self.a[i] * p[i] + self.b[i] * p[i + 1])
            .collect()
    }
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let peak = old.iter().copied().fold(0.0, f64::max);
    let floor = DENSITY_FLOOR * peak;
    old.iter()
        .zip(new)
        .map(|(o, n)| (n - o).abs() / (o + floor))
        .fold(0.0, f64::max)
}

/// Evolves `dist` under `dd` for `t` ms.
pub fn evolve(
    dist: &Distribution,
    dd: &DriftDiffusion,
    t: f64,
    dt_max: f64,
) -> Result<Distribution> {
    if dist.grid() != &dd.grid {
        return Err(Error::MismatchedGrids);
    }
    FokkerPlanck::new(dd)?.evolve(dist, t, dt_max)
}

/// Stationary density of `dd`.
pub fn steady_state(dd: &DriftDiffusion) -> Result<Distribution> {
    FokkerPlanck::new(dd)?.steady_state()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const SIGMA: f64 = 70.3;
    const GAMMA_D: f64 = 1.0 / 46.4;

    fn ou() -> DriftDiffusion {
        DriftDiffusion::ornstein_uhlenbeck(Grid1D::symmetric(500.0, 2048).unwrap(), GAMMA_D, SIGMA)
            .unwrap()
    }

    #[test]
    fn bernoulli_series_matches_closed_form() {
        for w in [1e-5, -1e-5, 2e-4, -2e-4] {
            assert_relative_eq!(bernoulli(w), w / libm::expm1(w), max_relative = 1e-11);
        }
        assert_eq!(bernoulli(0.0), 1.0);
        assert!(bernoulli(800.0) == 0.0);
        assert_relative_eq!(bernoulli(-800.0), 800.0);
    }

    #[test]
    fn zero_time_is_identity() {
        let dd = ou();
        let p = Distribution::gaussian(dd.grid, 10.0, 7.0).unwrap();
        assert_eq!(evolve(&p, &dd, 0.0, 0.01).unwrap(), p);
    }

    #[test]
    fn thermal_state_is_stationary() {
        let dd = ou();
        let p = Distribution::thermal(dd.grid, SIGMA).unwrap();
        let q = evolve(&p, &dd, 30.0, 0.5).unwrap();
        assert!(p.l1_distance(&q).unwrap() < 1e-6);
    }

    #[test]
    fn ou_steady_state_is_thermal() {
        let s = steady_state(&ou()).unwrap();
        assert_relative_eq!(s.moments().variance, SIGMA * SIGMA, max_relative = 5e-3);
    }

    #[test]
    fn rejects_mismatched_grid() {
        let dd = ou();
        let p = Distribution::thermal(Grid1D::symmetric(500.0, 1024).unwrap(), SIGMA).unwrap();
        assert_eq!(evolve(&p, &dd, 1.0, 0.1), Err(Error::MismatchedGrids));
    }

    #[test]
    fn steady_state_has_zero_flux() {
        let g = Grid1D::symmetric(10.0, 256).unwrap();
        let drift: Vec<f64> = g.centers().map(|x| -x * x * x + 3.0 * x).collect();
        let diff: Vec<f64> = g.centers().map(|x| 1.0 + 0.5 * libm::sin(x)).collect();
        let fp = FokkerPlanck::new(&DriftDiffusion::new(g, drift, diff).unwrap()).unwrap();
        let s = fp.steady_state().unwrap();
        let peak = s.density().iter().copied().fold(0.0, f64::max);
        for f in fp.fluxes(&s) {
            assert!(f.abs() < 1e-12 * peak);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mass_and_positivity_conserved(
            c1 in -3.0..3.0f64,
            c3 in 0.0..1.0f64,
            d0 in 0.05..2.0f64,
            mean in -4.0..4.0f64,
            t in 0.0..3.0f64,
        ) {
            let g = Grid1D::symmetric(10.0, 128).unwrap();
            let drift: Vec<f64> = g.centers().map(|x| c1 * x - c3 * x * x * x).collect();
            let diff: Vec<f64> = g.centers().map(|x| d0 * (1.0 + 0.3 * libm::cos(x))).collect();
            let dd = DriftDiffusion::new(g, drift, diff).unwrap();
            let p = Distribution::gaussian(g, mean, 0.7).unwrap();
            let q = evolve(&p, &dd, t, 0.05).unwrap();
            prop_assert!((q.normalization() - 1.0).abs() <= 1e-9);
            prop_assert!(q.min_density() >= 0.0);
        }
    }
}
