//! Euler–Maruyama trajectories of the Langevin equation matching the
//! Fokker–Planck flux `J = v·P − D·∂P/∂δ`.
//!
//! In Itô form that process is `dδ = (v + ∂D/∂δ)·dt + √(2D)·dW`. Each
//! trajectory draws from its own ChaCha8 stream (key = seed, stream =
//! trajectory index), so results do not depend on execution order.

use alloc::vec::Vec;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::error::{Error, Result};
use crate::feedback::DriftDiffusion;
use crate::grid::{Distribution, Grid1D};
use crate::linalg::interp_uniform;

/// Smallest ensemble accepted by [`simulate_ensemble`].
pub const MIN_TRAJECTORIES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnsembleResult {
    /// ms.
    pub times: Vec<f64>,
    /// `samples[k][j]`: trajectory `j` at `times[k]`, MHz.
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
    pub m: usize,
}

impl EnsembleResult {
    /// Assembles per-trajectory paths (`paths[j][k]`) in trajectory order.
    pub fn from_paths(times: Vec<f64>, paths: &[Vec<f64>], seed: u64) -> Result<Self> {
        let nt = times.len();
        if paths.iter().any(|p| p.len() != nt) {
            return Err(Error::invalid("path length differs from output times"));
        }
        let samples = (0..nt)
            .map(|k| paths.iter().map(|p| p[k]).collect())
            .collect();
        Ok(EnsembleResult {
            times,
            samples,
            seed,
            m: paths.len(),
        })
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.samples[k].iter().sum::<f64>() / self.m as f64
    }

    pub fn variance(&self, k: usize) -> f64 {
        let mu = self.mean(k);
        self.samples[k]
            .iter()
            .map(|x| (x - mu) * (x - mu))
            .sum::<f64>()
            / (self.m as f64 - 1.0)
    }

    /// Cell-count density of the samples at `times[time_index]`.
    pub fn histogram(&self, time_index: usize, grid: Grid1D) -> Result<Distribution> {
        let row = self
            .samples
            .get(time_index)
            .ok_or_else(|| Error::invalid("time index out of range"))?;
        histogram(row, grid)
    }
}

/// Normalized cell counts of `samples` on `grid`; samples off the grid are
/// an error.
pub fn histogram(samples: &[f64], grid: Grid1D) -> Result<Distribution> {
    grid.validate()?;
    let mut counts = alloc::vec![0.0; grid.n];
    for &x in samples {
        let i = grid.cell_of(x).ok_or(Error::TrajectoryEscaped)?;
        counts[i] += 1.0;
    }
    Distribution::from_weights(grid, counts)
}

/// Precomputed fields, initial CDF and step schedule shared by all
/// trajectories.
#[derive(Debug, Clone)]
pub struct SdeSetup {
    grid: Grid1D,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    /// Piecewise-constant `∂D/∂δ` between neighbouring centres.
    diffusion_slope: Vec<f64>,
    cdf: Vec<f64>,
    dt: f64,
    /// Cumulative step count at each output time.
    output_steps: Vec<u64>,
    times: Vec<f64>,
    seed: u64,
}

impl SdeSetup {
    pub fn new(
        dd: &DriftDiffusion,
        init: &Distribution,
        dt: f64,
        t_out: &[f64],
        seed: u64,
    ) -> Result<Self> {
        dd.validate()?;
        if init.grid() != &dd.grid {
            return Err(Error::MismatchedGrids);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if dt > 0.1 / dd.rate_scale() {
            return Err(Error::invalid("dt exceeds 0.1 over the largest flip rate"));
        }
        if t_out.is_empty() || t_out[0] < 0.0 || t_out.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid(
                "output times must be non-negative and increasing",
            ));
        }
        let grid = dd.grid;
        let h = grid.h();
        let diffusion_slope = dd.diffusion.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = init
            .masses()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        let output_steps = t_out.iter().map(|t| libm::round(t / dt) as u64).collect();
        Ok(SdeSetup {
            grid,
            drift: dd.drift.clone(),
            diffusion: dd.diffusion.clone(),
            diffusion_slope,
            cdf,
            dt,
            output_steps,
            times: t_out.to_vec(),
            seed,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u = unit(rng);
        let i = self.cdf.partition_point(|c| *c < u).min(self.grid.n - 1);
        let lo = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        let frac = if self.cdf[i] > lo {
            (u - lo) / (self.cdf[i] - lo)
        } else {
            0.5
        };
        self.grid.min + (i as f64 + frac.clamp(0.0, 1.0)) * self.grid.h()
    }

    fn ito_drift_and_diffusion(&self, x: f64) -> (f64, f64) {
        let x0 = self.grid.center(0);
        let h = self.grid.h();
        let v = interp_uniform(&self.drift, x0, h, x);
        let d = interp_uniform(&self.diffusion, x0, h, x);
        let s = (x - x0) / h;
        let slope = if s <= 0.0 || s >= (self.grid.n - 1) as f64 {
            0.0
        } else {
            self.diffusion_slope[s as usize]
        };
        (v + slope, d)
    }

    /// Positions of trajectory `index` at every output time.
    pub fn trajectory(&self, index: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mut x = self.sample_initial(&mut rng);
        let (lo, hi) = (self.grid.min, self.grid.max);
        let mut out = Vec::with_capacity(self.output_steps.len());
        let mut step = 0u64;
        for &target in &self.output_steps {
            while step < target {
                let (a, d) = self.ito_drift_and_diffusion(x);
                let xi: f64 = StandardNormal.sample(&mut rng);
                x += a * self.dt + libm::sqrt(2.0 * d * self.dt) * xi;
                if x < lo {
                    x = 2.0 * lo - x;
                } else if x > hi {
                    x = 2.0 * hi - x;
                }
                if !(x >= lo && x <= hi) {
                    return Err(Error::TrajectoryEscaped);
                }
                step += 1;
            }
            out.push(x);
        }
        Ok(out)
    }
}

/// Uniform on `(0, 1)` from 53 random bits.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Sequential ensemble of `m` trajectories.
pub fn simulate_ensemble(
    dd: &DriftDiffusion,
    init: &Distribution,
    m: usize,
    dt: f64,
    t_out: &[f64],
    seed: u64,
) -> Result<EnsembleResult> {
    if m < MIN_TRAJECTORIES {
        return Err(Error::invalid("at least 1000 trajectories required"));
    }
    let setup = SdeSetup::new(dd, init, dt, t_out, seed)?;
    let paths = (0..m as u64)
        .map(|j| setup.trajectory(j))
        .collect::<Result<Vec<_>>>()?;
    EnsembleResult::from_paths(t_out.to_vec(), &paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ou() -> DriftDiffusion {
        DriftDiffusion::ornstein_uhlenbeck(
            Grid1D::symmetric(500.0, 1024).unwrap(),
            1.0 / 46.4,
            70.3,
        )
        .unwrap()
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let dd = ou();
        let init = Distribution::thermal(dd.grid, 70.3).unwrap();
        let a = simulate_ensemble(&dd, &init, 1000, 0.05, &[0.0, 1.0, 2.0], 7).unwrap();
        let b = simulate_ensemble(&dd, &init, 1000, 0.05, &[0.0, 1.0, 2.0], 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_ensemble(&dd, &init, 1000, 0.05, &[0.0, 1.0, 2.0], 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn trajectories_are_order_independent() {
        let dd = ou();
        let init = Distribution::thermal(dd.grid, 70.3).unwrap();
        let s = SdeSetup::new(&dd, &init, 0.05, &[1.0], 3).unwrap();
        let forward: Vec<_> = (0..20).map(|j| s.trajectory(j).unwrap()).collect();
        let backward: Vec<_> = (0..20).rev().map(|j| s.trajectory(j).unwrap()).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn spike_histogram() {
        let g = Grid1D::symmetric(10.0, 64).unwrap();
        let d = histogram(&[1.1; 50], g).unwrap();
        assert_eq!(d.density().iter().filter(|p| **p > 0.0).count(), 1);
        assert_relative_eq!(d.normalization(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_small_ensembles_and_large_steps() {
        let dd = ou();
        let init = Distribution::thermal(dd.grid, 70.3).unwrap();
        assert!(simulate_ensemble(&dd, &init, 10, 0.05, &[1.0], 0).is_err());
        assert!(SdeSetup::new(&dd, &init, 10.0, &[1.0], 0).is_err());
    }

    #[test]
    fn thermal_initial_samples() {
        let dd = ou();
        let init = Distribution::thermal(dd.grid, 70.3).unwrap();
        let r = simulate_ensemble(&dd, &init, 20_000, 0.05, &[0.0], 11).unwrap();
        let var = r.variance(0);
        let se = 70.3 * 70.3 * libm::sqrt(2.0 / 20_000.0);
        assert!((var - 70.3 * 70.3).abs() < 3.0 * se + 70.3 * 70.3 * 2e-4);
    }
}
