//! Uniform cell grids over the Overhauser shift and densities on them.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Smallest number of cells accepted by [`Grid1D::new`].
pub const MIN_CELLS: usize = 64;

/// Uniform grid of `n` cells on `[min, max]` MHz. Samples sit at cell centres.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid1D {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        let g = Grid1D { min, max, n };
        g.validate()?;
        Ok(g)
    }

    /// Grid on `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::invalid("grid requires finite min < max"));
        }
        if self.n < MIN_CELLS {
            return Err(Error::invalid("grid requires at least 64 cells"));
        }
        Ok(())
    }

    /// Cell width in MHz.
    pub fn h(&self) -> f64 {
        (self.max - self.min) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.h()
    }

    pub fn centers(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.center(i))
    }

    /// Index of the cell containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.min && x <= self.max) {
            return None;
        }
        let i = ((x - self.min) / self.h()) as usize;
        Some(i.min(self.n - 1))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    /// Whether the grid covers `[-k·sigma, k·sigma]`.
    pub fn spans(&self, k_sigma: f64) -> bool {
        self.min <= -k_sigma && self.max >= k_sigma
    }
}

/// Probability density per MHz, one value per cell.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Distribution {
    grid: Grid1D,
    density: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    /// MHz.
    pub mean: f64,
    /// MHz².
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Distribution {
    /// Wraps `density` as-is. It must be non-negative and finite and
    /// integrate to 1 within 1e-9.
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if density.len() != grid.n {
            return Err(Error::MismatchedGrids);
        }
        if density.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("density must be finite and non-negative"));
        }
        let d = Distribution { grid, density };
        if (d.normalization() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("density is not normalized"));
        }
        Ok(d)
    }

    /// Normalizes a non-negative weight vector into a density.
    pub fn from_weights(grid: Grid1D, weights: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if weights.len() != grid.n {
            return Err(Error::MismatchedGrids);
        }
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum::<f64>() * grid.h();
        if total <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        let density = weights.into_iter().map(|w| w / total).collect();
        Ok(Distribution { grid, density })
    }

    /// Samples `f` at cell centres and normalizes.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let w = grid.centers().map(f).collect();
        Self::from_weights(grid, w)
    }

    /// Discrete Gaussian with the given mean and standard deviation (MHz).
    pub fn gaussian(grid: Grid1D, mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let s2 = 2.0 * sigma * sigma;
        Self::from_fn(grid, |x| libm::exp(-(x - mean) * (x - mean) / s2))
    }

    /// Zero-mean Gaussian of width `sigma_th`; the grid must span ±5σ.
    pub fn thermal(grid: Grid1D, sigma_th: f64) -> Result<Self> {
        if !(sigma_th > 0.0 && sigma_th.is_finite()) {
            return Err(Error::invalid("sigma_th must be positive"));
        }
        if !grid.spans(5.0 * sigma_th) {
            return Err(Error::GridUnderspansThermalState);
        }
        Self::gaussian(grid, 0.0, sigma_th)
    }

    /// Lorentzian with half width at half maximum `hwhm` (MHz).
    pub fn lorentzian(grid: Grid1D, center: f64, hwhm: f64) -> Result<Self> {
        if !(hwhm > 0.0 && hwhm.is_finite()) {
            return Err(Error::invalid("hwhm must be positive"));
        }
        Self::from_fn(grid, |x| {
            let u = (x - center) / hwhm;
            1.0 / (1.0 + u * u)
        })
    }

    /// All mass in the cell containing `x`.
    pub fn spike(grid: Grid1D, x: f64) -> Result<Self> {
        let i = grid
            .cell_of(x)
            .ok_or_else(|| Error::invalid("spike outside grid"))?;
        let mut w = alloc::vec![0.0; grid.n];
        w[i] = 1.0;
        Self::from_weights(grid, w)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    /// `Σ P·h`.
    pub fn normalization(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.h()
    }

    pub fn min_density(&self) -> f64 {
        self.density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Probability mass per cell.
    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.grid.h();
        self.density.iter().map(move |p| p * h)
    }

    pub fn moments(&self) -> Moments {
        let pairs = || self.grid.centers().zip(self.masses());
        let mean: f64 = pairs().map(|(x, m)| x * m).sum();
        let central = |k: i32| {
            pairs()
                .map(|(x, m)| libm::pow(x - mean, k as f64) * m)
                .sum::<f64>()
        };
        let variance = central(2);
        let (skewness, excess_kurtosis) = if variance > 0.0 {
            (
                central(3) / libm::pow(variance, 1.5),
                central(4) / (variance * variance) - 3.0,
            )
        } else {
            (0.0, 0.0)
        };
        Moments {
            mean,
            variance,
            skewness,
            excess_kurtosis,
        }
    }

    /// `∫|P − Q|`. Both densities must live on the same grid.
    pub fn l1_distance(&self, other: &Distribution) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::MismatchedGrids);
        }
        let h = self.grid.h();
        Ok(self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * h)
    }

    /// Total-variation distance, half the L1 distance.
    pub fn tv_distance(&self, other: &Distribution) -> Result<f64> {
        self.l1_distance(other).map(|d| 0.5 * d)
    }

    /// Re-bins onto a coarser grid whose cells are unions of `factor` cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.n.is_multiple_of(factor) {
            return Err(Error::invalid(
                "coarsening factor must divide the cell count",
            ));
        }
        let grid = Grid1D::new(self.grid.min, self.grid.max, self.grid.n / factor)?;
        let w = self
            .density
            .chunks(factor)
            .map(|c| c.iter().sum::<f64>())
            .collect();
        Self::from_weights(grid, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn default_grid() -> Grid1D {
        Grid1D::symmetric(500.0, 2048).unwrap()
    }

    #[test]
    fn thermal_moments() {
        let d = Distribution::thermal(default_grid(), 70.3).unwrap();
        let m = d.moments();
        assert_relative_eq!(m.variance, 70.3 * 70.3, max_relative = 1e-3);
        assert!(m.mean.abs() < 1e-6);
        assert!((d.normalization() - 1.0).abs() < 1e-9);
        assert!(m.skewness.abs() < 1e-9);
        assert!(m.excess_kurtosis.abs() < 1e-6);
    }

    #[test]
    fn thermal_rejects_narrow_grid() {
        let g = Grid1D::symmetric(300.0, 1024).unwrap();
        assert_eq!(
            Distribution::thermal(g, 70.3),
            Err(Error::GridUnderspansThermalState)
        );
    }

    #[test]
    fn two_point_mixture_moments() {
        let g = Grid1D::new(-1.0, 1.0, 64).unwrap();
        let (i, j) = (10, 53);
        let a = g.center(j);
        assert_relative_eq!(g.center(i), -a, epsilon = 1e-12);
        let mut w = alloc::vec![0.0; 64];
        w[i] = 1.0;
        w[j] = 1.0;
        let m = Distribution::from_weights(g, w).unwrap().moments();
        assert_relative_eq!(m.variance, a * a, max_relative = 1e-12);
        assert_relative_eq!(m.excess_kurtosis, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(1.0, 0.0, 128).is_err());
        assert!(Grid1D::new(0.0, 1.0, 32).is_err());
        let g = Grid1D::new(0.0, 64.0, 64).unwrap();
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(64.0), Some(63));
        assert_eq!(g.cell_of(10.5), Some(10));
        assert_eq!(g.cell_of(-0.1), None);
    }

    #[test]
    fn coarsen_preserves_mass() {
        let d = Distribution::thermal(default_grid(), 70.3).unwrap();
        let c = d.coarsen(16).unwrap();
        assert_eq!(c.grid().n, 128);
        assert!((c.normalization() - 1.0).abs() < 1e-12);
        assert_relative_eq!(c.moments().mean, 0.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn from_weights_normalizes(w in proptest::collection::vec(0.0..10.0f64, 64..200)) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let g = Grid1D::new(-3.0, 5.0, w.len()).unwrap();
            let d = Distribution::from_weights(g, w).unwrap();
            prop_assert!((d.normalization() - 1.0).abs() < 1e-12);
            prop_assert!(d.min_density() >= 0.0);
        }
    }
}
