//! Ramsey free-induction decay as the characteristic function of the
//! Overhauser-shift density, and its inverse.
//!
//! With `δ` in MHz and `τ` in ns the accumulated phase is `2π·δ·τ·10⁻³` cycles.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{Distribution, Grid1D};
use crate::Complex;

/// MHz·ns to cycles.
pub const MHZ_NS: f64 = 1e-3;

/// Largest phase advance per cell accepted by [`fid_from_distribution`], cycles.
pub const MAX_CYCLES_PER_CELL: f64 = 0.25;

/// Fraction of trailing delays tapered by the inverse transform window.
pub const WINDOW_FRACTION: f64 = 0.1;

/// Tail visibility above which the inverse transform flags leakage.
pub const LEAKAGE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidCurve {
    /// ns.
    pub taus: Vec<f64>,
    pub coherence: Vec<Complex>,
    /// `|coherence|`.
    pub visibility: Vec<f64>,
}

impl FidCurve {
    pub fn new(taus: Vec<f64>, coherence: Vec<Complex>) -> Result<Self> {
        if taus.len() != coherence.len() {
            return Err(Error::invalid("taus and coherence differ in length"));
        }
        if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("delays must be finite and non-negative"));
        }
        let visibility = coherence.iter().map(|c| c.norm()).collect();
        Ok(FidCurve {
            taus,
            coherence,
            visibility,
        })
    }

    /// Real, phase-free curve from visibilities alone.
    pub fn from_visibility(taus: Vec<f64>, visibility: &[f64]) -> Result<Self> {
        let c = visibility.iter().map(|v| Complex::new(*v, 0.0)).collect();
        Self::new(taus, c)
    }

    /// Visibility at the delay closest to `tau` ns.
    pub fn visibility_at(&self, tau: f64) -> Option<f64> {
        self.taus
            .iter()
            .zip(&self.visibility)
            .min_by(|a, b| (a.0 - tau).abs().total_cmp(&(b.0 - tau).abs()))
            .map(|(_, v)| *v)
    }
}

/// Uniform delays `0, step, …, max` ns.
pub fn uniform_taus(step: f64, max: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= 0.0 && step.is_finite() && max.is_finite()) {
        return Err(Error::invalid("delay step must be positive"));
    }
    let n = libm::round(max / step) as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

/// `C(τ) = Σ P_i·h·exp(i·2π·δ_i·τ·10⁻³)`.
pub fn fid_from_distribution(dist: &Distribution, taus: &[f64]) -> Result<FidCurve> {
    if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::invalid("delays must be finite and non-negative"));
    }
    let grid = dist.grid();
    let h = grid.h();
    let max_tau = taus.iter().copied().fold(0.0, f64::max);
    if h * max_tau * MHZ_NS > MAX_CYCLES_PER_CELL {
        return Err(Error::GridTooCoarse);
    }
    let xs: Vec<f64> = grid.centers().collect();
    let masses: Vec<f64> = dist.masses().collect();
    let coherence = taus
        .iter()
        .map(|&tau| {
            let k = 2.0 * PI * tau * MHZ_NS;
            let (re, im) = xs.iter().zip(&masses).fold((0.0, 0.0), |(re, im), (x, m)| {
                let (s, c) = libm::sincos(k * x);
                (re + m * c, im + m * s)
            });
            Complex::new(re, im)
        })
        .collect();
    FidCurve::new(taus.to_vec(), coherence)
}

/// Diagnostics of [`distribution_from_fid`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InversionMeta {
    /// Probability mass removed by clipping negative lobes, before renormalizing.
    pub clipped_mass: f64,
    /// Largest visibility inside the tapered tail.
    pub tail_visibility: f64,
    /// Set when `tail_visibility` exceeds [`LEAKAGE_THRESHOLD`].
    pub leakage_warning: bool,
}

/// Reconstructs the density from a uniformly sampled FID starting at `τ = 0`,
/// assuming `C(−τ) = C*(τ)`.
pub fn distribution_from_fid(
    fid: &FidCurve,
    grid: Grid1D,
) -> Result<(Distribution, InversionMeta)> {
    grid.validate()?;
    let taus = &fid.taus;
    if taus.len() < 2 || taus[0] != 0.0 {
        return Err(Error::NonUniformDelays);
    }
    let dtau = taus[1] - taus[0];
    let uniform = taus
        .iter()
        .enumerate()
        .all(|(j, t)| (t - j as f64 * dtau).abs() <= 1e-9 * dtau.max(1.0) * (j as f64 + 1.0));
    if !(dtau > 0.0 && uniform) {
        return Err(Error::NonUniformDelays);
    }
    if (grid.max - grid.min) * dtau * MHZ_NS > 1.0 {
        return Err(Error::invalid("delay step aliases the grid span"));
    }
    let last = taus.len() - 1;
    let tau_max = taus[last];
    let taper_start = (1.0 - WINDOW_FRACTION) * tau_max;
    let weights: Vec<Complex> = taus
        .iter()
        .zip(&fid.coherence)
        .enumerate()
        .map(|(j, (&t, &c))| {
            let trapezoid = if j == 0 || j == last { 0.5 } else { 1.0 };
            let window = if t > taper_start {
                0.5 * (1.0 + libm::cos(PI * (t - taper_start) / (tau_max - taper_start)))
            } else {
                1.0
            };
            c * trapezoid * window
        })
        .collect();
    let tail_visibility = taus
        .iter()
        .zip(&fid.visibility)
        .filter(|(t, _)| **t > taper_start)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    let scale = dtau * MHZ_NS;
    let raw: Vec<f64> = grid
        .centers()
        .map(|x| {
            let sum: f64 = taus
                .iter()
                .zip(&weights)
                .skip(1)
                .map(|(&t, w)| {
                    let (s, c) = libm::sincos(2.0 * PI * x * t * MHZ_NS);
                    // Re[w·e^{−iφ}]
                    w.re * c + w.im * s
                })
                .sum();
            scale * (2.0 * weights[0].re + 2.0 * sum)
        })
        .collect();
    let h = grid.h();
    let clipped_mass = raw
        .iter()
        .filter(|p| **p < 0.0)
        .fold(0.0, |acc, p| acc - p * h);
    let dist = Distribution::from_weights(grid, raw.into_iter().map(|p| p.max(0.0)).collect())?;
    Ok((
        dist,
        InversionMeta {
            clipped_mass,
            tail_visibility,
            leakage_warning: tail_visibility > LEAKAGE_THRESHOLD,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid1D {
        Grid1D::symmetric(500.0, 2048).unwrap()
    }

    #[test]
    fn gaussian_fid_is_analytic() {
        let sigma = crate::feedback::sigma_from_t2_star(3.2);
        let d = Distribution::gaussian(grid(), 0.0, sigma).unwrap();
        let taus = uniform_taus(0.25, 20.0).unwrap();
        let fid = fid_from_distribution(&d, &taus).unwrap();
        assert!((fid.visibility[0] - 1.0).abs() <= 1e-9);
        for (t, v) in taus.iter().zip(&fid.visibility) {
            let expect = libm::exp(-(t / 3.2) * (t / 3.2));
            assert!((v - expect).abs() < 1e-6, "tau {t}: {v} vs {expect}");
        }
    }

    #[test]
    fn spike_has_unit_visibility_and_linear_phase() {
        let g = grid();
        let d = Distribution::spike(g, 40.0).unwrap();
        let x0 = g.center(g.cell_of(40.0).unwrap());
        let fid = fid_from_distribution(&d, &[0.0, 3.0, 11.0]).unwrap();
        for (t, c) in fid.taus.iter().zip(&fid.coherence) {
            assert_relative_eq!(c.norm(), 1.0, epsilon = 1e-12);
            let phase = Complex::from_polar(1.0, 2.0 * PI * x0 * t * MHZ_NS);
            assert!((c - phase).norm() < 1e-9);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = Grid1D::symmetric(500.0, 64).unwrap();
        let d = Distribution::thermal(g, 70.3).unwrap();
        assert_eq!(
            fid_from_distribution(&d, &[0.0, 100.0]),
            Err(Error::GridTooCoarse)
        );
    }

    #[test]
    fn inverse_requires_uniform_delays() {
        let fid = FidCurve::from_visibility(alloc::vec![0.0, 1.0, 3.0], &[1.0, 0.5, 0.1]).unwrap();
        assert_eq!(
            distribution_from_fid(&fid, grid()).unwrap_err(),
            Error::NonUniformDelays
        );
        let fid = FidCurve::from_visibility(alloc::vec![1.0, 2.0, 3.0], &[1.0, 0.5, 0.1]).unwrap();
        assert_eq!(
            distribution_from_fid(&fid, grid()).unwrap_err(),
            Error::NonUniformDelays
        );
    }

    #[test]
    fn constant_fid_is_a_spike() {
        // odd cell count puts δ = 0 on a cell centre
        let g = Grid1D::symmetric(500.0, 129).unwrap();
        let taus = uniform_taus(0.25, 250.0).unwrap();
        let fid = FidCurve::from_visibility(taus.clone(), &alloc::vec![1.0; taus.len()]).unwrap();
        let (d, meta) = distribution_from_fid(&fid, g).unwrap();
        assert!(meta.leakage_warning);
        let mut masses: Vec<f64> = d.masses().collect();
        masses.sort_by(|a, b| b.total_cmp(a));
        assert!(masses[..3].iter().sum::<f64>() >= 0.9);
    }

    #[test]
    fn gaussian_round_trip_variance() {
        let d = Distribution::gaussian(grid(), 0.0, 30.0).unwrap();
        let taus = uniform_taus(0.25, 120.0).unwrap();
        let fid = fid_from_distribution(&d, &taus).unwrap();
        let (back, meta) = distribution_from_fid(&fid, grid()).unwrap();
        assert!(!meta.leakage_warning);
        assert_relative_eq!(back.moments().variance, 900.0, max_relative = 1e-2);
    }
}
