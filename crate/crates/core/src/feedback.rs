//! Drift and diffusion of the Overhauser shift under optical feedback.
//!
//! `v(δ) = −Γ_h(δ)·[δ − K·S_x(δ_l − δ)] − Γ_d·δ` and
//! `D(δ) = (Γ_h(δ) + Γ_d)·σ_th²`, with `Γ_h` proportional to the trion
//! population at two-photon detuning `δ_l − δ` and peaking at `γ_h0` on the
//! grid.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::lambda::LambdaParams;

/// Default dark correlation time in ms.
pub const T_C_DEFAULT_MS: f64 = 46.4;

/// Unprepared inhomogeneous dephasing time in ns.
pub const T2_STAR_THERMAL_NS: f64 = 3.2;

/// `σ = √2/(2π·T₂*)` in MHz for a Gaussian FID with 1/e time `t2_star_ns`.
pub fn sigma_from_t2_star(t2_star_ns: f64) -> f64 {
    core::f64::consts::SQRT_2 * 1.0e3 / (2.0 * core::f64::consts::PI * t2_star_ns)
}

/// Inverse of [`sigma_from_t2_star`].
pub fn t2_star_from_sigma(sigma_mhz: f64) -> f64 {
    core::f64::consts::SQRT_2 * 1.0e3 / (2.0 * core::f64::consts::PI * sigma_mhz)
}

/// Default peak optically assisted flip rate in ms⁻¹.
pub const GAMMA_H0_DEFAULT: f64 = 0.02;

/// Gain (MHz) giving a hundredfold steady-state variance reduction with the
/// other defaults.
pub const K_GAIN_DEFAULT: f64 = 78_079.538_231_322_1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeedbackParams {
    /// MHz of Overhauser shift per unit spin polarization.
    pub k_gain: f64,
    /// ms⁻¹.
    pub gamma_d: f64,
    /// Peak optically assisted flip rate, ms⁻¹.
    pub gamma_h0: f64,
    /// Thermal standard deviation, MHz.
    pub sigma_th: f64,
    /// Two-photon lock detuning, MHz.
    pub delta_lock: f64,
    /// Electron Zeeman splitting, MHz. Not used by the dynamics.
    pub delta_x: f64,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        FeedbackParams {
            k_gain: K_GAIN_DEFAULT,
            gamma_d: 1.0 / T_C_DEFAULT_MS,
            gamma_h0: GAMMA_H0_DEFAULT,
            sigma_th: sigma_from_t2_star(T2_STAR_THERMAL_NS),
            delta_lock: 0.0,
            delta_x: 0.0,
        }
    }
}

impl FeedbackParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.k_gain,
            self.gamma_d,
            self.gamma_h0,
            self.sigma_th,
            self.delta_lock,
            self.delta_x,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite feedback parameter"));
        }
        if self.gamma_d <= 0.0 {
            return Err(Error::invalid("gamma_d must be positive"));
        }
        if self.gamma_h0 < 0.0 {
            return Err(Error::invalid("gamma_h0 must be non-negative"));
        }
        if self.sigma_th <= 0.0 {
            return Err(Error::invalid("sigma_th must be positive"));
        }
        Ok(())
    }

    /// Same parameters with the lasers off.
    pub fn dark(self) -> Self {
        FeedbackParams {
            gamma_h0: 0.0,
            ..self
        }
    }
}

/// Trion population and spin polarization sampled at `δ₂ = δ_l − δ` for every
/// cell of a grid. Independent of the feedback gain and rates, so it can be
/// reused while those are varied.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalProfile {
    grid: Grid1D,
    delta_lock: f64,
    rho_ee: Vec<f64>,
    s_x: Vec<f64>,
    rho_ee_max: f64,
    rho_ee_lock: f64,
    s_x_slope: f64,
}

impl OpticalProfile {
    pub fn new(lp: &LambdaParams, grid: Grid1D, delta_lock: f64) -> Result<Self> {
        lp.validate()?;
        grid.validate()?;
        if !grid.contains(delta_lock) {
            return Err(Error::LockPointOutsideGrid);
        }
        let detunings: Vec<f64> = grid.centers().map(|x| delta_lock - x).collect();
        let states = lp.scattering_profile(&detunings)?;
        let rho_ee: Vec<f64> = states.iter().map(|s| s.rho_ee.max(0.0)).collect();
        let s_x = states.iter().map(|s| s.s_x).collect();
        let rho_ee_max = rho_ee.iter().copied().fold(0.0, f64::max);
        if rho_ee_max <= 0.0 {
            return Err(Error::NoOpticalFeedback);
        }
        let eps = 1e-2;
        let s_x_slope = (lp.steady_state(eps)?.s_x - lp.steady_state(-eps)?.s_x) / (2.0 * eps);
        let rho_ee_lock = lp.steady_state(0.0)?.rho_ee.max(0.0);
        Ok(OpticalProfile {
            grid,
            delta_lock,
            rho_ee,
            s_x,
            rho_ee_max,
            rho_ee_lock,
            s_x_slope,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn rho_ee(&self) -> &[f64] {
        &self.rho_ee
    }

    pub fn s_x(&self) -> &[f64] {
        &self.s_x
    }

    /// Largest trion population on the grid.
    pub fn rho_ee_max(&self) -> f64 {
        self.rho_ee_max
    }

    /// `dS_x/dδ₂` at the dark resonance, MHz⁻¹.
    pub fn s_x_slope(&self) -> f64 {
        self.s_x_slope
    }
}

/// Sampled drift `v` (MHz·ms⁻¹) and diffusion `D` (MHz²·ms⁻¹) on a grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DriftDiffusion {
    pub grid: Grid1D,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    /// Optically assisted flip rate `Γ_h(δ)`, ms⁻¹.
    pub flip_rate: Vec<f64>,
    /// `Γ_d`, ms⁻¹.
    pub gamma_d: f64,
    /// Two-photon lock detuning the fields were built for, MHz.
    pub delta_lock: f64,
    /// The gain sign was inverted so that the lock point attracts.
    pub gain_sign_flipped: bool,
    /// `Γ_h` at the dark resonance `δ = δ_l`, ms⁻¹.
    pub gamma_h_lock: f64,
    /// Peak `Γ_h` on the grid, ms⁻¹.
    pub gamma_h_peak: f64,
}

impl DriftDiffusion {
    /// Arbitrary fields. `diffusion` must be strictly positive.
    pub fn new(grid: Grid1D, drift: Vec<f64>, diffusion: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if drift.len() != grid.n || diffusion.len() != grid.n {
            return Err(Error::MismatchedGrids);
        }
        let dd = DriftDiffusion {
            flip_rate: alloc::vec![0.0; grid.n],
            grid,
            drift,
            diffusion,
            gamma_d: 0.0,
            delta_lock: 0.0,
            gain_sign_flipped: false,
            gamma_h_lock: 0.0,
            gamma_h_peak: 0.0,
        };
        dd.validate()?;
        Ok(dd)
    }

    pub fn validate(&self) -> Result<()> {
        if self.drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite drift"));
        }
        if self.diffusion.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::invalid("diffusion must be positive and finite"));
        }
        Ok(())
    }

    /// Dark Ornstein–Uhlenbeck field `v = −Γ_d·δ`, `D = Γ_d·σ²`.
    pub fn ornstein_uhlenbeck(grid: Grid1D, gamma_d: f64, sigma_th: f64) -> Result<Self> {
        let fp = FeedbackParams {
            gamma_d,
            sigma_th,
            gamma_h0: 0.0,
            ..Default::default()
        };
        fp.validate()?;
        grid.validate()?;
        Ok(Self::from_rates(
            grid,
            &fp,
            alloc::vec![0.0; grid.n],
            |_| 0.0,
            false,
            0.0,
        ))
    }

    /// Fields from a precomputed optical profile.
    pub fn from_profile(profile: &OpticalProfile, fp: &FeedbackParams) -> Result<Self> {
        fp.validate()?;
        if fp.delta_lock != profile.delta_lock {
            return Err(Error::invalid("profile was sampled for another lock point"));
        }
        if !profile.grid.spans(5.0 * fp.sigma_th) {
            return Err(Error::GridUnderspansThermalState);
        }
        if fp.gamma_h0 == 0.0 {
            return Self::from_dark(profile.grid, fp);
        }
        let flipped = fp.k_gain * profile.s_x_slope < 0.0;
        let k = if flipped { -fp.k_gain } else { fp.k_gain };
        let scale = fp.gamma_h0 / profile.rho_ee_max;
        let flip_rate: Vec<f64> = profile.rho_ee.iter().map(|e| scale * e).collect();
        let s_x = &profile.s_x;
        let dd = Self::from_rates(
            profile.grid,
            fp,
            flip_rate,
            |i| k * s_x[i],
            flipped,
            scale * profile.rho_ee_lock,
        );
        dd.validate()?;
        Ok(dd)
    }

    fn from_dark(grid: Grid1D, fp: &FeedbackParams) -> Result<Self> {
        grid.validate()?;
        if !grid.contains(fp.delta_lock) {
            return Err(Error::LockPointOutsideGrid);
        }
        Ok(Self::from_rates(
            grid,
            fp,
            alloc::vec![0.0; grid.n],
            |_| 0.0,
            false,
            0.0,
        ))
    }

    fn from_rates(
        grid: Grid1D,
        fp: &FeedbackParams,
        flip_rate: Vec<f64>,
        pull: impl Fn(usize) -> f64,
        gain_sign_flipped: bool,
        gamma_h_lock: f64,
    ) -> Self {
        let s2 = fp.sigma_th * fp.sigma_th;
        let (drift, diffusion) = grid
            .centers()
            .zip(&flip_rate)
            .enumerate()
            .map(|(i, (x, &gh))| {
                let v = if gh == 0.0 {
                    -fp.gamma_d * x
                } else {
                    -gh * (x - pull(i)) - fp.gamma_d * x
                };
                (v, (gh + fp.gamma_d) * s2)
            })
            .unzip();
        DriftDiffusion {
            grid,
            drift,
            diffusion,
            gamma_h_peak: fp.gamma_h0,
            flip_rate,
            gamma_d: fp.gamma_d,
            delta_lock: fp.delta_lock,
            gain_sign_flipped,
            gamma_h_lock,
        }
    }

    /// Whether the drift points inward at both grid edges.
    pub fn edges_restoring(&self) -> bool {
        self.drift[0] > 0.0 && self.drift[self.grid.n - 1] < 0.0
    }

    /// Largest total flip rate `Γ_h + Γ_d` on the grid, ms⁻¹, or the largest
    /// `D`-implied rate for fields built with [`DriftDiffusion::new`].
    pub fn rate_scale(&self) -> f64 {
        let from_rates = self
            .flip_rate
            .iter()
            .map(|g| g + self.gamma_d)
            .fold(0.0, f64::max);
        if from_rates > 0.0 {
            return from_rates;
        }
        let h = self.grid.h();
        let span = self.grid.max - self.grid.min;
        let d = self.diffusion.iter().copied().fold(0.0, f64::max) / (span * span);
        let v = self.drift.iter().map(|v| v.abs()).fold(0.0, f64::max) / span.max(h);
        (d + v).max(f64::MIN_POSITIVE)
    }

    pub fn lock_analysis(&self) -> LockAnalysis {
        lock_analysis(self)
    }
}

/// Lasers-on fields from Eq. (1)-style feedback on `grid`.
pub fn build_fields(
    lp: &LambdaParams,
    fp: &FeedbackParams,
    grid: Grid1D,
) -> Result<DriftDiffusion> {
    fp.validate()?;
    grid.validate()?;
    if !grid.spans(5.0 * fp.sigma_th) {
        return Err(Error::GridUnderspansThermalState);
    }
    if fp.gamma_h0 == 0.0 {
        return DriftDiffusion::from_dark(grid, fp);
    }
    let profile = OpticalProfile::new(lp, grid, fp.delta_lock)?;
    DriftDiffusion::from_profile(&profile, fp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Root {
    /// MHz.
    pub delta: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LockAnalysis {
    pub roots: Vec<Root>,
    /// Distance between the unstable roots bracketing the lock point, MHz.
    pub locking_range: f64,
    /// Stable root closest to the configured lock detuning.
    pub lock_point: Option<f64>,
    pub gamma_h_lock: f64,
    pub gamma_h_peak: f64,
}

/// Zeros of the piecewise-linear drift and their stability.
pub fn lock_analysis(dd: &DriftDiffusion) -> LockAnalysis {
    let xs: Vec<f64> = dd.grid.centers().collect();
    let v = &dd.drift;
    let mut roots = Vec::new();
    for i in 0..xs.len() - 1 {
        let (a, b) = (v[i], v[i + 1]);
        if a == 0.0 {
            let slope = if i > 0 { b - v[i - 1] } else { b - a };
            roots.push(Root {
                delta: xs[i],
                stable: slope < 0.0,
            });
        } else if (a < 0.0) != (b < 0.0) && b != 0.0 {
            let t = a / (a - b);
            roots.push(Root {
                delta: xs[i] + t * (xs[i + 1] - xs[i]),
                stable: b < a,
            });
        }
    }
    let stable = roots.iter().filter(|r| r.stable);
    let lock_point = stable.map(|r| r.delta).min_by(|a, b| {
        (a - dd.delta_lock)
            .abs()
            .total_cmp(&(b - dd.delta_lock).abs())
    });
    let locking_range = lock_point
        .and_then(|l| {
            let left = roots.iter().rev().find(|r| !r.stable && r.delta < l)?.delta;
            let right = roots.iter().find(|r| !r.stable && r.delta > l)?.delta;
            Some(right - left)
        })
        .unwrap_or(0.0);
    LockAnalysis {
        roots,
        locking_range,
        lock_point,
        gamma_h_lock: dd.gamma_h_lock,
        gamma_h_peak: dd.gamma_h_peak,
    }
}
