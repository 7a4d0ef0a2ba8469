//! Preparation, power, relaxation and calibration pipelines.
//!
//! Every pipeline is a pure function of its configuration. Sweep points are
//! independent so callers may evaluate them in any order or in parallel.

use alloc::vec::Vec;

use crate::error::{Error, Result, StageExt};
use crate::feedback::{
    build_fields, sigma_from_t2_star, DriftDiffusion, FeedbackParams, OpticalProfile,
    T2_STAR_THERMAL_NS,
};
use crate::fitting::{
    fit_relaxation, fit_saturation, fit_stretched_exp, FitResult, RelaxFit, SaturationFit,
};
use crate::fokker_planck::{FokkerPlanck, DT_MAX_DEFAULT};
use crate::grid::{Distribution, Grid1D};
use crate::lambda::LambdaParams;
use crate::ramsey::{fid_from_distribution, uniform_taus, FidCurve};

/// Default preparation time of a single prepare-and-probe run, ms.
pub const T_CPT_DEFAULT: f64 = 0.84;

/// Preparation time before the relaxation wait, ms.
pub const RELAX_T_CPT_DEFAULT: f64 = 2.0;

/// Delay at which the power sweep reads the visibility, ns.
pub const PROBE_TAU_DEFAULT: f64 = 10.0;

/// Default Ramsey delays: `0, 0.25, …, 250` ns.
pub const TAU_STEP_DEFAULT: f64 = 0.25;
pub const TAU_MAX_DEFAULT: f64 = 250.0;

/// Thermal width of the slower-dephasing dot preset, MHz.
pub const SIGMA_TH_QD_B: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    pub lambda: LambdaParams,
    pub feedback: FeedbackParams,
    pub grid: Grid1D,
    /// ms.
    pub t_cpt: f64,
    /// Preparation time used by the relaxation sweep, ms.
    pub relax_t_cpt: f64,
    /// Single relaxation wait, ms.
    pub t_relax: f64,
    /// Ramsey delays, ns.
    pub taus: Vec<f64>,
    /// Delay read by the power sweep, ns.
    pub probe_tau: f64,
    /// Step cap of the Fokker–Planck integrator, ms.
    pub dt_max: f64,
}

impl Default for ExperimentConfig {
    /// The faster-dephasing dot: `σ_th` from a 3.2 ns thermal `T₂*` on ±500 MHz.
    fn default() -> Self {
        ExperimentConfig {
            lambda: LambdaParams::default(),
            feedback: FeedbackParams::default(),
            grid: Grid1D {
                min: -500.0,
                max: 500.0,
                n: 2048,
            },
            t_cpt: T_CPT_DEFAULT,
            relax_t_cpt: RELAX_T_CPT_DEFAULT,
            t_relax: 0.0,
            taus: uniform_taus(TAU_STEP_DEFAULT, TAU_MAX_DEFAULT).unwrap_or_default(),
            probe_tau: PROBE_TAU_DEFAULT,
            dt_max: DT_MAX_DEFAULT,
        }
    }
}

impl ExperimentConfig {
    /// Slower-dephasing dot: same optics and feedback with `σ_th` = 100 MHz on
    /// ±600 MHz.
    pub fn qd_b() -> Self {
        let base = Self::default();
        ExperimentConfig {
            feedback: FeedbackParams {
                sigma_th: SIGMA_TH_QD_B,
                ..base.feedback
            },
            grid: Grid1D {
                min: -600.0,
                max: 600.0,
                n: 2048,
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        self.feedback.validate()?;
        self.grid.validate()?;
        let times = [self.t_cpt, self.relax_t_cpt, self.t_relax];
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("times must be finite and non-negative"));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return Err(Error::invalid("dt_max must be positive"));
        }
        if !(self.probe_tau >= 0.0 && self.probe_tau.is_finite()) {
            return Err(Error::invalid("probe delay must be non-negative"));
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("Ramsey delays must be non-negative"));
        }
        if !self.grid.spans(5.0 * self.feedback.sigma_th) {
            return Err(Error::GridUnderspansThermalState);
        }
        if !self.grid.contains(self.feedback.delta_lock) {
            return Err(Error::LockPointOutsideGrid);
        }
        Ok(())
    }

    pub fn power_ratio(&self) -> f64 {
        self.lambda.power_ratio()
    }

    pub fn thermal(&self) -> Result<Distribution> {
        Distribution::thermal(self.grid, self.feedback.sigma_th)
    }

    pub fn fields(&self) -> Result<DriftDiffusion> {
        build_fields(&self.lambda, &self.feedback, self.grid)
    }
}

/// Prepared density and its Ramsey signature.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Probe {
    pub dist: Distribution,
    pub fid: FidCurve,
    pub fit: FitResult,
}

/// FID and stretched-exponential fit of `dist`.
pub fn probe(dist: Distribution, taus: &[f64]) -> Result<Probe> {
    let fid = fid_from_distribution(&dist, taus).stage("fid")?;
    let (t, v) = fit_window(&fid);
    let fit = fit_stretched_exp(t, v, None).stage("fit")?;
    Ok(Probe { dist, fid, fit })
}

/// Delays and visibilities with `τ = 0` dropped.
fn fit_window(fid: &FidCurve) -> (&[f64], &[f64]) {
    let start = fid
        .taus
        .iter()
        .position(|t| *t > 0.0)
        .unwrap_or(fid.taus.len());
    (&fid.taus[start..], &fid.visibility[start..])
}

/// Thermal start, lasers on for `cfg.t_cpt`, then an instantaneous probe.
pub fn run_prepare_and_probe(cfg: &ExperimentConfig) -> Result<Probe> {
    cfg.validate().stage("config")?;
    let dist = prepare(cfg, cfg.t_cpt)?;
    probe(dist, &cfg.taus)
}

/// Density after `t_cpt` ms of driving from the thermal state.
pub fn prepare(cfg: &ExperimentConfig, t_cpt: f64) -> Result<Distribution> {
    let thermal = cfg.thermal().stage("thermal state")?;
    if t_cpt == 0.0 {
        return Ok(thermal);
    }
    let dd = cfg.fields().stage("fields")?;
    FokkerPlanck::new(&dd)
        .and_then(|fp| fp.evolve(&thermal, t_cpt, cfg.dt_max))
        .stage("evolve")
}

/// `σ_th²/Var[P_ss]` of the stationary density.
pub fn steady_state_reduction(dd: &DriftDiffusion, sigma_th: f64) -> Result<f64> {
    let ss = FokkerPlanck::new(dd)?.steady_state()?;
    Ok(sigma_th * sigma_th / ss.moments().variance)
}

/// Stationary density under the configured fields and its probe.
pub fn run_steady_state(cfg: &ExperimentConfig) -> Result<Probe> {
    cfg.validate().stage("config")?;
    let dd = cfg.fields().stage("fields")?;
    let ss = FokkerPlanck::new(&dd)
        .and_then(|f| f.steady_state())
        .stage("steady state")?;
    probe(ss, &cfg.taus)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerPoint {
    /// `P/P_s`.
    pub ratio: f64,
    /// MHz.
    pub omega: f64,
    /// Dark-state width, MHz, when the dip is resolvable.
    pub width: Option<f64>,
    /// Peak flip rate used at this power, ms⁻¹.
    pub gamma_h0: f64,
    /// Visibility at the probe delay.
    pub visibility: f64,
    /// Stretched-exponential fit over the full delay list.
    pub fit: FitResult,
    /// MHz².
    pub variance: f64,
}

/// Power sweep with the flip rate scaled by the absolute peak trion
/// population relative to the configured drive.
#[derive(Debug, Clone)]
pub struct PowerSweep {
    cfg: ExperimentConfig,
    reference_rho_ee: f64,
}

impl PowerSweep {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate().stage("config")?;
        let profile = OpticalProfile::new(&cfg.lambda, cfg.grid, cfg.feedback.delta_lock)
            .stage("reference profile")?;
        Ok(PowerSweep {
            cfg: cfg.clone(),
            reference_rho_ee: profile.rho_ee_max(),
        })
    }

    pub fn point(&self, ratio: f64) -> Result<PowerPoint> {
        let cfg = &self.cfg;
        let lambda = cfg.lambda.with_power_ratio(ratio).stage("drive")?;
        let profile =
            OpticalProfile::new(&lambda, cfg.grid, cfg.feedback.delta_lock).stage("profile")?;
        let gamma_h0 = cfg.feedback.gamma_h0 * profile.rho_ee_max() / self.reference_rho_ee;
        let fp = FeedbackParams {
            gamma_h0,
            ..cfg.feedback
        };
        let dd = DriftDiffusion::from_profile(&profile, &fp).stage("fields")?;
        let thermal = cfg.thermal().stage("thermal state")?;
        let dist = FokkerPlanck::new(&dd)
            .and_then(|f| f.evolve(&thermal, cfg.t_cpt, cfg.dt_max))
            .stage("evolve")?;
        let visibility = visibility_at(&dist, cfg.probe_tau)?;
        let variance = dist.moments().variance;
        let p = probe(dist, &cfg.taus)?;
        Ok(PowerPoint {
            ratio,
            omega: lambda.omega1,
            width: lambda.dark_state_width().ok(),
            gamma_h0,
            visibility,
            fit: p.fit,
            variance,
        })
    }
}

pub fn run_power_sweep(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<Vec<PowerPoint>> {
    let sweep = PowerSweep::new(cfg)?;
    ratios.iter().map(|r| sweep.point(*r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    /// Sweep variable (ms).
    pub t: f64,
    pub fit: FitResult,
    /// Visibility at the probe delay.
    pub visibility: f64,
    /// MHz.
    pub mean: f64,
    /// MHz².
    pub variance: f64,
}

impl SweepPoint {
    pub fn from_probe(t: f64, p: &Probe, probe_tau: f64) -> Result<Self> {
        let m = p.dist.moments();
        Ok(SweepPoint {
            t,
            fit: p.fit,
            visibility: visibility_at(&p.dist, probe_tau)?,
            mean: m.mean,
            variance: m.variance,
        })
    }
}

/// Exact visibility of `dist` at delay `tau` ns.
pub fn visibility_at(dist: &Distribution, tau: f64) -> Result<f64> {
    fid_from_distribution(dist, &[tau])
        .map(|f| f.visibility[0])
        .stage("fid")
}

/// One point of the preparation sweep: prepare for `t_cpt` ms and probe.
pub fn preparation_point(cfg: &ExperimentConfig, t_cpt: f64) -> Result<SweepPoint> {
    let dist = prepare(cfg, t_cpt)?;
    let p = probe(dist, &cfg.taus)?;
    SweepPoint::from_probe(t_cpt, &p, cfg.probe_tau)
}

/// Saturation of `T₂*` with preparation time.
pub fn saturation_fit(points: &[SweepPoint]) -> Result<SaturationFit> {
    let t: Vec<f64> = points.iter().map(|p| p.t).collect();
    let y: Vec<f64> = points.iter().map(|p| p.fit.t2_star).collect();
    fit_saturation(&t, &y).stage("saturation fit")
}

pub fn run_preparation_sweep(
    cfg: &ExperimentConfig,
    t_cpt_list: &[f64],
) -> Result<(Vec<SweepPoint>, SaturationFit)> {
    cfg.validate().stage("config")?;
    check_increasing(t_cpt_list)?;
    let points = t_cpt_list
        .iter()
        .map(|t| preparation_point(cfg, *t))
        .collect::<Result<Vec<_>>>()?;
    let sat = saturation_fit(&points)?;
    Ok((points, sat))
}

fn check_increasing(list: &[f64]) -> Result<()> {
    if list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(
            Error::invalid("sweep times must be non-negative and increasing").in_stage("config"),
        );
    }
    Ok(())
}

/// Relaxation sweep: one preparation, then independent dark waits.
#[derive(Debug, Clone)]
pub struct RelaxationSweep {
    cfg: ExperimentConfig,
    prepared: Distribution,
    dark: FokkerPlanck,
}

impl RelaxationSweep {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate().stage("config")?;
        let prepared = prepare(cfg, cfg.relax_t_cpt)?;
        let dark_fields =
            build_fields(&cfg.lambda, &cfg.feedback.dark(), cfg.grid).stage("dark fields")?;
        let dark = FokkerPlanck::new(&dark_fields).stage("dark fields")?;
        Ok(RelaxationSweep {
            cfg: cfg.clone(),
            prepared,
            dark,
        })
    }

    pub fn prepared(&self) -> &Distribution {
        &self.prepared
    }

    /// Probe after `t_relax` ms with the lasers off.
    pub fn probe_after(&self, t_relax: f64) -> Result<Probe> {
        let dist = self
            .dark
            .evolve(&self.prepared, t_relax, self.cfg.dt_max)
            .stage("relax")?;
        probe(dist, &self.cfg.taus)
    }

    pub fn point(&self, t_relax: f64) -> Result<SweepPoint> {
        SweepPoint::from_probe(t_relax, &self.probe_after(t_relax)?, self.cfg.probe_tau)
    }
}

/// Relaxation-law fit with `T₂*(0)` taken from the first point.
pub fn relaxation_fit(points: &[SweepPoint]) -> Result<RelaxFit> {
    let first = points
        .first()
        .ok_or_else(|| Error::InsufficientData("empty sweep".into()))?;
    let t: Vec<f64> = points.iter().map(|p| p.t).collect();
    let y: Vec<f64> = points.iter().map(|p| p.fit.t2_star).collect();
    fit_relaxation(&t, &y, first.fit.t2_star).stage("relaxation fit")
}

pub fn run_relaxation_sweep(
    cfg: &ExperimentConfig,
    t_relax_list: &[f64],
) -> Result<(Vec<SweepPoint>, RelaxFit)> {
    check_increasing(t_relax_list)?;
    let sweep = RelaxationSweep::new(cfg)?;
    let points = t_relax_list
        .iter()
        .map(|t| sweep.point(*t))
        .collect::<Result<Vec<_>>>()?;
    let fit = relaxation_fit(&points)?;
    Ok((points, fit))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GainCalibration {
    /// MHz.
    pub k_gain: f64,
    pub achieved_reduction: f64,
    /// Achieved within tolerance of the target.
    pub converged: bool,
    pub iterations: usize,
}

/// Smallest and largest gains searched by [`calibrate_gain`], MHz.
pub const K_GAIN_BRACKET: (f64, f64) = (0.1, 1.0e6);

/// Log-scale bisection on the gain until the stationary variance reduction is
/// within `rel_tol` of `target`. Unreachable targets return the best bracket
/// end with `converged = false`.
pub fn calibrate_gain(
    cfg: &ExperimentConfig,
    target: f64,
    rel_tol: f64,
) -> Result<GainCalibration> {
    cfg.validate().stage("config")?;
    if !(target.is_finite() && target > 0.0 && rel_tol > 0.0) {
        return Err(Error::invalid("target reduction must be positive").in_stage("config"));
    }
    let sigma = cfg.feedback.sigma_th;
    let profile =
        OpticalProfile::new(&cfg.lambda, cfg.grid, cfg.feedback.delta_lock).stage("profile")?;
    let reduction = |k: f64| -> Result<f64> {
        let fp = FeedbackParams {
            k_gain: k,
            ..cfg.feedback
        };
        let dd = DriftDiffusion::from_profile(&profile, &fp)?;
        steady_state_reduction(&dd, sigma)
    };
    let within = |r: f64| (r / target - 1.0).abs() <= rel_tol;
    let r0 = reduction(0.0).stage("calibrate gain")?;
    if target <= 1.0 || within(r0) {
        return Ok(GainCalibration {
            k_gain: 0.0,
            achieved_reduction: r0,
            converged: within(r0) || target <= 1.0,
            iterations: 0,
        });
    }
    let (mut lo, mut hi) = (libm::log(K_GAIN_BRACKET.0), libm::log(K_GAIN_BRACKET.1));
    let r_hi = reduction(K_GAIN_BRACKET.1).stage("calibrate gain")?;
    if r_hi < target && !within(r_hi) {
        return Ok(GainCalibration {
            k_gain: K_GAIN_BRACKET.1,
            achieved_reduction: r_hi,
            converged: false,
            iterations: 1,
        });
    }
    let mut best = (K_GAIN_BRACKET.1, r_hi);
    for it in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let k = libm::exp(mid);
        let r = reduction(k).stage("calibrate gain")?;
        if (r / target - 1.0).abs() < (best.1 / target - 1.0).abs() {
            best = (k, r);
        }
        if within(r) {
            return Ok(GainCalibration {
                k_gain: k,
                achieved_reduction: r,
                converged: true,
                iterations: it,
            });
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(GainCalibration {
        k_gain: best.0,
        achieved_reduction: best.1,
        converged: false,
        iterations: 200,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlipRateCalibration {
    /// ms⁻¹.
    pub gamma_h0: f64,
    /// Saturation time of the preparation sweep at `gamma_h0`, ms.
    pub achieved_t_p: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Peak flip rates searched by [`calibrate_flip_rate`], ms⁻¹.
pub const GAMMA_H0_BRACKET: (f64, f64) = (1.0e-3, 1.0);

/// Log-scale bisection on the peak flip rate until the preparation sweep over
/// `t_cpt_list` saturates with time constant `target_t_p` ms. Faster flipping
/// means faster saturation.
pub fn calibrate_flip_rate(
    cfg: &ExperimentConfig,
    t_cpt_list: &[f64],
    target_t_p: f64,
    rel_tol: f64,
) -> Result<FlipRateCalibration> {
    cfg.validate().stage("config")?;
    check_increasing(t_cpt_list)?;
    if !(target_t_p.is_finite() && target_t_p > 0.0 && rel_tol > 0.0) {
        return Err(Error::invalid("target saturation time must be positive").in_stage("config"));
    }
    let t_p = |g: f64| -> Result<f64> {
        let c = ExperimentConfig {
            feedback: FeedbackParams {
                gamma_h0: g,
                ..cfg.feedback
            },
            ..cfg.clone()
        };
        let points = t_cpt_list
            .iter()
            .map(|t| preparation_point(&c, *t))
            .collect::<Result<Vec<_>>>()?;
        Ok(saturation_fit(&points)?.t_p)
    };
    let within = |t: f64| (t / target_t_p - 1.0).abs() <= rel_tol;
    let (g_lo, g_hi) = GAMMA_H0_BRACKET;
    let (t_slow, t_fast) = (t_p(g_lo)?, t_p(g_hi)?);
    if !(t_fast <= target_t_p && target_t_p <= t_slow) {
        let (g, t) = if target_t_p > t_slow {
            (g_lo, t_slow)
        } else {
            (g_hi, t_fast)
        };
        return Ok(FlipRateCalibration {
            gamma_h0: g,
            achieved_t_p: t,
            converged: within(t),
            iterations: 2,
        });
    }
    let (mut lo, mut hi) = (libm::log(g_lo), libm::log(g_hi));
    let mut best = (g_hi, t_fast);
    for it in 1..=60 {
        let mid = 0.5 * (lo + hi);
        let g = libm::exp(mid);
        let t = t_p(g)?;
        if (t / target_t_p - 1.0).abs() < (best.1 / target_t_p - 1.0).abs() {
            best = (g, t);
        }
        if within(t) {
            return Ok(FlipRateCalibration {
                gamma_h0: g,
                achieved_t_p: t,
                converged: true,
                iterations: it + 2,
            });
        }
        if t > target_t_p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(FlipRateCalibration {
        gamma_h0: best.0,
        achieved_t_p: best.1,
        converged: false,
        iterations: 62,
    })
}

/// Symmetric Rabi frequency whose dark-state width is `target` MHz.
pub fn calibrate_drive(lambda: &LambdaParams, target: f64) -> Result<f64> {
    lambda.validate()?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::invalid("target width must be positive"));
    }
    let width = |o: f64| {
        LambdaParams {
            omega1: o,
            omega2: o,
            ..*lambda
        }
        .dark_state_width()
    };
    // walk up until the dip is resolvable and at least as wide as the target
    let mut lo = 1.0f64;
    let mut hi = lo;
    loop {
        match width(hi) {
            Ok(w) if w >= target => break,
            _ => {
                lo = hi;
                hi *= 1.25;
            }
        }
        if hi > crate::lambda::MAX_DELTA2 {
            return Err(Error::NoDarkStateResonance);
        }
    }
    for _ in 0..200 {
        let mid = libm::sqrt(lo * hi);
        // an unresolvable dip means the drive is still too weak
        match width(mid) {
            Ok(w) if w >= target => hi = mid,
            _ => lo = mid,
        }
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
    }
    Ok(hi)
}

/// Thermal width implied by the default unprepared `T₂*`.
pub fn default_sigma_th() -> f64 {
    sigma_from_t2_star(T2_STAR_THERMAL_NS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_drive_reproduces_width() {
        let o = calibrate_drive(&LambdaParams::default(), 163.0).unwrap();
        assert_relative_eq!(o, crate::lambda::OMEGA_DEFAULT, max_relative = 1e-9);
    }

    #[test]
    fn unprepared_probe_is_thermal() {
        let cfg = ExperimentConfig {
            t_cpt: 0.0,
            ..Default::default()
        };
        let p = run_prepare_and_probe(&cfg).unwrap();
        assert_relative_eq!(p.fit.t2_star, 3.2, max_relative = 1e-3);
        assert_relative_eq!(p.fit.alpha, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn lasers_off_leave_thermal_state() {
        let cfg = ExperimentConfig {
            feedback: FeedbackParams::default().dark(),
            t_cpt: 2.0,
            ..Default::default()
        };
        let p = run_prepare_and_probe(&cfg).unwrap();
        let th = cfg.thermal().unwrap();
        assert!(p.dist.l1_distance(&th).unwrap() < 1e-6);
    }

    #[test]
    fn unit_target_needs_no_gain() {
        let c = calibrate_gain(&ExperimentConfig::default(), 1.0, 0.05).unwrap();
        assert_eq!(c.k_gain, 0.0);
        assert_relative_eq!(c.achieved_reduction, 1.0, max_relative = 5e-3);
    }

    #[test]
    fn sweeps_reject_unordered_times() {
        let cfg = ExperimentConfig::default();
        assert!(run_preparation_sweep(&cfg, &[1.0, 0.5, 2.0, 3.0]).is_err());
    }
}
