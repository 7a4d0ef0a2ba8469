//! Thread-parallel drivers. Every work unit is independent and results are
//! collected in input order, so outputs do not depend on the thread count.

use overhauser_core::experiment::{
    preparation_point, relaxation_fit, saturation_fit, ExperimentConfig, PowerPoint, PowerSweep,
    RelaxationSweep, SweepPoint,
};
use overhauser_core::feedback::DriftDiffusion;
use overhauser_core::fitting::{RelaxFit, SaturationFit};
use overhauser_core::grid::Distribution;
use overhauser_core::sde::{EnsembleResult, SdeSetup, MIN_TRAJECTORIES};
use overhauser_core::{Error, Result};
use rayon::prelude::*;

fn check_increasing(list: &[f64]) -> Result<()> {
    if list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "sweep times must be non-negative and increasing".into(),
        )
        .in_stage("config"));
    }
    Ok(())
}

pub fn power_sweep(cfg: &ExperimentConfig, ratios: &[f64]) -> Result<Vec<PowerPoint>> {
    let sweep = PowerSweep::new(cfg)?;
    ratios.par_iter().map(|r| sweep.point(*r)).collect()
}

pub fn preparation_sweep(
    cfg: &ExperimentConfig,
    t_cpt: &[f64],
) -> Result<(Vec<SweepPoint>, SaturationFit)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    check_increasing(t_cpt)?;
    let points: Vec<SweepPoint> = t_cpt
        .par_iter()
        .map(|t| preparation_point(cfg, *t))
        .collect::<Result<_>>()?;
    let sat = saturation_fit(&points)?;
    Ok((points, sat))
}

pub fn relaxation_sweep(
    cfg: &ExperimentConfig,
    t_relax: &[f64],
) -> Result<(Vec<SweepPoint>, RelaxFit)> {
    check_increasing(t_relax)?;
    let sweep = RelaxationSweep::new(cfg)?;
    let points: Vec<SweepPoint> = t_relax
        .par_iter()
        .map(|t| sweep.point(*t))
        .collect::<Result<_>>()?;
    let fit = relaxation_fit(&points)?;
    Ok((points, fit))
}

/// Same trajectories as the sequential core driver, spread over threads.
pub fn simulate_ensemble(
    dd: &DriftDiffusion,
    init: &Distribution,
    m: usize,
    dt: f64,
    t_out: &[f64],
    seed: u64,
) -> Result<EnsembleResult> {
    if m < MIN_TRAJECTORIES {
        return Err(Error::InvalidParameter(
            "at least 1000 trajectories required".into(),
        ));
    }
    let setup = SdeSetup::new(dd, init, dt, t_out, seed)?;
    let paths: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|j| setup.trajectory(j))
        .collect::<Result<_>>()?;
    EnsembleResult::from_paths(t_out.to_vec(), &paths, seed)
}
