//! Pipelines behind each subcommand. A run is a pure function of
//! `(Command, RunConfig, Format)`; [`execute`] writes its artifacts and the
//! manifest that lets [`crate::manifest::replay`] repeat it.

use std::fs;
use std::path::{Path, PathBuf};

use overhauser_core::experiment::{
    calibrate_drive, calibrate_flip_rate, calibrate_gain, prepare, probe, ExperimentConfig,
    FlipRateCalibration, GainCalibration, PowerPoint, SweepPoint,
};
use overhauser_core::feedback::{LockAnalysis, OpticalProfile};
use overhauser_core::fitting::{fit_relaxation, fit_saturation, fit_stretched_exp, FitResult};
use overhauser_core::fokker_planck::{EvolveStats, FokkerPlanck};
use overhauser_core::grid::{Distribution, Moments};
use overhauser_core::ramsey::{distribution_from_fid, fid_from_distribution, InversionMeta};
use overhauser_core::sde::histogram;
use overhauser_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::{
    distribution_table, ensemble_table, ensemble_to_bytes, fid_table, json_bytes,
    read_distribution, read_fid, read_xy, sha256_hex, Format, Table,
};
use crate::manifest::{FileDigest, Manifest};
use crate::parallel;

/// Largest ensemble also written as a table.
pub const ENSEMBLE_TABLE_MAX: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    /// `A·exp(−(τ/T₂*)^α)` against delay.
    StretchedExp,
    /// Return of `T₂*` to its thermal value against wait time.
    Relaxation,
    /// Exponential saturation of `T₂*` against preparation time.
    Saturation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    SteadyState,
    Fields,
    Evolve {
        input: Option<PathBuf>,
        time_ms: Option<f64>,
    },
    Fid {
        input: Option<PathBuf>,
    },
    InvertFid {
        input: PathBuf,
    },
    Fit {
        input: PathBuf,
        kind: FitKind,
    },
    SweepPower,
    SweepPrepare,
    SweepRelax,
    Calibrate,
    OracleCompare,
}

impl Command {
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Evolve { input: Some(p), .. } | Command::Fid { input: Some(p) } => {
                vec![p.as_path()]
            }
            Command::InvertFid { input } | Command::Fit { input, .. } => vec![input.as_path()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub version: String,
}

/// Per-point scalars of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: String,
    pub unit: String,
    pub values: Vec<f64>,
    pub visibility: Vec<f64>,
    pub t2_star_ns: Vec<f64>,
    pub alpha: Vec<f64>,
    pub variance_mhz2: Vec<f64>,
    pub provenance: Provenance,
}

impl SweepResult {
    fn from_points(
        variable: &str,
        unit: &str,
        points: &[SweepPoint],
        provenance: Provenance,
    ) -> Self {
        SweepResult {
            variable: variable.into(),
            unit: unit.into(),
            values: points.iter().map(|p| p.t).collect(),
            visibility: points.iter().map(|p| p.visibility).collect(),
            t2_star_ns: points.iter().map(|p| p.fit.t2_star).collect(),
            alpha: points.iter().map(|p| p.fit.alpha).collect(),
            variance_mhz2: points.iter().map(|p| p.variance).collect(),
            provenance,
        }
    }

    pub fn table(&self) -> Table {
        Table::new([
            (
                format!("{}_{}", self.variable, self.unit),
                self.values.clone(),
            ),
            ("visibility".into(), self.visibility.clone()),
            ("t2_star_ns".into(), self.t2_star_ns.clone()),
            ("alpha".into(), self.alpha.clone()),
            ("variance_mhz2".into(), self.variance_mhz2.clone()),
        ])
    }
}

/// Outcome that still produces artifacts and a manifest.
enum Status {
    Done,
    CalibrationUnreachable(String),
}

/// Collects artifacts written into the output directory.
struct Outputs {
    dir: PathBuf,
    format: Format,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// `stem.csv` or `stem.json` per the run format.
    fn table(&mut self, stem: &str, t: &Table) -> Result<()> {
        let bytes = t.encode(self.format)?;
        self.bytes(&format!("{stem}.{}", self.format.extension()), &bytes)
    }

    /// Plot-ready CSV regardless of the run format.
    fn figure(&mut self, name: &str, x: (&str, &[f64]), y: (&str, &[f64])) -> Result<()> {
        let t = Table::new([(x.0, x.1.to_vec()), (y.0, y.1.to_vec())]);
        self.bytes(&format!("{name}.csv"), &t.to_csv()?)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.bytes(name, &json_bytes(value))
    }
}

/// Runs `cmd` into `out` and writes `manifest.json` there.
pub fn execute(cmd: &Command, cfg: &RunConfig, format: Format, out: &Path) -> Result<Manifest> {
    let exp = cfg.experiment()?;
    let inputs = cmd
        .inputs()
        .into_iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            Ok(FileDigest {
                path: p.to_path_buf(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut o = Outputs {
        dir: out.to_path_buf(),
        format,
        files: Vec::new(),
    };
    let provenance = Provenance {
        config_sha256: cfg.sha256(),
        version: crate::VERSION.into(),
    };
    let status = match cmd {
        Command::SteadyState => steady_state(&exp, &mut o)?,
        Command::Fields => fields(&exp, &mut o)?,
        Command::Evolve { input, time_ms } => evolve(&exp, input.as_deref(), *time_ms, &mut o)?,
        Command::Fid { input } => fid(&exp, input.as_deref(), &mut o)?,
        Command::InvertFid { input } => invert_fid(&exp, input, &mut o)?,
        Command::Fit { input, kind } => fit(input, *kind, &mut o)?,
        Command::SweepPower => sweep_power(cfg, &exp, provenance, &mut o)?,
        Command::SweepPrepare => sweep_prepare(cfg, &exp, provenance, &mut o)?,
        Command::SweepRelax => sweep_relax(cfg, &exp, provenance, &mut o)?,
        Command::Calibrate => calibrate(cfg, &exp, &mut o)?,
        Command::OracleCompare => oracle_compare(cfg, &exp, &mut o)?,
    };
    let manifest = Manifest::new(cmd.clone(), cfg.clone(), format, inputs, o.files);
    let path = out.join(crate::manifest::MANIFEST_FILE);
    fs::write(&path, json_bytes(&manifest)).map_err(|e| CliError::io(&path, e))?;
    match status {
        Status::Done => Ok(manifest),
        Status::CalibrationUnreachable(m) => Err(CliError::CalibrationUnreachable(m)),
    }
}

#[derive(Serialize)]
struct ProbeSummary<'a> {
    fit: &'a FitResult,
    moments: Moments,
    variance_reduction: f64,
}

fn summary<'a>(
    exp: &ExperimentConfig,
    dist: &Distribution,
    fit: &'a FitResult,
) -> ProbeSummary<'a> {
    let moments = dist.moments();
    let s = exp.feedback.sigma_th;
    ProbeSummary {
        fit,
        moments,
        variance_reduction: s * s / moments.variance,
    }
}

fn steady_state(exp: &ExperimentConfig, o: &mut Outputs) -> Result<Status> {
    let dd = exp.fields()?;
    let ss = FokkerPlanck::new(&dd)
        .and_then(|f| f.steady_state())
        .map_err(|e| e.in_stage("steady state"))?;
    let p = probe(ss, &exp.taus)?;
    o.table("distribution", &distribution_table(&p.dist))?;
    o.table("fid", &fid_table(&p.fid))?;
    o.json("steady_state.json", &summary(exp, &p.dist, &p.fit))?;
    Ok(Status::Done)
}

#[derive(Serialize)]
struct FieldSummary {
    lock: LockAnalysis,
    gain_sign_flipped: bool,
    edges_restoring: bool,
    rho_ee_max: f64,
    power_ratio: f64,
    dark_state_width_mhz: Option<f64>,
}

fn fields(exp: &ExperimentConfig, o: &mut Outputs) -> Result<Status> {
    let profile = OpticalProfile::new(&exp.lambda, exp.grid, exp.feedback.delta_lock)?;
    let dd = exp.fields()?;
    let t = Table::new([
        ("delta_n_mhz", exp.grid.centers().collect()),
        ("drift_mhz_per_ms", dd.drift.clone()),
        ("diffusion_mhz2_per_ms", dd.diffusion.clone()),
        ("flip_rate_per_ms", dd.flip_rate.clone()),
        ("rho_ee", profile.rho_ee().to_vec()),
        ("s_x", profile.s_x().to_vec()),
    ]);
    o.table("fields", &t)?;
    o.json(
        "lock.json",
        &FieldSummary {
            lock: dd.lock_analysis(),
            gain_sign_flipped: dd.gain_sign_flipped,
            edges_restoring: dd.edges_restoring(),
            rho_ee_max: profile.rho_ee_max(),
            power_ratio: exp.power_ratio(),
            dark_state_width_mhz: exp.lambda.dark_state_width().ok(),
        },
    )?;
    Ok(Status::Done)
}

#[derive(Serialize)]
struct EvolveSummary {
    time_ms: f64,
    stats: EvolveStats,
    moments: Moments,
    normalization: f64,
    min_density: f64,
}

fn evolve(
    exp: &ExperimentConfig,
    input: Option<&Path>,
    time_ms: Option<f64>,
    o: &mut Outputs,
) -> Result<Status> {
    let init = match input {
        Some(p) => read_distribution(p, exp.grid)?,
        None => exp.thermal()?,
    };
    let t = time_ms.unwrap_or(exp.t_cpt);
    let dd = exp.fields()?;
    let (dist, stats) = FokkerPlanck::new(&dd)
        .and_then(|f| f.evolve_with_stats(&init, t, exp.dt_max))
        .map_err(|e| e.in_stage("evolve"))?;
    o.table("distribution", &distribution_table(&dist))?;
    o.json(
        "evolve.json",
        &EvolveSummary {
            time_ms: t,
            stats,
            moments: dist.moments(),
            normalization: dist.normalization(),
            min_density: dist.min_density(),
        },
    )?;
    Ok(Status::Done)
}

fn fid(exp: &ExperimentConfig, input: Option<&Path>, o: &mut Outputs) -> Result<Status> {
    let dist = match input {
        Some(p) => read_distribution(p, exp.grid)?,
        None => {
            let thermal = fid_from_distribution(&exp.thermal()?, &exp.taus)?;
            o.figure(
                "plot_fid_thermal",
                ("tau_ns", &thermal.taus),
                ("visibility", &thermal.visibility),
            )?;
            prepare(exp, exp.t_cpt)?
        }
    };
    let p = probe(dist, &exp.taus)?;
    if input.is_none() {
        o.figure(
            "plot_fid_prepared",
            ("tau_ns", &p.fid.taus),
            ("visibility", &p.fid.visibility),
        )?;
    }
    o.table("fid", &fid_table(&p.fid))?;
    o.json("fit.json", &summary(exp, &p.dist, &p.fit))?;
    Ok(Status::Done)
}

#[derive(Serialize)]
struct InversionSummary {
    meta: InversionMeta,
    moments: Moments,
}

fn invert_fid(exp: &ExperimentConfig, input: &Path, o: &mut Outputs) -> Result<Status> {
    let f = read_fid(input)?;
    let (dist, meta) = distribution_from_fid(&f, exp.grid)?;
    o.table("distribution", &distribution_table(&dist))?;
    o.json(
        "inversion.json",
        &InversionSummary {
            meta,
            moments: dist.moments(),
        },
    )?;
    Ok(Status::Done)
}

fn fit(input: &Path, kind: FitKind, o: &mut Outputs) -> Result<Status> {
    let (x, y) = read_xy(input)?;
    match kind {
        FitKind::StretchedExp => {
            // τ = 0 carries no shape information
            let (t, v): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).filter(|(t, _)| **t > 0.0).unzip();
            o.json("fit.json", &fit_stretched_exp(&t, &v, None)?)?;
        }
        FitKind::Relaxation => {
            let first = *y
                .first()
                .ok_or_else(|| CliError::format(input, "no data rows"))?;
            o.json("relaxation_fit.json", &fit_relaxation(&x, &y, first)?)?;
        }
        FitKind::Saturation => o.json("saturation_fit.json", &fit_saturation(&x, &y)?)?,
    }
    Ok(Status::Done)
}

#[derive(Serialize)]
struct PowerOptimum {
    ratio: f64,
    visibility: f64,
    dark_state_width_mhz: Option<f64>,
    interior: bool,
}

fn sweep_power(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    provenance: Provenance,
    o: &mut Outputs,
) -> Result<Status> {
    let ratios = &cfg.sweeps.power_ratios;
    let points: Vec<PowerPoint> = parallel::power_sweep(exp, ratios)?;
    let result = SweepResult {
        variable: "power_ratio".into(),
        unit: "ps".into(),
        values: ratios.clone(),
        visibility: points.iter().map(|p| p.visibility).collect(),
        t2_star_ns: points.iter().map(|p| p.fit.t2_star).collect(),
        alpha: points.iter().map(|p| p.fit.alpha).collect(),
        variance_mhz2: points.iter().map(|p| p.variance).collect(),
        provenance,
    };
    let mut table = result.table();
    table.columns.push("omega_mhz".into());
    table.values.push(points.iter().map(|p| p.omega).collect());
    table.columns.push("dark_state_width_mhz".into());
    table
        .values
        .push(points.iter().map(|p| p.width.unwrap_or(f64::NAN)).collect());
    table.columns.push("gamma_h0_per_ms".into());
    table
        .values
        .push(points.iter().map(|p| p.gamma_h0).collect());
    o.table("sweep_power", &table)?;
    o.json("sweep_power.json", &result)?;
    o.figure(
        "plot_visibility_vs_power",
        ("power_ratio", ratios),
        ("visibility", &result.visibility),
    )?;
    let best = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.visibility.total_cmp(&b.1.visibility))
        .ok_or_else(|| CliError::Config("empty power sweep".into()))?;
    o.json(
        "power_optimum.json",
        &PowerOptimum {
            ratio: best.1.ratio,
            visibility: best.1.visibility,
            dark_state_width_mhz: best.1.width,
            interior: best.0 > 0 && best.0 + 1 < points.len(),
        },
    )?;
    Ok(Status::Done)
}

fn sweep_prepare(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    provenance: Provenance,
    o: &mut Outputs,
) -> Result<Status> {
    let (points, sat) = parallel::preparation_sweep(exp, &cfg.sweeps.t_cpt_ms)?;
    let result = SweepResult::from_points("t_cpt", "ms", &points, provenance);
    o.table("sweep_prepare", &result.table())?;
    o.json("sweep_prepare.json", &result)?;
    o.json("saturation_fit.json", &sat)?;
    o.figure(
        "plot_t2_star_vs_t_cpt",
        ("t_cpt_ms", &result.values),
        ("t2_star_ns", &result.t2_star_ns),
    )?;
    o.figure(
        "plot_alpha_vs_t_cpt",
        ("t_cpt_ms", &result.values),
        ("alpha", &result.alpha),
    )?;
    let snapshots: Vec<Distribution> = cfg
        .sweeps
        .snapshot_t_cpt_ms
        .par_iter()
        .map(|t| prepare(exp, *t))
        .collect::<std::result::Result<_, Error>>()?;
    for (t, d) in cfg.sweeps.snapshot_t_cpt_ms.iter().zip(&snapshots) {
        let x: Vec<f64> = d.grid().centers().collect();
        let name = format!("plot_density_at_{t}_ms");
        o.figure(&name, ("delta_n_mhz", &x), ("density_per_mhz", d.density()))?;
    }
    Ok(Status::Done)
}

fn sweep_relax(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    provenance: Provenance,
    o: &mut Outputs,
) -> Result<Status> {
    let (points, fit) = parallel::relaxation_sweep(exp, &cfg.sweeps.t_relax_ms)?;
    let result = SweepResult::from_points("t_relax", "ms", &points, provenance);
    o.table("sweep_relax", &result.table())?;
    o.json("sweep_relax.json", &result)?;
    o.json("relaxation_fit.json", &fit)?;
    o.figure(
        "plot_t2_star_vs_t_relax",
        ("t_relax_ms", &result.values),
        ("t2_star_ns", &result.t2_star_ns),
    )?;
    o.figure(
        "plot_alpha_vs_t_relax",
        ("t_relax_ms", &result.values),
        ("alpha", &result.alpha),
    )?;
    Ok(Status::Done)
}

#[derive(Serialize)]
struct DriveCalibration {
    target_width_mhz: f64,
    omega_mhz: Option<f64>,
    width_mhz: Option<f64>,
    converged: bool,
}

#[derive(Serialize)]
struct CalibrationReport {
    drive: Option<DriveCalibration>,
    gamma_d_per_ms: f64,
    flip_rate: Option<FlipRateCalibration>,
    gain: GainCalibration,
    converged: bool,
}

/// Drive first (optics only), then `Γ_d`, the peak flip rate and the gain.
/// One pass, no iteration between the last two.
fn calibrate(cfg: &RunConfig, exp: &ExperimentConfig, o: &mut Outputs) -> Result<Status> {
    let c = &cfg.calibration;
    let mut e = exp.clone();
    let drive = match c.target_width_mhz {
        None => None,
        Some(target) => {
            let omega = match calibrate_drive(&e.lambda, target) {
                Ok(w) => Some(w),
                Err(err) if err.root() == &Error::NoDarkStateResonance => None,
                Err(err) => return Err(err.into()),
            };
            if let Some(w) = omega {
                e.lambda.omega1 = w;
                e.lambda.omega2 = w;
            }
            let width = omega.and_then(|_| e.lambda.dark_state_width().ok());
            Some(DriveCalibration {
                target_width_mhz: target,
                omega_mhz: omega,
                width_mhz: width,
                converged: width.is_some_and(|w| (w / target - 1.0).abs() <= c.rel_tol),
            })
        }
    };
    if let Some(t_c) = c.t_c_ms {
        if !(t_c > 0.0 && t_c.is_finite()) {
            return Err(CliError::Config(
                "calibration.t_c_ms must be positive".into(),
            ));
        }
        e.feedback.gamma_d = 1.0 / t_c;
    }
    let flip_rate = match c.target_t_p_ms {
        None => None,
        Some(target) => {
            let r = calibrate_flip_rate(&e, &cfg.sweeps.t_cpt_ms, target, c.rel_tol)?;
            e.feedback.gamma_h0 = r.gamma_h0;
            Some(r)
        }
    };
    let gain = calibrate_gain(&e, c.target_variance_reduction, c.rel_tol)?;
    e.feedback.k_gain = gain.k_gain;
    let mut failed = Vec::new();
    if drive.as_ref().is_some_and(|d| !d.converged) {
        failed.push("drive");
    }
    if flip_rate.is_some_and(|f| !f.converged) {
        failed.push("flip rate");
    }
    if !gain.converged {
        failed.push("gain");
    }
    let report = CalibrationReport {
        drive,
        gamma_d_per_ms: e.feedback.gamma_d,
        flip_rate,
        gain,
        converged: failed.is_empty(),
    };
    o.json("calibration.json", &report)?;
    let mut calibrated = cfg.clone();
    calibrated.set_experiment(&e);
    o.json("calibrated_config.json", &calibrated)?;
    Ok(if failed.is_empty() {
        Status::Done
    } else {
        Status::CalibrationUnreachable(failed.join(", "))
    })
}

fn oracle_compare(cfg: &RunConfig, exp: &ExperimentConfig, o: &mut Outputs) -> Result<Status> {
    let s = &cfg.sde;
    let dd = exp.fields()?;
    let init = exp.thermal()?;
    let ens =
        parallel::simulate_ensemble(&dd, &init, s.trajectories, s.dt_ms, &s.times_ms, cfg.seed)
            .map_err(|e| e.in_stage("sde"))?;
    let fp = FokkerPlanck::new(&dd)?;
    // first-order in time, so resolve the transient as finely as the SDE does
    let dt_max = exp.dt_max.min(s.dt_ms);
    let mut pde = Vec::with_capacity(s.times_ms.len());
    let (mut current, mut t_prev) = (init, 0.0);
    for &t in &s.times_ms {
        current = fp
            .evolve(&current, t - t_prev, dt_max)
            .map_err(|e| e.in_stage("evolve"))?;
        t_prev = t;
        pde.push(current.clone());
    }
    let m = ens.m as f64;
    let mut cols: Vec<(String, Vec<f64>)> = [
        "time_ms",
        "tv_distance",
        "pde_mean_mhz",
        "sde_mean_mhz",
        "sde_mean_se_mhz",
        "pde_variance_mhz2",
        "sde_variance_mhz2",
        "sde_variance_se_mhz2",
        "pde_normalization",
        "pde_min_density",
    ]
    .iter()
    .map(|n| (n.to_string(), Vec::new()))
    .collect();
    let first = pde[0].coarsen(s.histogram_coarsen)?;
    let mut hist_cols = vec![(
        "delta_n_mhz".to_owned(),
        first.grid().centers().collect::<Vec<_>>(),
    )];
    for (k, p) in pde.iter().enumerate() {
        let coarse_pde = p.coarsen(s.histogram_coarsen)?;
        let coarse_sde = histogram(&ens.samples[k], exp.grid)?.coarsen(s.histogram_coarsen)?;
        let pm = p.moments();
        let var = ens.variance(k);
        let row = [
            ens.times[k],
            coarse_pde.tv_distance(&coarse_sde)?,
            pm.mean,
            ens.mean(k),
            (var / m).sqrt(),
            pm.variance,
            var,
            var * (2.0 / (m - 1.0)).sqrt(),
            p.normalization(),
            p.min_density(),
        ];
        cols.iter_mut().zip(row).for_each(|(c, v)| c.1.push(v));
        let t = ens.times[k];
        hist_cols.push((format!("pde_at_{t}_ms"), coarse_pde.density().to_vec()));
        hist_cols.push((format!("sde_at_{t}_ms"), coarse_sde.density().to_vec()));
    }
    o.table("oracle", &Table::new(cols))?;
    o.table("oracle_histograms", &Table::new(hist_cols))?;
    o.bytes("ensemble.bin", &ensemble_to_bytes(&ens))?;
    if ens.m <= ENSEMBLE_TABLE_MAX {
        o.table("ensemble", &ensemble_table(&ens))?;
    }
    Ok(Status::Done)
}
