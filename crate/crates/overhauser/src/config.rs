//! Run configuration as read from JSON.
//!
//! Every physical quantity carries its unit in the key. A file may name a
//! `preset` and override any subset of keys; the remaining keys come from the
//! preset. The fully resolved form is what gets hashed and embedded in the
//! manifest, so a manifest alone reproduces a run.

use std::path::Path;

use overhauser_core::experiment::ExperimentConfig;
use overhauser_core::feedback::FeedbackParams;
use overhauser_core::fokker_planck::DT_MAX_DEFAULT;
use overhauser_core::grid::Grid1D;
use overhauser_core::lambda::LambdaParams;
use overhauser_core::ramsey::uniform_taus;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 3.2 ns thermal `T₂*` on ±500 MHz.
    #[default]
    QdA,
    /// 100 MHz thermal width on ±600 MHz.
    QdB,
}

impl Preset {
    pub fn experiment(self) -> ExperimentConfig {
        match self {
            Preset::QdA => ExperimentConfig::default(),
            Preset::QdB => ExperimentConfig::qd_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub omega1_mhz: f64,
    pub omega2_mhz: f64,
    pub big_delta_mhz: f64,
    pub gamma_sp_mhz: f64,
    pub branching: f64,
    pub gamma_2_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    pub k_gain_mhz: f64,
    pub gamma_d_per_ms: f64,
    pub gamma_h0_per_ms: f64,
    pub sigma_th_mhz: f64,
    pub delta_lock_mhz: f64,
    pub delta_x_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub min_mhz: f64,
    pub max_mhz: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub power_ratios: Vec<f64>,
    pub t_cpt_ms: Vec<f64>,
    pub t_relax_ms: Vec<f64>,
    /// Preparation times of the three density snapshots.
    pub snapshot_t_cpt_ms: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub trajectories: usize,
    pub dt_ms: f64,
    pub times_ms: Vec<f64>,
    /// Cells merged per histogram bin when comparing with the PDE.
    pub histogram_coarsen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Sets `gamma_d_per_ms = 1/t_c_ms` when present.
    pub t_c_ms: Option<f64>,
    /// Calibrates the peak flip rate when present.
    pub target_t_p_ms: Option<f64>,
    pub target_variance_reduction: f64,
    /// Calibrates the drive when present.
    pub target_width_mhz: Option<f64>,
    pub rel_tol: f64,
}

/// Recorded but inert: the probe is modelled as an instantaneous readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub t_r_ms: Option<f64>,
    pub repetitions: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: LambdaSection,
    pub feedback: FeedbackSection,
    pub grid: GridSection,
    /// Overrides both Rabi frequencies when present.
    pub power_ratio: Option<f64>,
    pub t_cpt_ms: f64,
    pub relax_t_cpt_ms: f64,
    pub t_relax_ms: f64,
    pub tau_step_ns: f64,
    pub tau_max_ns: f64,
    /// Explicit delays; replaces the uniform list when present.
    pub tau_ns: Option<Vec<f64>>,
    pub probe_tau_ns: f64,
    pub dt_max_ms: f64,
    pub seed: u64,
    pub sweeps: SweepSection,
    pub sde: SdeSection,
    pub calibration: CalibrationSection,
    pub probe_block: ProbeBlock,
}

/// Dark-state width the default drive is calibrated to, MHz.
pub const DARK_STATE_WIDTH_TARGET: f64 = 163.0;

/// Ratios `10^(k/6)` for `k = -12..=12`.
fn default_power_ratios() -> Vec<f64> {
    (-12..=12).map(|k| 10f64.powf(k as f64 / 6.0)).collect()
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let e = preset.experiment();
        let sigma = e.feedback.sigma_th;
        RunConfig {
            lambda: LambdaSection {
                omega1_mhz: e.lambda.omega1,
                omega2_mhz: e.lambda.omega2,
                big_delta_mhz: e.lambda.big_delta,
                gamma_sp_mhz: e.lambda.gamma_sp,
                branching: e.lambda.branching,
                gamma_2_mhz: e.lambda.gamma_2,
            },
            feedback: FeedbackSection {
                k_gain_mhz: e.feedback.k_gain,
                gamma_d_per_ms: e.feedback.gamma_d,
                gamma_h0_per_ms: e.feedback.gamma_h0,
                sigma_th_mhz: sigma,
                delta_lock_mhz: e.feedback.delta_lock,
                delta_x_mhz: e.feedback.delta_x,
            },
            grid: GridSection {
                min_mhz: e.grid.min,
                max_mhz: e.grid.max,
                cells: e.grid.n,
            },
            power_ratio: None,
            t_cpt_ms: e.t_cpt,
            relax_t_cpt_ms: e.relax_t_cpt,
            t_relax_ms: e.t_relax,
            tau_step_ns: overhauser_core::experiment::TAU_STEP_DEFAULT,
            tau_max_ns: overhauser_core::experiment::TAU_MAX_DEFAULT,
            tau_ns: None,
            probe_tau_ns: e.probe_tau,
            dt_max_ms: DT_MAX_DEFAULT,
            seed: 1,
            sweeps: SweepSection {
                power_ratios: default_power_ratios(),
                t_cpt_ms: vec![
                    0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0,
                    8.0,
                ],
                t_relax_ms: vec![
                    0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 35.0, 50.0, 75.0, 100.0, 150.0, 200.0,
                ],
                snapshot_t_cpt_ms: [0.1, 0.3, 8.0],
            },
            sde: SdeSection {
                trajectories: 100_000,
                dt_ms: 1e-3,
                times_ms: vec![0.5, 2.0, 8.0],
                histogram_coarsen: 16,
            },
            calibration: CalibrationSection {
                t_c_ms: None,
                target_t_p_ms: None,
                target_variance_reduction: 100.0,
                target_width_mhz: Some(DARK_STATE_WIDTH_TARGET),
                rel_tol: 0.05,
            },
            probe_block: ProbeBlock::default(),
        }
    }

    /// Parses a JSON document, overlaying its keys on the preset it names
    /// or on [`Preset::QdA`].
    pub fn from_json_str(text: &str) -> std::result::Result<Self, String> {
        Self::from_json_str_or(text, Preset::default())
    }

    /// As [`Self::from_json_str`] with `fallback` used when no preset is named.
    pub fn from_json_str_or(text: &str, fallback: Preset) -> std::result::Result<Self, String> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let obj = value.as_object_mut().ok_or("top level must be an object")?;
        let preset = match obj.remove("preset") {
            None => fallback,
            Some(p) => serde_json::from_value(p).map_err(|e| format!("preset: {e}"))?,
        };
        let mut base = serde_json::to_value(Self::preset(preset)).map_err(|e| e.to_string())?;
        merge(&mut base, value);
        serde_json::from_value(base).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path, fallback: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json_str_or(&text, fallback)
            .map_err(|m| CliError::Config(format!("{}: {m}", path.display())))
    }

    /// Canonical serialization; the hash input.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json()))
    }

    pub fn taus(&self) -> Result<Vec<f64>> {
        match &self.tau_ns {
            Some(t) => Ok(t.clone()),
            None => Ok(uniform_taus(self.tau_step_ns, self.tau_max_ns)?),
        }
    }

    /// Core configuration after applying `power_ratio`; validated.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let l = &self.lambda;
        let mut lambda = LambdaParams {
            omega1: l.omega1_mhz,
            omega2: l.omega2_mhz,
            big_delta: l.big_delta_mhz,
            gamma_sp: l.gamma_sp_mhz,
            branching: l.branching,
            gamma_2: l.gamma_2_mhz,
        };
        if let Some(r) = self.power_ratio {
            lambda = lambda.with_power_ratio(r)?;
        }
        let f = &self.feedback;
        let cfg = ExperimentConfig {
            lambda,
            feedback: FeedbackParams {
                k_gain: f.k_gain_mhz,
                gamma_d: f.gamma_d_per_ms,
                gamma_h0: f.gamma_h0_per_ms,
                sigma_th: f.sigma_th_mhz,
                delta_lock: f.delta_lock_mhz,
                delta_x: f.delta_x_mhz,
            },
            grid: Grid1D::new(self.grid.min_mhz, self.grid.max_mhz, self.grid.cells)?,
            t_cpt: self.t_cpt_ms,
            relax_t_cpt: self.relax_t_cpt_ms,
            t_relax: self.t_relax_ms,
            taus: self.taus()?,
            probe_tau: self.probe_tau_ns,
            dt_max: self.dt_max_ms,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the calibrated values back into the file form.
    pub fn set_experiment(&mut self, e: &ExperimentConfig) {
        self.lambda.omega1_mhz = e.lambda.omega1;
        self.lambda.omega2_mhz = e.lambda.omega2;
        self.power_ratio = None;
        self.feedback.k_gain_mhz = e.feedback.k_gain;
        self.feedback.gamma_d_per_ms = e.feedback.gamma_d;
        self.feedback.gamma_h0_per_ms = e.feedback.gamma_h0;
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_to_core_defaults() {
        let a = RunConfig::preset(Preset::QdA).experiment().unwrap();
        assert_eq!(a, ExperimentConfig::default());
        let b = RunConfig::preset(Preset::QdB).experiment().unwrap();
        assert_eq!(b, ExperimentConfig::qd_b());
    }

    #[test]
    fn overlay_keeps_unnamed_keys() {
        let c = RunConfig::from_json_str(
            r#"{"preset":"qd-b","feedback":{"gamma_h0_per_ms":0.05},"seed":9}"#,
        )
        .unwrap();
        let mut expect = RunConfig::preset(Preset::QdB);
        expect.feedback.gamma_h0_per_ms = 0.05;
        expect.seed = 9;
        assert_eq!(c, expect);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"sigma_th":70}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"feedback":{"sigma":70}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"preset":"qd-c"}"#).is_err());
    }

    #[test]
    fn resolved_form_round_trips() {
        let c = RunConfig::preset(Preset::QdA);
        let text = String::from_utf8(c.to_canonical_json()).unwrap();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sha256(), c.sha256());
    }

    #[test]
    fn power_ratio_sets_both_rabi_frequencies() {
        let c = RunConfig::from_json_str(r#"{"power_ratio":4.0}"#).unwrap();
        let e = c.experiment().unwrap();
        assert!((e.power_ratio() - 4.0).abs() < 1e-12);
        assert_eq!(e.lambda.omega1, e.lambda.omega2);
    }

    #[test]
    fn invalid_physics_is_a_config_error() {
        let c = RunConfig::from_json_str(r#"{"feedback":{"sigma_th_mhz":200}}"#).unwrap();
        let e = c.experiment().unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
    }
}
