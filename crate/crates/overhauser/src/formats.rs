//! On-disk formats.
//!
//! Tables are column-oriented. CSV cells use `{:.16e}` (17 significant
//! digits) so every `f64` survives a write/read cycle bit for bit; JSON uses
//! shortest round-trip formatting. Missing values are `NaN` in CSV and `null`
//! in JSON.
//!
//! The binary ensemble layout is little-endian throughout:
//! `m: u64, n_times: u64, seed: u64, times: [f64; n_times]`, then
//! `samples: [f64; n_times * m]` time-major.

use std::fs;
use std::path::{Path, PathBuf};

use overhauser_core::grid::{Distribution, Grid1D};
use overhauser_core::ramsey::FidCurve;
use overhauser_core::sde::EnsembleResult;
use overhauser_core::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Named columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    columns: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = (S, Vec<f64>)>) -> Self {
        let (columns, values) = columns.into_iter().map(|(n, v)| (n.into(), v)).unzip();
        let t = Table { columns, values };
        debug_assert!(t.values.windows(2).all(|w| w[0].len() == w[1].len()));
        t
    }

    pub fn rows(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }

    fn require(&self, name: &str, path: &Path) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| CliError::format(path, format!("missing column `{name}`")))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e| CliError::Csv {
            path: PathBuf::from("<memory>"),
            source: e,
        };
        w.write_record(&self.columns).map_err(wrap)?;
        for r in 0..self.rows() {
            w.write_record(self.values.iter().map(|c| format!("{:.16e}", c[r])))
                .map_err(wrap)?;
        }
        w.into_inner().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let t = JsonTable {
            columns: self.columns.clone(),
            values: self
                .values
                .iter()
                .map(|c| c.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
        };
        let mut out = serde_json::to_vec_pretty(&t).expect("table serializes");
        out.push(b'\n');
        out
    }

    pub fn encode(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => Ok(self.to_json()),
        }
    }

    /// Reads CSV or JSON by file extension.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let t: JsonTable = serde_json::from_slice(&bytes).map_err(|e| CliError::Json {
                path: path.into(),
                source: e,
            })?;
            if t.columns.len() != t.values.len()
                || t.values.windows(2).any(|w| w[0].len() != w[1].len())
            {
                return Err(CliError::format(path, "ragged table"));
            }
            let values = t
                .values
                .into_iter()
                .map(|c| c.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect();
            return Ok(Table {
                columns: t.columns,
                values,
            });
        }
        let csv_err = |e| CliError::Csv {
            path: path.into(),
            source: e,
        };
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let columns: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut values = vec![Vec::new(); columns.len()];
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            for (col, cell) in values.iter_mut().zip(rec.iter()) {
                let v = cell
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::format(path, format!("`{cell}`: {e}")))?;
                col.push(v);
            }
        }
        Ok(Table { columns, values })
    }
}

pub fn distribution_table(d: &Distribution) -> Table {
    Table::new([
        ("delta_n_mhz", d.grid().centers().collect()),
        ("density_per_mhz", d.density().to_vec()),
    ])
}

/// Reads a density written by [`distribution_table`] and checks that its
/// cell centres match `grid`.
pub fn read_distribution(path: &Path, grid: Grid1D) -> Result<Distribution> {
    let t = Table::read(path)?;
    let x = t.require("delta_n_mhz", path)?;
    let p = t.require("density_per_mhz", path)?;
    let h = grid.h();
    let same = x.len() == grid.n
        && x.iter()
            .zip(grid.centers())
            .all(|(a, b)| (a - b).abs() <= 1e-9 * h);
    if !same {
        return Err(overhauser_core::Error::MismatchedGrids.into());
    }
    Ok(Distribution::from_weights(grid, p.to_vec())?)
}

pub fn fid_table(f: &FidCurve) -> Table {
    Table::new([
        ("tau_ns", f.taus.clone()),
        ("re", f.coherence.iter().map(|c| c.re).collect()),
        ("im", f.coherence.iter().map(|c| c.im).collect()),
        ("visibility", f.visibility.clone()),
    ])
}

/// Complex FID when `re`/`im` are present, otherwise phase-free from
/// `visibility`.
pub fn read_fid(path: &Path) -> Result<FidCurve> {
    let t = Table::read(path)?;
    let taus = t.require("tau_ns", path)?.to_vec();
    let fid = match (t.column("re"), t.column("im")) {
        (Some(re), Some(im)) => FidCurve::new(
            taus,
            re.iter()
                .zip(im)
                .map(|(a, b)| Complex::new(*a, *b))
                .collect(),
        ),
        _ => FidCurve::from_visibility(taus, t.require("visibility", path)?),
    };
    Ok(fid?)
}

/// First column against `visibility` if present, else the second column.
pub fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = Table::read(path)?;
    if t.columns.len() < 2 {
        return Err(CliError::format(path, "need at least two columns"));
    }
    let y = t.column("visibility").unwrap_or(&t.values[1]);
    Ok((t.values[0].clone(), y.to_vec()))
}

pub fn ensemble_to_bytes(e: &EnsembleResult) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * e.times.len() * (e.m + 1));
    for h in [e.m as u64, e.times.len() as u64, e.seed] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for v in e.times.iter().chain(e.samples.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn ensemble_from_bytes(bytes: &[u8]) -> std::result::Result<EnsembleResult, String> {
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8 bytes") };
    if bytes.len() < 24 {
        return Err("truncated header".into());
    }
    let m = u64::from_le_bytes(word(0)) as usize;
    let nt = u64::from_le_bytes(word(1)) as usize;
    let seed = u64::from_le_bytes(word(2));
    let words = nt
        .checked_mul(m)
        .and_then(|s| s.checked_add(nt + 3))
        .ok_or("size overflow")?;
    if bytes.len() != 8 * words {
        return Err(format!(
            "expected {} bytes, found {}",
            8 * words,
            bytes.len()
        ));
    }
    let f = |i: usize| f64::from_le_bytes(word(i));
    let times = (0..nt).map(|k| f(3 + k)).collect();
    let samples = (0..nt)
        .map(|k| (0..m).map(|j| f(3 + nt + k * m + j)).collect())
        .collect();
    Ok(EnsembleResult {
        times,
        samples,
        seed,
        m,
    })
}

pub fn read_ensemble(path: &Path) -> Result<EnsembleResult> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    ensemble_from_bytes(&bytes).map_err(|m| CliError::format(path, m))
}

/// Per-trajectory positions, one column per output time.
pub fn ensemble_table(e: &EnsembleResult) -> Table {
    let mut cols = vec![(
        "trajectory".to_owned(),
        (0..e.m).map(|j| j as f64).collect(),
    )];
    cols.extend(
        e.times
            .iter()
            .zip(&e.samples)
            .map(|(t, s)| (format!("delta_n_mhz_at_{t}_ms"), s.clone())),
    );
    Table::new(cols)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_layout_header() {
        let e = EnsembleResult {
            times: vec![0.5, 2.0],
            samples: vec![vec![1.0, -2.0, 3.5], vec![0.25, 0.0, -1.0]],
            seed: 42,
            m: 3,
        };
        let b = ensemble_to_bytes(&e);
        assert_eq!(b.len(), 8 * (3 + 2 + 6));
        assert_eq!(&b[..8], &3u64.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &42u64.to_le_bytes());
        assert_eq!(&b[24..32], &0.5f64.to_le_bytes());
        assert_eq!(ensemble_from_bytes(&b).unwrap(), e);
        assert!(ensemble_from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn missing_values_survive_both_formats() {
        let t = Table::new([("x", vec![1.0, 2.0]), ("w", vec![f64::NAN, 3.0])]);
        let dir = tempfile::tempdir().unwrap();
        for f in [Format::Csv, Format::Json] {
            let p = dir.path().join(format!("t.{}", f.extension()));
            fs::write(&p, t.encode(f).unwrap()).unwrap();
            let back = Table::read(&p).unwrap();
            assert_eq!(back.columns, t.columns);
            assert!(back.values[1][0].is_nan());
            assert_eq!(back.values[1][1], 3.0);
        }
    }
}
