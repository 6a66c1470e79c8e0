//! JSON and CSV formats.
//!
//! Matrices are row-major nested arrays. Every float is written with 17
//! significant digits so files round-trip bit-exactly and reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat, Vector};
use crate::model::{CostConfig, ModelError, SystemModel};
use crate::qnn::QnnModel;
use crate::sim::{CorrectionPolicy, SimError, Warmup};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
}

impl From<ModelError> for IoError {
    fn from(e: ModelError) -> Self {
        IoError::Invalid(e.to_string())
    }
}

impl From<SimError> for IoError {
    fn from(e: SimError) -> Self {
        IoError::Invalid(e.to_string())
    }
}

/// 17-significant-digit scientific notation.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        // serde_json already maps non-finite floats to null before this point
        write!(w, "{v:.16e}")
    }
}

/// Serializes with 17-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    let mut s = String::from_utf8(buf).expect("serde_json emits UTF-8");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.into(), source })?;
        }
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.into(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.into(), msg: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &to_json_string(value))
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn check_version(v: u32) -> Result<(), IoError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(IoError::Version(v))
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat, IoError> {
    linalg::from_rows(rows).ok_or_else(|| IoError::Invalid(format!("{what} is empty or ragged")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default = "default_version")]
    pub v: u32,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub sample_time: f64,
}

impl ModelFile {
    pub fn from_model(m: &SystemModel) -> Self {
        Self {
            v: SCHEMA_VERSION,
            a: linalg::to_rows(m.a()),
            b: linalg::to_rows(m.b()),
            c: linalg::to_rows(m.c()),
            sample_time: m.sample_time(),
        }
    }

    pub fn to_model(&self) -> Result<SystemModel, IoError> {
        check_version(self.v)?;
        Ok(SystemModel::new(
            matrix(&self.a, "A")?,
            matrix(&self.b, "B")?,
            matrix(&self.c, "C")?,
            self.sample_time,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFile {
    #[serde(default = "default_version")]
    pub v: u32,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl CostFile {
    pub fn from_cost(c: &CostConfig) -> Self {
        Self {
            v: SCHEMA_VERSION,
            q: linalg::to_rows(c.q()),
            r: linalg::to_rows(c.r()),
            gamma: c.gamma(),
        }
    }

    pub fn to_cost(&self) -> Result<CostConfig, IoError> {
        check_version(self.v)?;
        Ok(CostConfig::new(matrix(&self.q, "Q")?, matrix(&self.r, "R")?, self.gamma)?)
    }
}

/// Gain set describing a correction policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBody {
    Zero,
    Luenberger {
        #[serde(rename = "L")]
        l: Vec<Vec<f64>>,
    },
    MeasuredData {
        #[serde(rename = "F_w")]
        f_w: Vec<Vec<f64>>,
        #[serde(rename = "F_y")]
        f_y: Vec<Vec<f64>>,
        /// Warm-up output-injection gain; zero warm-up when absent.
        #[serde(rename = "warmup_L", default, skip_serializing_if = "Option::is_none")]
        warmup_l: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(default = "default_version")]
    pub v: u32,
    #[serde(flatten)]
    pub policy: PolicyBody,
}

/// Matrix rows that may have zero columns (`F_w` for a scalar system).
fn rows_or_empty(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_allow_empty(rows: &[Vec<f64>], what: &str) -> Result<Mat, IoError> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(IoError::Invalid(format!("{what} is empty or ragged")));
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl PolicyFile {
    pub fn from_policy(p: &CorrectionPolicy) -> Self {
        let policy = match p {
            CorrectionPolicy::Zero => PolicyBody::Zero,
            CorrectionPolicy::Luenberger { gain } => PolicyBody::Luenberger { l: linalg::to_rows(gain) },
            CorrectionPolicy::MeasuredData { f_w, f_y, warmup } => PolicyBody::MeasuredData {
                f_w: rows_or_empty(f_w),
                f_y: linalg::to_rows(f_y),
                warmup_l: match warmup {
                    Warmup::Zero => None,
                    Warmup::Luenberger { gain } => Some(linalg::to_rows(gain)),
                },
            },
        };
        Self { v: SCHEMA_VERSION, policy }
    }

    pub fn to_policy(&self) -> Result<CorrectionPolicy, IoError> {
        check_version(self.v)?;
        Ok(match &self.policy {
            PolicyBody::Zero => CorrectionPolicy::Zero,
            PolicyBody::Luenberger { l } => CorrectionPolicy::Luenberger { gain: matrix(l, "L")? },
            PolicyBody::MeasuredData { f_w, f_y, warmup_l } => {
                let warmup = match warmup_l {
                    None => Warmup::Zero,
                    Some(l) => Warmup::Luenberger { gain: matrix(l, "warmup_L")? },
                };
                CorrectionPolicy::measured_data(
                    matrix_allow_empty(f_w, "F_w")?,
                    matrix(f_y, "F_y")?,
                    warmup,
                )?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnnModelFile {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub activation: crate::qnn::ActivationCoeffs,
    pub beta: f64,
    pub objective: f64,
}

impl QnnModelFile {
    pub fn from_model(m: &QnnModel) -> Self {
        Self {
            h: linalg::to_rows(&m.h),
            activation: m.activation,
            beta: m.beta,
            objective: m.objective,
        }
    }
}

/// Dataset CSV: `x_0..x_{n-1},y` header, one sample per row.
pub fn dataset_to_csv(inputs: &[Vector], labels: &[f64]) -> String {
    let n = inputs.first().map_or(0, |x| x.len());
    let mut out: Vec<String> = (0..n).map(|i| format!("x_{i}")).collect();
    out.push("y".into());
    let mut s = out.join(",");
    s.push('\n');
    for (x, y) in inputs.iter().zip(labels) {
        let mut row: Vec<String> = x.iter().map(|v| fmt_num(*v)).collect();
        row.push(fmt_num(*y));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Parses a dataset CSV: every column but the last is an input.
pub fn dataset_from_csv(text: &str) -> Result<(Vec<Vector>, Vec<f64>), IoError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| IoError::Invalid("empty dataset".into()))?;
    let cols = header.split(',').count();
    if cols < 2 {
        return Err(IoError::Invalid("dataset needs at least one input and a label".into()));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| IoError::Invalid(format!("row {}: {e}", i + 1)))?;
        if vals.len() != cols {
            return Err(IoError::Invalid(format!(
                "row {} has {} fields, expected {cols}",
                i + 1,
                vals.len()
            )));
        }
        inputs.push(Vector::from_column_slice(&vals[..cols - 1]));
        labels.push(vals[cols - 1]);
    }
    Ok((inputs, labels))
}
