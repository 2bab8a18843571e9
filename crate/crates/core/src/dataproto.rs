//! Biaxial loading protocols, synthetic datasets, CSV interchange and splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{invariants, DeformationGradient, StructuralTensors};
use crate::response::BiaxialModel;

pub const DEFAULT_LAMBDA_MAX: f64 = 1.15;
pub const DEFAULT_POINTS: usize = 100;

pub const CSV_HEADER: [&str; 5] = ["protocol", "lambda_x", "lambda_y", "sigma_xx", "sigma_yy"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    OffX,
    OffY,
    Equibiaxial,
    StripX,
    StripY,
    Custom,
}

impl Protocol {
    /// The five standard rig protocols, in dataset order.
    pub const STANDARD: [Protocol; 5] = [
        Protocol::OffX,
        Protocol::OffY,
        Protocol::Equibiaxial,
        Protocol::StripX,
        Protocol::StripY,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Protocol::OffX => "offx",
            Protocol::OffY => "offy",
            Protocol::Equibiaxial => "equibiaxial",
            Protocol::StripX => "stripx",
            Protocol::StripY => "stripy",
            Protocol::Custom => "custom",
        }
    }

    /// `(λxx, λyy)` for path parameter `λ`.
    pub fn stretches(self, lambda: f64) -> Option<(f64, f64)> {
        match self {
            Protocol::OffX => Some((lambda.sqrt(), lambda)),
            Protocol::OffY => Some((lambda, lambda.sqrt())),
            Protocol::Equibiaxial => Some((lambda, lambda)),
            Protocol::StripX => Some((lambda, 1.0)),
            Protocol::StripY => Some((1.0, lambda)),
            Protocol::Custom => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "offx" => Ok(Protocol::OffX),
            "offy" => Ok(Protocol::OffY),
            "equibiaxial" => Ok(Protocol::Equibiaxial),
            "stripx" => Ok(Protocol::StripX),
            "stripy" => Ok(Protocol::StripY),
            "custom" => Ok(Protocol::Custom),
            other => Err(format!("unknown protocol '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingProtocol {
    pub kind: Protocol,
    pub lambda_max: f64,
    pub n_points: usize,
}

impl LoadingProtocol {
    pub fn new(kind: Protocol, lambda_max: f64, n_points: usize) -> Self {
        Self {
            kind,
            lambda_max,
            n_points,
        }
    }

    /// The five standard protocols sharing one range.
    pub fn standard_set(lambda_max: f64, n_points: usize) -> Vec<Self> {
        Protocol::STANDARD
            .iter()
            .map(|&kind| Self::new(kind, lambda_max, n_points))
            .collect()
    }
}

/// Stretch pairs along a protocol, `λ` evenly spaced over `[1, λmax]`.
pub fn protocol_path(p: &LoadingProtocol) -> Result<Vec<(f64, f64)>> {
    if !(p.lambda_max > 1.0) || !p.lambda_max.is_finite() {
        return Err(Error::domain(format!(
            "lambda_max must exceed 1, got {}",
            p.lambda_max
        )));
    }
    if p.n_points < 2 {
        return Err(Error::Config(format!(
            "a loading path needs at least 2 points, got {}",
            p.n_points
        )));
    }
    if p.kind == Protocol::Custom {
        return Err(Error::Config(
            "custom paths come from data files, not from a generator".into(),
        ));
    }
    let last = (p.n_points - 1) as f64;
    Ok((0..p.n_points)
        .map(|k| {
            let lambda = if k + 1 == p.n_points {
                p.lambda_max
            } else {
                1.0 + (p.lambda_max - 1.0) * k as f64 / last
            };
            p.kind.stretches(lambda).expect("standard protocol")
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataRecord {
    pub protocol: Protocol,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub sigma_xx: f64,
    pub sigma_yy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<DataRecord>,
    /// Oracle identifier or file path the records came from.
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Protocols present, in order of first appearance.
    pub fn protocols(&self) -> Vec<Protocol> {
        let mut out: Vec<Protocol> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.protocol) {
                out.push(r.protocol);
            }
        }
        out
    }

    pub fn peak_stress(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.sigma_xx.abs().max(r.sigma_yy.abs()))
            .fold(0.0, f64::max)
    }

    pub fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Config(format!("{what} dataset is empty")))
        } else {
            Ok(())
        }
    }
}

/// Evaluates the model at every path point. Records keep protocol and path order.
pub fn generate_synthetic<M: BiaxialModel + ?Sized>(
    model: &M,
    protocols: &[LoadingProtocol],
    source: &str,
) -> Result<Dataset> {
    let mut points = Vec::new();
    for p in protocols {
        for (lx, ly) in protocol_path(p)? {
            points.push((p.kind, lx, ly));
        }
    }
    let records = points
        .par_iter()
        .map(|&(protocol, lx, ly)| {
            let (sxx, syy) = model.biaxial_stress(lx, ly).map_err(|e| {
                e.at(format!(
                    "{protocol} path point (lambda_x = {lx}, lambda_y = {ly})"
                ))
            })?;
            Ok(DataRecord {
                protocol,
                lambda_x: lx,
                lambda_y: ly,
                sigma_xx: sxx,
                sigma_yy: syy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        records,
        source: source.to_string(),
    })
}

/// Records whose invariants fall below the incompressible lower bound `I1, I2 ≥ 3`.
pub fn feasibility_violations(data: &Dataset, dirs: &StructuralTensors) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    for (k, r) in data.records.iter().enumerate() {
        let f = DeformationGradient::plane_stress(r.lambda_x, r.lambda_y)?;
        let inv = invariants(&f.right_cauchy_green()?, dirs);
        if inv.i1 < 3.0 - 1e-12 || inv.i2 < 3.0 - 1e-12 {
            bad.push(k);
        }
    }
    Ok(bad)
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let to_err = |e: csv::Error| Error::Config(format!("failed to write CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in &data.records {
        w.write_record([
            r.protocol.tag().to_string(),
            r.lambda_x.to_string(),
            r.lambda_y.to_string(),
            r.sigma_xx.to_string(),
            r.sigma_yy.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("failed to write CSV: {e}")))?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file))
}

pub fn read_csv<R: std::io::Read>(input: R, source: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(format!("{source}: line 1"), e.to_string()))?
        .clone();
    let mut columns = [0usize; 5];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::parse(
                format!("{source}: line 1"),
                format!("missing column '{name}'"),
            )
        })?;
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(format!("{source}: line {line}"), e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let here = || format!("{source}: line {line}");
        let cell = |c: usize| row.get(columns[c]).unwrap_or("");
        let protocol: Protocol = cell(0).parse().map_err(|e| Error::parse(here(), e))?;
        let mut values = [0.0; 4];
        for (k, v) in values.iter_mut().enumerate() {
            let text = cell(k + 1);
            *v = text.parse::<f64>().map_err(|_| {
                Error::parse(
                    here(),
                    format!("column '{}': '{text}' is not a number", CSV_HEADER[k + 1]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    here(),
                    format!("column '{}' must be finite", CSV_HEADER[k + 1]),
                ));
            }
        }
        for (k, name) in [(0, "lambda_x"), (1, "lambda_y")] {
            if values[k] <= 0.0 {
                return Err(Error::Domain(format!(
                    "{}: {name} = {} must be positive",
                    here(),
                    values[k]
                )));
            }
        }
        records.push(DataRecord {
            protocol,
            lambda_x: values[0],
            lambda_y: values[1],
            sigma_xx: values[2],
            sigma_yy: values[3],
        });
    }
    Ok(Dataset {
        records,
        source: source.to_string(),
    })
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), &path.display().to_string())
}

/// Stress errors of a model against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub n_records: usize,
    /// Mean over records of `(Δσxx² + Δσyy²)/2` (MPa²).
    pub mse: f64,
    /// Mean absolute error over all stress components (MPa).
    pub mae: f64,
    pub per_protocol_mae: BTreeMap<Protocol, f64>,
}

/// Per-record `(Δσxx, Δσyy)`, in dataset order.
pub fn residuals<M: BiaxialModel + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    data.records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let (sxx, syy) = model.biaxial_stress(r.lambda_x, r.lambda_y).map_err(|e| {
                e.at(format!(
                    "record {k} ({} at {}, {})",
                    r.protocol, r.lambda_x, r.lambda_y
                ))
            })?;
            Ok((sxx - r.sigma_xx, syy - r.sigma_yy))
        })
        .collect()
}

pub fn summarize_residuals(data: &Dataset, res: &[(f64, f64)]) -> ErrorSummary {
    let n = res.len();
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut groups: BTreeMap<Protocol, (f64, usize)> = BTreeMap::new();
    for (r, &(dx, dy)) in data.records.iter().zip(res) {
        sq += 0.5 * (dx * dx + dy * dy);
        let a = dx.abs() + dy.abs();
        abs += a;
        let g = groups.entry(r.protocol).or_default();
        g.0 += a;
        g.1 += 2;
    }
    let denom = n.max(1) as f64;
    ErrorSummary {
        n_records: n,
        mse: sq / denom,
        mae: abs / (2.0 * denom),
        per_protocol_mae: groups
            .into_iter()
            .map(|(p, (s, c))| (p, s / c as f64))
            .collect(),
    }
}

pub fn stress_errors<M: BiaxialModel + ?Sized>(model: &M, data: &Dataset) -> Result<ErrorSummary> {
    let res = residuals(model, data)?;
    Ok(summarize_residuals(data, &res))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    ByProtocol(Vec<Protocol>),
    ByPathFraction(f64),
}

impl FromStr for SplitRule {
    type Err = Error;

    /// `protocol:equibiaxial,stripx` or `fraction:0.8`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "split '{s}' must be protocol:<list> or fraction:<f>"
            ))
        })?;
        match kind.trim() {
            "protocol" => {
                let list = rest
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| t.parse::<Protocol>().map_err(Error::Config))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SplitRule::ByProtocol(list))
            }
            "fraction" => rest
                .trim()
                .parse::<f64>()
                .map(SplitRule::ByPathFraction)
                .map_err(|_| Error::Config(format!("fraction '{rest}' is not a number"))),
            other => Err(Error::Config(format!("unknown split kind '{other}'"))),
        }
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitRule::ByProtocol(list) => {
                let tags: Vec<&str> = list.iter().map(|p| p.tag()).collect();
                write!(f, "protocol:{}", tags.join(","))
            }
            SplitRule::ByPathFraction(x) => write!(f, "fraction:{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub rule: SplitRule,
}

/// Number of leading path points kept for training out of `n`.
fn kept(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn split(data: &Dataset, rule: &SplitRule) -> Result<Split> {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    match rule {
        SplitRule::ByProtocol(list) => {
            let present = data.protocols();
            if let Some(missing) = list.iter().find(|p| !present.contains(p)) {
                return Err(Error::Config(format!(
                    "training protocol {missing} does not occur in the dataset"
                )));
            }
            for r in &data.records {
                if list.contains(&r.protocol) {
                    train.push(*r);
                } else {
                    validation.push(*r);
                }
            }
        }
        SplitRule::ByPathFraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::Config(format!("fraction {f} must lie in [0, 1]")));
            }
            let mut totals: BTreeMap<Protocol, usize> = BTreeMap::new();
            for r in &data.records {
                *totals.entry(r.protocol).or_default() += 1;
            }
            let mut seen: BTreeMap<Protocol, usize> = BTreeMap::new();
            for r in &data.records {
                let k = seen.entry(r.protocol).or_default();
                if *k < kept(*f, totals[&r.protocol]) {
                    train.push(*r);
                } else {
                    validation.push(*r);
                }
                *k += 1;
            }
        }
    }
    if train.is_empty() || validation.is_empty() {
        let side = if train.is_empty() {
            "training"
        } else {
            "validation"
        };
        return Err(Error::Config(format!(
            "split {rule} leaves the {side} side empty"
        )));
    }
    Ok(Split {
        train: Dataset {
            records: train,
            source: data.source.clone(),
        },
        validation: Dataset {
            records: validation,
            source: data.source.clone(),
        },
        rule: rule.clone(),
    })
}
