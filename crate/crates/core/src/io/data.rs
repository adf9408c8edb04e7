//! CSV ingestion with per-column transforms and `[0, 1]` rescaling.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::NonNegMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Endogenous,
    Exogenous,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    Log1p,
    /// `max - value`, applied before rescaling.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub transform: Transform,
    /// Multiply by -1 before rescaling, so that larger means worse.
    #[serde(default)]
    pub protective: bool,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            transform: Transform::None,
            protective: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnOptions {
    role: Role,
    #[serde(default)]
    transform: Transform,
    #[serde(default)]
    protective: bool,
}

/// Parses a column spec written as one TOML table per column:
///
/// ```toml
/// [age]
/// role = "exogenous"
/// transform = "reverse"
///
/// [x1]
/// role = "endogenous"
/// ```
///
/// The returned order is alphabetical; [`load_dataset`] orders variables by
/// their position in the CSV header instead.
pub fn parse_column_spec(text: &str) -> Result<Vec<ColumnSpec>> {
    let table: BTreeMap<String, ColumnOptions> =
        toml::from_str(text).map_err(|e| Error::ColumnSpec(e.to_string()))?;
    let specs: Vec<ColumnSpec> = table
        .into_iter()
        .map(|(name, o)| ColumnSpec {
            name,
            role: o.role,
            transform: o.transform,
            protective: o.protective,
        })
        .collect();
    check_roles(&specs)?;
    Ok(specs)
}

pub fn load_column_spec(path: impl AsRef<Path>) -> Result<Vec<ColumnSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ColumnSpec(format!("{}: {e}", path.display())))?;
    parse_column_spec(&text).map_err(|e| match e {
        Error::ColumnSpec(m) => Error::ColumnSpec(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn check_roles(specs: &[ColumnSpec]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::ColumnSpec(format!("column '{}' listed twice", s.name)));
        }
    }
    for role in [Role::Endogenous, Role::Exogenous] {
        if !specs.iter().any(|s| s.role == role) {
            return Err(Error::ColumnSpec(format!("at least one {role:?} column is required").to_lowercase()));
        }
    }
    Ok(())
}

/// A dataset together with the names of its variables, in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub data: Dataset,
    pub endogenous: Vec<String>,
    pub exogenous: Vec<String>,
}

/// Transform, then sign flip, then min-max rescaling of one variable.
/// Errors carry a short reason; the caller adds the location.
pub fn preprocess_column(values: &[f64], transform: Transform, protective: bool) -> std::result::Result<Vec<f64>, String> {
    let mut v: Vec<f64> = match transform {
        Transform::None => values.to_vec(),
        Transform::Log1p => values
            .iter()
            .map(|&x| {
                if x <= -1.0 {
                    Err(format!("log1p undefined for value {x}"))
                } else {
                    Ok(x.ln_1p())
                }
            })
            .collect::<std::result::Result<_, _>>()?,
        Transform::Reverse => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            values.iter().map(|&x| max - x).collect()
        }
    };
    if protective {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return Err("constant variable (zero range) cannot be rescaled".into());
    }
    Ok(v.iter().map(|&x| ((x - lo) / range).clamp(0.0, 1.0)).collect())
}

/// Reads a CSV file with a header row and builds the endogenous and
/// exogenous blocks (variables as rows). Columns not named in `specs` are
/// ignored.
pub fn load_dataset(path: impl AsRef<Path>, specs: &[ColumnSpec]) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Data {
        path: path.display().to_string(),
        row: None,
        column: String::new(),
        reason: e.to_string(),
    })?;
    read_dataset(file, &path.display().to_string(), specs)
}

/// As [`load_dataset`], reading from any source; `source` names it in errors.
pub fn read_dataset<R: std::io::Read>(reader: R, source: &str, specs: &[ColumnSpec]) -> Result<LabeledDataset> {
    check_roles(specs)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let err = |row: Option<usize>, column: &str, reason: String| Error::Data {
        path: source.to_string(),
        row,
        column: column.to_string(),
        reason,
    };

    // (header position, spec) for every used column, in header order.
    let mut used: Vec<(usize, &ColumnSpec)> = Vec::new();
    for s in specs {
        let pos = header
            .iter()
            .position(|h| h == &s.name)
            .ok_or_else(|| Error::ColumnSpec(format!("column '{}' not found in {source}", s.name)))?;
        if s.role != Role::Ignore {
            used.push((pos, s));
        }
    }
    used.sort_by_key(|(pos, _)| *pos);

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); used.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (slot, (pos, s)) in used.iter().enumerate() {
            let cell = record.get(*pos).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(err(Some(row), &s.name, "missing value".into()));
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| err(Some(row), &s.name, format!("non-numeric value '{cell}'")))?;
            if !value.is_finite() {
                return Err(err(Some(row), &s.name, format!("non-finite value '{cell}'")));
            }
            columns[slot].push(value);
        }
    }

    let n = columns.first().map_or(0, Vec::len);
    let mut endo = Vec::new();
    let mut exo = Vec::new();
    for ((_, s), values) in used.iter().zip(&columns) {
        let scaled = preprocess_column(values, s.transform, s.protective).map_err(|m| err(None, &s.name, m))?;
        match s.role {
            Role::Endogenous => endo.push((s.name.clone(), scaled)),
            Role::Exogenous => exo.push((s.name.clone(), scaled)),
            Role::Ignore => unreachable!(),
        }
    }
    let block = |vars: &[(String, Vec<f64>)]| NonNegMatrix::new(DMatrix::from_fn(vars.len(), n, |i, j| vars[i].1[j]));
    let data = Dataset::new(block(&endo)?, block(&exo)?)?;
    Ok(LabeledDataset {
        data,
        endogenous: endo.into_iter().map(|(n, _)| n).collect(),
        exogenous: exo.into_iter().map(|(n, _)| n).collect(),
    })
}

/// Writes a dataset as CSV, one column per variable (endogenous first),
/// together with the matching column spec. Values use shortest round-trip
/// formatting.
pub fn dataset_to_csv(data: &LabeledDataset) -> Result<(String, String)> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = data.endogenous.iter().chain(&data.exogenous).map(String::as_str).collect();
    wtr.write_record(&header)?;
    for j in 0..data.data.n() {
        let row: Vec<String> = (0..data.data.p1())
            .map(|i| data.data.y1()[(i, j)].to_string())
            .chain((0..data.data.p2()).map(|i| data.data.y2()[(i, j)].to_string()))
            .collect();
        wtr.write_record(&row)?;
    }
    let csv = String::from_utf8(wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    let mut spec = String::new();
    for (names, role) in [(&data.endogenous, "endogenous"), (&data.exogenous, "exogenous")] {
        for n in names {
            spec.push_str(&format!("[{}]\nrole = \"{role}\"\n\n", toml_key(n)));
        }
    }
    Ok((csv, spec))
}

fn toml_key(name: &str) -> String {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('\\', "\\\\").replace('"', "\\\""))
    }
}
