use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::lifting::{HorizonMode, ProblemData};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;

/// On-disk problem description. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
pub struct ProblemFile {
    pub schema_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub n: usize,
    pub m: usize,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn get_uint(obj: &Map<String, Value>, key: &str) -> Result<u64> {
    match obj.get(key) {
        None => Err(schema(key, "missing field")),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| schema(key, format!("expected a non-negative integer, found {v}"))),
    }
}

fn get_opt_string(obj: &Map<String, Value>, key: &str) -> Result<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(v) => Err(schema(key, format!("expected a string, found {v}"))),
    }
}

fn parse_matrix(v: &Value, path: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let arr = v.as_array().ok_or_else(|| schema(path, "expected an array of rows"))?;
    if arr.len() != rows {
        return Err(schema(path, format!("expected {rows} rows, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, row)| {
            let rpath = format!("{path}[{i}]");
            let row = row
                .as_array()
                .ok_or_else(|| schema(&rpath, "expected an array of numbers"))?;
            if row.len() != cols {
                return Err(schema(&rpath, format!("expected {cols} columns, found {}", row.len())));
            }
            row.iter()
                .enumerate()
                .map(|(j, x)| {
                    let x = x
                        .as_f64()
                        .ok_or_else(|| schema(format!("{rpath}[{j}]"), format!("expected a number, found {x}")))?;
                    if !x.is_finite() {
                        return Err(schema(format!("{rpath}[{j}]"), "value is not finite"));
                    }
                    Ok(x)
                })
                .collect()
        })
        .collect()
}

fn parse_sequence(
    obj: &Map<String, Value>,
    key: &str,
    count: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let v = obj.get(key).ok_or_else(|| schema(key, "missing field"))?;
    let arr = v
        .as_array()
        .ok_or_else(|| schema(key, "expected an array of matrices"))?;
    if arr.len() != count {
        return Err(schema(key, format!("expected {count} matrices, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(k, m)| parse_matrix(m, &format!("{key}[{k}]"), rows, cols))
        .collect()
}

impl ProblemFile {
    /// Checks the structure of a decoded JSON document.
    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v.as_object().ok_or_else(|| schema("$", "expected an object"))?;
        const KNOWN: [&str; 12] = [
            "schema_version",
            "name",
            "description",
            "n",
            "m",
            "mode",
            "period",
            "window",
            "A",
            "B",
            "Q",
            "R",
        ];
        if let Some(key) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(schema(key.as_str(), "unknown field"));
        }
        let schema_version = get_uint(obj, "schema_version")?;
        if schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {schema_version}, expected {SCHEMA_VERSION}"),
            ));
        }
        let n = get_uint(obj, "n")? as usize;
        let m = get_uint(obj, "m")? as usize;
        if n == 0 {
            return Err(schema("n", "must be at least 1"));
        }
        if m == 0 {
            return Err(schema("m", "must be at least 1"));
        }
        let mode = match obj.get("mode") {
            Some(Value::String(s)) if s == "periodic" || s == "window" => s.clone(),
            Some(v) => {
                return Err(schema(
                    "mode",
                    format!("expected \"periodic\" or \"window\", found {v}"),
                ))
            }
            None => return Err(schema("mode", "missing field")),
        };
        let (period, window) = if mode == "periodic" {
            if obj.contains_key("window") {
                return Err(schema("window", "not allowed in periodic mode"));
            }
            (Some(get_uint(obj, "period")? as usize), None)
        } else {
            if obj.contains_key("period") {
                return Err(schema("period", "not allowed in window mode"));
            }
            (None, Some(get_uint(obj, "window")? as usize))
        };
        let count = period.or(window).unwrap_or(0);
        if count == 0 {
            return Err(schema(
                if period.is_some() { "period" } else { "window" },
                "must be at least 1",
            ));
        }
        Ok(ProblemFile {
            schema_version,
            name: get_opt_string(obj, "name")?,
            description: get_opt_string(obj, "description")?,
            n,
            m,
            mode,
            period,
            window,
            a: parse_sequence(obj, "A", count, n, n)?,
            b: parse_sequence(obj, "B", count, n, m)?,
            q: parse_sequence(obj, "Q", count, n, n)?,
            r: parse_sequence(obj, "R", count, m, m)?,
        })
    }

    pub fn from_data(pd: &ProblemData) -> Self {
        let seq = |ms: &[DMatrix<f64>]| ms.iter().map(rows_of).collect();
        let (mode, period, window) = match pd.mode() {
            HorizonMode::Periodic { period } => ("periodic", Some(period), None),
            HorizonMode::Window { len } => ("window", None, Some(len)),
        };
        ProblemFile {
            schema_version: SCHEMA_VERSION,
            name: None,
            description: None,
            n: pd.n(),
            m: pd.m(),
            mode: mode.to_string(),
            period,
            window,
            a: seq(pd.a_seq()),
            b: seq(pd.b_seq()),
            q: seq(pd.q_seq()),
            r: seq(pd.r_seq()),
        }
    }

    pub fn horizon_mode(&self) -> Result<HorizonMode> {
        match (self.mode.as_str(), self.period, self.window) {
            ("periodic", Some(period), None) => Ok(HorizonMode::Periodic { period }),
            ("window", None, Some(len)) => Ok(HorizonMode::Window { len }),
            _ => Err(schema("mode", "mode and period/window fields disagree")),
        }
    }

    /// Validated problem data.
    pub fn to_data(&self) -> Result<ProblemData> {
        let seq = |ms: &[Vec<Vec<f64>>], rows: usize, cols: usize| -> Vec<DMatrix<f64>> {
            ms.iter()
                .map(|m| DMatrix::from_row_iterator(rows, cols, m.iter().flatten().copied()))
                .collect()
        };
        let (n, m) = (self.n, self.m);
        ProblemData::new(
            self.horizon_mode()?,
            seq(&self.a, n, n),
            seq(&self.b, n, m),
            seq(&self.q, n, n),
            seq(&self.r, m, m),
        )
    }

    /// Canonical text: pretty-printed, every number with 17 significant digits.
    pub fn to_canonical_json(&self) -> Result<String> {
        to_canonical_json(self)
    }
}

impl FromStr for ProblemFile {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
        Self::from_value(&v)
    }
}

/// Pretty formatter that writes every float with 17 significant digits so
/// that parsing the text gives back the same doubles.
pub struct CanonicalFormatter<'a>(PrettyFormatter<'a>);

impl Default for CanonicalFormatter<'_> {
    fn default() -> Self {
        CanonicalFormatter(PrettyFormatter::new())
    }
}

impl Formatter for CanonicalFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes `value` with [`CanonicalFormatter`].
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn parse_problem(path: &Path) -> Result<ProblemData> {
    parse_problem_str(&fs::read_to_string(path)?)
}

pub fn parse_problem_str(text: &str) -> Result<ProblemData> {
    text.parse::<ProblemFile>()?.to_data()
}

pub fn write_problem(path: &Path, file: &ProblemFile) -> Result<()> {
    fs::write(path, file.to_canonical_json()?)?;
    Ok(())
}
