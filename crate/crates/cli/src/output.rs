//! Result files: 17-significant-digit numbers in both JSON and CSV.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use crate::CliError;

/// `{:.16e}`, with the IEEE special values spelled out for CSV.
pub fn number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON whose floats are written through [`number`].
struct Precise(PrettyFormatter<'static>);

impl Formatter for Precise {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(number(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("Value serialization is infallible");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Finite values as JSON numbers, others as `null`.
pub fn real(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

/// Row-major nested arrays.
pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array(m.row(i).iter().map(|&v| real(v)).collect())).collect())
}

pub fn reals(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| real(x)).collect())
}

/// Where results go, plus the provenance stamped into every JSON file.
pub struct Sink<'a> {
    pub dir: &'a Path,
    pub scenario_hash: &'a str,
}

impl Sink<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::numeric(format!("cannot write {}: {e}", path.display())))
    }

    /// Writes `fields` (a JSON object) with `scenario_sha256` and `version`
    /// added.
    pub fn json(&self, name: &str, mut fields: Value) -> Result<(), CliError> {
        let obj = fields.as_object_mut().expect("result files are JSON objects");
        obj.insert("scenario_sha256".into(), json!(self.scenario_hash));
        obj.insert("version".into(), json!(robustkf::VERSION));
        self.write(name, &to_json_string(&fields))
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, &table.render())
    }
}

/// A CSV table. Empty cells stand for values undefined at that row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Column names `{prefix}_{i}{j}` in column-major (`vec`) order, 1-based.
pub fn vec_header(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(rows * cols);
    for j in 1..=cols {
        for i in 1..=rows {
            names.push(format!("{prefix}_{i}{j}"));
        }
    }
    names
}

/// Entries in column-major order.
pub fn vec_cells(m: &DMatrix<f64>) -> Vec<String> {
    m.iter().map(|&v| number(v)).collect()
}
