//! Table and report rendering. CSV files start with `#` metadata lines;
//! JSON files carry the same metadata under `"metadata"`.

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::config::{Format, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(i64::from(x))
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Text(t) => s.serialize_str(t),
            Cell::Num(x) if x.is_finite() => s.serialize_f64(*x),
            Cell::Num(_) => s.serialize_none(),
            Cell::Int(i) => s.serialize_i64(*i),
        }
    }
}

/// Shortest round-trip decimal, in exponent form for very large or small
/// magnitudes.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub quadrature: Vec<String>,
}

impl Metadata {
    pub fn new(config: &RunConfig, quadrature: Vec<String>) -> Self {
        // The output location is not part of the computation.
        let mut echo = config.clone();
        echo.out = None;
        Self {
            tool: "phiclosure",
            version: VERSION,
            command: config.command().name(),
            config: serde_json::to_value(&echo).expect("config serializes"),
            quadrature,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, meta: &Metadata, format: Format) -> String {
        match format {
            Format::Csv => self.render_csv(meta),
            Format::Json => render_json(meta, &TableBody(self)),
        }
    }

    fn render_csv(&self, meta: &Metadata) -> String {
        let mut out = String::new();
        out += &format!("# tool: {} {}\n", meta.tool, meta.version);
        out += &format!("# command: {}\n", meta.command);
        out += &format!("# config: {}\n", meta.config);
        for q in &meta.quadrature {
            out += &format!("# quadrature: {q}\n");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Text(t) => t.clone(),
                Cell::Num(x) => format_number(*x),
                Cell::Int(i) => i.to_string(),
            }))
            .expect("in-memory write");
        }
        out + &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }
}

struct TableBody<'a>(&'a Table);

impl Serialize for TableBody<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        m.serialize_entry("columns", &self.0.columns)?;
        m.serialize_entry("rows", &self.0.rows)?;
        m.end()
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    metadata: &'a Metadata,
    #[serde(flatten)]
    body: &'a T,
}

/// `{"metadata": ..., <body fields>}`, pretty-printed with a final newline.
pub fn render_json<T: Serialize>(meta: &Metadata, body: &T) -> String {
    serde_json::to_string_pretty(&Document { metadata: meta, body }).expect("report serializes") + "\n"
}

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Replaces characters outside `[A-Za-z0-9._-]` so a model label can be a
/// file name.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect::<String>()
        .trim_end_matches('_')
        .to_string()
}

pub fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}
