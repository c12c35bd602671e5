//! CSV and JSON renderings of a command report.

use serde::Serialize;

use crate::config::{Format, RunConfig};

pub const TOOL: &str = "bellsim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_owned())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Empty, Into::into)
    }
}

pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self {
            name,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Command results that know their tabular layout.
pub trait Results: Serialize {
    fn tables(&self) -> Vec<Table>;
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    warnings: &'a [String],
    config: &'a RunConfig,
    results: &'a R,
}

/// Six significant digits, plain decimal for moderate magnitudes and exponent form
/// otherwise, trailing zeros dropped.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mant));
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Num(x) => sig6(*x),
        Cell::Int(n) => n.to_string(),
        Cell::Text(s) => s.clone(),
        Cell::Bool(b) => b.to_string(),
        Cell::Empty => String::new(),
    }
}

pub fn render<R: Results>(
    command: &str,
    config: &RunConfig,
    warnings: &[String],
    results: &R,
    format: Format,
) -> String {
    match format {
        Format::Json => {
            let report = Report {
                tool: TOOL,
                version: VERSION,
                command,
                seed: config.seed,
                warnings,
                config,
                results,
            };
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut out = String::new();
            out += &format!("# tool: {TOOL} {VERSION}\n");
            out += &format!("# command: {command}\n");
            out += &format!("# seed: {}\n", config.seed);
            out += &format!(
                "# config: {}\n",
                serde_json::to_string(config).expect("config serializes")
            );
            for w in warnings {
                out += &format!("# warning: {w}\n");
            }
            for table in results.tables() {
                out += &format!("\n# table: {}\n", table.name);
                out += &table.header.join(",");
                out.push('\n');
                for row in &table.rows {
                    let cells: Vec<String> = row.iter().map(cell_text).collect();
                    out += &cells.join(",");
                    out.push('\n');
                }
            }
            out
        }
    }
}
