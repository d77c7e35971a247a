//! Tabular output in CSV or JSON Lines with a fixed column order.
//!
//! CSV floats are written with 17 significant digits in scientific notation
//! (locale independent); JSONL uses JSON numbers, which round-trip exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

use crate::config::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, Into::into),
            Cell::Int(n) => (*n).into(),
            Cell::Bool(b) => (*b).into(),
            Cell::Text(s) => s.as_str().into(),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

/// Column names plus rows in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, format: Format, w: W) -> Result<()> {
        match format {
            Format::Csv => {
                let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
                wtr.write_record(&self.columns)?;
                for row in &self.rows {
                    wtr.write_record(row.iter().map(Cell::csv))?;
                }
                wtr.flush()?;
            }
            Format::Jsonl => {
                let mut w = BufWriter::new(w);
                for row in &self.rows {
                    // written by hand so keys keep the column order
                    let fields: Vec<String> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(k, c)| format!("{}:{}", serde_json::Value::from(*k), c.json()))
                        .collect();
                    writeln!(w, "{{{}}}", fields.join(","))?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }

    /// Writes to `path`, or to stdout when no path is given.
    pub fn emit(&self, format: Format, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => {
                let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                self.write_to(format, f)
            }
            None => self.write_to(format, io::stdout().lock()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new(vec!["x", "y", "note"]);
        t.push(vec![Cell::Num(0.1), Cell::Empty, Cell::Text("a|b".into())]);
        t.push(vec![Cell::Num(1e-300), Cell::Num(2.0), Cell::Empty]);
        t
    }

    #[test]
    fn csv_uses_full_precision_and_lf() {
        let mut buf = Vec::new();
        sample().write_to(Format::Csv, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "x,y,note\n1.0000000000000001e-1,,a|b\n1.0000000000000000e-300,2.0000000000000000e0,\n");
        let back: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(back, 0.1);
    }

    #[test]
    fn jsonl_keeps_column_order() {
        let mut buf = Vec::new();
        sample().write_to(Format::Jsonl, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let first = s.lines().next().unwrap();
        assert_eq!(first, r#"{"x":0.1,"y":null,"note":"a|b"}"#);
        let v: serde_json::Value = serde_json::from_str(s.lines().nth(1).unwrap()).unwrap();
        assert_eq!(v["x"].as_f64(), Some(1e-300));
    }
}
