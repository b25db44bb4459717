//! CSV and manifest emission.
//!
//! Floats are written with 12 significant digits in scientific notation so
//! that repeated runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalise −0
        return format!("{:.11e}", 0.0);
    }
    format!("{x:.11e}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }

    fn key_cmp(&self, other: &Cell) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Float(a), Cell::Float(b)) => a.total_cmp(b),
            (Cell::Int(a), Cell::Float(b)) => (*a as f64).total_cmp(b),
            (Cell::Float(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Text(_), _) => Ordering::Greater,
            (_, Cell::Text(_)) => Ordering::Less,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Number of leading columns forming the sort key.
    pub key_columns: usize,
}

impl Table {
    pub fn new(header: &[&str], key_columns: usize) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), key_columns }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::DimensionMismatch { expected: self.header.len(), got: row.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&Vec<Cell>> = self.rows.iter().collect();
        let k = self.key_columns;
        rows.sort_by(|a, b| {
            a[..k]
                .iter()
                .zip(&b[..k])
                .map(|(x, y)| x.key_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut out = self.header.join(",");
        out.push('\n');
        for r in rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Hex SHA-256 of a canonical config text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub files: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_twelve_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.00000000000e-1");
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
        assert_eq!(fmt_f64(123456.789), "1.23456789000e5");
        let parsed: f64 = fmt_f64(std::f64::consts::PI).parse().unwrap();
        assert!((parsed - std::f64::consts::PI).abs() < 1e-11);
    }

    #[test]
    fn rows_sorted_by_key() {
        let mut t = Table::new(&["m", "e_m"], 1);
        t.push(vec![11usize.into(), 0.1.into()]).unwrap();
        t.push(vec![3usize.into(), 0.3.into()]).unwrap();
        t.push(vec![5usize.into(), 0.2.into()]).unwrap();
        let csv = t.to_csv();
        let ms: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ms, ["3", "5", "11"]);
        assert!(t.push(vec![1usize.into()]).is_err());
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(Table::new(&["a", "b"], 1).to_csv(), "a,b\n");
    }

    #[test]
    fn text_cells_are_quoted() {
        let mut t = Table::new(&["cfg"], 0);
        t.push(vec!["1,5".into()]).unwrap();
        assert_eq!(t.to_csv(), "cfg\n\"1,5\"\n");
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            command: "scan".into(),
            version: "0.1.0".into(),
            seed: 7,
            config: [("m".to_string(), "3".to_string())].into(),
            config_hash: config_hash("m=3\n"),
            files: vec!["fig3.csv".into()],
            notes: vec![],
            wall_time_s: 0.5,
        };
        assert_eq!(Manifest::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert_eq!(m.config_hash.len(), 64);
    }
}
