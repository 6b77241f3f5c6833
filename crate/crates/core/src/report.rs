//! Report containers and deterministic CSV/JSON writers.
//!
//! Every empirical check in the crate reduces to the same shape: a table of
//! per-probe (or per-ball) rows, a fitted constant (supremum of ratios), and a
//! handful of flags.  CSV bodies are byte-reproducible for a fixed config and
//! seed: floats are written with a fixed scientific format and rows keep the
//! generation order.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// A numeric table with named columns.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Render the table as CSV text (fixed float format, '\n' line endings).
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(',');
                }
                first = false;
                let _ = write!(s, "{}", format_float(*v));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Fixed deterministic float rendering used in all CSV bodies.
pub fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v)
    } else {
        format!("{:.12e}", v)
    }
}

/// Outcome of one empirical verification (an estimate, a fitted constant, or
/// a consistency check).
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// What was measured.
    pub name: String,
    /// Supremum of measured/bound ratios (the fitted constant).
    pub constant: f64,
    /// Probes or balls that entered the supremum.
    pub used: usize,
    /// Probes excluded by constraints, degeneracies or capping.
    pub excluded: usize,
    /// Human-readable description of the supremum-attaining probe.
    pub attaining: Option<String>,
    /// Relative change of the constant under probe/ensemble refinement.
    pub stability_delta: Option<f64>,
    /// Free-form flags ("boundary-capped", "truncation-dominated", ...).
    pub flags: Vec<String>,
    /// Per-probe table for CSV export.
    #[serde(skip)]
    pub table: Table,
}

impl VerificationReport {
    pub fn new(name: &str) -> Self {
        VerificationReport {
            name: name.to_string(),
            constant: 0.0,
            used: 0,
            excluded: 0,
            attaining: None,
            stability_delta: None,
            flags: Vec::new(),
            table: Table::default(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite()
    }

    pub fn flag(&mut self, f: &str) {
        if !self.flags.iter().any(|g| g == f) {
            self.flags.push(f.to_string());
        }
    }
}

/// Summary line of a report, for JSON bundles.
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub name: String,
    pub constant: f64,
    pub used: usize,
    pub excluded: usize,
    pub stability_delta: Option<f64>,
    pub flags: Vec<String>,
}

impl From<&VerificationReport> for ReportSummary {
    fn from(r: &VerificationReport) -> Self {
        ReportSummary {
            name: r.name.clone(),
            constant: r.constant,
            used: r.used,
            excluded: r.excluded,
            stability_delta: r.stability_delta,
            flags: r.flags.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1.0, 0.5]);
        t.push(vec![-3.25, 1e-9]);
        let one = t.to_csv();
        let two = t.to_csv();
        assert_eq!(one, two);
        assert!(one.starts_with("a,b\n1,5.000000000000e-1\n"), "{one}");
    }
}
