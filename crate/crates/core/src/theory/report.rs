use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::fmt_g;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Premise not met; nothing is asserted.
    Skipped,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Skipped => "skipped",
        })
    }
}

/// Direction of a check: `observed ≤ bound + tol` or `observed ≥ bound − tol`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub tol: f64,
    pub cmp: Comparison,
    pub verdict: Verdict,
    pub note: String,
}

impl CheckRow {
    pub fn compare(name: impl Into<String>, observed: f64, cmp: Comparison, bound: f64, tol: f64) -> Self {
        let ok = match cmp {
            Comparison::AtMost => observed <= bound + tol,
            Comparison::AtLeast => observed >= bound - tol,
        };
        CheckRow {
            name: name.into(),
            bound,
            observed,
            tol,
            cmp,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            note: String::new(),
        }
    }

    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64, tol: f64) -> Self {
        Self::compare(name, observed, Comparison::AtMost, bound, tol)
    }

    pub fn at_least(name: impl Into<String>, observed: f64, bound: f64, tol: f64) -> Self {
        Self::compare(name, observed, Comparison::AtLeast, bound, tol)
    }

    pub fn skipped(name: impl Into<String>, observed: f64, bound: f64, note: impl Into<String>) -> Self {
        CheckRow {
            name: name.into(),
            bound,
            observed,
            tol: 0.0,
            cmp: Comparison::AtMost,
            verdict: Verdict::Skipped,
            note: note.into(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Ordered list of check rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TheoryReport {
    pub rows: Vec<CheckRow>,
}

impl TheoryReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: CheckRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: TheoryReport) {
        self.rows.extend(other.rows);
    }

    /// No row failed (skipped rows are neutral).
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.verdict == Verdict::Fail)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check_name,bound,observed,tol,verdict\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name,
                fmt_g(r.bound, 10),
                fmt_g(r.observed, 10),
                fmt_g(r.tol, 10),
                r.verdict
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let count = |v| self.rows.iter().filter(|r| r.verdict == v).count();
        let mut out = format!(
            "{} checks: {} pass, {} fail, {} skipped\n",
            self.rows.len(),
            count(Verdict::Pass),
            count(Verdict::Fail),
            count(Verdict::Skipped)
        );
        for r in &self.rows {
            if r.verdict == Verdict::Pass {
                continue;
            }
            let op = match r.cmp {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            out.push_str(&format!(
                "  {} {}: observed {} {op} bound {} (tol {})",
                r.verdict.to_string().to_uppercase(),
                r.name,
                fmt_g(r.observed, 6),
                fmt_g(r.bound, 6),
                fmt_g(r.tol, 3)
            ));
            if !r.note.is_empty() {
                out.push_str(&format!(" [{}]", r.note));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
