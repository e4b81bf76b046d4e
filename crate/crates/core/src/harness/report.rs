//! Check reports: structured text plus CSV tables.
//!
//! CSV dialect: comma separator, `.` decimal point, `#` comment lines, LF line
//! endings. Floats are written in shortest round-trip form.

use std::io::{self, Write};

use super::stats::Estimate;

/// Formats a float for CSV output.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes `# key: value` comment lines.
pub fn write_comment_header<W: Write>(out: &mut W, fields: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in fields {
        writeln!(out, "# {k}: {v}")?;
    }
    Ok(())
}

/// One compared pair `lhs ~ rhs` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub label: String,
    pub t: f64,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `(lhs - rhs) / sqrt(se_lhs^2 + se_rhs^2)`, or the paired z-score where
    /// both sides come from the same replicates.
    pub z: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Row with a z-score from independent standard errors.
    pub fn independent(label: impl Into<String>, t: f64, lhs: Estimate, rhs: Estimate, pass: bool) -> Self {
        let se = lhs.std_error.hypot(rhs.std_error);
        let diff = lhs.mean - rhs.mean;
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        Self {
            label: label.into(),
            t,
            lhs,
            rhs,
            z,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<CheckRow>,
    pub notes: Vec<String>,
    pub runtime_secs: f64,
}

impl Report {
    pub fn new(experiment: impl Into<String>, config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            seed,
            rows: Vec::new(),
            notes: Vec::new(),
            runtime_secs: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn absorb(&mut self, other: Report) {
        self.rows.extend(other.rows);
        self.notes.extend(other.notes);
        self.runtime_secs += other.runtime_secs;
    }

    /// `label,t,lhs,lhs_se,rhs,rhs_se,z,pass`; deterministic (no timings).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "label,t,lhs,lhs_se,rhs,rhs_se,z,pass")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label,
                num(r.t),
                num(r.lhs.mean),
                num(r.lhs.std_error),
                num(r.rhs.mean),
                num(r.rhs.std_error),
                num(r.z),
                r.pass
            )?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "experiment: {}", self.experiment)?;
        writeln!(out, "config_hash: {}", self.config_hash)?;
        writeln!(out, "seed: {}", self.seed)?;
        writeln!(out, "runtime_secs: {:.3}", self.runtime_secs)?;
        writeln!(out, "result: {}", if self.passed() { "PASS" } else { "FAIL" })?;
        for r in &self.rows {
            writeln!(
                out,
                "  [{}] {} t={} lhs={:.6} +/- {:.6} rhs={:.6} +/- {:.6} z={:.3}",
                if r.pass { "pass" } else { "FAIL" },
                r.label,
                r.t,
                r.lhs.mean,
                r.lhs.std_error,
                r.rhs.mean,
                r.rhs.std_error,
                r.z
            )?;
        }
        for n in &self.notes {
            writeln!(out, "  note: {n}")?;
        }
        Ok(())
    }
}
