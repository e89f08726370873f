//! Run reports: the JSON manifest, the deterministic `checks.csv`, and the
//! wall-time sidecar `timings.csv`.
//!
//! `report.json` and `checks.csv` contain only quantities fixed by the
//! configuration and seed, so a repeated run reproduces them byte for byte;
//! everything time-dependent goes to the sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// One verification record: a named measured quantity against its tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub suite: String,
    /// Descriptive statement of the guarantee being checked; every anchor
    /// appears in `docs/verification_map.md` next to its implementation.
    pub anchor: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub records: Vec<CheckRecord>,
    /// Headline command outputs (estimates, diagnostics), keyed for plots.
    pub results: BTreeMap<String, f64>,
    pub all_pass: bool,
    /// Files written next to this report, sorted.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, hash: String, config: RunConfig) -> Self {
        RunReport {
            command: command.into(),
            config_hash: hash,
            config,
            records: Vec::new(),
            results: BTreeMap::new(),
            all_pass: true,
            artifacts: Vec::new(),
        }
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.all_pass &= record.pass;
        self.records.push(record);
    }

    pub fn add_artifact(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.into());
        }
    }

    /// Writes `report.json`, `checks.csv` and `timings.csv` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<(), CliError> {
        self.add_artifact("checks.csv");
        self.add_artifact("timings.csv");
        self.artifacts.sort();

        let mut checks = String::from("name,suite,anchor,value,tolerance,pass\n");
        for r in &self.records {
            checks.push_str(&format!(
                "{},{},\"{}\",{},{},{}\n",
                r.name,
                r.suite,
                r.anchor,
                fmt_f64(r.value),
                fmt_f64(r.tolerance),
                r.pass
            ));
        }
        write_file(dir, "checks.csv", &checks)?;

        let mut timings = String::from("name,seconds\n");
        for r in &self.records {
            timings.push_str(&format!("{},{:.3}\n", r.name, r.seconds));
        }
        write_file(dir, "timings.csv", &timings)?;

        let json = serde_json::to_string_pretty(self)?;
        write_file(dir, "report.json", &format!("{json}\n"))?;
        Ok(())
    }
}

/// IEEE double with 17 significant digits, enough to reproduce the bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })
}

/// Column-oriented CSV helper for plot data.
pub struct CsvTable {
    header: String,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(header: &str) -> Self {
        CsvTable {
            header: header.into(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; entries are joined with commas as given.
    pub fn row(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<(), CliError> {
        let mut out = String::with_capacity(self.rows.len() * 32 + 64);
        out.push_str(&self.header);
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        write_file(dir, name, &out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips_the_bits() {
        for &x in &[1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -0.1, 123456.789] {
            let parsed: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(parsed.to_bits(), x.to_bits(), "{x}");
        }
    }
}
