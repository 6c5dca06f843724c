use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// One assertion made by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// A CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Parses a CSV produced by a core `to_csv` method (no quoting).
    pub fn from_csv(text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines
            .next()
            .map(|h| h.split(',').map(str::to_string).collect())
            .unwrap_or_default();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Self { header, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

/// Formats an optional cell; `None` is empty.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub kind: String,
    pub pass: bool,
    pub scalars: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub witnesses: Vec<serde_json::Value>,
    #[serde(skip)]
    pub table: Option<Table>,
    #[serde(skip)]
    pub seconds: f64,
}

impl ExperimentResult {
    pub fn new(label: &str, kind: &str) -> Self {
        Self {
            label: label.into(),
            kind: kind.into(),
            pass: true,
            scalars: BTreeMap::new(),
            checks: Vec::new(),
            witnesses: Vec::new(),
            table: None,
            seconds: 0.0,
        }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    pub fn scalar(&mut self, name: impl Into<String>, v: f64) {
        self.scalars.insert(name.into(), v);
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub(crate) fn finish(&mut self) {
        self.pass = self.checks.iter().all(|c| c.pass);
    }
}

/// Everything a run produced. Wall times are kept out of the serialized
/// report so identical inputs give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub pass: bool,
    pub config: ExperimentConfig,
    pub results: Vec<ExperimentResult>,
}

impl RunReport {
    pub fn result(&self, label: &str) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.label == label)
    }

    pub fn failed_checks(&self) -> Vec<(&str, &Check)> {
        self.results
            .iter()
            .flat_map(|r| r.checks.iter().filter(|c| !c.pass).map(move |c| (r.label.as_str(), c)))
            .collect()
    }

    /// Table file name for an experiment.
    pub fn table_name(&self, label: &str) -> String {
        if self.results.len() == 1 {
            "table.csv".into()
        } else {
            format!("table-{label}.csv")
        }
    }

    /// Writes `report.json`, `witnesses.json`, `timing.json` and the CSV tables.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
            written.push(p);
            Ok(())
        };
        put("report.json".into(), serde_json::to_string_pretty(self)? + "\n")?;
        let witnesses: BTreeMap<&str, &Vec<serde_json::Value>> = self
            .results
            .iter()
            .filter(|r| !r.witnesses.is_empty())
            .map(|r| (r.label.as_str(), &r.witnesses))
            .collect();
        put("witnesses.json".into(), serde_json::to_string_pretty(&witnesses)? + "\n")?;
        let timing: BTreeMap<&str, f64> = self.results.iter().map(|r| (r.label.as_str(), r.seconds)).collect();
        put("timing.json".into(), serde_json::to_string_pretty(&timing)? + "\n")?;
        for r in &self.results {
            if let Some(t) = &r.table {
                put(self.table_name(&r.label), t.to_csv())?;
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let text = "n,h,value\n2,0.5,1\n4,0.25,\n";
        let t = Table::from_csv(text);
        assert_eq!(t.header, ["n", "h", "value"]);
        assert_eq!(t.rows[1], ["4", "0.25", ""]);
        assert_eq!(t.to_csv(), text);
    }
}
