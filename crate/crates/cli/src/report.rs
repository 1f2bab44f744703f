//! CSV / JSON artifacts. Every CSV has a header row; row order follows the
//! inputs, which are deterministic under a fixed seed.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use wadmarket_core::estimation::{TrajectoryPoint, TrialRecord};

use crate::scenario::FormalResult;
use crate::CliError;

/// A small metric table: what studies print and persist.
#[derive(Debug, Clone, PartialEq, Serialize)]
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

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell parsed as a float; `None` if missing or non-numeric.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.parse().ok()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(())
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            writeln!(f, "{}", parts.join("  "))
        };
        line(f, &self.header)?;
        for r in &self.rows {
            line(f, r)?;
        }
        Ok(())
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn ratio_header(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("p_{i}")).collect()
}

/// `run_id,p_0..p_{m-1},n,w,v`; formal runs have no distance (`w` empty).
pub fn write_report(path: &Path, records: &[TrialRecord], formal: Option<&FormalResult>, m: usize) -> Result<(), CliError> {
    let mut header = vec!["run_id".to_string()];
    header.extend(ratio_header(m));
    header.extend(["n", "w", "v"].map(String::from));
    let mut table = Table { header, rows: Vec::new() };
    for r in records {
        let mut row = vec![r.run_id.clone()];
        row.extend(r.p.iter().map(|x| x.to_string()));
        row.extend([r.n.to_string(), r.w.to_string(), r.v.to_string()]);
        table.push(row);
    }
    if let Some(f) = formal {
        let mut row = vec![f.run_id.clone()];
        row.extend(f.p.iter().map(|x| x.to_string()));
        row.extend([f.n.to_string(), String::new(), f.eval.accuracy.to_string()]);
        table.push(row);
    }
    table.write_csv(path)
}

/// Plot-ready trial curves: ratio index against accuracy and CombineWad.
pub fn write_curves(path: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let mut table = Table::new(&["n", "ratio_index", "run_id", "combinewad", "accuracy"]);
    let mut budgets: Vec<usize> = records.iter().map(|r| r.n).collect();
    budgets.sort_unstable();
    budgets.dedup();
    for n in budgets {
        for (j, r) in records.iter().filter(|r| r.n == n).enumerate() {
            table.push(vec![n.to_string(), j.to_string(), r.run_id.clone(), r.w.to_string(), r.v.to_string()]);
        }
    }
    table.write_csv(path)
}

pub fn trajectory_table(traj: &[TrajectoryPoint]) -> Table {
    let m = traj.first().map_or(0, |t| t.p.len());
    let mut header = vec!["step".to_string()];
    header.extend(ratio_header(m));
    header.push("predicted".into());
    let mut table = Table { header, rows: Vec::new() };
    for (i, t) in traj.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(t.p.iter().map(|x| x.to_string()));
        row.push(t.predicted.to_string());
        table.push(row);
    }
    table
}

pub fn write_trajectory(path: &Path, traj: &[TrajectoryPoint]) -> Result<(), CliError> {
    trajectory_table(traj).write_csv(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_has_one_column_per_seller() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rec = TrialRecord {
            run_id: "r".into(),
            p: vec![0.5, 0.25, 0.25],
            n: 10,
            w: 1.5,
            v: 0.75,
        };
        write_report(&path, &[rec], None, 3).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "run_id,p_0,p_1,p_2,n,w,v\nr,0.5,0.25,0.25,10,1.5,0.75\n");
    }

    #[test]
    fn table_lookup_and_render() {
        let mut t = Table::new(&["k", "err"]);
        t.push(vec!["10".into(), num(0.5)]);
        assert_eq!(t.value(0, "err"), Some(0.5));
        assert_eq!(t.value(1, "err"), None);
        assert!(t.to_string().starts_with(" k       err\n"));
    }
}
