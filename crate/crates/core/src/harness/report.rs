//! Comparison tables assembled from a directory of sweep outputs.
//!
//! Every sweep run leaves a `summary.json` ([`SweepResult`]) next to a
//! `trials.csv`. The report recomputes all aggregates from the raw trial
//! rows, cross-checks them against the stored summaries, and renders one
//! mean +/- std cell per (group-A target, method).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::harness::sweep::{two_stage_aggregate, SweepResult};
use crate::metrics::read_trials_csv;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    /// Fewer trials than the summary promised.
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ReportTable {
    /// Row key: group-A target; column key: method name.
    pub cells: BTreeMap<String, BTreeMap<String, ReportCell>>,
    pub warnings: Vec<String>,
}

impl ReportTable {
    pub fn methods(&self) -> Vec<String> {
        let mut m: Vec<String> = self
            .cells
            .values()
            .flat_map(|row| row.keys().cloned())
            .collect();
        m.sort();
        m.dedup();
        m
    }

    /// Plain-text rendering (targets as rows, methods as columns).
    pub fn render(&self) -> String {
        let methods = self.methods();
        let mut out = String::new();
        out.push_str(&format!("{:<12}", "target"));
        for m in &methods {
            out.push_str(&format!("{m:>22}"));
        }
        out.push('\n');
        for (target, row) in &self.cells {
            out.push_str(&format!("{target:<12}"));
            for m in &methods {
                match row.get(m) {
                    Some(cell) => {
                        let mark = if cell.partial { "*" } else { "" };
                        out.push_str(&format!(
                            "{:>22}",
                            format!("{:.4} +/- {:.4}{}", cell.mean, cell.std, mark)
                        ));
                    }
                    None => out.push_str(&format!("{:>22}", "absent")),
                }
            }
            out.push('\n');
        }
        if !self.warnings.is_empty() {
            out.push_str(&format!("warnings: {}\n", self.warnings.len()));
            for w in &self.warnings {
                out.push_str(&format!("  - {w}\n"));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let methods = self.methods();
        let mut out = String::from("target");
        for m in &methods {
            out.push_str(&format!(",{m}_mean,{m}_std"));
        }
        out.push('\n');
        for (target, row) in &self.cells {
            out.push_str(target);
            for m in &methods {
                match row.get(m) {
                    Some(cell) => out.push_str(&format!(",{},{}", cell.mean, cell.std)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().and_then(|n| n.to_str()) == Some("summary.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Tolerance for the recomputation cross-check.
const RECHECK_TOL: f64 = 1e-12;

pub fn report(results_dir: &Path) -> Result<ReportTable> {
    let summaries = find_summaries(results_dir)?;
    if summaries.is_empty() {
        return Err(CoreError::Empty(format!(
            "no sweep summaries under {}",
            results_dir.display()
        )));
    }
    let mut table = ReportTable::default();
    for summary_path in summaries {
        let text = std::fs::read_to_string(&summary_path)?;
        let summary: SweepResult =
            serde_json::from_str(&text).map_err(|e| CoreError::InvalidConfig(e.to_string()))?;
        let trials_path = summary_path
            .parent()
            .map(|p| p.join("trials.csv"))
            .unwrap_or_default();
        let rows = if trials_path.exists() {
            read_trials_csv(&trials_path)?
        } else {
            table.warnings.push(format!(
                "{}: trials.csv missing, using stored rows",
                summary_path.display()
            ));
            summary.rows.clone()
        };

        // Recompute the two-stage aggregates from the raw rows.
        let mut combos: Vec<String> = rows.iter().map(|r| r.target_b.clone()).collect();
        combos.sort();
        combos.dedup();
        let per_combo: Vec<(String, Vec<f64>)> = combos
            .iter()
            .map(|c| {
                (
                    c.clone(),
                    rows.iter()
                        .filter(|r| &r.target_b == c)
                        .map(|r| r.accuracy)
                        .collect(),
                )
            })
            .collect();
        let (_, mom, mos, _) = two_stage_aggregate(&per_combo);
        if (mom - summary.mean_of_means).abs() > RECHECK_TOL
            || (mos - summary.mean_of_stds).abs() > RECHECK_TOL
        {
            table.warnings.push(format!(
                "{}: stored aggregates disagree with recomputation ({} vs {})",
                summary_path.display(),
                summary.mean_of_means,
                mom
            ));
        }
        let expected = summary.repeats as usize * summary.combinations.len().max(1);
        let partial = rows.len() < expected;
        if partial {
            table.warnings.push(format!(
                "{}: {} trials present, {} expected",
                summary_path.display(),
                rows.len(),
                expected
            ));
        }
        table
            .cells
            .entry(summary.target_a.clone())
            .or_default()
            .insert(
                summary.method.clone(),
                ReportCell {
                    mean: mom,
                    std: mos,
                    trials: rows.len(),
                    partial,
                },
            );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{write_trials_csv, TrialRow};

    fn fake_sweep(dir: &Path, method: &str, target: &str, accs: &[f64]) {
        let rows: Vec<TrialRow> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| TrialRow {
                method: method.into(),
                target_a: target.into(),
                target_b: "b0".into(),
                repeat: i as u32,
                accuracy: a,
            })
            .collect();
        let per_combo = vec![("b0".to_string(), accs.to_vec())];
        let (combinations, mom, mos, pooled) =
            crate::harness::sweep::two_stage_aggregate(&per_combo);
        let summary = SweepResult {
            method: method.into(),
            target_a: target.into(),
            repeats: accs.len() as u32,
            rows: rows.clone(),
            combinations,
            mean_of_means: mom,
            mean_of_stds: mos,
            pooled_std: pooled,
        };
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).unwrap(),
        )
        .unwrap();
        write_trials_csv(&dir.join("trials.csv"), &rows).unwrap();
    }

    #[test]
    fn single_sweep_single_cell() {
        let dir = tempfile::tempdir().unwrap();
        fake_sweep(&dir.path().join("run1"), "ftl-tp", "AA", &[0.8, 0.9]);
        let table = report(dir.path()).unwrap();
        assert_eq!(table.cells.len(), 1);
        let cell = &table.cells["AA"]["ftl-tp"];
        assert!((cell.mean - 0.85).abs() < 1e-12);
        assert!(table.warnings.is_empty());
        assert!(table.render().contains("AA"));
    }

    #[test]
    fn missing_repeats_marks_cell_partial() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run1");
        fake_sweep(&run, "fedavg", "AA", &[0.7, 0.7, 0.7]);
        // Rewrite trials.csv with one row dropped.
        let rows = read_trials_csv(&run.join("trials.csv")).unwrap();
        write_trials_csv(&run.join("trials.csv"), &rows[..2]).unwrap();
        let table = report(dir.path()).unwrap();
        let cell = &table.cells["AA"]["fedavg"];
        assert!(cell.partial);
        assert!(!table.warnings.is_empty());
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(report(dir.path()).is_err());
    }

    #[test]
    fn recheck_matches_sweep_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        fake_sweep(&dir.path().join("r"), "cl", "AA", &[0.61, 0.64, 0.66]);
        let table = report(dir.path()).unwrap();
        assert!(table.warnings.is_empty(), "{:?}", table.warnings);
    }
}
