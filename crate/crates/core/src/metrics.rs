//! CSV schemas shared by the simulator, the baselines and the report tool,
//! plus small statistics helpers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fl::RoundMetrics;

/// `round,group,train_loss,target_accuracy,wall_ms`
pub fn write_round_metrics_csv(path: &Path, rows: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["round", "group", "train_loss", "target_accuracy", "wall_ms"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.group.clone(),
            r.train_loss.to_string(),
            r.target_accuracy.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_round_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CoreError::Csv {
            row: i + 1,
            msg: e.to_string(),
        })?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or(CoreError::Csv {
                row: i + 1,
                msg: format!("missing column {j}"),
            })
        };
        out.push(RoundMetrics {
            round: field(0)?.parse().map_err(|_| parse_err(i + 1, "round"))?,
            group: field(1)?.to_string(),
            train_loss: field(2)?.parse().map_err(|_| parse_err(i + 1, "train_loss"))?,
            target_accuracy: field(3)?
                .parse()
                .map_err(|_| parse_err(i + 1, "target_accuracy"))?,
            wall_ms: field(4)?.parse().map_err(|_| parse_err(i + 1, "wall_ms"))?,
        });
    }
    Ok(out)
}

/// One accuracy measurement of a sweep:
/// `method,target_a,target_b,repeat,accuracy`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub target_a: String,
    pub target_b: String,
    pub repeat: u32,
    pub accuracy: f64,
}

pub fn write_trials_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["method", "target_a", "target_b", "repeat", "accuracy"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.target_a.clone(),
            r.target_b.clone(),
            r.repeat.to_string(),
            r.accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CoreError::Csv {
            row: i + 1,
            msg: e.to_string(),
        })?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j).ok_or(CoreError::Csv {
                row: i + 1,
                msg: format!("missing column {j}"),
            })
        };
        out.push(TrialRow {
            method: field(0)?.to_string(),
            target_a: field(1)?.to_string(),
            target_b: field(2)?.to_string(),
            repeat: field(3)?.parse().map_err(|_| parse_err(i + 1, "repeat"))?,
            accuracy: field(4)?.parse().map_err(|_| parse_err(i + 1, "accuracy"))?,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Csv {
        row: 0,
        msg: e.to_string(),
    }
}

fn parse_err(row: usize, col: &str) -> CoreError {
    CoreError::Csv {
        row,
        msg: format!("unparsable {col}"),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two
/// values. Identical values give exactly 0 rather than rounding dust from
/// the mean.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    if values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_metrics_roundtrip() {
        let rows = vec![
            RoundMetrics {
                round: 1,
                group: "M".into(),
                train_loss: 1.25,
                target_accuracy: 0.5,
                wall_ms: 3.5,
            },
            RoundMetrics {
                round: 2,
                group: "S".into(),
                train_loss: 0.75,
                target_accuracy: f64::NAN,
                wall_ms: 2.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_round_metrics_csv(&path, &rows).unwrap();
        let back = read_round_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rows[0]);
        assert!(back[1].target_accuracy.is_nan());
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(mean(&[0.8, 0.9]), 0.8500000000000001);
        assert_eq!(sample_std(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(sample_std(&[0.5]), 0.0);
        let s = sample_std(&[1.0, 2.0, 3.0]);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
