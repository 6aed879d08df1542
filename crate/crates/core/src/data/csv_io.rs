//! CSV ingestion and emission of domain datasets, plus the dataset manifest.
//!
//! Schema: a header naming 624 feature columns followed by `label`,
//! `domain`, `group`; one sample per row, row order preserved. Floats are
//! written with the shortest round-trippable decimal representation, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fl::GroupId;
use crate::scalar::Scalar;

use super::{DomainDataset, Samples};

/// The fixed feature width of the external CSV contract.
pub const EXPECTED_FEATURES: usize = 624;

pub fn save_csv<T: Scalar>(dataset: &DomainDataset<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = dataset.data.dim;
    let mut header = String::new();
    for j in 0..dim {
        header.push_str(&format!("f{j},"));
    }
    header.push_str("label,domain,group\n");
    w.write_all(header.as_bytes())?;
    for i in 0..dataset.len() {
        let mut line = String::new();
        for v in dataset.data.row(i) {
            line.push_str(&format!("{},", v.as_f64()));
        }
        line.push_str(&format!(
            "{},{},{}\n",
            dataset.data.labels[i], dataset.domain, dataset.group
        ));
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a single-domain dataset. The feature width must be exactly
/// [`EXPECTED_FEATURES`]; the class count is inferred as `max label + 1`
/// unless `num_classes` pins it.
pub fn load_csv<T: Scalar>(path: &Path, num_classes: Option<usize>) -> Result<DomainDataset<T>> {
    load_csv_with_dim(path, EXPECTED_FEATURES, num_classes)
}

pub fn load_csv_with_dim<T: Scalar>(
    path: &Path,
    dim: usize,
    num_classes: Option<usize>,
) -> Result<DomainDataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let header = reader
        .headers()
        .map_err(|e| CoreError::Csv {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    if header.len() != dim + 3 {
        return Err(CoreError::Csv {
            row: 0,
            msg: format!(
                "expected {dim} feature columns + label + domain + group, found {} columns",
                header.len()
            ),
        });
    }
    for (name, idx) in [("label", dim), ("domain", dim + 1), ("group", dim + 2)] {
        if header.get(idx) != Some(name) {
            return Err(CoreError::Csv {
                row: 0,
                msg: format!("column {idx} must be named {name:?}"),
            });
        }
    }

    let mut features: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut domain: Option<String> = None;
    let mut group: Option<String> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CoreError::Csv {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != dim + 3 {
            return Err(CoreError::Csv {
                row,
                msg: format!("expected {} columns, found {}", dim + 3, record.len()),
            });
        }
        for j in 0..dim {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| CoreError::Csv {
                row,
                msg: format!("non-numeric cell {cell:?} in column f{j}"),
            })?;
            features.push(T::from_f64(v));
        }
        let label_cell = record.get(dim).unwrap_or("");
        let label: usize = label_cell.parse().map_err(|_| CoreError::Csv {
            row,
            msg: format!("unknown label {label_cell:?} (expected a class index)"),
        })?;
        labels.push(label);
        let d = record.get(dim + 1).unwrap_or("").to_string();
        let g = record.get(dim + 2).unwrap_or("").to_string();
        match &domain {
            None => domain = Some(d),
            Some(prev) if *prev != d => {
                return Err(CoreError::Csv {
                    row,
                    msg: format!("mixed domains in one file: {prev:?} vs {d:?}"),
                })
            }
            _ => {}
        }
        match &group {
            None => group = Some(g),
            Some(prev) if *prev != g => {
                return Err(CoreError::Csv {
                    row,
                    msg: format!("mixed groups in one file: {prev:?} vs {g:?}"),
                })
            }
            _ => {}
        }
    }
    if labels.is_empty() {
        return Err(CoreError::Empty(format!("csv file {}", path.display())));
    }
    let inferred = labels.iter().copied().max().unwrap_or(0) + 1;
    let classes = num_classes.unwrap_or(inferred);
    let data = Samples::new(features, labels, dim, classes)?;
    Ok(DomainDataset::new(
        GroupId::new(group.unwrap_or_default()),
        domain.unwrap_or_default(),
        data,
    ))
}

/// JSON manifest written next to generated dataset files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub group: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub subspace_seed: u64,
    pub generator_version: u32,
    pub domains: Vec<DomainFileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainFileEntry {
    pub name: String,
    pub size: usize,
    pub file: String,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::InvalidConfig(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CoreError::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, ShiftSpec};

    #[test]
    fn roundtrip_is_bit_exact() {
        let spec = ShiftSpec::new("M", 4, 3, 4);
        let ds: Vec<DomainDataset<f64>> =
            generate_synthetic(&spec, &[("AC".to_string(), 12)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ac.csv");
        save_csv(&ds[0], &path).unwrap();
        let back: DomainDataset<f64> = load_csv(&path, Some(4)).unwrap();
        assert_eq!(back.data.features, ds[0].data.features);
        assert_eq!(back.data.labels, ds[0].data.labels);
        assert_eq!(back.domain, ds[0].domain);
        assert_eq!(back.group, ds[0].group);
        assert_eq!(back.len(), 12);
    }

    #[test]
    fn wrong_feature_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut header: Vec<String> = (0..623).map(|j| format!("f{j}")).collect();
        header.extend(["label".into(), "domain".into(), "group".into()]);
        let mut text = header.join(",") + "\n";
        text.push_str(&vec!["0"; 623].join(","));
        text.push_str(",0,d,g\n");
        std::fs::write(&path, text).unwrap();
        let err = load_csv::<f64>(&path, None).unwrap_err();
        assert!(err.to_string().contains("624"), "error was: {err}");
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let header: Vec<String> = (0..4)
            .map(|j| format!("f{j}"))
            .chain(["label".into(), "domain".into(), "group".into()])
            .collect();
        let text = format!(
            "{}\n0,0,0,0,0,d,g\n0,oops,0,0,1,d,g\n",
            header.join(",")
        );
        std::fs::write(&path, text).unwrap();
        let err = load_csv_with_dim::<f64>(&path, 4, None).unwrap_err();
        assert!(err.to_string().contains("row 2"), "error was: {err}");
    }
}
