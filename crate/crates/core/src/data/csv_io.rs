//! CSV ingestion: a header row, one sample per row, feature columns followed by
//! the target and optional group columns. A JSON provenance sidecar sits next
//! to the file as `<name>.provenance.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Provenance, TabularDataset};
use crate::error::{Result, TermError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    pub group: Option<String>,
    pub supergroup: Option<String>,
    /// Treat the distinct target values as class labels.
    pub classification: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            target: "target".into(),
            group: None,
            supergroup: None,
            classification: false,
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".provenance.json");
    path.with_file_name(name)
}

fn csv_error(line: Option<u64>, message: impl Into<String>) -> TermError {
    TermError::Csv {
        line,
        message: message.into(),
    }
}

/// 17 significant digits, enough to round-trip any finite `f64`.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(None, format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(Some(1), e.to_string()))?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| csv_error(Some(1), format!("missing column '{name}'")))
    };
    let target_col = find(&schema.target)?;
    let group_col = schema.group.as_deref().map(find).transpose()?;
    let super_col = schema.supergroup.as_deref().map(find).transpose()?;
    if super_col.is_some() && group_col.is_none() {
        return Err(TermError::input("a supergroup column needs a group column"));
    }
    let label_cols = [Some(target_col), group_col, super_col];
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|c| !label_cols.contains(&Some(*c)))
        .collect();

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut groups = group_col.map(|_| Vec::new());
    let mut supergroups = super_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map(|p| p.line());
        if rec.len() != header.len() {
            return Err(csv_error(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let num = |c: usize| -> Result<f64> {
            let cell = rec[c].trim();
            let v: f64 = cell.parse().map_err(|_| {
                csv_error(
                    line,
                    format!("column '{}': '{cell}' is not a number", &header[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_error(
                    line,
                    format!("column '{}': non-finite value", &header[c]),
                ));
            }
            Ok(v)
        };
        features.push(
            feature_cols
                .iter()
                .map(|&c| num(c))
                .collect::<Result<Vec<_>>>()?,
        );
        targets.push(num(target_col)?);
        for (col, out) in [(group_col, &mut groups), (super_col, &mut supergroups)] {
            if let (Some(c), Some(out)) = (col, out.as_mut()) {
                let label = rec[c].trim();
                if label.is_empty() {
                    return Err(csv_error(
                        line,
                        format!("empty group label in column '{}'", &header[c]),
                    ));
                }
                out.push(label.to_string());
            }
        }
    }
    if targets.is_empty() {
        return Err(csv_error(None, "no data rows"));
    }
    let classes = schema.classification.then(|| {
        let mut c = targets.clone();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    });

    let side = sidecar(path);
    let provenance = if side.exists() {
        serde_json::from_str(&fs::read_to_string(&side)?)
            .map_err(|e| TermError::input(format!("{}: {e}", side.display())))?
    } else {
        Provenance {
            spec: None,
            source: format!("csv:{}", path.display()),
            noisy: Vec::new(),
            flipped: Vec::new(),
            flip_seeds: Vec::new(),
            hash: String::new(),
        }
    };
    let ds = TabularDataset::new(features, targets, groups, supergroups, classes, provenance)?;
    Ok(ds)
}

/// Write `x0.., target[, group][, supergroup]` plus the provenance sidecar.
pub fn save_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(None, e.to_string()))?;
    let mut header: Vec<String> = (0..ds.feature_dim()).map(|k| format!("x{k}")).collect();
    header.push("target".into());
    if ds.groups.is_some() {
        header.push("group".into());
    }
    if ds.supergroups.is_some() {
        header.push("supergroup".into());
    }
    w.write_record(&header)
        .map_err(|e| csv_error(None, e.to_string()))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.features[i].iter().map(|v| fmt(*v)).collect();
        row.push(fmt(ds.targets[i]));
        for labels in [&ds.groups, &ds.supergroups].into_iter().flatten() {
            row.push(labels[i].clone());
        }
        w.write_record(&row)
            .map_err(|e| csv_error(None, e.to_string()))?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(&ds.provenance)
        .map_err(|e| TermError::input(e.to_string()))?;
    fs::write(sidecar(path), json)?;
    Ok(())
}

impl CsvSchema {
    /// Schema matching what [`save_csv`] writes for `ds`.
    pub fn for_dataset(ds: &TabularDataset) -> Self {
        CsvSchema {
            target: "target".into(),
            group: ds.groups.as_ref().map(|_| "group".into()),
            supergroup: ds.supergroups.as_ref().map(|_| "supergroup".into()),
            classification: ds.classes.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Scenario, ScenarioSpec};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            ScenarioSpec::new(Scenario::linear_regression(40, 3), 0.25, 5),
            ScenarioSpec::new(Scenario::annotators(10, 2, 3), 0.0, 5),
        ] {
            let ds = generate(&spec).unwrap();
            let p = dir.path().join("d.csv");
            save_csv(&ds, &p).unwrap();
            let back = load_csv(&p, &CsvSchema::for_dataset(&ds)).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn schema_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "x0,y\n1,2\n").unwrap();
        let e = load_csv(&p, &CsvSchema::default()).unwrap_err();
        assert!(
            matches!(&e, TermError::Csv { line: Some(1), message } if message.contains("target")),
            "{e}"
        );

        fs::write(&p, "x0,target\n1,2\n3,abc\n").unwrap();
        let e = load_csv(&p, &CsvSchema::default()).unwrap_err();
        assert!(matches!(e, TermError::Csv { line: Some(3), .. }), "{e}");

        fs::write(&p, "x0,target\n1,2\n3\n").unwrap();
        let e = load_csv(&p, &CsvSchema::default()).unwrap_err();
        assert!(matches!(e, TermError::Csv { line: Some(3), .. }), "{e}");

        fs::write(&p, "x0,target,g\n1,2,a\n3,4,\n").unwrap();
        let schema = CsvSchema {
            group: Some("g".into()),
            ..CsvSchema::default()
        };
        let e = load_csv(&p, &schema).unwrap_err();
        assert!(
            matches!(&e, TermError::Csv { line: Some(3), message } if message.contains("empty group")),
            "{e}"
        );
    }
}
