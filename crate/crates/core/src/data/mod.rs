//! Tabular datasets, synthetic scenario generators and CSV ingestion.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, save_csv, CsvSchema};
pub use synth::{generate, held_out, inject_label_flip, Scenario, ScenarioSpec};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TermError};
use crate::hierarchy::TiltTree;
use crate::losses::LossKind;
use crate::model::SampleModel;

/// Where a dataset came from and which samples were corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Generating spec for synthetic data, `None` for ingested files.
    pub spec: Option<ScenarioSpec>,
    pub source: String,
    /// Samples whose target or features were replaced by noise, ascending.
    pub noisy: Vec<usize>,
    /// Samples whose label was reassigned by a flip injector, ascending.
    pub flipped: Vec<usize>,
    /// Seeds of applied label-flip injections, in order.
    pub flip_seeds: Vec<u64>,
    /// SHA-256 of the numeric content and group labels.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Innermost group label per sample.
    pub groups: Option<Vec<String>>,
    /// Outer group label per sample (requires `groups`).
    pub supergroups: Option<Vec<String>>,
    /// Label set for classification data; `None` for regression targets.
    pub classes: Option<Vec<f64>>,
    pub provenance: Provenance,
}

/// Map labels to ids in order of first appearance.
fn label_ids(labels: &[String]) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(p) => p,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

impl TabularDataset {
    /// Validate shapes, finiteness and group labels, then stamp the content hash.
    pub fn new(
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        groups: Option<Vec<String>>,
        supergroups: Option<Vec<String>>,
        classes: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut ds = TabularDataset {
            features,
            targets,
            groups,
            supergroups,
            classes,
            provenance,
        };
        ds.validate()?;
        ds.provenance.hash = ds.content_hash();
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.targets.len();
        if n == 0 || self.features.len() != n {
            return Err(TermError::input(format!(
                "{} feature rows for {} targets",
                self.features.len(),
                n
            )));
        }
        let d = self.features[0].len();
        if self.features.iter().any(|r| r.len() != d) {
            return Err(TermError::input("ragged feature matrix"));
        }
        if self
            .features
            .iter()
            .flatten()
            .chain(&self.targets)
            .any(|v| !v.is_finite())
        {
            return Err(TermError::input("dataset contains non-finite values"));
        }
        if self.supergroups.is_some() && self.groups.is_none() {
            return Err(TermError::input("supergroup labels need group labels"));
        }
        for labels in self.groups.iter().chain(&self.supergroups) {
            if labels.len() != n {
                return Err(TermError::input(format!(
                    "{} group labels for {n} samples",
                    labels.len()
                )));
            }
            if let Some(i) = labels.iter().position(|l| l.is_empty()) {
                return Err(TermError::input(format!(
                    "sample {i} has an empty group label"
                )));
            }
        }
        if let Some(classes) = &self.classes {
            if let Some(i) = self.targets.iter().position(|y| !classes.contains(y)) {
                return Err(TermError::input(format!(
                    "target {} of sample {i} is not a known class",
                    self.targets[i]
                )));
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.features.len() as u64).to_le_bytes());
        h.update((self.feature_dim() as u64).to_le_bytes());
        for v in self.features.iter().flatten().chain(&self.targets) {
            h.update(v.to_bits().to_le_bytes());
        }
        for (tag, labels) in [(b'g', &self.groups), (b's', &self.supergroups)] {
            if let Some(labels) = labels {
                h.update([tag]);
                for l in labels {
                    h.update((l.len() as u64).to_le_bytes());
                    h.update(l.as_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Rows in the given order; group labels follow, corruption records are remapped.
    pub fn subset(&self, indices: &[usize]) -> Result<TabularDataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(TermError::input(format!("index {i} out of range")));
        }
        let pick = |labels: &Option<Vec<String>>| {
            labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i].clone()).collect())
        };
        let remap = |set: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> = indices
                .iter()
                .enumerate()
                .filter(|(_, i)| set.binary_search(i).is_ok())
                .map(|(k, _)| k)
                .collect();
            v.sort_unstable();
            v
        };
        let provenance = Provenance {
            noisy: remap(&self.provenance.noisy),
            flipped: remap(&self.provenance.flipped),
            source: format!("{} (subset)", self.provenance.source),
            ..self.provenance.clone()
        };
        TabularDataset::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.targets[i]).collect(),
            pick(&self.groups),
            pick(&self.supergroups),
            self.classes.clone(),
            provenance,
        )
    }

    /// Indices that were never replaced by noise or flipped.
    pub fn clean_indices(&self) -> Vec<usize> {
        let p = &self.provenance;
        (0..self.len())
            .filter(|i| p.noisy.binary_search(i).is_err() && p.flipped.binary_search(i).is_err())
            .collect()
    }

    /// The clean subset a Genie baseline trains on.
    pub fn genie_split(&self) -> Result<TabularDataset> {
        self.subset(&self.clean_indices())
    }

    /// Group paths for a tilt tree, outermost label first. Empty when no groups.
    pub fn group_paths(&self) -> Vec<Vec<usize>> {
        let g = self.groups.as_ref().map(|l| label_ids(l));
        let s = self.supergroups.as_ref().map(|l| label_ids(l));
        (0..self.len())
            .map(|i| {
                let mut p = Vec::new();
                if let Some(s) = &s {
                    p.push(s[i]);
                }
                if let Some(g) = &g {
                    p.push(g[i]);
                }
                p
            })
            .collect()
    }

    /// Paths grouping samples by their (observed) class label.
    pub fn class_paths(&self) -> Result<Vec<Vec<usize>>> {
        let classes = self
            .classes
            .as_ref()
            .ok_or_else(|| TermError::input("class grouping needs classification targets"))?;
        Ok(self
            .targets
            .iter()
            .map(|y| vec![classes.iter().position(|c| c == y).unwrap_or(0)])
            .collect())
    }

    /// Tilt tree over the dataset's own group columns: one level per tilt, the
    /// innermost tilting samples.
    pub fn tilt_tree(&self, levels: &[f64]) -> Result<TiltTree> {
        if levels.len() == 1 {
            return TiltTree::flat(levels[0], self.len());
        }
        let paths = self.group_paths();
        let depth = paths.first().map_or(0, Vec::len);
        if depth + 1 != levels.len() {
            return Err(TermError::input(format!(
                "{} tilts need {} group columns, dataset has {depth}",
                levels.len(),
                levels.len() - 1
            )));
        }
        TiltTree::new(levels.to_vec(), &paths)
    }

    pub fn model(&self, kind: LossKind) -> Result<SampleModel> {
        SampleModel::new(kind, self.features.clone(), self.targets.clone())
    }
}
