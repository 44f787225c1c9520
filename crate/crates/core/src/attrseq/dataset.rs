//! Labelled feature datasets on disk.
//!
//! One JSON object per line:
//! `{"item_id", "feature_path", "category", "attributes": [...], "split"}`
//! with `split` one of `train`, `validation`, `test`. Relative feature paths
//! are resolved against the manifest's directory.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainingExample;
use crate::taxonomy::Taxonomy;
use crate::visfeat::DenseFeature;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub item_id: String,
    pub feature_path: PathBuf,
    pub category: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub split: Split,
}

impl DatasetEntry {
    pub fn to_example(&self, taxonomy: &Taxonomy) -> Result<TrainingExample> {
        Ok(TrainingExample {
            feature: DenseFeature::load(&self.feature_path)?.to_f64(),
            target: taxonomy.canonical_sequence(&self.category, &self.attributes)?,
        })
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: DatasetEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format("dataset", format!("line {}: {e}", n + 1)))?;
        e.feature_path = base.join(&e.feature_path);
        out.push(e);
    }
    Ok(out)
}

/// Loads the examples of one split, in file order.
pub fn load_split(entries: &[DatasetEntry], split: Split, taxonomy: &Taxonomy) -> Result<Vec<TrainingExample>> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| e.to_example(taxonomy))
        .collect()
}
