//! Query manifests: one query image id per class, stored as a JSON object
//! `{"<class label>": "<image id>", ...}`.

use std::collections::BTreeMap;
use std::path::Path;

use cbir_core::evaluation::natural_cmp;
use cbir_core::{ClassQuery, ClassSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest is not a JSON object of class -> image id: {0}")]
    Parse(#[from] serde_json::Error),
}

pub fn parse_manifest(text: &str) -> Result<Vec<ClassQuery>, ManifestError> {
    let map: BTreeMap<String, String> = serde_json::from_str(text)?;
    Ok(from_map(map))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ClassQuery>, ManifestError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn from_map(map: impl IntoIterator<Item = (String, String)>) -> Vec<ClassQuery> {
    let mut out: Vec<ClassQuery> = map
        .into_iter()
        .map(|(class_label, query_id)| ClassQuery { class_label, query_id })
        .collect();
    out.sort_by(|a, b| natural_cmp(&a.class_label, &b.class_label));
    out
}

/// Picks the first member (natural id order) of every class.
pub fn default_queries(classes: &[ClassSpec]) -> Vec<ClassQuery> {
    classes
        .iter()
        .map(|c| ClassQuery {
            class_label: c.class_label.clone(),
            query_id: c
                .member_ids
                .iter()
                .min_by(|a, b| natural_cmp(a, b))
                .expect("classes are non-empty")
                .clone(),
        })
        .collect()
}
