//! Directory scanning, class labeling and parallel index construction.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbir_core::features::extract;
use cbir_core::index::IndexOptions;
use cbir_core::{FeatureIndex, ImageRecord, IndexError, Technique};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::decode::decode_image;

const EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("no images found under {0}")]
    NoImages(PathBuf),
    #[error("no image in {0} could be indexed")]
    NothingIndexed(PathBuf),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// How class labels are assigned at index time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    #[default]
    None,
    /// Parent directory name.
    Dirname,
    /// Numeric file stem `n` belongs to `class{n / 100 + 1}`.
    WangNumbering,
}

impl Labeling {
    pub fn label(self, id: &str) -> Option<String> {
        match self {
            Labeling::None => None,
            Labeling::Dirname => id
                .rsplit_once('/')
                .map(|(dir, _)| dir.rsplit('/').next().unwrap_or(dir).to_owned()),
            Labeling::WangNumbering => {
                let stem = id.rsplit('/').next().unwrap_or(id);
                stem.parse::<u64>().ok().map(|n| format!("class{}", n / 100 + 1))
            }
        }
    }
}

/// An image file found in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    /// Relative path without extension, `/`-separated.
    pub id: String,
    pub path: PathBuf,
}

/// Lists image files under `dir` in a stable order.
pub fn scan_dir(dir: &Path) -> Result<Vec<CorpusFile>, CorpusError> {
    let meta = fs::metadata(dir).map_err(|source| CorpusError::Unreadable {
        path: dir.to_owned(),
        source,
    })?;
    if !meta.is_dir() {
        return Err(CorpusError::NotADirectory(dir.to_owned()));
    }
    let root = dir.canonicalize().map_err(|source| CorpusError::Unreadable {
        path: dir.to_owned(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in WalkDir::new(&root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Unreadable {
            path: dir.to_owned(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let rel = path.strip_prefix(&root).expect("walk stays under root");
        let id = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.push(CorpusFile {
            id,
            path: path.to_owned(),
        });
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueTiming {
    pub technique: Technique,
    /// Extraction seconds summed over all images.
    pub seconds: f64,
}

#[derive(Debug)]
pub struct BuildOutput {
    pub index: FeatureIndex,
    pub failures: Vec<FileFailure>,
    pub timings: Vec<TechniqueTiming>,
    pub total_seconds: f64,
}

fn extract_file(file: &CorpusFile, labeling: Labeling) -> Result<(ImageRecord, [f64; 6]), String> {
    let bytes = fs::read(&file.path).map_err(|e| e.to_string())?;
    let img = decode_image(&bytes).map_err(|e| e.to_string())?;
    let mut vectors = Vec::with_capacity(6);
    let mut times = [0.0; 6];
    for t in Technique::ALL {
        let start = Instant::now();
        let v = extract(&img, t).map_err(|e| format!("{t}: {e}"))?;
        times[t.ordinal()] = start.elapsed().as_secs_f64();
        vectors.push(v);
    }
    let record = ImageRecord::new(
        file.id.clone(),
        file.path.to_string_lossy().into_owned(),
        labeling.label(&file.id),
        vectors,
    )
    .map_err(|e| e.to_string())?;
    Ok((record, times))
}

/// Decodes and extracts every image under `dir` in parallel.
///
/// Files that fail to decode or extract are reported in `failures` and left
/// out. The resulting index does not depend on thread scheduling.
pub fn build_from_dir(dir: &Path, labeling: Labeling, options: &IndexOptions) -> Result<BuildOutput, CorpusError> {
    let start = Instant::now();
    let files = scan_dir(dir)?;
    if files.is_empty() {
        return Err(CorpusError::NoImages(dir.to_owned()));
    }
    let results: Vec<_> = files.par_iter().map(|f| (f, extract_file(f, labeling))).collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut totals = [0.0; 6];
    for (file, result) in results {
        match result {
            Ok((record, times)) => {
                for (acc, t) in totals.iter_mut().zip(times) {
                    *acc += t;
                }
                records.push(record);
            }
            Err(reason) => failures.push(FileFailure {
                path: file.path.to_string_lossy().into_owned(),
                reason,
            }),
        }
    }
    if records.is_empty() {
        return Err(CorpusError::NothingIndexed(dir.to_owned()));
    }
    log::info!("extracted {} images, {} failures", records.len(), failures.len());
    let index = FeatureIndex::from_records(records, options)?;
    Ok(BuildOutput {
        index,
        failures,
        timings: Technique::ALL
            .into_iter()
            .map(|t| TechniqueTiming {
                technique: t,
                seconds: totals[t.ordinal()],
            })
            .collect(),
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
