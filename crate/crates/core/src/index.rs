//! The feature database: per-image vectors, class labels, normalization
//! statistics and calibrated thresholds.
//!
//! A [`FeatureIndex`] is immutable once built. Records are kept sorted by id so
//! that every derived quantity (statistics, thresholds, persisted bytes) is a
//! function of the corpus alone.

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::features::{extract_all, FeatureError, FeatureVector, Technique};
use crate::imaging::RasterImage;
use crate::matching::{calibrate_thresholds, normalize_component, DistanceSpace, ThresholdConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_PERCENTILE: f64 = 10.0;
pub const DEFAULT_MAX_PAIRS: usize = 250_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("extracting {technique} from {id:?} failed: {source}")]
    Extraction {
        id: String,
        technique: Technique,
        source: FeatureError,
    },
    #[error("record {id:?}: {source}")]
    BadRecord { id: String, source: FeatureError },
    #[error("record {id:?} is missing its {technique} vector")]
    MissingVector { id: String, technique: Technique },
    #[error("stored statistics for {0} do not match the records")]
    StatsMismatch(Technique),
}

/// One image to be indexed.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub path: String,
    pub class_label: Option<String>,
    pub image: RasterImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub class_label: Option<String>,
    vectors: [FeatureVector; 6],
}

impl ImageRecord {
    /// `vectors` may come in any order but must cover all six techniques.
    pub fn new(
        id: String,
        path: String,
        class_label: Option<String>,
        vectors: Vec<FeatureVector>,
    ) -> Result<Self, IndexError> {
        let mut slots: [Option<FeatureVector>; 6] = Default::default();
        for v in vectors {
            let v = FeatureVector::new(v.technique(), v.into_values())
                .map_err(|source| IndexError::BadRecord { id: id.clone(), source })?;
            let t = v.technique();
            slots[t.ordinal()] = Some(v);
        }
        let mut out = Vec::with_capacity(6);
        for (t, slot) in Technique::ALL.into_iter().zip(slots) {
            out.push(slot.ok_or_else(|| IndexError::MissingVector {
                id: id.clone(),
                technique: t,
            })?);
        }
        Ok(Self {
            id,
            path,
            class_label: class_label.filter(|l| !l.is_empty()),
            vectors: out.try_into().expect("six vectors"),
        })
    }

    /// Extracts all six vectors from `entry.image`.
    pub fn extract(entry: &CorpusEntry) -> Result<Self, IndexError> {
        let vectors = extract_all(&entry.image).map_err(|(technique, source)| IndexError::Extraction {
            id: entry.id.clone(),
            technique,
            source,
        })?;
        Ok(Self {
            id: entry.id.clone(),
            path: entry.path.clone(),
            class_label: entry.class_label.clone().filter(|l| !l.is_empty()),
            vectors,
        })
    }

    pub fn vector(&self, t: Technique) -> &FeatureVector {
        &self.vectors[t.ordinal()]
    }

    /// Vectors in canonical technique order.
    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }
}

/// Componentwise min and max per technique.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    min: [Vec<f64>; 6],
    max: [Vec<f64>; 6],
}

impl NormalizationStats {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        let mut min: [Vec<f64>; 6] = Default::default();
        let mut max: [Vec<f64>; 6] = Default::default();
        for t in Technique::ALL {
            let k = t.ordinal();
            min[k] = alloc::vec![f64::INFINITY; t.dim()];
            max[k] = alloc::vec![f64::NEG_INFINITY; t.dim()];
            for r in records {
                for (c, &v) in r.vector(t).values().iter().enumerate() {
                    min[k][c] = min[k][c].min(v);
                    max[k][c] = max[k][c].max(v);
                }
            }
        }
        Self { min, max }
    }

    /// Wraps stored bounds; validated when handed to [`FeatureIndex::from_parts`].
    pub fn from_bounds(min: [Vec<f64>; 6], max: [Vec<f64>; 6]) -> Self {
        Self { min, max }
    }

    pub fn bounds(&self, t: Technique) -> (&[f64], &[f64]) {
        (&self.min[t.ordinal()], &self.max[t.ordinal()])
    }
}

/// Options that shape how an index is derived from its records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOptions {
    pub space: DistanceSpace,
    /// Percentile of the pairwise distance distribution used as each default threshold.
    pub percentile: f64,
    pub max_pairs: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            space: DistanceSpace::Normalized,
            percentile: DEFAULT_PERCENTILE,
            max_pairs: DEFAULT_MAX_PAIRS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    records: Vec<ImageRecord>,
    stats: NormalizationStats,
    thresholds: ThresholdConfig,
    options: IndexOptions,
    // Per technique: record vectors in the configured distance space, flattened.
    comparable: [Vec<f64>; 6],
}

/// Extracts every entry and assembles the index.
pub fn build_index(entries: Vec<CorpusEntry>, options: &IndexOptions) -> Result<FeatureIndex, IndexError> {
    let records = entries
        .iter()
        .map(ImageRecord::extract)
        .collect::<Result<Vec<_>, _>>()?;
    FeatureIndex::from_records(records, options)
}

impl FeatureIndex {
    /// Sorts records by id, computes statistics and calibrates thresholds.
    pub fn from_records(records: Vec<ImageRecord>, options: &IndexOptions) -> Result<Self, IndexError> {
        let mut ix = Self::assemble(records, *options)?;
        ix.thresholds = calibrate_thresholds(&ix, options.percentile, options.max_pairs);
        Ok(ix)
    }

    /// Reassembles a persisted index, checking the stored statistics against the records.
    pub fn from_parts(
        records: Vec<ImageRecord>,
        stats: NormalizationStats,
        thresholds: ThresholdConfig,
        options: IndexOptions,
    ) -> Result<Self, IndexError> {
        let mut ix = Self::assemble(records, options)?;
        for t in Technique::ALL {
            let (a_min, a_max) = ix.stats.bounds(t);
            let (b_min, b_max) = stats.bounds(t);
            let same =
                |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same(a_min, b_min) || !same(a_max, b_max) {
                return Err(IndexError::StatsMismatch(t));
            }
        }
        ix.thresholds = thresholds;
        Ok(ix)
    }

    fn assemble(mut records: Vec<ImageRecord>, options: IndexOptions) -> Result<Self, IndexError> {
        if records.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(IndexError::DuplicateId(w[0].id.clone()));
        }
        let stats = NormalizationStats::from_records(&records);
        let mut comparable: [Vec<f64>; 6] = Default::default();
        for t in Technique::ALL {
            let (min, max) = stats.bounds(t);
            let flat = &mut comparable[t.ordinal()];
            flat.reserve(records.len() * t.dim());
            for r in &records {
                let values = r.vector(t).values();
                match options.space {
                    DistanceSpace::Normalized => flat.extend(
                        values
                            .iter()
                            .zip(min.iter().zip(max))
                            .map(|(&x, (&lo, &hi))| normalize_component(x, lo, hi)),
                    ),
                    DistanceSpace::Raw => flat.extend_from_slice(values),
                }
            }
        }
        Ok(Self {
            records,
            stats,
            thresholds: ThresholdConfig::uniform(0.0).expect("zero is valid"),
            options,
            comparable,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stats(&self) -> &NormalizationStats {
        &self.stats
    }

    pub fn thresholds(&self) -> &ThresholdConfig {
        &self.thresholds
    }

    pub fn options(&self) -> &IndexOptions {
        &self.options
    }

    pub fn space(&self) -> DistanceSpace {
        self.options.space
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn with_thresholds(mut self, thresholds: ThresholdConfig) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.binary_search_by(|r| r.id.as_str().cmp(id)).ok()
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.position(id).map(|k| &self.records[k])
    }

    /// Whether every record carries a class label.
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.class_label.is_some())
    }

    /// Vector of record `k` for `t` in the index's distance space.
    pub(crate) fn comparable(&self, k: usize, t: Technique) -> &[f64] {
        let d = t.dim();
        &self.comparable[t.ordinal()][k * d..(k + 1) * d]
    }
}
