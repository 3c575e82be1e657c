//! Distances, threshold retrieval and multi-technique combination.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use thiserror::Error;

use crate::features::{extract, FeatureError, FeatureVector, Technique, TechniqueSet};
use crate::imaging::RasterImage;
use crate::index::{FeatureIndex, NormalizationStats};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("technique mismatch: {left} vs {right}")]
    TechniqueMismatch { left: Technique, right: Technique },
    #[error("threshold for {technique} must be finite and non-negative, got {value}")]
    InvalidThreshold { technique: Technique, value: f64 },
    #[error("technique set is empty")]
    EmptyTechniqueSet,
    #[error("no query vector supplied for {0}")]
    MissingQueryVector(Technique),
    #[error("feature extraction failed for {technique}: {source}")]
    Extraction { technique: Technique, source: FeatureError },
}

/// Monotonic seconds source used to time retrievals.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that never advances; elapsed times come out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> f64 {
        (**self).now()
    }
}

/// Space in which Euclidean distances are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DistanceSpace {
    /// Min-max normalized per component over the indexed corpus.
    #[default]
    Normalized,
    Raw,
}

impl DistanceSpace {
    pub fn name(self) -> &'static str {
        match self {
            DistanceSpace::Normalized => "normalized",
            DistanceSpace::Raw => "raw",
        }
    }
}

impl core::str::FromStr for DistanceSpace {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "normalized" => Ok(DistanceSpace::Normalized),
            "raw" => Ok(DistanceSpace::Raw),
            _ => Err(()),
        }
    }
}

/// Per-technique distance cutoffs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig([f64; 6]);

impl ThresholdConfig {
    pub fn new(values: [f64; 6]) -> Result<Self, MatchError> {
        for (t, &v) in Technique::ALL.iter().zip(&values) {
            check_threshold(*t, v)?;
        }
        Ok(Self(values))
    }

    pub fn uniform(value: f64) -> Result<Self, MatchError> {
        Self::new([value; 6])
    }

    pub fn get(&self, t: Technique) -> f64 {
        self.0[t.ordinal()]
    }

    pub fn set(&mut self, t: Technique, value: f64) -> Result<(), MatchError> {
        check_threshold(t, value)?;
        self.0[t.ordinal()] = value;
        Ok(())
    }

    pub fn values(&self) -> [f64; 6] {
        self.0
    }
}

fn check_threshold(technique: Technique, value: f64) -> Result<(), MatchError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(MatchError::InvalidThreshold { technique, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hit {
    pub id: String,
    pub distance: f64,
}

/// Ranked matches of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub techniques: TechniqueSet,
    /// Ascending by distance, ties by id.
    pub hits: Vec<Hit>,
    /// Seconds according to the supplied clock.
    pub elapsed: f64,
    /// Record comparisons performed; a deterministic cost measure.
    pub scans: usize,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

/// Maps each component onto `[0, 1]` using the corpus min/max; constant components map to 0.
pub fn normalize(v: &FeatureVector, stats: &NormalizationStats) -> Result<FeatureVector, MatchError> {
    let (min, max) = stats.bounds(v.technique());
    if v.dim() != min.len() {
        return Err(MatchError::DimMismatch {
            left: v.dim(),
            right: min.len(),
        });
    }
    let values = v
        .values()
        .iter()
        .zip(min.iter().zip(max))
        .map(|(&x, (&lo, &hi))| normalize_component(x, lo, hi))
        .collect();
    Ok(FeatureVector::new_unchecked(v.technique(), values))
}

#[inline]
pub(crate) fn normalize_component(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

pub fn euclidean(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MatchError> {
    if a.technique() != b.technique() {
        return Err(MatchError::TechniqueMismatch {
            left: a.technique(),
            right: b.technique(),
        });
    }
    if a.dim() != b.dim() {
        return Err(MatchError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(euclidean_slices(a.values(), b.values()))
}

#[inline]
pub(crate) fn euclidean_slices(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum(),
    )
}

/// Distance of `query` (already in the index's distance space) to every record.
fn scan(ix: &FeatureIndex, query: &[f64], t: Technique) -> Vec<f64> {
    ix.records()
        .iter()
        .enumerate()
        .map(|(k, _)| euclidean_slices(query, ix.comparable(k, t)))
        .collect()
}

fn prepare_query(ix: &FeatureIndex, query: &FeatureVector) -> Result<Vec<f64>, MatchError> {
    let expected = query.technique().dim();
    if query.dim() != expected {
        return Err(MatchError::DimMismatch {
            left: query.dim(),
            right: expected,
        });
    }
    Ok(match ix.space() {
        DistanceSpace::Normalized => normalize(query, ix.stats())?.into_values(),
        DistanceSpace::Raw => query.values().to_vec(),
    })
}

fn sort_hits(hits: &mut [Hit]) {
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
}

/// All records within `threshold` of `query` under its technique.
pub fn retrieve_single(
    query: &FeatureVector,
    ix: &FeatureIndex,
    threshold: f64,
    clock: &impl Clock,
) -> Result<RetrievalResult, MatchError> {
    check_threshold(query.technique(), threshold)?;
    let start = clock.now();
    let q = prepare_query(ix, query)?;
    let distances = scan(ix, &q, query.technique());
    let mut hits: Vec<Hit> = ix
        .records()
        .iter()
        .zip(distances)
        .filter(|(_, d)| *d <= threshold)
        .map(|(r, d)| Hit {
            id: r.id.clone(),
            distance: d,
        })
        .collect();
    sort_hits(&mut hits);
    Ok(RetrievalResult {
        techniques: TechniqueSet::single(query.technique()),
        hits,
        elapsed: clock.now() - start,
        scans: ix.len(),
    })
}

/// Intersection of per-technique threshold retrievals for precomputed query vectors.
///
/// `queries` must hold a vector for every member of `techniques`; extra vectors
/// are ignored. Each hit's distance is the mean of its per-technique distances.
pub fn retrieve_combined_vectors(
    queries: &[FeatureVector],
    ix: &FeatureIndex,
    techniques: TechniqueSet,
    cfg: &ThresholdConfig,
    clock: &impl Clock,
) -> Result<RetrievalResult, MatchError> {
    let start = clock.now();
    combine(queries, ix, techniques, cfg, clock, start)
}

fn combine(
    queries: &[FeatureVector],
    ix: &FeatureIndex,
    techniques: TechniqueSet,
    cfg: &ThresholdConfig,
    clock: &impl Clock,
    start: f64,
) -> Result<RetrievalResult, MatchError> {
    if techniques.is_empty() {
        return Err(MatchError::EmptyTechniqueSet);
    }
    let n = ix.len();
    let mut alive = alloc::vec![true; n];
    let mut total = alloc::vec![0.0f64; n];
    for t in techniques.iter() {
        let query = queries
            .iter()
            .find(|q| q.technique() == t)
            .ok_or(MatchError::MissingQueryVector(t))?;
        let q = prepare_query(ix, query)?;
        let tau = cfg.get(t);
        for (k, d) in scan(ix, &q, t).into_iter().enumerate() {
            alive[k] &= d <= tau;
            total[k] += d;
        }
    }
    let count = techniques.len() as f64;
    let mut hits: Vec<Hit> = ix
        .records()
        .iter()
        .enumerate()
        .filter(|(k, _)| alive[*k])
        .map(|(k, r)| Hit {
            id: r.id.clone(),
            distance: total[k] / count,
        })
        .collect();
    sort_hits(&mut hits);
    Ok(RetrievalResult {
        techniques,
        hits,
        elapsed: clock.now() - start,
        scans: n * techniques.len(),
    })
}

/// Extracts the query's vectors for `techniques` and runs the combined retrieval.
/// Elapsed time covers both extraction and scanning.
pub fn retrieve_combined(
    query: &RasterImage,
    ix: &FeatureIndex,
    techniques: TechniqueSet,
    cfg: &ThresholdConfig,
    clock: &impl Clock,
) -> Result<RetrievalResult, MatchError> {
    if techniques.is_empty() {
        return Err(MatchError::EmptyTechniqueSet);
    }
    let start = clock.now();
    let vectors = techniques
        .iter()
        .map(|t| extract(query, t).map_err(|source| MatchError::Extraction { technique: t, source }))
        .collect::<Result<Vec<_>, _>>()?;
    combine(&vectors, ix, techniques, cfg, clock, start)
}

/// Nearest-rank percentile of the pairwise distance distribution, per technique.
///
/// Pairs are taken from the comparable vectors the index stores. When the corpus
/// has more than `max_pairs` pairs an evenly strided subset is used.
pub fn calibrate_thresholds(ix: &FeatureIndex, percentile: f64, max_pairs: usize) -> ThresholdConfig {
    let n = ix.len();
    let total = n * n.saturating_sub(1) / 2;
    let stride = if max_pairs == 0 || total <= max_pairs {
        1
    } else {
        total.div_ceil(max_pairs)
    };
    let mut out = [0.0; 6];
    for t in Technique::ALL {
        let mut distances = Vec::with_capacity(total / stride + 1);
        let mut counter = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                if counter.is_multiple_of(stride) {
                    distances.push(euclidean_slices(ix.comparable(i, t), ix.comparable(j, t)));
                }
                counter += 1;
            }
        }
        out[t.ordinal()] = percentile_of(&mut distances, percentile);
    }
    ThresholdConfig(out)
}

/// Nearest-rank percentile; 0 for an empty sample.
pub fn percentile_of(values: &mut [f64], percentile: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let p = percentile.clamp(0.0, 100.0);
    let rank = libm::ceil(p / 100.0 * values.len() as f64) as usize;
    values[rank.clamp(1, values.len()) - 1]
}

impl fmt::Display for ThresholdConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in Technique::ALL.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}={}", t.short_name(), self.0[i])?;
        }
        Ok(())
    }
}
