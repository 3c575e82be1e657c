//! Time, Accuracy and Redundancy Factor, per-class evaluation rows and the
//! exhaustive technique-subset optimizer.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use thiserror::Error;

use crate::features::TechniqueSet;
use crate::index::FeatureIndex;
use crate::matching::{retrieve_combined_vectors, Clock, MatchError, ThresholdConfig};
use crate::math;

/// Counts above this are clipped when computing accuracy.
pub const ACCURACY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("relevant count {relevant} exceeds retrieved count {retrieved}")]
    InvalidCounts { relevant: usize, retrieved: usize },
    #[error("no rows to summarize")]
    EmptyInput,
    #[error("index has unlabeled records")]
    Unlabeled,
    #[error("no query assigned to class {0:?}")]
    MissingQuery(String),
    #[error("class {0:?} does not occur in the index")]
    UnknownClass(String),
    #[error("query image {0:?} is not in the index")]
    UnknownQuery(String),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// `100 · min(relevant, cap) / min(retrieved, cap)`, or 0 when nothing was retrieved.
/// `cap = None` disables clipping.
pub fn accuracy(relevant: usize, retrieved: usize, cap: Option<usize>) -> Result<f64, EvaluationError> {
    if relevant > retrieved {
        return Err(EvaluationError::InvalidCounts { relevant, retrieved });
    }
    if retrieved == 0 {
        return Ok(0.0);
    }
    let clip = |n: usize| cap.map_or(n, |c| n.min(c));
    Ok(100.0 * clip(relevant) as f64 / clip(retrieved) as f64)
}

/// `(retrieved − class_size) / class_size`.
///
/// # Panics
/// If `class_size` is zero.
pub fn redundancy_factor(retrieved: usize, class_size: usize) -> f64 {
    assert!(class_size >= 1, "class size must be positive");
    (retrieved as f64 - class_size as f64) / class_size as f64
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvaluationRow {
    pub class_label: String,
    pub images_retrieved: usize,
    /// Seconds, or scan count under [`CostMode::ScanCount`].
    pub time: f64,
    pub relevant: usize,
    pub accuracy: f64,
    pub rf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub class_label: String,
    pub member_ids: BTreeSet<String>,
}

impl ClassSpec {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }

    /// Groups labeled records by class, classes in natural label order.
    pub fn from_index(ix: &FeatureIndex) -> Result<Vec<ClassSpec>, EvaluationError> {
        let mut classes: Vec<ClassSpec> = Vec::new();
        for r in ix.records() {
            let label = r.class_label.as_ref().ok_or(EvaluationError::Unlabeled)?;
            match classes.iter_mut().find(|c| &c.class_label == label) {
                Some(c) => {
                    c.member_ids.insert(r.id.clone());
                }
                None => classes.push(ClassSpec {
                    class_label: label.clone(),
                    member_ids: [r.id.clone()].into_iter().collect(),
                }),
            }
        }
        classes.sort_by(|a, b| natural_cmp(&a.class_label, &b.class_label));
        Ok(classes)
    }
}

/// The query image chosen to represent one class.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassQuery {
    pub class_label: String,
    pub query_id: String,
}

/// What fills the Time column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CostMode {
    #[default]
    WallClock,
    /// Number of record comparisons; reproducible across runs and machines.
    ScanCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationConfig {
    pub cap: Option<usize>,
    pub cost: CostMode,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            cap: Some(ACCURACY_CAP),
            cost: CostMode::WallClock,
        }
    }
}

fn query_for<'a>(queries: &'a [ClassQuery], class: &str) -> Result<&'a ClassQuery, EvaluationError> {
    queries
        .iter()
        .find(|q| q.class_label == class)
        .ok_or_else(|| EvaluationError::MissingQuery(class.into()))
}

fn check_queries(ix: &FeatureIndex, classes: &[ClassSpec], queries: &[ClassQuery]) -> Result<(), EvaluationError> {
    for q in queries {
        if !classes.iter().any(|c| c.class_label == q.class_label) {
            return Err(EvaluationError::UnknownClass(q.class_label.clone()));
        }
        if ix.record(&q.query_id).is_none() {
            return Err(EvaluationError::UnknownQuery(q.query_id.clone()));
        }
    }
    Ok(())
}

fn evaluate_class(
    ix: &FeatureIndex,
    class: &ClassSpec,
    query: &ClassQuery,
    techniques: TechniqueSet,
    thresholds: &ThresholdConfig,
    config: &EvaluationConfig,
    clock: &impl Clock,
) -> Result<EvaluationRow, EvaluationError> {
    let record = ix
        .record(&query.query_id)
        .ok_or_else(|| EvaluationError::UnknownQuery(query.query_id.clone()))?;
    let result = retrieve_combined_vectors(record.vectors(), ix, techniques, thresholds, clock)?;
    let retrieved = result.hits.len();
    let relevant = result.ids().filter(|id| class.member_ids.contains(*id)).count();
    Ok(EvaluationRow {
        class_label: class.class_label.clone(),
        images_retrieved: retrieved,
        time: match config.cost {
            CostMode::WallClock => result.elapsed,
            CostMode::ScanCount => result.scans as f64,
        },
        relevant,
        accuracy: accuracy(relevant, retrieved, config.cap)?,
        rf: redundancy_factor(retrieved, class.size()),
    })
}

/// One row per class: retrieve with `techniques` combined, count same-class hits.
pub fn evaluate_technique_set(
    ix: &FeatureIndex,
    classes: &[ClassSpec],
    queries: &[ClassQuery],
    techniques: TechniqueSet,
    thresholds: &ThresholdConfig,
    config: &EvaluationConfig,
    clock: &impl Clock,
) -> Result<Vec<EvaluationRow>, EvaluationError> {
    check_queries(ix, classes, queries)?;
    classes
        .iter()
        .map(|class| {
            let q = query_for(queries, &class.class_label)?;
            evaluate_class(ix, class, q, techniques, thresholds, config, clock)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanSummary {
    pub time: f64,
    pub accuracy: f64,
    pub rf: f64,
}

pub fn mean_summary(rows: &[EvaluationRow]) -> Result<MeanSummary, EvaluationError> {
    if rows.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let n = rows.len() as f64;
    Ok(MeanSummary {
        time: rows.iter().map(|r| r.time).sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
        rf: rows.iter().map(|r| r.rf).sum::<f64>() / n,
    })
}

/// Column-wise mean of several summaries (the "individual approach" figure).
pub fn mean_of_summaries(summaries: &[MeanSummary]) -> Result<MeanSummary, EvaluationError> {
    if summaries.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let n = summaries.len() as f64;
    Ok(MeanSummary {
        time: summaries.iter().map(|s| s.time).sum::<f64>() / n,
        accuracy: summaries.iter().map(|s| s.accuracy).sum::<f64>() / n,
        rf: summaries.iter().map(|s| s.rf).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizationOutcome {
    pub class_label: String,
    pub chosen_subset: TechniqueSet,
    pub row: EvaluationRow,
}

/// Selection order: higher accuracy, then lower time, then lower |RF|, then the
/// lexicographically smaller subset. `Less` means `a` is preferred.
pub fn preference(a: (&EvaluationRow, TechniqueSet), b: (&EvaluationRow, TechniqueSet)) -> Ordering {
    b.0.accuracy
        .total_cmp(&a.0.accuracy)
        .then_with(|| a.0.time.total_cmp(&b.0.time))
        .then_with(|| math::abs(a.0.rf).total_cmp(&math::abs(b.0.rf)))
        .then_with(|| a.1.lex_cmp(b.1))
}

/// For each class, evaluates all 63 non-empty technique subsets and keeps the preferred one.
pub fn optimize_per_class(
    ix: &FeatureIndex,
    classes: &[ClassSpec],
    queries: &[ClassQuery],
    thresholds: &ThresholdConfig,
    config: &EvaluationConfig,
    clock: &impl Clock,
) -> Result<Vec<OptimizationOutcome>, EvaluationError> {
    check_queries(ix, classes, queries)?;
    let mut outcomes = Vec::with_capacity(classes.len());
    for class in classes {
        let q = query_for(queries, &class.class_label)?;
        let mut best: Option<(EvaluationRow, TechniqueSet)> = None;
        for subset in TechniqueSet::non_empty_subsets() {
            let row = evaluate_class(ix, class, q, subset, thresholds, config, clock)?;
            let better = match &best {
                None => true,
                Some((b_row, b_set)) => preference((&row, subset), (b_row, *b_set)).is_lt(),
            };
            if better {
                best = Some((row, subset));
            }
        }
        let (row, chosen_subset) = best.expect("63 subsets evaluated");
        outcomes.push(OptimizationOutcome {
            class_label: class.class_label.clone(),
            chosen_subset,
            row,
        });
    }
    Ok(outcomes)
}

/// Orders strings treating embedded digit runs as numbers (`class2` < `class10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a.as_bytes(), b.as_bytes());
    loop {
        match (x.first(), y.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(c), Some(d)) if c.is_ascii_digit() && d.is_ascii_digit() => {
                let xl = x.iter().take_while(|c| c.is_ascii_digit()).count();
                let yl = y.iter().take_while(|c| c.is_ascii_digit()).count();
                let (xn, yn) = (trim_zeros(&x[..xl]), trim_zeros(&y[..yl]));
                let ord = xn.len().cmp(&yn.len()).then_with(|| xn.cmp(yn));
                if ord != Ordering::Equal {
                    return ord;
                }
                x = &x[xl..];
                y = &y[yl..];
            }
            (Some(c), Some(d)) => {
                if c != d {
                    return c.cmp(d);
                }
                x = &x[1..];
                y = &y[1..];
            }
        }
    }
}

fn trim_zeros(digits: &[u8]) -> &[u8] {
    let k = digits.iter().take_while(|&&c| c == b'0').count();
    &digits[k..]
}
