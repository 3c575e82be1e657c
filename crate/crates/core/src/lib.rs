//! Content-based image retrieval core.
//!
//! Everything in this crate is pure computation over in-memory values: the
//! raster and gray-level types, the six feature extractors, the feature index
//! with its normalization statistics, threshold retrieval and technique
//! combination, and the Time / Accuracy / Redundancy Factor evaluation with the
//! per-class subset optimizer. Decoding, persistence and transport live in the
//! `cbir` crate.
#![no_std]

extern crate alloc;

pub mod evaluation;
pub mod features;
pub mod imaging;
pub mod index;
pub mod matching;

mod math;

pub use evaluation::{
    accuracy, evaluate_technique_set, mean_of_summaries, mean_summary, optimize_per_class, redundancy_factor,
    ClassQuery, ClassSpec, CostMode, EvaluationConfig, EvaluationError, EvaluationRow, MeanSummary,
    OptimizationOutcome,
};
pub use features::{extract, FeatureError, FeatureVector, Technique, TechniqueSet};
pub use imaging::{crop, to_gray, CropRect, GrayImage, ImagingError, RasterImage, Rgb};
pub use index::{build_index, CorpusEntry, FeatureIndex, ImageRecord, IndexError, IndexOptions, NormalizationStats};
pub use matching::{
    euclidean, normalize, retrieve_combined, retrieve_combined_vectors, retrieve_single, Clock, DistanceSpace, Hit,
    MatchError, NoClock, RetrievalResult, ThresholdConfig,
};
