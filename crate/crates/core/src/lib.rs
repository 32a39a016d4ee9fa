//! Core of the valulens values-audit harness.
//!
//! Audits what an image classifier "values" by comparing how often it
//! recognizes a category in a curated rival set (e.g. killed animals,
//! packed parachutes, partially hidden socks) against the category's
//! ordinary validation set.
//!
//! - [`corpus`]: category manifests, rival criteria, prediction logs and
//!   top-k recognition.
//! - [`stats`]: hypergeometric table probabilities, the two-sided Fisher
//!   exact test, similarity buckets and recognition decisions.
//! - [`audit`]: per-criterion evaluation, enacted values, cross-model flip
//!   reports and the exception-fraction regression.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! the curation server live in the `valulens` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audit;
pub mod corpus;
pub mod stats;

pub use audit::{
    averaged_rival_accuracy, compare_models, dph_points, evaluate_all, evaluate_criterion,
    fit_least_squares, fit_per_model, top1_narrowing, validation_accuracy, AuditError,
    CriterionComparison, CriterionResult, DphPoint, EnactedValue, FlipReport, RegressionFit,
    Scope, DEFAULT_MAX_FRACTION,
};
pub use corpus::{
    counts_for, is_recognized, CategorySpec, Corpus, CorpusError, CorpusManifest, Counts,
    IngestError, MatchKind, MatchRule, PredictionLog, PredictionRecord, RecordError,
    RivalCriterion, ScoredLabel, ValidationError, ValueArea, ValueMapping, Violation,
};
pub use stats::{
    assess, fisher_two_sided, hypergeom_prob, needs_augmentation, similarity_bucket,
    Assessment, AugmentationAdvice, ContingencyTable, Decision, SimilarityBucket, StatsError,
};
