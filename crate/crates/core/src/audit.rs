//! Audit analyses built on the corpus and the 2x2 statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{counts_for, Corpus, CorpusError, Counts, MatchRule, PredictionLog};
use crate::stats::{assess, Assessment, Decision, Side, StatsError};

/// Default upper bound (exclusive) on exception fractions entering the regression.
pub const DEFAULT_MAX_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no validation images in scope")]
    EmptyScope,
    #[error("no criterion results to average")]
    NoResults,
    #[error("results mix models '{0}' and '{1}'")]
    MixedModels(String, String),
    #[error("results mix top-{0} and top-{1} evaluation")]
    MixedK(u32, u32),
    #[error("criterion '{criterion_id}' has no result for model '{model_id}'")]
    MissingResult {
        criterion_id: String,
        model_id: String,
    },
    #[error("criterion '{criterion_id}' has more than one result for model '{model_id}'")]
    DuplicateResult {
        criterion_id: String,
        model_id: String,
    },
    #[error("result for model '{0}' which is not in the model list")]
    UnlistedModel(String),
    #[error("top-1 and top-5 results cover different criteria")]
    CoverageMismatch,
    #[error("regression needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("regression needs at least two distinct x values")]
    DegenerateX,
    #[error("regression input contains a non-finite value")]
    NonFinite,
}

/// The value a classifier enacts on one criterion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnactedValue {
    /// One pole of the criterion's value mapping.
    Pole(String),
    /// The decision was indeterminate.
    Unclear,
    /// Hybrid criterion without a validation baseline.
    BaselineFree,
}

impl EnactedValue {
    pub fn as_str(&self) -> &str {
        match self {
            EnactedValue::Pole(v) => v,
            EnactedValue::Unclear => "unclear",
            EnactedValue::BaselineFree => "baseline-free",
        }
    }
}

impl fmt::Display for EnactedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EnactedValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EnactedValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(match s.as_str() {
            "unclear" => EnactedValue::Unclear,
            "baseline-free" => EnactedValue::BaselineFree,
            _ => EnactedValue::Pole(s),
        })
    }
}

/// Outcome of one criterion for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion_id: String,
    pub model_id: String,
    pub k_eval: u32,
    pub rival_counts: Counts,
    /// `None` for baseline-free criteria, exactly when `assessment` is `None`.
    pub val_counts: Option<Counts>,
    pub assessment: Option<Assessment>,
    pub enacted_value: EnactedValue,
}

impl CriterionResult {
    pub fn rival_rate(&self) -> f64 {
        self.rival_counts.rate().unwrap_or(0.0)
    }

    pub fn decision(&self) -> Option<Decision> {
        self.assessment.map(|a| a.decision)
    }

    pub fn is_baseline_free(&self) -> bool {
        self.assessment.is_none()
    }
}

fn enacted(decision: Decision, recognized: &str, unrecognized: &str) -> EnactedValue {
    match decision.side() {
        Some(Side::Recognized) => EnactedValue::Pole(recognized.into()),
        Some(Side::Unrecognized) => EnactedValue::Pole(unrecognized.into()),
        None => EnactedValue::Unclear,
    }
}

/// Evaluates one criterion for one model. Rival and validation images are
/// both scored with the criterion's recognition rule.
pub fn evaluate_criterion(
    corpus: &Corpus,
    log: &PredictionLog,
    model_id: &str,
    criterion_id: &str,
    k_eval: u32,
) -> Result<CriterionResult, AuditError> {
    let criterion = corpus
        .criterion(criterion_id)
        .ok_or_else(|| CorpusError::UnknownCriterion(criterion_id.into()))?;
    let category = corpus.owner(criterion);
    let rule = &criterion.recognition_rule;

    let mut missing = log.missing(model_id, &criterion.rival_image_ids);
    missing.extend(log.missing(model_id, &category.validation_image_ids));
    if !missing.is_empty() {
        return Err(CorpusError::MissingRecords {
            model_id: model_id.into(),
            image_ids: missing,
        }
        .into());
    }

    let rival_counts = counts_for(log, model_id, &criterion.rival_image_ids, rule, k_eval)?;
    let (val_counts, assessment, enacted_value) = if category.is_baseline_free() {
        (None, None, EnactedValue::BaselineFree)
    } else {
        let val = counts_for(log, model_id, &category.validation_image_ids, rule, k_eval)?;
        let assessment = assess(rival_counts, val)?;
        let vm = &criterion.value_mapping;
        let value = enacted(
            assessment.decision,
            &vm.value_if_recognized,
            &vm.value_if_unrecognized,
        );
        (Some(val), Some(assessment), value)
    };

    Ok(CriterionResult {
        criterion_id: criterion_id.into(),
        model_id: model_id.into(),
        k_eval,
        rival_counts,
        val_counts,
        assessment,
        enacted_value,
    })
}

/// Evaluates every criterion of the corpus, in manifest order.
pub fn evaluate_all(
    corpus: &Corpus,
    log: &PredictionLog,
    model_id: &str,
    k_eval: u32,
) -> Result<Vec<CriterionResult>, AuditError> {
    corpus
        .criteria()
        .iter()
        .map(|c| evaluate_criterion(corpus, log, model_id, &c.criterion_id, k_eval))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope<'a> {
    Category(&'a str),
    AllCategories,
}

/// Top-k accuracy on validation images, each scored against its own category.
pub fn validation_accuracy(
    corpus: &Corpus,
    log: &PredictionLog,
    model_id: &str,
    scope: Scope<'_>,
    k_eval: u32,
) -> Result<f64, AuditError> {
    let categories: Vec<_> = match scope {
        Scope::Category(id) => alloc::vec![corpus
            .category(id)
            .ok_or_else(|| CorpusError::UnknownCategory(id.into()))?],
        Scope::AllCategories => corpus.categories().iter().collect(),
    };
    let mut total = Counts::default();
    for cat in categories {
        let rule = MatchRule::exact(cat.category_id.clone());
        total = total + counts_for(log, model_id, &cat.validation_image_ids, &rule, k_eval)?;
    }
    total.rate().ok_or(AuditError::EmptyScope)
}

/// Unweighted mean of rival rates over one model's criteria. Baseline-free
/// criteria are skipped.
pub fn averaged_rival_accuracy(results: &[CriterionResult]) -> Result<f64, AuditError> {
    let mut model: Option<&str> = None;
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in results {
        match model {
            Some(m) if m != r.model_id => {
                return Err(AuditError::MixedModels(m.into(), r.model_id.clone()))
            }
            _ => model = Some(&r.model_id),
        }
        if r.is_baseline_free() {
            continue;
        }
        sum += r.rival_rate();
        n += 1;
    }
    if n == 0 {
        return Err(AuditError::NoResults);
    }
    Ok(sum / n as f64)
}

/// One criterion across the ordered model list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionComparison {
    pub criterion_id: String,
    pub decisions: Vec<Decision>,
    pub rival_rates: Vec<f64>,
    pub val_rates: Vec<f64>,
    pub flip: bool,
    pub monotonic_rival: bool,
    pub monotonic_val: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub models: Vec<String>,
    /// Sorted by criterion id.
    pub criteria: Vec<CriterionComparison>,
}

impl FlipReport {
    pub fn flipped(&self) -> impl Iterator<Item = &CriterionComparison> {
        self.criteria.iter().filter(|c| c.flip)
    }

    pub fn flip_count(&self) -> usize {
        self.flipped().count()
    }

    pub fn monotonic_rival_count(&self) -> usize {
        self.criteria.iter().filter(|c| c.monotonic_rival).count()
    }

    pub fn monotonic_val_count(&self) -> usize {
        self.criteria.iter().filter(|c| c.monotonic_val).count()
    }

    pub fn monotonic_both_count(&self) -> usize {
        self.criteria
            .iter()
            .filter(|c| c.monotonic_rival && c.monotonic_val)
            .count()
    }
}

/// Nondecreasing with at least one strict increase.
fn increases_monotonically(rates: &[f64]) -> bool {
    rates.windows(2).all(|w| w[1] >= w[0]) && rates.windows(2).any(|w| w[1] > w[0])
}

/// A flip needs one model on each side; indeterminate decisions take no side.
fn flips(decisions: &[Decision]) -> bool {
    let sides: Vec<Side> = decisions.iter().filter_map(Decision::side).collect();
    sides.contains(&Side::Recognized) && sides.contains(&Side::Unrecognized)
}

/// Cross-model comparison of every criterion with a baseline. `models` fixes
/// the order used for the monotonicity flags.
pub fn compare_models<S: AsRef<str>>(
    results: &[CriterionResult],
    models: &[S],
) -> Result<FlipReport, AuditError> {
    let position: BTreeMap<&str, usize> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_ref(), i))
        .collect();
    let mut k: Option<u32> = None;
    let mut grid: BTreeMap<&str, Vec<Option<&CriterionResult>>> = BTreeMap::new();

    for r in results.iter().filter(|r| !r.is_baseline_free()) {
        match k {
            Some(k) if k != r.k_eval => return Err(AuditError::MixedK(k, r.k_eval)),
            _ => k = Some(r.k_eval),
        }
        let &slot = position
            .get(r.model_id.as_str())
            .ok_or_else(|| AuditError::UnlistedModel(r.model_id.clone()))?;
        let row = grid
            .entry(r.criterion_id.as_str())
            .or_insert_with(|| alloc::vec![None; models.len()]);
        if row[slot].replace(r).is_some() {
            return Err(AuditError::DuplicateResult {
                criterion_id: r.criterion_id.clone(),
                model_id: r.model_id.clone(),
            });
        }
    }

    let mut criteria = Vec::with_capacity(grid.len());
    for (criterion_id, row) in grid {
        let mut decisions = Vec::with_capacity(row.len());
        let mut rival_rates = Vec::with_capacity(row.len());
        let mut val_rates = Vec::with_capacity(row.len());
        for (slot, entry) in row.into_iter().enumerate() {
            let r = entry.ok_or_else(|| AuditError::MissingResult {
                criterion_id: criterion_id.into(),
                model_id: models[slot].as_ref().into(),
            })?;
            let assessment = r.assessment.expect("baseline-free results filtered out");
            decisions.push(assessment.decision);
            rival_rates.push(assessment.rival_rate);
            val_rates.push(assessment.val_rate);
        }
        criteria.push(CriterionComparison {
            criterion_id: criterion_id.into(),
            flip: flips(&decisions),
            monotonic_rival: increases_monotonically(&rival_rates),
            monotonic_val: increases_monotonically(&val_rates),
            decisions,
            rival_rates,
            val_rates,
        });
    }

    Ok(FlipReport {
        models: models.iter().map(|m| m.as_ref().into()).collect(),
        criteria,
    })
}

/// Criteria that flip at top-5 and still flip when decided from top-1 counts.
pub fn top1_narrowing<S: AsRef<str>>(
    results_top1: &[CriterionResult],
    results_top5: &[CriterionResult],
    models: &[S],
) -> Result<Vec<String>, AuditError> {
    let top1 = compare_models(results_top1, models)?;
    let top5 = compare_models(results_top5, models)?;
    let ids = |r: &FlipReport| -> Vec<String> {
        r.criteria.iter().map(|c| c.criterion_id.clone()).collect()
    };
    if ids(&top1) != ids(&top5) {
        return Err(AuditError::CoverageMismatch);
    }
    Ok(top5
        .criteria
        .iter()
        .zip(&top1.criteria)
        .filter(|(five, one)| five.flip && one.flip)
        .map(|(five, _)| five.criterion_id.clone())
        .collect())
}

/// Rival recognition against the share of training exceptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DphPoint {
    pub criterion_id: String,
    pub model_id: String,
    pub exception_fraction: f64,
    pub rival_rate: f64,
}

/// Points for every result whose exception fraction is strictly below
/// `max_fraction`, sorted by model then criterion. Baseline-free criteria
/// and criteria unknown to `corpus` are skipped.
pub fn dph_points(corpus: &Corpus, results: &[CriterionResult], max_fraction: f64) -> Vec<DphPoint> {
    let mut points: Vec<DphPoint> = results
        .iter()
        .filter(|r| !r.is_baseline_free())
        .filter_map(|r| {
            let fraction = corpus.exception_fraction(&r.criterion_id)?;
            (fraction < max_fraction).then(|| DphPoint {
                criterion_id: r.criterion_id.clone(),
                model_id: r.model_id.clone(),
                exception_fraction: fraction,
                rival_rate: r.rival_rate(),
            })
        })
        .collect();
    points.sort_by(|a, b| {
        (a.model_id.as_str(), a.criterion_id.as_str())
            .cmp(&(b.model_id.as_str(), b.criterion_id.as_str()))
    });
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares line through `points`.
///
/// Uses centered sums. When every y is equal the line fits exactly and
/// `r_squared` is 1.
pub fn fit_least_squares(points: &[(f64, f64)]) -> Result<RegressionFit, AuditError> {
    let n = points.len();
    if n < 2 {
        return Err(AuditError::TooFewPoints(n));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AuditError::NonFinite);
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(AuditError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(x, y) in points {
        let resid = y - (intercept + slope * x);
        ss_res += resid * resid;
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// One regression per model present in `points`.
pub fn fit_per_model(points: &[DphPoint]) -> Result<BTreeMap<String, RegressionFit>, AuditError> {
    let mut by_model: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        by_model
            .entry(&p.model_id)
            .or_default()
            .push((p.exception_fraction, p.rival_rate));
    }
    by_model
        .into_iter()
        .map(|(model, xy)| Ok((String::from(model), fit_least_squares(&xy)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        CategorySpec, CorpusManifest, PredictionRecord, RivalCriterion, ScoredLabel, ValueArea,
        ValueMapping,
    };
    use crate::stats::SimilarityBucket;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    const SOCK: &str = "n04254777";

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:02}")).collect()
    }

    fn mapping(rec: &str, unrec: &str) -> ValueMapping {
        ValueMapping {
            open_question: String::new(),
            value_if_recognized: rec.into(),
            value_if_unrecognized: unrec.into(),
            cultural_context: String::new(),
            relationality: String::new(),
            time_context: String::new(),
        }
    }

    fn corpus() -> Corpus {
        Corpus::from_manifest(CorpusManifest {
            categories: vec![
                CategorySpec {
                    category_id: SOCK.into(),
                    display_labels: vec!["sock".into()],
                    value_area: ValueArea::Modesty,
                    overview_notes: String::new(),
                    training_set_size: 1300,
                    validation_image_ids: ids("sv", 50),
                    twin_category_ids: vec![],
                },
                CategorySpec {
                    category_id: "eggs".into(),
                    display_labels: vec!["eggs".into()],
                    value_area: ValueArea::Maturation,
                    overview_notes: String::new(),
                    training_set_size: 1,
                    validation_image_ids: vec![],
                    twin_category_ids: vec![],
                },
            ],
            criteria: vec![
                RivalCriterion {
                    criterion_id: "sock".into(),
                    category_id: SOCK.into(),
                    description: "partially hidden".into(),
                    rival_image_ids: ids("sr", 15),
                    exception_count: 125,
                    exception_image_ids: vec![],
                    recognition_rule: MatchRule::exact(SOCK),
                    value_mapping: mapping("modest viewing", "immodest viewing"),
                },
                RivalCriterion {
                    criterion_id: "eggs".into(),
                    category_id: "eggs".into(),
                    description: "variety of eggs".into(),
                    rival_image_ids: ids("er", 15),
                    exception_count: 0,
                    exception_image_ids: vec![],
                    recognition_rule: MatchRule::any_of(["hen", "goose"]),
                    value_mapping: mapping("eggs are birds", "eggs are not birds"),
                },
            ],
        })
        .unwrap()
    }

    fn rec(model: &str, image: &str, first: &str) -> PredictionRecord {
        PredictionRecord {
            image_id: image.into(),
            model_id: model.into(),
            k: 2,
            topk: vec![ScoredLabel::new(first, 0.6), ScoredLabel::new("filler", 0.1)],
        }
    }

    fn log(model: &str, rival_hits: usize, val_hits: usize, egg_hits: usize) -> PredictionLog {
        let mut records = Vec::new();
        for (i, id) in ids("sr", 15).iter().enumerate() {
            records.push(rec(model, id, if i < rival_hits { SOCK } else { "shoe" }));
        }
        for (i, id) in ids("sv", 50).iter().enumerate() {
            records.push(rec(model, id, if i < val_hits { SOCK } else { "shoe" }));
        }
        for (i, id) in ids("er", 15).iter().enumerate() {
            records.push(rec(model, id, if i < egg_hits { "hen" } else { "bowl" }));
        }
        PredictionLog::from_records(records).unwrap()
    }

    #[test]
    fn sock_criterion_is_not_recognized() {
        let r = evaluate_criterion(&corpus(), &log("vgg16", 4, 37, 1), "vgg16", "sock", 2).unwrap();
        assert_eq!(r.rival_counts, Counts::new(4, 15));
        assert_eq!(r.val_counts, Some(Counts::new(37, 50)));
        let a = r.assessment.unwrap();
        assert_eq!(a.decision, Decision::DoesNotRecognize);
        assert_eq!(a.bucket, SimilarityBucket::Low);
        assert_eq!(r.enacted_value, EnactedValue::Pole("immodest viewing".into()));
    }

    #[test]
    fn hybrid_criterion_is_baseline_free() {
        let r = evaluate_criterion(&corpus(), &log("vgg16", 4, 37, 1), "vgg16", "eggs", 2).unwrap();
        assert_eq!(r.rival_counts, Counts::new(1, 15));
        assert_eq!(r.val_counts, None);
        assert_eq!(r.assessment, None);
        assert_eq!(r.enacted_value, EnactedValue::BaselineFree);
        assert_eq!(r.enacted_value.to_string(), "baseline-free");
    }

    #[test]
    fn coverage_gaps_are_listed() {
        let mut records: Vec<_> = log("m", 4, 37, 1).records().cloned().collect();
        records.retain(|r| r.image_id != "sr03" && r.image_id != "sv10");
        let partial = PredictionLog::from_records(records).unwrap();
        let err = evaluate_criterion(&corpus(), &partial, "m", "sock", 1).unwrap_err();
        assert_eq!(
            err,
            AuditError::Corpus(CorpusError::MissingRecords {
                model_id: "m".into(),
                image_ids: vec!["sr03".into(), "sv10".into()],
            })
        );
    }

    #[test]
    fn enacted_value_mapping_is_exhaustive() {
        assert_eq!(enacted(Decision::Recognizes, "r", "u"), EnactedValue::Pole("r".into()));
        assert_eq!(enacted(Decision::EasierToDetect, "r", "u"), EnactedValue::Pole("r".into()));
        assert_eq!(enacted(Decision::DoesNotRecognize, "r", "u"), EnactedValue::Pole("u".into()));
        assert_eq!(enacted(Decision::Indeterminate, "r", "u"), EnactedValue::Unclear);
    }

    #[test]
    fn validation_accuracy_scopes() {
        let c = corpus();
        let l = log("vgg16", 4, 37, 1);
        assert_eq!(
            validation_accuracy(&c, &l, "vgg16", Scope::Category(SOCK), 1).unwrap(),
            0.74
        );
        assert_eq!(
            validation_accuracy(&c, &l, "vgg16", Scope::AllCategories, 1).unwrap(),
            0.74
        );
        assert_eq!(
            validation_accuracy(&c, &l, "vgg16", Scope::Category("eggs"), 1),
            Err(AuditError::EmptyScope)
        );
    }

    fn result(criterion: &str, model: &str, rival: (u64, u64), val: (u64, u64)) -> CriterionResult {
        let rival = Counts::new(rival.0, rival.1);
        let val = Counts::new(val.0, val.1);
        let assessment = assess(rival, val).unwrap();
        CriterionResult {
            criterion_id: criterion.into(),
            model_id: model.into(),
            k_eval: 5,
            rival_counts: rival,
            val_counts: Some(val),
            assessment: Some(assessment),
            enacted_value: enacted(assessment.decision, "r", "u"),
        }
    }

    #[test]
    fn averaged_rival_accuracy_is_unweighted() {
        let rs = vec![
            result("a", "m", (10, 20), (40, 50)),
            result("b", "m", (7, 10), (40, 50)),
        ];
        assert!((averaged_rival_accuracy(&rs).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(averaged_rival_accuracy(&rs[..1]).unwrap(), 0.5);
        assert_eq!(averaged_rival_accuracy(&[]), Err(AuditError::NoResults));
        let mixed = vec![result("a", "m", (1, 2), (1, 2)), result("a", "n", (1, 2), (1, 2))];
        assert!(matches!(averaged_rival_accuracy(&mixed), Err(AuditError::MixedModels(..))));
    }

    const MODELS: [&str; 4] = ["vgg16", "resnet50", "inceptionv3", "nasnetlarge"];

    fn sock_results() -> Vec<CriterionResult> {
        vec![
            result("sock", "vgg16", (4, 15), (37, 50)),
            result("sock", "resnet50", (7, 15), (38, 50)),
            result("sock", "inceptionv3", (12, 15), (44, 50)),
            result("sock", "nasnetlarge", (8, 15), (45, 50)),
        ]
    }

    #[test]
    fn sock_flips_across_models() {
        let report = compare_models(&sock_results(), &MODELS).unwrap();
        let sock = &report.criteria[0];
        assert_eq!(
            sock.decisions,
            [
                Decision::DoesNotRecognize,
                Decision::Indeterminate,
                Decision::Recognizes,
                Decision::DoesNotRecognize
            ]
        );
        assert!(sock.flip);
        assert_eq!(report.flip_count(), 1);
        assert!(!sock.monotonic_rival);
        assert!(sock.monotonic_val);
    }

    #[test]
    fn uniform_decisions_do_not_flip() {
        let hay: Vec<_> = MODELS
            .iter()
            .zip([44, 45, 46, 47])
            .map(|(m, v)| result("hay", m, (0, 15), (v, 50)))
            .collect();
        let report = compare_models(&hay, &MODELS).unwrap();
        assert!(!report.criteria[0].flip);
        assert!(!report.criteria[0].monotonic_rival);
        assert!(report.criteria[0].monotonic_val);
        assert_eq!(report.monotonic_both_count(), 0);
    }

    #[test]
    fn plateau_is_not_an_increase() {
        assert!(!increases_monotonically(&[0.2, 0.2, 0.2, 0.2]));
        assert!(increases_monotonically(&[0.2, 0.2, 0.4, 0.4]));
        assert!(!increases_monotonically(&[0.2, 0.4, 0.3, 0.5]));
    }

    #[test]
    fn indeterminate_alone_never_flips() {
        use Decision::*;
        assert!(!flips(&[Indeterminate, Recognizes, EasierToDetect]));
        assert!(!flips(&[Indeterminate, DoesNotRecognize]));
        assert!(flips(&[EasierToDetect, DoesNotRecognize]));
    }

    #[test]
    fn ragged_results_are_rejected() {
        let mut rs = sock_results();
        rs.pop();
        assert!(matches!(
            compare_models(&rs, &MODELS),
            Err(AuditError::MissingResult { .. })
        ));
        let mut rs = sock_results();
        rs.push(rs[0].clone());
        assert!(matches!(
            compare_models(&rs, &MODELS),
            Err(AuditError::DuplicateResult { .. })
        ));
        assert!(matches!(
            compare_models(&sock_results(), &MODELS[..3]),
            Err(AuditError::UnlistedModel(_))
        ));
    }

    #[test]
    fn narrowing_keeps_criteria_flipping_at_both_depths() {
        let top5 = sock_results();
        let mut top1 = sock_results();
        for r in &mut top1 {
            r.k_eval = 1;
        }
        assert_eq!(top1_narrowing(&top1, &top5, &MODELS).unwrap(), vec!["sock".to_string()]);

        let flat: Vec<_> = MODELS.iter().map(|m| result("sock", m, (4, 15), (37, 50))).collect();
        assert!(top1_narrowing(&flat, &top5, &MODELS).unwrap().is_empty());
        assert!(top1_narrowing(&flat, &flat, &MODELS).unwrap().is_empty());

        let other: Vec<_> = MODELS.iter().map(|m| result("hay", m, (0, 15), (44, 50))).collect();
        assert_eq!(top1_narrowing(&other, &top5, &MODELS), Err(AuditError::CoverageMismatch));
    }

    #[test]
    fn dph_filter_is_strict() {
        let c = corpus();
        let r = vec![result("sock", "vgg16", (4, 15), (37, 50))];
        let fraction = c.exception_fraction("sock").unwrap();
        assert_eq!(dph_points(&c, &r, DEFAULT_MAX_FRACTION).len(), 1);
        assert!(dph_points(&c, &r, fraction).is_empty());
        assert_eq!(dph_points(&c, &r, fraction + 1e-12).len(), 1);
    }

    #[test]
    fn collinear_fit_is_exact() {
        let fit = fit_least_squares(&[(0.0, 0.0), (0.1, 0.5), (0.2, 1.0)]).unwrap();
        assert!((fit.slope - 5.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.n, 3);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_least_squares(&[(0.1, 0.2)]), Err(AuditError::TooFewPoints(1)));
        assert_eq!(
            fit_least_squares(&[(0.1, 0.2), (0.1, 0.4)]),
            Err(AuditError::DegenerateX)
        );
        assert_eq!(
            fit_least_squares(&[(0.1, f64::NAN), (0.2, 0.4)]),
            Err(AuditError::NonFinite)
        );
        let flat = fit_least_squares(&[(0.1, 0.4), (0.2, 0.4)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r_squared, 1.0);
    }

    proptest! {
        #[test]
        fn flip_ignores_model_order(picks in proptest::collection::vec(0usize..4, 4), perm_seed in 0usize..24) {
            let options = [(1u64, 15u64, 45u64), (14, 15, 42), (7, 15, 38), (15, 15, 32)];
            let rs: Vec<_> = MODELS.iter().zip(&picks)
                .map(|(m, &i)| result("c", m, (options[i].0, options[i].1), (options[i].2, 50)))
                .collect();
            let mut order: Vec<&str> = MODELS.to_vec();
            let mut seed = perm_seed;
            for i in (1..order.len()).rev() {
                order.swap(i, seed % (i + 1));
                seed /= i + 1;
            }
            let a = compare_models(&rs, &MODELS).unwrap();
            let b = compare_models(&rs, &order).unwrap();
            prop_assert_eq!(a.criteria[0].flip, b.criteria[0].flip);
        }

        #[test]
        fn collinear_fits_recover_the_line(
            slope in -5.0f64..5.0,
            intercept in -1.0f64..1.0,
            xs in proptest::collection::btree_set(0u32..1000, 2..50),
        ) {
            let pts: Vec<_> = xs.iter().map(|&x| {
                let x = x as f64 / 1000.0;
                (x, intercept + slope * x)
            }).collect();
            let fit = fit_least_squares(&pts).unwrap();
            prop_assert!((fit.slope - slope).abs() < 1e-9);
            prop_assert!((fit.intercept - intercept).abs() < 1e-10);
            prop_assert!((fit.r_squared - 1.0).abs() < 1e-12);
        }

        #[test]
        fn dph_points_shrink_with_threshold(counts in proptest::collection::vec(0u64..400, 1..20), hi in 0.0f64..1.0, lo_frac in 0.0f64..1.0) {
            let mut manifest = corpus().into_manifest();
            let template = manifest.criteria[0].clone();
            manifest.criteria.clear();
            let mut results = Vec::new();
            for (i, &count) in counts.iter().enumerate() {
                let mut c = template.clone();
                c.criterion_id = format!("c{i}");
                c.exception_count = count;
                manifest.criteria.push(c);
                results.push(result(&format!("c{i}"), "m", (4, 15), (37, 50)));
            }
            let corpus = Corpus::from_manifest(manifest.clone()).unwrap();
            let lo = hi * lo_frac;
            let n_hi = dph_points(&corpus, &results, hi).len();
            let n_lo = dph_points(&corpus, &results, lo).len();
            prop_assert!(n_lo <= n_hi);

            // Scaling every training count leaves the points unchanged.
            let mut scaled = manifest;
            for cat in &mut scaled.categories { cat.training_set_size *= 3; }
            for crit in &mut scaled.criteria { crit.exception_count *= 3; }
            let scaled = Corpus::from_manifest(scaled).unwrap();
            prop_assert_eq!(dph_points(&scaled, &results, hi), dph_points(&corpus, &results, hi));
        }
    }
}
