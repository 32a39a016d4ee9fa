//! Audit data model: categories, rival criteria, prediction logs and
//! top-k recognition.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cluster of open social questions a category's decision boundary speaks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueArea {
    Nutrition,
    Maturation,
    Utility,
    Modesty,
    Beauty,
    Wonder,
    Squeamishness,
    Other,
}

impl ValueArea {
    pub const ALL: [ValueArea; 8] = [
        ValueArea::Nutrition,
        ValueArea::Maturation,
        ValueArea::Utility,
        ValueArea::Modesty,
        ValueArea::Beauty,
        ValueArea::Wonder,
        ValueArea::Squeamishness,
        ValueArea::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ValueArea::Nutrition => "nutrition",
            ValueArea::Maturation => "maturation",
            ValueArea::Utility => "utility",
            ValueArea::Modesty => "modesty",
            ValueArea::Beauty => "beauty",
            ValueArea::Wonder => "wonder",
            ValueArea::Squeamishness => "squeamishness",
            ValueArea::Other => "other",
        }
    }
}

impl fmt::Display for ValueArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An audited category, e.g. an ImageNet synset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub category_id: String,
    pub display_labels: Vec<String>,
    pub value_area: ValueArea,
    /// Free-text description of the category's visual variation. Never interpreted.
    #[serde(default)]
    pub overview_notes: String,
    pub training_set_size: u64,
    /// Empty for pseudo-categories that own baseline-free (hybrid) criteria.
    pub validation_image_ids: Vec<String>,
    /// Advisory only; twins are audited independently.
    #[serde(default)]
    pub twin_category_ids: Vec<String>,
}

impl CategorySpec {
    /// A category without validation images cannot provide a baseline.
    pub fn is_baseline_free(&self) -> bool {
        self.validation_image_ids.is_empty()
    }

    pub fn label(&self) -> String {
        if self.display_labels.is_empty() {
            self.category_id.clone()
        } else {
            self.display_labels.join(", ")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchKind {
    ExactCategory,
    AnyOfCategories,
}

/// Which predicted labels count as recognizing an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRule {
    pub kind: MatchKind,
    pub accepted_category_ids: Vec<String>,
}

impl MatchRule {
    pub fn exact(category_id: impl Into<String>) -> Self {
        MatchRule {
            kind: MatchKind::ExactCategory,
            accepted_category_ids: alloc::vec![category_id.into()],
        }
    }

    pub fn any_of<I, S>(category_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MatchRule {
            kind: MatchKind::AnyOfCategories,
            accepted_category_ids: category_ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn accepts(&self, label: &str) -> bool {
        self.accepted_category_ids.iter().any(|id| id == label)
    }

    fn violations(&self, path: &str, out: &mut Vec<Violation>) {
        match self.kind {
            MatchKind::ExactCategory if self.accepted_category_ids.len() != 1 => {
                out.push(Violation::new(
                    format!("{path}.accepted_category_ids"),
                    format!(
                        "ExactCategory needs exactly one category id, found {}",
                        self.accepted_category_ids.len()
                    ),
                ));
            }
            MatchKind::AnyOfCategories if self.accepted_category_ids.is_empty() => {
                out.push(Violation::new(
                    format!("{path}.accepted_category_ids"),
                    "AnyOfCategories needs at least one category id",
                ));
            }
            _ => {}
        }
        for (i, id) in self.accepted_category_ids.iter().enumerate() {
            if id.is_empty() {
                out.push(Violation::new(
                    format!("{path}.accepted_category_ids[{i}]"),
                    "empty category id",
                ));
            }
        }
    }
}

/// Maps the recognition outcome of a rival set onto the poles of an open
/// question, with the cultural, relational and temporal context it was
/// posed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueMapping {
    #[serde(default)]
    pub open_question: String,
    pub value_if_recognized: String,
    pub value_if_unrecognized: String,
    #[serde(default)]
    pub cultural_context: String,
    #[serde(default)]
    pub relationality: String,
    #[serde(default)]
    pub time_context: String,
}

/// A value-revealing subgroup of a category and its rival image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RivalCriterion {
    pub criterion_id: String,
    pub category_id: String,
    pub description: String,
    pub rival_image_ids: Vec<String>,
    /// Training images already showing the rival condition.
    pub exception_count: u64,
    /// Tagged training images behind `exception_count`, when tagging went
    /// through the curation server. Either empty or exactly
    /// `exception_count` distinct ids.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exception_image_ids: Vec<String>,
    pub recognition_rule: MatchRule,
    pub value_mapping: ValueMapping,
}

/// Serialized shape of a corpus manifest. Use [`Corpus::from_manifest`] to
/// obtain a validated [`Corpus`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub categories: Vec<CategorySpec>,
    pub criteria: Vec<RivalCriterion>,
}

/// One violated invariant, addressed by its path inside the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("manifest violates {} invariant(s): {}", .violations.len(), join_violations(.violations))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// A validated, immutable audit corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    manifest: CorpusManifest,
    category_index: BTreeMap<String, usize>,
    criterion_index: BTreeMap<String, usize>,
}

impl Corpus {
    /// Validates every invariant and reports all violations at once.
    pub fn from_manifest(manifest: CorpusManifest) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        let mut category_index = BTreeMap::new();

        for (i, cat) in manifest.categories.iter().enumerate() {
            let path = format!("categories[{i}]");
            if cat.category_id.is_empty() {
                violations.push(Violation::new(format!("{path}.category_id"), "empty category id"));
            } else if let Some(&first) = category_index.get(&cat.category_id) {
                violations.push(Violation::new(
                    format!("{path}.category_id"),
                    format!(
                        "duplicate category id '{}' (also categories[{first}])",
                        cat.category_id
                    ),
                ));
            } else {
                category_index.insert(cat.category_id.clone(), i);
            }
            if cat.training_set_size == 0 {
                violations.push(Violation::new(
                    format!("{path}.training_set_size"),
                    "training set size must be at least 1",
                ));
            }
            duplicate_ids(
                &cat.validation_image_ids,
                &format!("{path}.validation_image_ids"),
                &mut violations,
            );
        }

        let mut criterion_index = BTreeMap::new();
        for (i, crit) in manifest.criteria.iter().enumerate() {
            let path = format!("criteria[{i}]");
            if crit.criterion_id.is_empty() {
                violations.push(Violation::new(
                    format!("{path}.criterion_id"),
                    "empty criterion id",
                ));
            } else if let Some(&first) = criterion_index.get(&crit.criterion_id) {
                violations.push(Violation::new(
                    format!("{path}.criterion_id"),
                    format!(
                        "duplicate criterion id '{}' (also criteria[{first}])",
                        crit.criterion_id
                    ),
                ));
            } else {
                criterion_index.insert(crit.criterion_id.clone(), i);
            }

            match category_index.get(&crit.category_id) {
                None => violations.push(Violation::new(
                    format!("{path}.category_id"),
                    format!("unknown category '{}'", crit.category_id),
                )),
                Some(&c) => {
                    let size = manifest.categories[c].training_set_size;
                    if crit.exception_count > size {
                        violations.push(Violation::new(
                            format!("{path}.exception_count"),
                            format!(
                                "exception count {} exceeds training set size {size}",
                                crit.exception_count
                            ),
                        ));
                    }
                }
            }

            if crit.rival_image_ids.is_empty() {
                violations.push(Violation::new(
                    format!("{path}.rival_image_ids"),
                    "rival set is empty",
                ));
            }
            duplicate_ids(
                &crit.rival_image_ids,
                &format!("{path}.rival_image_ids"),
                &mut violations,
            );

            if !crit.exception_image_ids.is_empty() {
                duplicate_ids(
                    &crit.exception_image_ids,
                    &format!("{path}.exception_image_ids"),
                    &mut violations,
                );
                if crit.exception_image_ids.len() as u64 != crit.exception_count {
                    violations.push(Violation::new(
                        format!("{path}.exception_count"),
                        format!(
                            "exception count {} disagrees with {} tagged exception images",
                            crit.exception_count,
                            crit.exception_image_ids.len()
                        ),
                    ));
                }
            }

            crit.recognition_rule
                .violations(&format!("{path}.recognition_rule"), &mut violations);

            let vm = &crit.value_mapping;
            let vpath = format!("{path}.value_mapping");
            if vm.value_if_recognized.is_empty() {
                violations.push(Violation::new(
                    format!("{vpath}.value_if_recognized"),
                    "empty value",
                ));
            }
            if vm.value_if_unrecognized.is_empty() {
                violations.push(Violation::new(
                    format!("{vpath}.value_if_unrecognized"),
                    "empty value",
                ));
            }
            if !vm.value_if_recognized.is_empty()
                && vm.value_if_recognized == vm.value_if_unrecognized
            {
                violations.push(Violation::new(
                    vpath,
                    "recognized and unrecognized values must differ",
                ));
            }
        }

        if violations.is_empty() {
            Ok(Corpus {
                manifest,
                category_index,
                criterion_index,
            })
        } else {
            Err(ValidationError { violations })
        }
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn into_manifest(self) -> CorpusManifest {
        self.manifest
    }

    pub fn categories(&self) -> &[CategorySpec] {
        &self.manifest.categories
    }

    pub fn criteria(&self) -> &[RivalCriterion] {
        &self.manifest.criteria
    }

    pub fn category(&self, category_id: &str) -> Option<&CategorySpec> {
        self.category_index
            .get(category_id)
            .map(|&i| &self.manifest.categories[i])
    }

    pub fn criterion(&self, criterion_id: &str) -> Option<&RivalCriterion> {
        self.criterion_index
            .get(criterion_id)
            .map(|&i| &self.manifest.criteria[i])
    }

    /// Category that owns `criterion`. Always present for criteria of this corpus.
    pub fn owner(&self, criterion: &RivalCriterion) -> &CategorySpec {
        &self.manifest.categories[self.category_index[&criterion.category_id]]
    }

    /// Share of the owning category's training set showing the rival condition.
    pub fn exception_fraction(&self, criterion_id: &str) -> Option<f64> {
        let crit = self.criterion(criterion_id)?;
        let size = self.owner(crit).training_set_size;
        Some(crit.exception_count as f64 / size as f64)
    }

    /// Returns a revalidated copy with one criterion modified.
    pub fn update_criterion<F>(&self, criterion_id: &str, edit: F) -> Result<Corpus, CorpusError>
    where
        F: FnOnce(&mut RivalCriterion),
    {
        let &i = self
            .criterion_index
            .get(criterion_id)
            .ok_or_else(|| CorpusError::UnknownCriterion(criterion_id.into()))?;
        let mut manifest = self.manifest.clone();
        edit(&mut manifest.criteria[i]);
        if manifest.criteria[i].criterion_id != criterion_id {
            return Err(CorpusError::Validation(ValidationError {
                violations: alloc::vec![Violation::new(
                    format!("criteria[{i}].criterion_id"),
                    "criterion id cannot be changed in place",
                )],
            }));
        }
        Ok(Corpus::from_manifest(manifest)?)
    }
}

fn duplicate_ids(ids: &[String], path: &str, out: &mut Vec<Violation>) {
    let mut seen = BTreeMap::new();
    for (j, id) in ids.iter().enumerate() {
        if let Some(first) = seen.insert(id.as_str(), j) {
            out.push(Violation::new(
                format!("{path}[{j}]"),
                format!("duplicate id '{id}' (also [{first}])"),
            ));
            seen.insert(id.as_str(), first);
        }
    }
}

/// One (label, score) entry of a top-k prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredLabel {
    pub label: String,
    pub score: f64,
}

impl ScoredLabel {
    pub fn new(label: impl Into<String>, score: f64) -> Self {
        ScoredLabel {
            label: label.into(),
            score,
        }
    }
}

/// A classifier's ordered top-k output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub model_id: String,
    pub k: u32,
    pub topk: Vec<ScoredLabel>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("empty image_id or model_id")]
    EmptyId,
    #[error("k must be positive")]
    ZeroK,
    #[error("topk has {len} entries but k = {k}")]
    TopkLength { k: u32, len: usize },
    #[error("label '{0}' appears more than once in topk")]
    DuplicateLabel(String),
    #[error("score {score} at rank {rank} is outside [0, 1]")]
    ScoreOutOfRange { rank: usize, score: f64 },
    #[error("score at rank {rank} is higher than the score before it")]
    ScoresIncreasing { rank: usize },
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.image_id.is_empty() || self.model_id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.k == 0 {
            return Err(RecordError::ZeroK);
        }
        if self.topk.len() != self.k as usize {
            return Err(RecordError::TopkLength {
                k: self.k,
                len: self.topk.len(),
            });
        }
        let mut labels = BTreeSet::new();
        for (rank, entry) in self.topk.iter().enumerate() {
            if !labels.insert(entry.label.as_str()) {
                return Err(RecordError::DuplicateLabel(entry.label.clone()));
            }
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(RecordError::ScoreOutOfRange {
                    rank: rank + 1,
                    score: entry.score,
                });
            }
        }
        // Ties keep the adapter's order.
        if let Some(i) = self
            .topk
            .windows(2)
            .position(|w| w[1].score > w[0].score)
        {
            return Err(RecordError::ScoresIncreasing { rank: i + 2 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("record {index} ({model_id}/{image_id}): {source}")]
    InvalidRecord {
        index: usize,
        model_id: String,
        image_id: String,
        source: RecordError,
    },
    #[error("record {index}: duplicate prediction for model '{model_id}', image '{image_id}'")]
    Duplicate {
        index: usize,
        model_id: String,
        image_id: String,
    },
    #[error("record {index}: model '{model_id}' was recorded with k = {expected}, image '{image_id}' has k = {found}")]
    KMismatch {
        index: usize,
        model_id: String,
        image_id: String,
        expected: u32,
        found: u32,
    },
}

/// Prediction records keyed by (model_id, image_id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionLog {
    records: BTreeMap<(String, String), PredictionRecord>,
    model_k: BTreeMap<String, u32>,
}

impl PredictionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<I>(records: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = PredictionRecord>,
    {
        let mut log = PredictionLog::new();
        log.ingest(records)?;
        Ok(log)
    }

    /// Adds a batch of records. The batch is applied entirely or not at all.
    /// Returns the number of records added.
    pub fn ingest<I>(&mut self, batch: I) -> Result<usize, IngestError>
    where
        I: IntoIterator<Item = PredictionRecord>,
    {
        let batch: Vec<PredictionRecord> = batch.into_iter().collect();
        let mut batch_keys = BTreeSet::new();
        let mut batch_k: BTreeMap<&str, u32> = BTreeMap::new();

        for (index, rec) in batch.iter().enumerate() {
            rec.validate().map_err(|source| IngestError::InvalidRecord {
                index,
                model_id: rec.model_id.clone(),
                image_id: rec.image_id.clone(),
                source,
            })?;
            let key = (rec.model_id.as_str(), rec.image_id.as_str());
            if !batch_keys.insert(key)
                || self
                    .records
                    .contains_key(&(rec.model_id.clone(), rec.image_id.clone()))
            {
                return Err(IngestError::Duplicate {
                    index,
                    model_id: rec.model_id.clone(),
                    image_id: rec.image_id.clone(),
                });
            }
            let expected = self
                .model_k
                .get(&rec.model_id)
                .copied()
                .or_else(|| batch_k.get(rec.model_id.as_str()).copied());
            match expected {
                Some(k) if k != rec.k => {
                    return Err(IngestError::KMismatch {
                        index,
                        model_id: rec.model_id.clone(),
                        image_id: rec.image_id.clone(),
                        expected: k,
                        found: rec.k,
                    })
                }
                Some(_) => {}
                None => {
                    batch_k.insert(rec.model_id.as_str(), rec.k);
                }
            }
        }

        let added = batch.len();
        for rec in batch {
            self.model_k.entry(rec.model_id.clone()).or_insert(rec.k);
            self.records
                .insert((rec.model_id.clone(), rec.image_id.clone()), rec);
        }
        Ok(added)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, model_id: &str, image_id: &str) -> Option<&PredictionRecord> {
        // BTreeMap<(String, String), _> cannot be queried with borrowed tuples.
        self.records
            .get(&(String::from(model_id), String::from(image_id)))
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.model_k.keys().map(String::as_str)
    }

    /// k recorded for `model_id`, if the model is present.
    pub fn recorded_k(&self, model_id: &str) -> Option<u32> {
        self.model_k.get(model_id).copied()
    }

    /// Records in (model_id, image_id) order.
    pub fn records(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.values()
    }

    /// Image ids from `image_ids` without a record for `model_id`, in input order.
    pub fn missing(&self, model_id: &str, image_ids: &[String]) -> Vec<String> {
        image_ids
            .iter()
            .filter(|id| self.get(model_id, id).is_none())
            .cloned()
            .collect()
    }
}

/// Recognized out of total images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub recognized: u64,
    pub total: u64,
}

impl Counts {
    pub fn new(recognized: u64, total: u64) -> Self {
        Counts { recognized, total }
    }

    /// `None` for an empty set.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.recognized as f64 / self.total as f64)
    }
}

impl core::ops::Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts::new(self.recognized + rhs.recognized, self.total + rhs.total)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("k_eval must be positive")]
    ZeroK,
    #[error("cannot evaluate top-{requested}: only top-{recorded} was recorded")]
    KTooDeep { requested: u32, recorded: u32 },
    #[error("model '{model_id}' has no prediction for {} image(s): {}", .image_ids.len(), .image_ids.join(", "))]
    MissingRecords {
        model_id: String,
        image_ids: Vec<String>,
    },
    #[error("unknown criterion '{0}'")]
    UnknownCriterion(String),
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

/// True iff one of the first `k_eval` labels is accepted by `rule`.
pub fn is_recognized(
    record: &PredictionRecord,
    rule: &MatchRule,
    k_eval: u32,
) -> Result<bool, CorpusError> {
    if k_eval == 0 {
        return Err(CorpusError::ZeroK);
    }
    if k_eval > record.k {
        return Err(CorpusError::KTooDeep {
            requested: k_eval,
            recorded: record.k,
        });
    }
    Ok(record
        .topk
        .iter()
        .take(k_eval as usize)
        .any(|entry| rule.accepts(&entry.label)))
}

/// Counts the images of `image_ids` that `model_id` recognizes under `rule`.
pub fn counts_for(
    log: &PredictionLog,
    model_id: &str,
    image_ids: &[String],
    rule: &MatchRule,
    k_eval: u32,
) -> Result<Counts, CorpusError> {
    let missing = log.missing(model_id, image_ids);
    if !missing.is_empty() {
        return Err(CorpusError::MissingRecords {
            model_id: model_id.into(),
            image_ids: missing,
        });
    }
    let mut counts = Counts::new(0, image_ids.len() as u64);
    for id in image_ids {
        let record = log.get(model_id, id).expect("coverage checked above");
        if is_recognized(record, rule, k_eval)? {
            counts.recognized += 1;
        }
    }
    Ok(counts)
}
