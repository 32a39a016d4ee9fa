//! Exact 2x2 statistics for rival-vs-validation comparisons.
//!
//! Rows are the rival set and the validation set, columns are recognized and
//! unrecognized images:
//!
//! ```text
//!              recognized  unrecognized
//! rival             a            b
//! validation        c            d
//! ```

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Counts;

/// Relative tolerance under which a table counts as tied with the observed one.
pub const TIE_TOLERANCE: f64 = 1e-7;

/// p below which a lower rival rate means the classifier does not recognize the rival type.
pub const SIGNIFICANT: f64 = 0.01;
/// p above which the rival set is similar enough to count as recognized.
pub const SIMILAR: f64 = 0.1;
pub const EXTREMELY_LOW: f64 = 0.0001;
pub const EXTREMELY_HIGH: f64 = 0.5;

/// Rival images to add when an assessment is inconclusive.
pub const AUGMENTATION_STEP: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    /// Builds the table from rival and validation counts. Panics if a
    /// recognized count exceeds its total.
    pub fn from_counts(rival: Counts, validation: Counts) -> Self {
        ContingencyTable {
            a: rival.recognized,
            b: rival.total - rival.recognized,
            c: validation.recognized,
            d: validation.total - validation.recognized,
        }
    }

    pub fn rival_rate(&self) -> Option<f64> {
        Counts::new(self.a, self.a + self.b).rate()
    }

    pub fn val_rate(&self) -> Option<f64> {
        Counts::new(self.c, self.c + self.d).rate()
    }

    pub fn swap_rows(&self) -> Self {
        ContingencyTable::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_columns(&self) -> Self {
        ContingencyTable::new(self.b, self.a, self.d, self.c)
    }

    fn margins(&self) -> Margins {
        Margins {
            row1: self.a + self.b,
            row2: self.c + self.d,
            col1: self.a + self.c,
        }
    }
}

struct Margins {
    row1: u64,
    row2: u64,
    col1: u64,
}

impl Margins {
    fn total(&self) -> u64 {
        self.row1 + self.row2
    }

    fn col2(&self) -> u64 {
        self.total() - self.col1
    }

    /// Only one table fits these margins.
    fn is_degenerate(&self) -> bool {
        self.row1 == 0 || self.row2 == 0 || self.col1 == 0 || self.col2() == 0
    }

    /// Admissible values of the top-left cell.
    fn support(&self) -> (u64, u64) {
        (
            self.col1.saturating_sub(self.row2),
            self.row1.min(self.col1),
        )
    }
}

fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Probability of `table` under the hypergeometric distribution of its margins.
pub fn hypergeom_prob(table: &ContingencyTable) -> f64 {
    let m = table.margins();
    if m.is_degenerate() {
        return 1.0;
    }
    let ln_p =
        ln_choose(m.row1, table.a) + ln_choose(m.row2, table.c) - ln_choose(m.total(), m.col1);
    libm::exp(ln_p).clamp(0.0, 1.0)
}

/// Two-sided Fisher exact test: the total probability of all tables with the
/// observed margins that are at most as probable as the observed table.
///
/// Table weights are built in log space by the ratio recurrence outward from
/// the mode, which keeps margins in the tens of thousands stable, and are
/// normalized by their own log-sum-exp.
pub fn fisher_two_sided(table: &ContingencyTable) -> f64 {
    let m = table.margins();
    if m.is_degenerate() {
        return 1.0;
    }
    let (lo, hi) = m.support();
    let r1 = m.row1 as f64;
    let c1 = m.col1 as f64;
    // d - a is constant over the support: r2 - c1.
    let offset = m.row2 as f64 - c1;

    let mode = {
        let guess = ((r1 + 1.0) * (c1 + 1.0) / (m.total() as f64 + 2.0)) as u64;
        guess.clamp(lo, hi)
    };

    let len = (hi - lo + 1) as usize;
    let mut ln_w = alloc::vec![0.0f64; len];
    let at = |x: u64| (x - lo) as usize;

    // P(x + 1) / P(x) = (r1 - x)(c1 - x) / ((x + 1)(r2 - c1 + x + 1))
    for x in mode..hi {
        let xf = x as f64;
        let step = libm::log((r1 - xf) * (c1 - xf)) - libm::log((xf + 1.0) * (offset + xf + 1.0));
        ln_w[at(x + 1)] = ln_w[at(x)] + step;
    }
    for x in (lo + 1..=mode).rev() {
        let xf = x as f64;
        let step = libm::log(xf * (offset + xf)) - libm::log((r1 - xf + 1.0) * (c1 - xf + 1.0));
        ln_w[at(x - 1)] = ln_w[at(x)] + step;
    }

    let observed = ln_w[at(table.a)];
    let cutoff = observed + libm::log1p(TIE_TOLERANCE);
    let extreme: Vec<f64> = ln_w.iter().copied().filter(|&w| w <= cutoff).collect();

    let p = libm::exp(log_sum_exp(&extreme) - log_sum_exp(&ln_w));
    // Underflow of astronomically small p-values still reports a positive p.
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// Similarity of rival and validation recognition, by p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarityBucket {
    ExtremelyLow,
    Low,
    Unclear,
    High,
    ExtremelyHigh,
    EasierToDetect,
}

impl SimilarityBucket {
    pub fn label(&self) -> &'static str {
        match self {
            SimilarityBucket::ExtremelyLow => "Extremely low",
            SimilarityBucket::Low => "Low",
            SimilarityBucket::Unclear => "Unclear",
            SimilarityBucket::High => "High",
            SimilarityBucket::ExtremelyHigh => "Extremely high",
            SimilarityBucket::EasierToDetect => "Easier to detect",
        }
    }

    /// Case-insensitive inverse of [`label`](Self::label).
    pub fn from_label(label: &str) -> Option<Self> {
        [
            SimilarityBucket::ExtremelyLow,
            SimilarityBucket::Low,
            SimilarityBucket::Unclear,
            SimilarityBucket::High,
            SimilarityBucket::ExtremelyHigh,
            SimilarityBucket::EasierToDetect,
        ]
        .into_iter()
        .find(|b| b.label().eq_ignore_ascii_case(label.trim()))
    }
}

impl fmt::Display for SimilarityBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Recognizes,
    DoesNotRecognize,
    Indeterminate,
    EasierToDetect,
}

/// Which pole of a value mapping a decision lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Recognized,
    Unrecognized,
}

impl Decision {
    /// `None` for indeterminate decisions.
    pub fn side(&self) -> Option<Side> {
        match self {
            Decision::Recognizes | Decision::EasierToDetect => Some(Side::Recognized),
            Decision::DoesNotRecognize => Some(Side::Unrecognized),
            Decision::Indeterminate => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Recognizes => "Recognizes",
            Decision::DoesNotRecognize => "DoesNotRecognize",
            Decision::Indeterminate => "Indeterminate",
            Decision::EasierToDetect => "EasierToDetect",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StatsError {
    #[error("p-value {0} is outside [0, 1]")]
    PValueOutOfRange(f64),
    #[error("recognition rate {0} is outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("cannot assess an empty {0} set")]
    EmptySet(&'static str),
    #[error("{set} set has {recognized} recognized images out of {total}")]
    InconsistentCounts {
        set: &'static str,
        recognized: u64,
        total: u64,
    },
}

/// Buckets a p-value. `EasierToDetect` wins over the low buckets whenever
/// the rival rate is the higher one.
pub fn similarity_bucket(
    p: f64,
    rival_rate: f64,
    val_rate: f64,
) -> Result<SimilarityBucket, StatsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::PValueOutOfRange(p));
    }
    for rate in [rival_rate, val_rate] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(StatsError::RateOutOfRange(rate));
        }
    }
    Ok(if p <= SIGNIFICANT && rival_rate > val_rate {
        SimilarityBucket::EasierToDetect
    } else if p <= EXTREMELY_LOW {
        SimilarityBucket::ExtremelyLow
    } else if p < SIGNIFICANT {
        SimilarityBucket::Low
    } else if p < SIMILAR {
        SimilarityBucket::Unclear
    } else if p < EXTREMELY_HIGH {
        SimilarityBucket::High
    } else {
        SimilarityBucket::ExtremelyHigh
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub p_value: f64,
    pub bucket: SimilarityBucket,
    pub decision: Decision,
    pub rival_rate: f64,
    pub val_rate: f64,
    pub needs_more_images: bool,
}

fn check_counts(set: &'static str, counts: Counts) -> Result<(), StatsError> {
    if counts.total == 0 {
        return Err(StatsError::EmptySet(set));
    }
    if counts.recognized > counts.total {
        return Err(StatsError::InconsistentCounts {
            set,
            recognized: counts.recognized,
            total: counts.total,
        });
    }
    Ok(())
}

/// Compares rival recognition against the validation baseline.
pub fn assess(rival: Counts, validation: Counts) -> Result<Assessment, StatsError> {
    check_counts("rival", rival)?;
    check_counts("validation", validation)?;
    let table = ContingencyTable::from_counts(rival, validation);
    let p_value = fisher_two_sided(&table);
    let rival_rate = rival.recognized as f64 / rival.total as f64;
    let val_rate = validation.recognized as f64 / validation.total as f64;
    let bucket = similarity_bucket(p_value, rival_rate, val_rate)?;

    let decision = if bucket == SimilarityBucket::EasierToDetect {
        Decision::EasierToDetect
    } else if p_value < SIGNIFICANT && rival_rate < val_rate {
        Decision::DoesNotRecognize
    } else if p_value > SIMILAR {
        Decision::Recognizes
    } else {
        Decision::Indeterminate
    };

    Ok(Assessment {
        p_value,
        bucket,
        decision,
        rival_rate,
        val_rate,
        needs_more_images: decision == Decision::Indeterminate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationAdvice {
    pub needed: bool,
    pub additional_rival_images: u32,
}

/// Inconclusive assessments call for [`AUGMENTATION_STEP`] more rival images.
pub fn needs_augmentation(assessment: &Assessment) -> AugmentationAdvice {
    let needed = assessment.decision == Decision::Indeterminate;
    AugmentationAdvice {
        needed,
        additional_rival_images: if needed { AUGMENTATION_STEP } else { 0 },
    }
}
