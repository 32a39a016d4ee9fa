//! Report generation: assessment tables, exception-fraction scatter data,
//! and regeneration of printed percentage tables into counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use valulens_core::{
    assess, Corpus, Counts, CriterionResult, DphPoint, RegressionFit, SimilarityBucket, ValueArea,
};

use crate::error::{Error, Result};

/// Rival set size assumed when a printed rate carries no denominator.
pub const DEFAULT_RIVAL_DENOMINATOR: u64 = 15;
/// Validation set size per category.
pub const DEFAULT_VALIDATION_DENOMINATOR: u64 = 50;

/// p-value to three significant figures; scientific notation below 1e-4.
pub fn format_p(p: f64) -> String {
    if p <= 0.0 {
        return "0".into();
    }
    if p < 1e-4 {
        return format!("{p:.2e}");
    }
    let magnitude = p.log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{p:.decimals$}")
}

/// Whole percent, rounded half away from zero.
pub fn format_percent(rate: f64) -> String {
    format!("{}%", (rate * 100.0).round() as i64)
}

fn rate_cell(counts: Counts) -> String {
    let pct = format_percent(counts.rate().unwrap_or(0.0));
    if counts.total == DEFAULT_RIVAL_DENOMINATOR {
        pct
    } else {
        format!("{pct} (of {})", counts.total)
    }
}

/// One line of an assessment table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub value_area: ValueArea,
    pub enacted_value: String,
    pub category_id: String,
    pub category_label: String,
    pub criterion_id: String,
    pub criterion: String,
    pub model_id: String,
    pub k_eval: u32,
    pub rival_counts: Counts,
    pub val_counts: Option<Counts>,
    pub p_value: Option<f64>,
    pub similarity: String,
    pub decision: String,
}

impl ReportRow {
    /// Rival rate, with its denominator when the set is not the default size.
    pub fn rival_cell(&self) -> String {
        rate_cell(self.rival_counts)
    }

    pub fn val_cell(&self) -> String {
        self.val_counts
            .and_then(|c| c.rate())
            .map(format_percent)
            .unwrap_or_else(|| "N/A".into())
    }
}

/// Rows ordered by value area, category, criterion, then model.
pub fn build_rows(corpus: &Corpus, results: &[CriterionResult]) -> Result<Vec<ReportRow>> {
    if results.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let criterion = corpus
            .criterion(&r.criterion_id)
            .ok_or_else(|| valulens_core::CorpusError::UnknownCriterion(r.criterion_id.clone()))?;
        let category = corpus.owner(criterion);
        rows.push(ReportRow {
            value_area: category.value_area,
            enacted_value: r.enacted_value.to_string(),
            category_id: category.category_id.clone(),
            category_label: category.label(),
            criterion_id: r.criterion_id.clone(),
            criterion: criterion.description.clone(),
            model_id: r.model_id.clone(),
            k_eval: r.k_eval,
            rival_counts: r.rival_counts,
            val_counts: r.val_counts,
            p_value: r.assessment.map(|a| a.p_value),
            similarity: r
                .assessment
                .map(|a| a.bucket.label().to_string())
                .unwrap_or_else(|| "N/A".into()),
            decision: r
                .assessment
                .map(|a| a.decision.to_string())
                .unwrap_or_else(|| "N/A".into()),
        });
    }
    rows.sort_by(|a, b| {
        (a.value_area, &a.category_id, &a.criterion_id, &a.model_id)
            .cmp(&(b.value_area, &b.category_id, &b.criterion_id, &b.model_id))
    });
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    /// CSV with raw counts, rates to one decimal and p to three significant figures.
    Delimited,
    /// Space-aligned text with whole percentages.
    Aligned,
}

pub fn emit_assessment_table<W: Write>(
    corpus: &Corpus,
    results: &[CriterionResult],
    format: TableFormat,
    w: W,
) -> Result<()> {
    let rows = build_rows(corpus, results)?;
    match format {
        TableFormat::Delimited => write_delimited(&rows, w),
        TableFormat::Aligned => write_aligned(&rows, w),
    }
}

fn write_delimited<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "value_area",
        "enacted_value",
        "category_id",
        "category",
        "criterion_id",
        "criterion",
        "model_id",
        "k",
        "rival_recognized",
        "rival_total",
        "rival_pct",
        "val_recognized",
        "val_total",
        "val_pct",
        "p_value",
        "similarity",
        "decision",
    ])?;
    let pct = |c: Counts| format!("{:.1}", c.rate().unwrap_or(0.0) * 100.0);
    for row in rows {
        let (val_rec, val_total, val_pct) = match row.val_counts {
            Some(c) => (c.recognized.to_string(), c.total.to_string(), pct(c)),
            None => (String::new(), String::new(), String::new()),
        };
        out.write_record([
            row.value_area.as_str().to_string(),
            row.enacted_value.clone(),
            row.category_id.clone(),
            row.category_label.clone(),
            row.criterion_id.clone(),
            row.criterion.clone(),
            row.model_id.clone(),
            row.k_eval.to_string(),
            row.rival_counts.recognized.to_string(),
            row.rival_counts.total.to_string(),
            pct(row.rival_counts),
            val_rec,
            val_total,
            val_pct,
            row.p_value.map(format_p).unwrap_or_default(),
            row.similarity.clone(),
            row.decision.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn write_aligned<W: Write>(rows: &[ReportRow], mut w: W) -> Result<()> {
    let header = [
        "Value area",
        "Value enacted",
        "Category - rival criteria",
        "Model",
        "% rival",
        "% val",
        "Similarity",
    ];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.value_area.as_str().to_uppercase(),
                r.enacted_value.clone(),
                format!("{} - {}", r.category_label, r.criterion),
                format!("{} top-{}", r.model_id, r.k_eval),
                r.rival_cell(),
                r.val_cell(),
                r.similarity.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (width, cell) in widths.iter_mut().zip(row) {
            *width = (*width).max(cell.chars().count());
        }
    }
    let mut write_line = |fields: &[&str]| -> std::io::Result<()> {
        let mut line = String::new();
        for (i, (field, width)) in fields.iter().zip(&widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(field);
            line.extend(std::iter::repeat_n(' ', width - field.chars().count()));
        }
        writeln!(w, "{}", line.trim_end())
    };
    write_line(&header)?;
    for row in &cells {
        let fields: Vec<&str> = row.iter().map(String::as_str).collect();
        write_line(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Scatter data: one point series and one two-point trend line per model.
/// Columns: `model_id,kind,criterion_id,exception_fraction,rival_rate`.
pub fn emit_dph_scatter<W: Write>(
    points: &[DphPoint],
    fits: &BTreeMap<String, RegressionFit>,
    w: W,
) -> Result<()> {
    let mut by_model: BTreeMap<&str, Vec<&DphPoint>> = BTreeMap::new();
    for p in points {
        by_model.entry(&p.model_id).or_default().push(p);
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "model_id",
        "kind",
        "criterion_id",
        "exception_fraction",
        "rival_rate",
    ])?;
    for (model, series) in &by_model {
        let fit = fits
            .get(*model)
            .ok_or_else(|| Error::MissingFit(model.to_string()))?;
        for p in series {
            out.write_record([
                model,
                "point",
                p.criterion_id.as_str(),
                &p.exception_fraction.to_string(),
                &p.rival_rate.to_string(),
            ])?;
        }
        let xs = series.iter().map(|p| p.exception_fraction);
        let lo = xs.clone().fold(f64::INFINITY, f64::min);
        let hi = xs.fold(f64::NEG_INFINITY, f64::max);
        for x in [lo, hi] {
            out.write_record([
                model,
                "trend",
                "",
                &x.to_string(),
                &fit.predict(x).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Count recovered from a printed percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Reconstruction {
    pub count: u64,
    /// Two counts are equally close, or several round to the printed rate.
    pub ambiguous: bool,
    /// Some count rounds to the printed whole percent.
    pub consistent: bool,
}

/// Recovers the count behind a whole-percent rate over `denominator` images.
pub fn reconstruct_counts(rate_percent: f64, denominator: u64) -> Reconstruction {
    let distance = |c: u64| (100.0 * c as f64 / denominator as f64 - rate_percent).abs();
    let mut best = 0;
    let mut tie = false;
    for c in 1..=denominator {
        let (d, b) = (distance(c), distance(best));
        if (d - b).abs() < 1e-9 {
            tie = true;
        } else if d < b {
            best = c;
            tie = false;
        }
    }
    let admissible = (0..=denominator)
        .filter(|&c| distance(c) <= 0.5 + 1e-9)
        .count();
    Reconstruction {
        count: best,
        ambiguous: tie || admissible > 1,
        consistent: admissible > 0,
    }
}

/// A rate as printed, e.g. `80% (of 25)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrintedRate {
    pub percent: f64,
    pub denominator: Option<u64>,
}

impl PrintedRate {
    /// `None` for `N/A` and anything unparseable.
    pub fn parse(text: &str) -> Option<PrintedRate> {
        let text = text.trim();
        let (pct, rest) = text.split_once('%')?;
        let percent: f64 = pct.trim().parse().ok()?;
        let rest = rest.trim();
        let denominator = if rest.is_empty() {
            None
        } else {
            let inner = rest.strip_prefix("(of")?.strip_suffix(')')?;
            Some(inner.trim().parse().ok()?)
        };
        Some(PrintedRate {
            percent,
            denominator,
        })
    }
}

/// One row of a printed table of rival and validation rates.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PrintedRow {
    pub value_area: String,
    pub enacted_value: String,
    pub category: String,
    pub criterion: String,
    pub rival: String,
    pub validation: String,
    pub similarity: String,
}

/// Reads a tab-separated printed table with a header row naming the
/// [`PrintedRow`] fields.
pub fn read_printed_table<R: Read>(reader: R) -> Result<Vec<PrintedRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(reader);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<PrintedRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowStatus {
    Match,
    Mismatch,
    /// A count could not be recovered uniquely from its printed rate.
    AmbiguousReconstruction,
    /// No validation baseline was printed.
    NoBaseline,
    /// No recognizable similarity label was printed.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegeneratedRow {
    pub printed: PrintedRow,
    pub status: RowStatus,
    pub rival: Option<(Counts, Reconstruction)>,
    pub validation: Option<(Counts, Reconstruction)>,
    pub p_value: Option<f64>,
    pub computed: Option<SimilarityBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regeneration {
    pub rows: Vec<RegeneratedRow>,
}

impl Regeneration {
    pub fn count(&self, status: RowStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }

    /// Labeled rows whose counts were recovered uniquely.
    pub fn compared(&self) -> usize {
        self.count(RowStatus::Match) + self.count(RowStatus::Mismatch)
    }

    pub fn match_rate(&self) -> f64 {
        self.count(RowStatus::Match) as f64 / self.compared().max(1) as f64
    }

    pub fn discrepancies(&self) -> impl Iterator<Item = &RegeneratedRow> {
        self.rows.iter().filter(|r| {
            matches!(
                r.status,
                RowStatus::Mismatch | RowStatus::AmbiguousReconstruction | RowStatus::Unlabeled
            )
        })
    }

    pub fn write_discrepancy_report<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "matched {} of {} comparable rows ({:.1}%); {} ambiguous, {} unlabeled, {} without baseline",
            self.count(RowStatus::Match),
            self.compared(),
            100.0 * self.match_rate(),
            self.count(RowStatus::AmbiguousReconstruction),
            self.count(RowStatus::Unlabeled),
            self.count(RowStatus::NoBaseline),
        )?;
        for row in self.discrepancies() {
            let counts = |c: &Option<(Counts, Reconstruction)>| match c {
                Some((c, _)) => format!("{}/{}", c.recognized, c.total),
                None => "N/A".into(),
            };
            writeln!(
                w,
                "{:?}\t{} - {}\trival {} [{}]\tval {} [{}]\tp={}\tcomputed {}\tprinted {}",
                row.status,
                row.printed.category,
                row.printed.criterion,
                row.printed.rival,
                counts(&row.rival),
                row.printed.validation,
                counts(&row.validation),
                row.p_value.map(format_p).unwrap_or_else(|| "N/A".into()),
                row.computed.map(|b| b.label()).unwrap_or("N/A"),
                if row.printed.similarity.is_empty() {
                    "(none)"
                } else {
                    &row.printed.similarity
                },
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn recover(rate: PrintedRate, default_denominator: u64) -> (Counts, Reconstruction) {
    let denominator = rate.denominator.unwrap_or(default_denominator);
    let rec = reconstruct_counts(rate.percent, denominator);
    (Counts::new(rec.count, denominator), rec)
}

/// Recomputes p-values and similarity buckets from printed rates and flags
/// every row that disagrees or cannot be reconstructed.
pub fn regenerate(rows: &[PrintedRow]) -> Regeneration {
    let rows = rows
        .iter()
        .map(|printed| {
            let rival = PrintedRate::parse(&printed.rival)
                .map(|r| recover(r, DEFAULT_RIVAL_DENOMINATOR));
            let validation = PrintedRate::parse(&printed.validation)
                .map(|r| recover(r, DEFAULT_VALIDATION_DENOMINATOR));
            let assessment = match (rival, validation) {
                (Some((r, _)), Some((v, _))) => assess(r, v).ok(),
                _ => None,
            };
            let label = SimilarityBucket::from_label(&printed.similarity);
            let reliable = |c: &Option<(Counts, Reconstruction)>| {
                c.is_some_and(|(_, rec)| !rec.ambiguous && rec.consistent)
            };
            let status = match (assessment, label) {
                (None, _) => RowStatus::NoBaseline,
                (Some(_), None) => RowStatus::Unlabeled,
                _ if !reliable(&rival) || !reliable(&validation) => {
                    RowStatus::AmbiguousReconstruction
                }
                (Some(a), Some(l)) if a.bucket == l => RowStatus::Match,
                _ => RowStatus::Mismatch,
            };
            RegeneratedRow {
                printed: printed.clone(),
                status,
                rival,
                validation,
                p_value: assessment.map(|a| a.p_value),
                computed: assessment.map(|a| a.bucket),
            }
        })
        .collect();
    Regeneration { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p_formatting() {
        assert_eq!(format_p(0.001674127259085951), "0.00167");
        assert_eq!(format_p(0.4199897762643612), "0.420");
        assert_eq!(format_p(1.0), "1.00");
        assert_eq!(format_p(0.05306), "0.0531");
        assert_eq!(format_p(3.2e-9), "3.20e-9");
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(4.0 / 15.0), "27%");
        assert_eq!(format_percent(0.74), "74%");
        assert_eq!(format_percent(2.0 / 16.0), "13%");
        assert_eq!(rate_cell(Counts::new(12, 20)), "60% (of 20)");
        assert_eq!(rate_cell(Counts::new(15, 15)), "100%");
    }

    #[test]
    fn reconstruction_examples() {
        let r = reconstruct_counts(53.0, 15);
        assert_eq!((r.count, r.ambiguous, r.consistent), (8, false, true));
        let r = reconstruct_counts(60.0, 20);
        assert_eq!((r.count, r.ambiguous), (12, false));
        let r = reconstruct_counts(50.0, 16);
        assert_eq!((r.count, r.ambiguous), (8, false));
        // 13/14 prints as 93%, so 92% of 14 matches no count exactly.
        let r = reconstruct_counts(92.0, 14);
        assert_eq!((r.count, r.ambiguous, r.consistent), (13, false, false));
        // 2/16 = 12.5% sits exactly between two whole percents.
        assert!(!reconstruct_counts(12.0, 16).ambiguous);
        let r = reconstruct_counts(50.0, 300);
        assert_eq!(r.count, 150);
        assert!(r.ambiguous, "149/300 and 151/300 also print as 50%");
        assert!(reconstruct_counts(50.0, 1).ambiguous, "0 and 1 are equally far");
    }

    #[test]
    fn printed_rates_parse() {
        assert_eq!(
            PrintedRate::parse("80% (of 25)"),
            Some(PrintedRate { percent: 80.0, denominator: Some(25) })
        );
        assert_eq!(
            PrintedRate::parse("7%"),
            Some(PrintedRate { percent: 7.0, denominator: None })
        );
        assert_eq!(PrintedRate::parse("N/A"), None);
        assert_eq!(PrintedRate::parse("80% of 25"), None);
    }

    proptest! {
        #[test]
        fn reconstruction_inverts_rounding(d in 1u64..=60, c_raw in 0u64..=60) {
            let c = c_raw.min(d);
            let printed = (100.0 * c as f64 / d as f64).round();
            let rec = reconstruct_counts(printed, d);
            if !rec.ambiguous {
                prop_assert_eq!(rec.count, c);
            }
            prop_assert!(rec.consistent);
        }
    }
}
