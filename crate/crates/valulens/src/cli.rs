use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use valulens_core::{
    averaged_rival_accuracy, compare_models, dph_points, evaluate_all, evaluate_criterion,
    fit_per_model, needs_augmentation, top1_narrowing, validation_accuracy, Corpus,
    CriterionResult, PredictionLog, Scope, DEFAULT_MAX_FRACTION,
};

use crate::error::{Error, Result};
use crate::manifest::load_manifest;
use crate::predictions::{load_predictions, write_predictions, ParsedLog};
use crate::report::{
    emit_assessment_table, emit_dph_scatter, format_p, format_percent, read_printed_table,
    regenerate, TableFormat,
};
use crate::serve::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "valulens", version, about = "Audit image classifiers against rival image sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus manifest and report every violation.
    Validate { manifest: PathBuf },
    /// Add a prediction log to a log database, all or nothing.
    Ingest {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assess one model on every criterion, or on one.
    Assess(AssessArgs),
    /// Compare decisions and rates across an ordered list of models.
    Compare(CompareArgs),
    /// Rival rate against exception fraction, with per-model trend lines.
    Dph(DphArgs),
    /// Emit the assessment table for one model.
    Report(ReportArgs),
    /// Recompute similarity labels from a printed table of percentages.
    Regenerate {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the manifest-curation endpoints on localhost.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of images served by id; defaults to $VALULENS_IMAGE_ROOT.
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: u32,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Models in ascending order of expected accuracy.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    /// Also list flips that survive top-1 evaluation.
    #[arg(long)]
    pub top1_narrowing: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DphArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_FRACTION)]
    pub max_fraction: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub model: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command, writing its normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Validate { manifest } => {
            let corpus = load_manifest(&manifest)?;
            writeln!(
                out,
                "{}: ok ({} categories, {} criteria)",
                manifest.display(),
                corpus.categories().len(),
                corpus.criteria().len()
            )?;
        }
        Command::Ingest { log, out: db } => ingest(&log, &db, out)?,
        Command::Assess(args) => assess_cmd(args, out)?,
        Command::Compare(args) => compare_cmd(args, out)?,
        Command::Dph(args) => dph_cmd(args, out)?,
        Command::Report(args) => {
            let (corpus, log) = load_inputs(&args.inputs)?;
            let results = evaluate_all(&corpus, &log, &args.model, args.inputs.k)?;
            let format = match args.format {
                Format::Csv => TableFormat::Delimited,
                Format::Text => TableFormat::Aligned,
            };
            with_output(args.out.as_deref(), out, |w| {
                emit_assessment_table(&corpus, &results, format, w)
            })?;
        }
        Command::Regenerate { table, out: dest } => {
            let file = File::open(&table).map_err(|e| Error::io(&table, e))?;
            let regen = regenerate(&read_printed_table(file)?);
            with_output(dest.as_deref(), out, |w| regen.write_discrepancy_report(w))?;
        }
        Command::Serve {
            port,
            manifest,
            image_root,
        } => {
            let state = AppState::load(manifest, AppState::resolve_image_root(image_root))?;
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            writeln!(out, "serving on http://{addr}")?;
            out.flush()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve::run(addr, Arc::new(state)))?;
        }
    }
    Ok(())
}

/// Writes to `path` when given, else to `out`.
fn with_output<F>(path: Option<&Path>, out: &mut dyn Write, emit: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            emit(&mut w)?;
            w.flush().map_err(|e| Error::io(p, e))
        }
        None => emit(out),
    }
}

fn load_inputs(inputs: &Inputs) -> Result<(Corpus, PredictionLog)> {
    let corpus = load_manifest(&inputs.manifest)?;
    let ParsedLog { log, .. } = load_predictions(&inputs.log)?;
    Ok((corpus, log))
}

fn ingest(log: &Path, db: &Path, out: &mut dyn Write) -> Result<()> {
    let incoming = load_predictions(log)?;
    let mut stored = if db.exists() {
        load_predictions(db)?
    } else {
        ParsedLog::default()
    };
    let added = stored
        .log
        .ingest(incoming.log.records().cloned())
        .map_err(|source| Error::Ingest {
            context: log.display().to_string(),
            line: 0,
            source,
        })?;
    stored.headers.extend(incoming.headers);

    let dir = match db.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    write_predictions(BufWriter::new(tmp.as_file_mut()), &stored.log, &stored.headers)?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(db).map_err(|e| Error::io(db, e.error))?;
    writeln!(out, "ingested {added} records; {} total", stored.log.len())?;
    Ok(())
}

fn describe(r: &CriterionResult) -> String {
    let counts = |c: valulens_core::Counts| {
        format!(
            "{}/{} ({})",
            c.recognized,
            c.total,
            format_percent(c.rate().unwrap_or(0.0))
        )
    };
    let mut line = format!(
        "{}\t{} top-{}\trival {}",
        r.criterion_id,
        r.model_id,
        r.k_eval,
        counts(r.rival_counts)
    );
    match (r.val_counts, r.assessment) {
        (Some(v), Some(a)) => {
            line.push_str(&format!(
                "\tval {}\tp={}\t{}\t{}\t{}",
                counts(v),
                format_p(a.p_value),
                a.bucket,
                a.decision,
                r.enacted_value
            ));
            let advice = needs_augmentation(&a);
            if advice.needed {
                line.push_str(&format!(
                    "\tadd {} rival images",
                    advice.additional_rival_images
                ));
            }
        }
        _ => line.push_str(&format!("\tval N/A\t{}", r.enacted_value)),
    }
    line
}

fn assess_cmd(args: AssessArgs, out: &mut dyn Write) -> Result<()> {
    let (corpus, log) = load_inputs(&args.inputs)?;
    let results = match &args.criterion {
        Some(id) => vec![evaluate_criterion(&corpus, &log, &args.model, id, args.inputs.k)?],
        None => evaluate_all(&corpus, &log, &args.model, args.inputs.k)?,
    };
    if args.json {
        serde_json::to_writer_pretty(&mut *out, &results).map_err(std::io::Error::from)?;
        writeln!(out)?;
    } else {
        for r in &results {
            writeln!(out, "{}", describe(r))?;
        }
    }
    Ok(())
}

fn evaluate_models(
    corpus: &Corpus,
    log: &PredictionLog,
    models: &[String],
    k: u32,
) -> Result<Vec<CriterionResult>> {
    let mut all = Vec::new();
    for m in models {
        all.extend(evaluate_all(corpus, log, m, k)?);
    }
    Ok(all)
}

fn compare_cmd(args: CompareArgs, out: &mut dyn Write) -> Result<()> {
    let (corpus, log) = load_inputs(&args.inputs)?;
    let k = args.inputs.k;
    let results = evaluate_models(&corpus, &log, &args.models, k)?;
    let report = compare_models(&results, &args.models)?;

    let mut per_model = Vec::new();
    for m in &args.models {
        let own: Vec<_> = results.iter().filter(|r| &r.model_id == m).cloned().collect();
        per_model.push(json!({
            "model_id": m,
            "averaged_rival_accuracy": averaged_rival_accuracy(&own)?,
            "validation_accuracy": validation_accuracy(&corpus, &log, m, Scope::AllCategories, k)?,
        }));
    }
    let narrowed = if args.top1_narrowing {
        let top1 = evaluate_models(&corpus, &log, &args.models, 1)?;
        Some(top1_narrowing(&top1, &results, &args.models)?)
    } else {
        None
    };

    if args.json {
        let body = json!({
            "k": k,
            "report": report,
            "flip_count": report.flip_count(),
            "monotonic_rival_count": report.monotonic_rival_count(),
            "monotonic_val_count": report.monotonic_val_count(),
            "monotonic_both_count": report.monotonic_both_count(),
            "models": per_model,
            "top1_flips": narrowed,
        });
        serde_json::to_writer_pretty(&mut *out, &body).map_err(std::io::Error::from)?;
        writeln!(out)?;
        return Ok(());
    }

    writeln!(out, "models (top-{k}): {}", args.models.join(", "))?;
    writeln!(out, "criteria compared: {}", report.criteria.len())?;
    writeln!(out, "flips: {}", report.flip_count())?;
    for c in report.flipped() {
        let decisions: Vec<String> = c.decisions.iter().map(|d| d.to_string()).collect();
        writeln!(out, "  {}\t{}", c.criterion_id, decisions.join(" "))?;
    }
    writeln!(out, "monotonic rival: {}", report.monotonic_rival_count())?;
    writeln!(out, "monotonic validation: {}", report.monotonic_val_count())?;
    writeln!(out, "monotonic both: {}", report.monotonic_both_count())?;
    for m in &per_model {
        writeln!(
            out,
            "{}\taveraged rival accuracy {:.4}\tvalidation accuracy {:.4}",
            m["model_id"].as_str().unwrap_or_default(),
            m["averaged_rival_accuracy"].as_f64().unwrap_or_default(),
            m["validation_accuracy"].as_f64().unwrap_or_default(),
        )?;
    }
    if let Some(ids) = narrowed {
        writeln!(out, "flips at top-1: {}", ids.len())?;
        for id in ids {
            writeln!(out, "  {id}")?;
        }
    }
    Ok(())
}

fn dph_cmd(args: DphArgs, out: &mut dyn Write) -> Result<()> {
    let (corpus, log) = load_inputs(&args.inputs)?;
    let results = evaluate_models(&corpus, &log, &args.models, args.inputs.k)?;
    let points = dph_points(&corpus, &results, args.max_fraction);
    let fits = fit_per_model(&points)?;
    with_output(args.out.as_deref(), out, |w| emit_dph_scatter(&points, &fits, w))?;
    if args.out.is_some() {
        for (model, fit) in &fits {
            writeln!(
                out,
                "{model}\tslope {:.6}\tintercept {:.6}\tr2 {:.4}\tn {}",
                fit.slope, fit.intercept, fit.r_squared, fit.n
            )?;
        }
    }
    Ok(())
}
