//! `augmed` command line: generate synthetic corpora, extract entities, run
//! gated augmentation, score augmented files, build preference pairs, and
//! render comparison reports.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors (including
//! a run where every note failed), 2 on usage errors.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use augmed::corpus::{
    load_notes, load_records, save_notes, validate_dataset, AugmentedRecord, Note,
};
use augmed::metrics::{aggregate, aggregate_rates, evaluate_pair, render_table, QualityReport};
use augmed::pipeline::augment_dataset;
use augmed::prefpairs::{build_pairs, export_pairs};
use augmed::synth::generate;
use augmed::weak_expert::{load_gazetteer, save_gazetteer, Gazetteer};

use config::{build_run_config, build_synth_spec, input_path, FileConfig, RunOverrides};

#[derive(Parser)]
#[command(
    name = "augmed",
    version,
    about = "Constraint-preserving clinical text augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with a matched gazetteer
    GenSynthetic(GenSyntheticArgs),
    /// Print entity spans found in a notes file
    Extract(ExtractArgs),
    /// Run the full augmentation pipeline over a notes file
    Augment(Box<AugmentArgs>),
    /// Score (original, augmented) file pairs
    Evaluate(EvaluateArgs),
    /// Build preference pairs from expert and naive record files
    Pairs(PairsArgs),
    /// Render a comparison table over record files
    Report(ReportArgs),
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Config file with a [synth] section
    #[arg(long)]
    config: Option<PathBuf>,
    /// Notes output path (JSONL)
    #[arg(long)]
    output: PathBuf,
    /// Gazetteer output path (TSV)
    #[arg(long)]
    gazetteer: PathBuf,
    /// Optional per-note ground-truth output (JSONL)
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Number of notes
    #[arg(long)]
    n: Option<usize>,
    /// Minimum entities per note
    #[arg(long)]
    min_entities: Option<usize>,
    /// Maximum entities per note
    #[arg(long)]
    max_entities: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Notes file (JSONL)
    #[arg(long)]
    input: PathBuf,
    /// Gazetteer TSV
    #[arg(long)]
    gazetteer: PathBuf,
    /// Output path; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Config file (INI-style sections); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Original notes file (JSONL)
    #[arg(long)]
    orig: PathBuf,
    /// Augmented file: records (matched by source_id) or notes (matched by id)
    #[arg(long)]
    aug: PathBuf,
    /// Gazetteer TSV used as the scoring extractor
    #[arg(long)]
    gazetteer: PathBuf,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    /// Original notes file (JSONL)
    #[arg(long)]
    input: PathBuf,
    /// Gate-accepted expert records (JSONL)
    #[arg(long)]
    expert: PathBuf,
    /// Naive/baseline records for the same notes (JSONL)
    #[arg(long)]
    naive: PathBuf,
    /// Gazetteer TSV used as the scoring extractor
    #[arg(long)]
    gazetteer: PathBuf,
    /// Pair output path (JSONL)
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Record files, each optionally prefixed `name=`; column names default
    /// to the file stem
    #[arg(required = true)]
    files: Vec<String>,
    /// Also write the per-method reports as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenSynthetic(args) => gen_synthetic(args),
        Command::Extract(args) => extract(args),
        Command::Augment(args) => augment(*args),
        Command::Evaluate(args) => evaluate(args),
        Command::Pairs(args) => pairs(args),
        Command::Report(args) => report(args),
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::default()),
    }
}

fn gen_synthetic(args: GenSyntheticArgs) -> Result<ExitCode> {
    let file = load_file_config(&args.config)?;
    let spec = build_synth_spec(
        &file,
        args.n,
        args.min_entities,
        args.max_entities,
        args.seed,
    )?;
    let out = generate(&spec)?;
    save_notes(&out.dataset.notes, &args.output)?;
    save_gazetteer(&out.gazetteer, &args.gazetteer)?;
    if let Some(truth_path) = &args.truth {
        let mut lines = String::new();
        for (note, truth) in out.dataset.notes.iter().zip(&out.ground_truth) {
            let entities: Vec<&str> = truth.iter().collect();
            lines.push_str(&serde_json::to_string(&serde_json::json!({
                "id": note.id,
                "entities": entities,
            }))?);
            lines.push('\n');
        }
        std::fs::write(truth_path, lines)
            .with_context(|| format!("cannot write {}", truth_path.display()))?;
    }
    println!(
        "generated {} notes ({} gazetteer entries, seed {}) -> {}",
        out.dataset.len(),
        out.gazetteer.len(),
        spec.seed,
        args.output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn extract(args: ExtractArgs) -> Result<ExitCode> {
    let dataset = load_notes(&args.input)?;
    let gazetteer = Gazetteer::compile(&load_gazetteer(&args.gazetteer)?)?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(
            std::fs::File::create(path)
                .with_context(|| format!("cannot write {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    for note in &dataset.notes {
        let spans = gazetteer.extract(&note.text);
        let line = serde_json::to_string(&serde_json::json!({ "id": note.id, "spans": spans }))?;
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(ExitCode::SUCCESS),
            other => other?,
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn augment(args: AugmentArgs) -> Result<ExitCode> {
    let file = load_file_config(&args.config)?;
    let input = input_path(&file, &args.overrides)?;
    let run_config = build_run_config(&file, &args.overrides)?;
    let dataset = load_notes(&input)?;

    let output = augment_dataset(&dataset, &run_config)?;
    output.write_files()?;

    let report = &output.report;
    println!(
        "notes: {}  accepted: {}  fallback: {}  dropped: {}  failed: {}  accept_rate: {:.3}",
        report.n_notes,
        report.n_accepted,
        report.n_fallback,
        report.n_dropped,
        report.n_failed,
        report.accept_rate
    );
    if let Some(quality) = &report.quality {
        print!(
            "{}",
            render_table(&[("accepted".to_string(), quality.clone())])
        );
    }
    println!("records -> {}", run_config.records_path.display());
    println!("audit   -> {}", run_config.audit_path.display());
    println!("report  -> {}", run_config.report_path.display());

    if report.n_notes > 0 && report.n_failed == report.n_notes {
        eprintln!("error: all {} notes failed", report.n_notes);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// An augmented file row: either a full record or a bare note.
fn parse_aug_line(line: &str) -> Result<(String, String)> {
    if let Ok(record) = serde_json::from_str::<AugmentedRecord>(line) {
        return Ok((record.source_id, record.text));
    }
    let note: Note = serde_json::from_str(line).context("line is neither a record nor a note")?;
    Ok((note.id, note.text))
}

fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let dataset = load_notes(&args.orig)?;
    let violations = validate_dataset(&dataset);
    if !violations.is_empty() {
        bail!("original dataset is invalid: {}", violations[0]);
    }
    let gazetteer = Gazetteer::compile(&load_gazetteer(&args.gazetteer)?)?;

    let raw = std::fs::read_to_string(&args.aug)
        .with_context(|| format!("cannot read {}", args.aug.display()))?;
    let mut aug_by_id: BTreeMap<String, String> = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = parse_aug_line(line)
            .with_context(|| format!("{} line {}", args.aug.display(), idx + 1))?;
        aug_by_id.insert(id, text);
    }

    let mut scores = Vec::new();
    for note in &dataset.notes {
        let Some(aug_text) = aug_by_id.get(&note.id) else {
            continue;
        };
        scores.push(evaluate_pair(&note.text, aug_text, &gazetteer)?);
    }
    if scores.is_empty() {
        bail!("no (original, augmented) pairs matched by id between the two files");
    }
    let report = aggregate(&scores)?;
    print!("{}", render_table(&[(stem_of(&args.aug), report.clone())]));
    if let Some(json_path) = &args.json {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(json_path, text)
            .with_context(|| format!("cannot write {}", json_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn pairs(args: PairsArgs) -> Result<ExitCode> {
    let dataset = load_notes(&args.input)?;
    let expert = load_records(&args.expert)?;
    let naive = load_records(&args.naive)?;
    let gazetteer = Gazetteer::compile(&load_gazetteer(&args.gazetteer)?)?;
    let build = build_pairs(&dataset, &expert, &naive, &gazetteer)?;
    export_pairs(&build.pairs, &args.output)?;
    println!(
        "pairs: {}  skipped (no dominance): {}  skipped (unaccepted expert): {}",
        build.pairs.len(),
        build.skipped_dominance,
        build.skipped_unaccepted
    );
    println!("pairs -> {}", args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let mut rows: Vec<(String, QualityReport)> = Vec::new();
    for entry in &args.files {
        let (name, path) = match entry.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => (stem_of(&PathBuf::from(entry)), PathBuf::from(entry)),
        };
        let records = load_records(&path)?;
        if records.is_empty() {
            bail!("{} holds no records", path.display());
        }
        let prs: Vec<f64> = records.iter().map(|r| r.pr).collect();
        let hrs: Vec<f64> = records.iter().map(|r| r.hr).collect();
        let mut report =
            aggregate_rates(&prs, &hrs).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        report.accept_rate =
            Some(records.iter().filter(|r| r.accepted).count() as f64 / records.len() as f64);
        rows.push((name, report));
    }
    print!("{}", render_table(&rows));
    if let Some(json_path) = &args.json {
        let map: BTreeMap<&str, &QualityReport> = rows
            .iter()
            .map(|(name, report)| (name.as_str(), report))
            .collect();
        let mut text = serde_json::to_string_pretty(&map)?;
        text.push('\n');
        std::fs::write(json_path, text)
            .with_context(|| format!("cannot write {}", json_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn stem_of(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| path.display().to_string())
}
