//! Per-note orchestration across a bounded worker pool: extract
//! constraints, build the prompt, rewrite, score, gate, retry, fall back,
//! and keep a complete audit trail.
//!
//! Determinism contract: per-attempt seeds derive only from the base seed,
//! the note's position, and the attempt number, so parallel execution and
//! unrelated notes can never perturb each other. With a mock backend two
//! runs of the same config produce byte-identical records, audit log, and
//! report.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::{SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, AugmentedRecord, Dataset, Note};
use crate::gating::{decide, FallbackPolicy, GateConfig, GateError};
use crate::generalist::{Backend, BackendConfig, BackendError, RewriteRequest};
use crate::metrics::{self, QualityReport, QualityScore};
use crate::prompting::{
    build_prompt, builtin_template, load_template_file, plan_chunks, render_chunk, ChunkPlan,
    PromptError, PromptTemplate,
};
use crate::weak_expert::{
    load_gazetteer, to_entity_set, ExtractError, Extractor, Gazetteer, GazetteerError, RemoteNer,
    RemoteNerConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Gazetteer(#[from] GazetteerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error("invalid run configuration: {detail}")]
    Config { detail: String },
}

/// Everything one augmentation run needs, echoed verbatim into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gazetteer: PathBuf,
    /// When set, constraint extraction and scoring use the remote NER
    /// service instead of the gazetteer automaton.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_ner: Option<RemoteNerConfig>,
    /// Built-in template name (`expert`, `naive`, `cato`) or a file path.
    pub template: String,
    pub backend: BackendConfig,
    pub gate: GateConfig,
    pub base_seed: u64,
    pub parallelism: usize,
    /// Notes longer than this many whitespace tokens are rewritten in
    /// sentence-boundary chunks.
    pub chunk_max_units: usize,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_units: Option<u32>,
    pub records_path: PathBuf,
    pub audit_path: PathBuf,
    pub report_path: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gazetteer: PathBuf::new(),
            remote_ner: None,
            template: "expert".into(),
            backend: BackendConfig::MockPreserving,
            gate: GateConfig::default(),
            base_seed: 0,
            parallelism: 4,
            chunk_max_units: 512,
            temperature: 0.7,
            max_output_units: None,
            records_path: PathBuf::new(),
            audit_path: PathBuf::new(),
            report_path: PathBuf::new(),
        }
    }
}

/// One line of the audit log: a rewrite attempt with its prompt, candidate,
/// scores, and gate decision, or the error that ended the note.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub note_id: String,
    pub attempt: u32,
    pub ts: String,
    pub backend: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_aug: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<crate::gating::RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run summary written next to the records: the effective config plus
/// counters and the quality report over accepted candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub n_notes: usize,
    pub n_accepted: usize,
    pub n_fallback: usize,
    pub n_dropped: usize,
    pub n_failed: usize,
    pub accept_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityReport>,
}

/// In-memory result of a run; [`RunOutput::write_files`] persists it to the
/// paths named in the config.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<AugmentedRecord>,
    pub audit: Vec<AuditEvent>,
    pub report: RunReport,
}

impl RunOutput {
    /// Writes records and audit log as JSONL and the report as pretty JSON.
    pub fn write_files(&self) -> Result<(), PipelineError> {
        let config = &self.report.config;
        for (name, path) in [
            ("records_path", &config.records_path),
            ("audit_path", &config.audit_path),
            ("report_path", &config.report_path),
        ] {
            if path.as_os_str().is_empty() {
                return Err(PipelineError::Config {
                    detail: format!("{name} is not set"),
                });
            }
        }
        corpus::save_records(&self.records, &config.records_path)?;
        let mut audit_text = String::new();
        for event in &self.audit {
            audit_text.push_str(&serde_json::to_string(event).expect("serializable event"));
            audit_text.push('\n');
        }
        write_text(&config.audit_path, &audit_text)?;
        let mut report_text =
            serde_json::to_string_pretty(&self.report).expect("serializable report");
        report_text.push('\n');
        write_text(&config.report_path, &report_text)
    }
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| {
        PipelineError::Corpus(corpus::CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

/// Timestamp source. Deterministic backends get a logical clock derived
/// from (note, attempt) so identical runs produce identical audit bytes;
/// live backends record wall-clock time.
enum RunClock {
    System,
    Logical,
}

impl RunClock {
    fn stamp(&self, note_index: usize, attempt: u32, max_attempts: u32) -> String {
        match self {
            RunClock::System => Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            RunClock::Logical => {
                let offset = note_index as i64 * i64::from(max_attempts) + i64::from(attempt) - 1;
                let base = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
                (base + chrono::Duration::seconds(offset))
                    .to_rfc3339_opts(SecondsFormat::Millis, true)
            }
        }
    }
}

/// Assembled collaborators for one run.
pub struct RunDeps {
    extractor: Box<dyn Extractor>,
    template: PromptTemplate,
    backend: Backend,
    clock: RunClock,
}

/// Per-attempt seed: `base + note_index * max_attempts + (attempt - 1)`,
/// wrapping. Depends only on position, never on note content.
pub fn attempt_seed(base_seed: u64, note_index: usize, max_attempts: u32, attempt: u32) -> u64 {
    base_seed
        .wrapping_add((note_index as u64).wrapping_mul(u64::from(max_attempts)))
        .wrapping_add(u64::from(attempt - 1))
}

/// Loads and validates every collaborator; fails before any note is
/// touched.
pub fn build_deps(config: &RunConfig) -> Result<RunDeps, PipelineError> {
    config.gate.validate()?;
    if config.parallelism == 0 {
        return Err(PipelineError::Config {
            detail: "parallelism must be at least 1".into(),
        });
    }
    if config.chunk_max_units == 0 {
        return Err(PipelineError::Config {
            detail: "chunk_max_units must be at least 1".into(),
        });
    }

    let template = resolve_template(&config.template)?;
    template.validate()?;

    let gazetteer = if config.remote_ner.is_none() || needs_gazetteer_distractors(&config.backend) {
        let entries = load_gazetteer(&config.gazetteer)?;
        Some(Gazetteer::compile(&entries)?)
    } else {
        None
    };

    let backend_config = match config.backend.clone() {
        BackendConfig::MockFaulty(mut faulty) if faulty.distractors.is_empty() => {
            let gazetteer = gazetteer
                .as_ref()
                .expect("gazetteer loaded for faulty mock");
            faulty.distractors = gazetteer.surfaces().map(str::to_string).collect();
            BackendConfig::MockFaulty(faulty)
        }
        other => other,
    };
    let backend = Backend::from_config(backend_config)?;
    let clock = if backend.is_deterministic() {
        RunClock::Logical
    } else {
        RunClock::System
    };

    let extractor: Box<dyn Extractor> = match &config.remote_ner {
        Some(remote) => Box::new(RemoteNer::connect(remote.clone())?),
        None => Box::new(gazetteer.expect("gazetteer loaded when no remote extractor")),
    };

    Ok(RunDeps {
        extractor,
        template,
        backend,
        clock,
    })
}

fn needs_gazetteer_distractors(backend: &BackendConfig) -> bool {
    matches!(backend, BackendConfig::MockFaulty(cfg) if cfg.distractors.is_empty())
}

fn resolve_template(choice: &str) -> Result<PromptTemplate, PipelineError> {
    if let Some(template) = builtin_template(choice) {
        return Ok(template);
    }
    Ok(load_template_file(choice)?)
}

/// Outcome of one note: the record (absent for dropped or failed notes) and
/// its audit events.
pub struct NoteOutcome {
    pub record: Option<AugmentedRecord>,
    pub events: Vec<AuditEvent>,
    pub failed: bool,
    /// Score of the accepted candidate, for the run report.
    pub accepted_score: Option<QualityScore>,
}

/// Runs the extract → prompt → rewrite → gate loop for one note.
pub fn augment_one(
    note: &Note,
    note_index: usize,
    deps: &RunDeps,
    config: &RunConfig,
) -> NoteOutcome {
    let max_attempts = config.gate.max_attempts;
    let backend_id = deps.backend.id();
    let mut events: Vec<AuditEvent> = Vec::new();

    let error_outcome = |mut events: Vec<AuditEvent>, attempt: u32, seed: u64, detail: String| {
        events.push(AuditEvent {
            note_id: note.id.clone(),
            attempt,
            ts: deps.clock.stamp(note_index, attempt, max_attempts),
            backend: backend_id.clone(),
            seed,
            system_prompt: None,
            user_prompt: None,
            candidate: None,
            pr: None,
            hr: None,
            e_aug: None,
            accepted: None,
            reasons: Vec::new(),
            error: Some(detail),
        });
        NoteOutcome {
            record: None,
            events,
            failed: true,
            accepted_score: None,
        }
    };

    let spans = match deps.extractor.extract_spans(&note.text) {
        Ok(spans) => spans,
        Err(e) => {
            let seed = attempt_seed(config.base_seed, note_index, max_attempts, 1);
            return error_outcome(
                events,
                1,
                seed,
                format!("constraint extraction failed: {e}"),
            );
        }
    };
    let entities = to_entity_set(&spans);
    let e_orig = entities.clone();

    // chunk only when the note exceeds the budget
    let plan = if note.text.split_whitespace().count() > config.chunk_max_units {
        let mut plan = plan_chunks(&note.text, config.chunk_max_units);
        plan.assign_spans(&spans);
        Some(plan)
    } else {
        None
    };

    let whole_prompt = match build_prompt(note, &entities, &deps.template) {
        Ok(prompt) => prompt.with_constraint_spans(spans.clone()),
        Err(e) => {
            let seed = attempt_seed(config.base_seed, note_index, max_attempts, 1);
            return error_outcome(events, 1, seed, format!("prompt rendering failed: {e}"));
        }
    };

    let mut last_seed = config.base_seed;
    for attempt in 1..=max_attempts {
        let seed = attempt_seed(config.base_seed, note_index, max_attempts, attempt);
        last_seed = seed;
        let produced = match &plan {
            None => rewrite_whole(&whole_prompt, seed, deps, config),
            Some(plan) => rewrite_chunked(plan, seed, deps, config),
        };
        let (candidate, system_prompt, user_prompt) = match produced {
            Ok(parts) => parts,
            Err(detail) => return error_outcome(events, attempt, seed, detail),
        };

        let e_aug = match deps.extractor.extract_spans(&candidate) {
            Ok(spans) => to_entity_set(&spans),
            Err(e) => {
                return error_outcome(
                    events,
                    attempt,
                    seed,
                    format!("candidate scoring failed: {e}"),
                );
            }
        };
        let score = metrics::score_sets(e_orig.clone(), e_aug);
        let decision = decide(&score, &config.gate);
        events.push(AuditEvent {
            note_id: note.id.clone(),
            attempt,
            ts: deps.clock.stamp(note_index, attempt, max_attempts),
            backend: backend_id.clone(),
            seed,
            system_prompt: Some(system_prompt),
            user_prompt: Some(user_prompt),
            candidate: Some(candidate.clone()),
            pr: Some(score.pr),
            hr: Some(score.hr),
            e_aug: Some(score.e_aug.iter().map(str::to_string).collect()),
            accepted: Some(decision.accepted),
            reasons: decision.reasons.clone(),
            error: None,
        });

        if decision.accepted {
            let record = AugmentedRecord {
                id: format!("aug-{}", note.id),
                source_id: note.id.clone(),
                text: candidate,
                label: note.label.clone(),
                meta: note.meta.clone(),
                pr: score.pr,
                hr: score.hr,
                attempts: attempt,
                accepted: true,
                fallback: false,
                backend: backend_id.clone(),
                seed,
            };
            return NoteOutcome {
                record: Some(record),
                events,
                failed: false,
                accepted_score: Some(score),
            };
        }
    }

    let record = match config.gate.fallback {
        FallbackPolicy::CopyOriginal => Some(AugmentedRecord {
            id: format!("aug-{}", note.id),
            source_id: note.id.clone(),
            text: note.text.clone(),
            label: note.label.clone(),
            meta: note.meta.clone(),
            pr: 1.0,
            hr: 0.0,
            attempts: max_attempts,
            accepted: false,
            fallback: true,
            backend: backend_id,
            seed: last_seed,
        }),
        FallbackPolicy::Drop => None,
    };
    NoteOutcome {
        record,
        events,
        failed: false,
        accepted_score: None,
    }
}

fn rewrite_whole(
    prompt: &crate::prompting::RenderedPrompt,
    seed: u64,
    deps: &RunDeps,
    config: &RunConfig,
) -> Result<(String, String, String), String> {
    let request = RewriteRequest {
        prompt: prompt.clone(),
        seed,
        temperature: config.temperature,
        max_output_units: config.max_output_units,
    };
    let result = deps.backend.rewrite(&request).map_err(|e| e.to_string())?;
    Ok((result.text, prompt.system.clone(), prompt.user.clone()))
}

const CHUNK_PROMPT_SEPARATOR: &str = "\n\n--- next chunk ---\n\n";

fn rewrite_chunked(
    plan: &ChunkPlan,
    seed: u64,
    deps: &RunDeps,
    config: &RunConfig,
) -> Result<(String, String, String), String> {
    let mut parts: Vec<String> = Vec::with_capacity(plan.chunks.len());
    let mut user_prompts: Vec<String> = Vec::with_capacity(plan.chunks.len());
    let mut system = String::new();
    let mut carry: Option<String> = None;
    for chunk in &plan.chunks {
        let prompt = render_chunk(
            &deps.template,
            &chunk.text,
            &chunk.entities,
            carry.as_deref(),
        )
        .map_err(|e| e.to_string())?
        .with_constraint_spans(chunk.spans.clone());
        system = prompt.system.clone();
        let request = RewriteRequest {
            prompt,
            seed,
            temperature: config.temperature,
            max_output_units: config.max_output_units,
        };
        let result = deps.backend.rewrite(&request).map_err(|e| e.to_string())?;
        carry = Some(tail_tokens(&result.text, config.chunk_max_units));
        user_prompts.push(request.prompt.user.clone());
        parts.push(result.text);
    }
    Ok((
        parts.join(" "),
        system,
        user_prompts.join(CHUNK_PROMPT_SEPARATOR),
    ))
}

fn tail_tokens(text: &str, max_units: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let start = tokens.len().saturating_sub(max_units);
    tokens[start..].join(" ")
}

/// Runs the whole dataset through a bounded worker pool. Records and audit
/// events come back in input order regardless of completion order; failures
/// are isolated per note.
pub fn augment_dataset(dataset: &Dataset, config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let violations = corpus::validate_dataset(dataset);
    if !violations.is_empty() {
        let listed: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(PipelineError::Config {
            detail: format!("dataset is invalid: {}", listed.join("; ")),
        });
    }
    let deps = build_deps(config)?;

    let outcomes = run_pool(&dataset.notes, &deps, config);

    let mut records = Vec::new();
    let mut audit = Vec::new();
    let mut accepted_scores = Vec::new();
    let (mut n_accepted, mut n_fallback, mut n_dropped, mut n_failed) = (0, 0, 0, 0);
    for outcome in outcomes {
        audit.extend(outcome.events);
        if outcome.failed {
            n_failed += 1;
            continue;
        }
        match outcome.record {
            Some(record) => {
                if record.accepted {
                    n_accepted += 1;
                } else {
                    n_fallback += 1;
                }
                records.push(record);
            }
            None => n_dropped += 1,
        }
        if let Some(score) = outcome.accepted_score {
            accepted_scores.push(score);
        }
    }

    let n_notes = dataset.len();
    let accept_rate = if n_notes == 0 {
        0.0
    } else {
        n_accepted as f64 / n_notes as f64
    };
    let quality = if accepted_scores.is_empty() {
        None
    } else {
        let mut report = metrics::aggregate(&accepted_scores).expect("non-empty scores");
        report.accept_rate = Some(accept_rate);
        Some(report)
    };

    let report = RunReport {
        config: config.clone(),
        n_notes,
        n_accepted,
        n_fallback,
        n_dropped,
        n_failed,
        accept_rate,
        quality,
    };
    Ok(RunOutput {
        records,
        audit,
        report,
    })
}

fn run_pool(notes: &[Note], deps: &RunDeps, config: &RunConfig) -> Vec<NoteOutcome> {
    let n = notes.len();
    let workers = config.parallelism.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<NoteOutcome>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, NoteOutcome)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= n {
                    break;
                }
                let outcome = augment_one(&notes[index], index, deps, config);
                if tx.send((index, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (index, outcome) in rx {
            slots[index] = Some(outcome);
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("worker produced outcome"))
        .collect()
}
