//! Flat INI-style run configuration: `[section]` headers over `key = value`
//! lines, `#` or `;` comments. Every key can be overridden by the
//! same-named command-line flag; the effective configuration is echoed into
//! the run report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use augmed::generalist::{BackendConfig, FaultyMockConfig, HttpChatConfig};
use augmed::pipeline::RunConfig;
use augmed::synth::SynthSpec;
use augmed::weak_expert::{EntitySet, RemoteNerConfig};
use augmed::{FallbackPolicy, RetryPolicy};

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("corpus", &["input"]),
    ("expert", &["gazetteer", "ner_endpoint", "ner_timeout_secs"]),
    ("prompt", &["template", "chunk_max_units"]),
    (
        "backend",
        &[
            "kind",
            "endpoint",
            "model",
            "api_key_env",
            "timeout_secs",
            "max_retries",
            "backoff_base_ms",
            "max_in_flight",
            "temperature",
            "max_output_units",
            "deletion_fraction",
            "injection_fraction",
        ],
    ),
    (
        "gate",
        &[
            "tau_pr",
            "tau_hr",
            "max_attempts",
            "required_entities",
            "fallback",
        ],
    ),
    (
        "run",
        &["seed", "parallelism", "records", "audit", "report"],
    ),
    (
        "synth",
        &["n_notes", "min_entities", "max_entities", "seed"],
    ),
];

#[derive(Debug, Default)]
pub struct FileConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&raw).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, line) in raw.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                    bail!("line {line_no}: unknown section [{name}]");
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                bail!("line {line_no}: expected `key = value`, got {trimmed:?}");
            };
            let Some(section) = current.as_ref() else {
                bail!("line {line_no}: key {key:?} appears before any [section]");
            };
            let key = key.trim().to_string();
            let known = KNOWN_KEYS
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, keys)| keys.contains(&key.as_str()))
                .unwrap_or(false);
            if !known {
                bail!("line {line_no}: unknown key {key:?} in section [{section}]");
            }
            let value = strip_inline_comment(value).trim().to_string();
            sections
                .get_mut(section)
                .expect("section exists")
                .insert(key, value);
        }
        Ok(Self { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config {section}.{key} = {raw:?}: {e}")),
        }
    }
}

/// Flag-level overrides shared by the `augment` command; every field maps
/// onto one config key.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct RunOverrides {
    /// Notes file to augment (JSONL)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Records output path (JSONL)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Audit log output path (JSONL)
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Run report output path (JSON)
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Gazetteer TSV path
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Remote NER service endpoint (replaces the gazetteer extractor)
    #[arg(long)]
    pub ner_endpoint: Option<String>,
    /// Template name (expert|naive|cato) or template file path
    #[arg(long)]
    pub template: Option<String>,
    /// Rewrite backend: mock-preserving, mock-faulty, or http-chat
    #[arg(long)]
    pub backend: Option<String>,
    /// Chat-completion endpoint URL (http-chat backend)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name (http-chat backend)
    #[arg(long)]
    pub model: Option<String>,
    /// Acceptance threshold on the preservation rate
    #[arg(long)]
    pub tau_pr: Option<f64>,
    /// Acceptance threshold on the hallucination rate
    #[arg(long)]
    pub tau_hr: Option<f64>,
    /// Rewrite attempts per note before the fallback policy applies
    #[arg(long)]
    pub max_attempts: Option<u32>,
    /// Fallback policy: copy-original or drop
    #[arg(long)]
    pub fallback: Option<String>,
    /// Comma-separated label-defining entities that must survive
    #[arg(long)]
    pub required_entities: Option<String>,
    /// Worker threads
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Base seed; fully determines outputs under mock backends
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chunking budget in whitespace tokens
    #[arg(long)]
    pub chunk_max_units: Option<usize>,
    /// Sampling temperature recorded per attempt
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Entity deletion fraction (mock-faulty backend)
    #[arg(long)]
    pub deletion_fraction: Option<f64>,
    /// Entity injection fraction (mock-faulty backend)
    #[arg(long)]
    pub injection_fraction: Option<f64>,
}

/// Cuts a trailing comment: a `#` preceded by whitespace. A bare `#` inside
/// a value (URL fragments) survives.
fn strip_inline_comment(value: &str) -> &str {
    let mut prev_is_space = true;
    for (idx, ch) in value.char_indices() {
        if ch == '#' && prev_is_space {
            return &value[..idx];
        }
        prev_is_space = ch.is_whitespace();
    }
    value
}

fn parse_fallback(raw: &str) -> Result<FallbackPolicy> {
    match raw {
        "copy-original" | "copy_original" => Ok(FallbackPolicy::CopyOriginal),
        "drop" => Ok(FallbackPolicy::Drop),
        other => bail!("unknown fallback policy {other:?} (expected copy-original or drop)"),
    }
}

fn parse_required(raw: &str) -> EntitySet {
    EntitySet::from_surfaces(raw.split(',').map(str::trim).filter(|s| !s.is_empty()))
}

/// Resolves the input notes path from flag or config.
pub fn input_path(file: &FileConfig, overrides: &RunOverrides) -> Result<PathBuf> {
    overrides
        .input
        .clone()
        .or_else(|| file.get("corpus", "input").map(PathBuf::from))
        .ok_or_else(|| anyhow!("no input notes file: pass --input or set [corpus] input"))
}

/// Builds the effective run configuration: defaults, then config file, then
/// flags.
pub fn build_run_config(file: &FileConfig, overrides: &RunOverrides) -> Result<RunConfig> {
    let mut config = RunConfig::default();

    if let Some(path) = file.get("expert", "gazetteer") {
        config.gazetteer = PathBuf::from(path);
    }
    if let Some(path) = &overrides.gazetteer {
        config.gazetteer = path.clone();
    }
    let has_remote =
        overrides.ner_endpoint.is_some() || file.get("expert", "ner_endpoint").is_some();
    if config.gazetteer.as_os_str().is_empty() && !has_remote {
        bail!("no weak expert: pass --gazetteer / --ner-endpoint or set [expert] gazetteer");
    }

    let ner_endpoint = overrides
        .ner_endpoint
        .clone()
        .or_else(|| file.get("expert", "ner_endpoint").map(String::from));
    if let Some(endpoint) = ner_endpoint {
        let mut remote = RemoteNerConfig {
            endpoint,
            timeout_secs: 30,
            retry: RetryPolicy::default(),
        };
        if let Some(timeout) = file.parse_value::<u64>("expert", "ner_timeout_secs")? {
            remote.timeout_secs = timeout;
        }
        config.remote_ner = Some(remote);
    }

    if let Some(template) = file.get("prompt", "template") {
        config.template = template.to_string();
    }
    if let Some(template) = &overrides.template {
        config.template = template.clone();
    }
    if let Some(units) = file.parse_value("prompt", "chunk_max_units")? {
        config.chunk_max_units = units;
    }
    if let Some(units) = overrides.chunk_max_units {
        config.chunk_max_units = units;
    }

    config.backend = build_backend(file, overrides)?;

    if let Some(tau) = file.parse_value("gate", "tau_pr")? {
        config.gate.tau_pr = tau;
    }
    if let Some(tau) = overrides.tau_pr {
        config.gate.tau_pr = tau;
    }
    if let Some(tau) = file.parse_value("gate", "tau_hr")? {
        config.gate.tau_hr = tau;
    }
    if let Some(tau) = overrides.tau_hr {
        config.gate.tau_hr = tau;
    }
    if let Some(attempts) = file.parse_value("gate", "max_attempts")? {
        config.gate.max_attempts = attempts;
    }
    if let Some(attempts) = overrides.max_attempts {
        config.gate.max_attempts = attempts;
    }
    if let Some(raw) = file.get("gate", "required_entities") {
        config.gate.required_entities = parse_required(raw);
    }
    if let Some(raw) = &overrides.required_entities {
        config.gate.required_entities = parse_required(raw);
    }
    if let Some(raw) = file.get("gate", "fallback") {
        config.gate.fallback = parse_fallback(raw)?;
    }
    if let Some(raw) = &overrides.fallback {
        config.gate.fallback = parse_fallback(raw)?;
    }

    if let Some(seed) = file.parse_value("run", "seed")? {
        config.base_seed = seed;
    }
    if let Some(seed) = overrides.seed {
        config.base_seed = seed;
    }
    if let Some(parallelism) = file.parse_value("run", "parallelism")? {
        config.parallelism = parallelism;
    }
    if let Some(parallelism) = overrides.parallelism {
        config.parallelism = parallelism;
    }
    if let Some(temperature) = file.parse_value("backend", "temperature")? {
        config.temperature = temperature;
    }
    if let Some(temperature) = overrides.temperature {
        config.temperature = temperature;
    }
    if let Some(units) = file.parse_value("backend", "max_output_units")? {
        config.max_output_units = Some(units);
    }

    if let Some(path) = file.get("run", "records") {
        config.records_path = PathBuf::from(path);
    }
    if let Some(path) = &overrides.output {
        config.records_path = path.clone();
    }
    if config.records_path.as_os_str().is_empty() {
        bail!("no records output path: pass --output or set [run] records");
    }
    config.audit_path = overrides
        .audit
        .clone()
        .or_else(|| file.get("run", "audit").map(PathBuf::from))
        .unwrap_or_else(|| sibling(&config.records_path, "audit.jsonl"));
    config.report_path = overrides
        .report
        .clone()
        .or_else(|| file.get("run", "report").map(PathBuf::from))
        .unwrap_or_else(|| sibling(&config.records_path, "report.json"));

    Ok(config)
}

/// Derives `<records stem>.<suffix>` next to the records file.
fn sibling(records: &Path, suffix: &str) -> PathBuf {
    let stem = records
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".into());
    records.with_file_name(format!("{stem}.{suffix}"))
}

fn build_backend(file: &FileConfig, overrides: &RunOverrides) -> Result<BackendConfig> {
    let kind = overrides
        .backend
        .clone()
        .or_else(|| file.get("backend", "kind").map(String::from))
        .unwrap_or_else(|| "mock-preserving".into());
    match kind.as_str() {
        "mock-preserving" | "mock_preserving" => Ok(BackendConfig::MockPreserving),
        "mock-faulty" | "mock_faulty" => {
            let mut faulty = FaultyMockConfig {
                deletion_fraction: 0.0,
                injection_fraction: 0.0,
                distractors: Vec::new(),
            };
            if let Some(p) = file.parse_value("backend", "deletion_fraction")? {
                faulty.deletion_fraction = p;
            }
            if let Some(p) = overrides.deletion_fraction {
                faulty.deletion_fraction = p;
            }
            if let Some(q) = file.parse_value("backend", "injection_fraction")? {
                faulty.injection_fraction = q;
            }
            if let Some(q) = overrides.injection_fraction {
                faulty.injection_fraction = q;
            }
            Ok(BackendConfig::MockFaulty(faulty))
        }
        "http-chat" | "http_chat" => {
            let mut http = HttpChatConfig::default();
            if let Some(endpoint) = file.get("backend", "endpoint") {
                http.endpoint = endpoint.to_string();
            }
            if let Some(endpoint) = &overrides.endpoint {
                http.endpoint = endpoint.clone();
            }
            if let Some(model) = file.get("backend", "model") {
                http.model = model.to_string();
            }
            if let Some(model) = &overrides.model {
                http.model = model.clone();
            }
            if let Some(env) = file.get("backend", "api_key_env") {
                http.api_key_env = env.to_string();
            }
            if let Some(timeout) = file.parse_value("backend", "timeout_secs")? {
                http.timeout_secs = timeout;
            }
            if let Some(retries) = file.parse_value("backend", "max_retries")? {
                http.retry.max_retries = retries;
            }
            if let Some(base) = file.parse_value("backend", "backoff_base_ms")? {
                http.retry.backoff_base_ms = base;
            }
            if let Some(cap) = file.parse_value("backend", "max_in_flight")? {
                http.max_in_flight = cap;
            }
            Ok(BackendConfig::HttpChat(http))
        }
        other => {
            bail!("unknown backend {other:?} (expected mock-preserving, mock-faulty, or http-chat)")
        }
    }
}

/// Assembles the synthetic-corpus spec from config and flags.
pub fn build_synth_spec(
    file: &FileConfig,
    n_notes: Option<usize>,
    min_entities: Option<usize>,
    max_entities: Option<usize>,
    seed: Option<u64>,
) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    if let Some(n) = file.parse_value("synth", "n_notes")? {
        spec.n_notes = n;
    }
    if let Some(n) = n_notes {
        spec.n_notes = n;
    }
    if let Some(lo) = file.parse_value("synth", "min_entities")? {
        spec.entities_per_note.0 = lo;
    }
    if let Some(lo) = min_entities {
        spec.entities_per_note.0 = lo;
    }
    if let Some(hi) = file.parse_value("synth", "max_entities")? {
        spec.entities_per_note.1 = hi;
    }
    if let Some(hi) = max_entities {
        spec.entities_per_note.1 = hi;
    }
    if let Some(s) = file.parse_value("synth", "seed")? {
        spec.seed = s;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}
