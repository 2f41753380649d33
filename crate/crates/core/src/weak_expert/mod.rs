//! The weak expert: locate safety-critical entities in a note and turn them
//! into the constraint set a rewrite must preserve.
//!
//! The default implementation is a compiled gazetteer automaton. Matching is
//! case-insensitive with whitespace runs collapsed, restricted to token
//! boundaries, and resolved leftmost-longest without overlaps. A remote NER
//! service client ([`remote::RemoteNer`]) provides the same interface when a
//! trained extractor is available.

mod remote;

pub use remote::{RemoteNer, RemoteNerConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::de::Deserializer;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{fold_lower_collapse, normalize};

/// One gazetteer line: a surface pattern and its entity category.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub surface: String,
    pub category: String,
}

impl GazetteerEntry {
    pub fn new(surface: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            category: category.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GazetteerError {
    #[error("gazetteer has no entries")]
    Empty,
    #[error("entry {surface:?} normalizes to an empty pattern")]
    BlankEntry { surface: String },
    #[error("bad gazetteer line {line}: expected \"surface<TAB>category\"")]
    BadLine { line: usize },
    #[error("failed to read gazetteer {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to compile patterns: {0}")]
    Build(#[from] aho_corasick::BuildError),
}

/// Errors surfaced by extractors. Gazetteer extraction is infallible; the
/// remote backend can fail transiently (`retryable`) or on bad payloads.
#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("entity service call failed: {message}")]
    Service { message: String, retryable: bool },
    #[error("invalid span in service response: {detail}")]
    InvalidSpan { detail: String },
}

impl ExtractError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ExtractError::Service {
                retryable: true,
                ..
            }
        )
    }
}

/// A located entity occurrence. Offsets are byte offsets into the note,
/// half-open, and `note[start..end]` always equals `surface`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub surface: String,
    pub category: String,
    pub start: usize,
    pub end: usize,
}

/// Anything that can produce entity spans for a text. The same extractor
/// instance must serve both constraint extraction and metric evaluation.
pub trait Extractor: Send + Sync {
    fn extract_spans(&self, text: &str) -> Result<Vec<EntitySpan>, ExtractError>;
}

/// A set of normalized entity surfaces with optional per-surface categories.
///
/// Set identity is by normalized surface only; categories are metadata and
/// do not participate in equality.
#[derive(Clone, Debug, Default)]
pub struct EntitySet {
    surfaces: BTreeSet<String>,
    categories: BTreeMap<String, String>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from raw surfaces, normalizing each element.
    pub fn from_surfaces<I, S>(surfaces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::new();
        for s in surfaces {
            set.insert(s.as_ref());
        }
        set
    }

    pub fn insert(&mut self, surface: &str) {
        let norm = normalize(surface);
        if !norm.is_empty() {
            self.surfaces.insert(norm);
        }
    }

    pub fn insert_with_category(&mut self, surface: &str, category: &str) {
        let norm = normalize(surface);
        if norm.is_empty() {
            return;
        }
        self.categories
            .entry(norm.clone())
            .or_insert_with(|| category.to_string());
        self.surfaces.insert(norm);
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.surfaces.contains(&normalize(surface))
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Iterates surfaces in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.surfaces.iter().map(String::as_str)
    }

    pub fn category_of(&self, surface: &str) -> Option<&str> {
        self.categories.get(&normalize(surface)).map(String::as_str)
    }

    pub fn intersection(&self, other: &EntitySet) -> EntitySet {
        self.filtered(|s| other.surfaces.contains(s))
    }

    pub fn difference(&self, other: &EntitySet) -> EntitySet {
        self.filtered(|s| !other.surfaces.contains(s))
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        self.surfaces.is_subset(&other.surfaces)
    }

    fn filtered(&self, keep: impl Fn(&str) -> bool) -> EntitySet {
        let mut out = EntitySet::new();
        for s in &self.surfaces {
            if keep(s) {
                out.surfaces.insert(s.clone());
                if let Some(cat) = self.categories.get(s) {
                    out.categories.insert(s.clone(), cat.clone());
                }
            }
        }
        out
    }
}

impl PartialEq for EntitySet {
    fn eq(&self, other: &Self) -> bool {
        self.surfaces == other.surfaces
    }
}

impl Eq for EntitySet {}

impl fmt::Display for EntitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for s in &self.surfaces {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{s}")?;
            first = false;
        }
        Ok(())
    }
}

impl Serialize for EntitySet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.surfaces.len()))?;
        for s in &self.surfaces {
            seq.serialize_element(s)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for EntitySet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let surfaces = Vec::<String>::deserialize(deserializer)?;
        Ok(EntitySet::from_surfaces(surfaces))
    }
}

/// Collapses spans into the constraint set: normalized, deduplicated
/// surfaces with the first-seen category per surface.
pub fn to_entity_set(spans: &[EntitySpan]) -> EntitySet {
    let mut set = EntitySet::new();
    for span in spans {
        set.insert_with_category(&span.surface, &span.category);
    }
    set
}

#[derive(Debug)]
struct CompiledPattern {
    normalized: String,
    category: String,
}

/// A compiled multi-pattern gazetteer matcher.
#[derive(Debug)]
pub struct Gazetteer {
    automaton: AhoCorasick,
    patterns: Vec<CompiledPattern>,
    entries: Vec<GazetteerEntry>,
}

impl Gazetteer {
    /// Compiles entries into a scanning automaton. Patterns are normalized
    /// (case-folded, whitespace collapsed) at compile time; duplicate
    /// (normalized surface, category) pairs are dropped. When the same
    /// surface carries conflicting categories the first entry wins for
    /// match labeling.
    pub fn compile(entries: &[GazetteerEntry]) -> Result<Self, GazetteerError> {
        if entries.is_empty() {
            return Err(GazetteerError::Empty);
        }
        let mut patterns: Vec<CompiledPattern> = Vec::new();
        let mut by_normalized: BTreeMap<String, usize> = BTreeMap::new();
        let mut unique_pairs: BTreeSet<(String, String)> = BTreeSet::new();
        for entry in entries {
            let normalized = fold_lower_collapse(&entry.surface);
            if normalized.is_empty() {
                return Err(GazetteerError::BlankEntry {
                    surface: entry.surface.clone(),
                });
            }
            unique_pairs.insert((normalized.clone(), entry.category.clone()));
            if !by_normalized.contains_key(&normalized) {
                by_normalized.insert(normalized.clone(), patterns.len());
                patterns.push(CompiledPattern {
                    normalized,
                    category: entry.category.clone(),
                });
            }
        }
        let automaton = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(patterns.iter().map(|p| p.normalized.as_bytes()))?;
        let entries = unique_pairs
            .into_iter()
            .map(|(surface, category)| GazetteerEntry { surface, category })
            .collect();
        Ok(Self {
            automaton,
            patterns,
            entries,
        })
    }

    /// Number of distinct (normalized surface, category) entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Deduplicated entry table with normalized surfaces.
    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    /// Normalized pattern surfaces in compile order.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|p| p.normalized.as_str())
    }

    /// Scans `text` and returns non-overlapping matches, leftmost-longest,
    /// sorted by start. Matching is case-insensitive with whitespace runs
    /// collapsed, and only spans flanked by token boundaries are reported.
    pub fn extract(&self, text: &str) -> Vec<EntitySpan> {
        let shadow = Shadow::build(text);
        // (shadow_start, shadow_end, pattern) for every candidate surviving
        // the boundary filter, including overlapping ones.
        let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
        for m in self.automaton.find_overlapping_iter(&shadow.text) {
            if !shadow.is_whole_char_match(m.start(), m.end()) {
                continue;
            }
            let orig_start = shadow.starts[m.start()];
            let orig_end = shadow.ends[m.end() - 1];
            if is_token_boundary(text, orig_start) && is_token_boundary(text, orig_end) {
                candidates.push((m.start(), m.end(), m.pattern().as_usize()));
            }
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        let mut spans = Vec::new();
        let mut cursor = 0usize;
        for (s, e, pattern) in candidates {
            if s < cursor {
                continue;
            }
            let start = shadow.starts[s];
            let end = shadow.ends[e - 1];
            spans.push(EntitySpan {
                surface: text[start..end].to_string(),
                category: self.patterns[pattern].category.clone(),
                start,
                end,
            });
            cursor = e;
        }
        spans
    }
}

impl Extractor for Gazetteer {
    fn extract_spans(&self, text: &str) -> Result<Vec<EntitySpan>, ExtractError> {
        Ok(self.extract(text))
    }
}

/// Loads a gazetteer TSV: one `surface<TAB>category` per line, `#` comment
/// lines and blank lines ignored.
pub fn load_gazetteer(path: impl AsRef<Path>) -> Result<Vec<GazetteerEntry>, GazetteerError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| GazetteerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_gazetteer(&raw)
}

pub fn parse_gazetteer(raw: &str) -> Result<Vec<GazetteerEntry>, GazetteerError> {
    let mut entries = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (surface, category) = trimmed
            .split_once('\t')
            .ok_or(GazetteerError::BadLine { line: idx + 1 })?;
        let (surface, category) = (surface.trim(), category.trim());
        if surface.is_empty() || category.is_empty() {
            return Err(GazetteerError::BadLine { line: idx + 1 });
        }
        entries.push(GazetteerEntry::new(surface, category));
    }
    Ok(entries)
}

/// Writes entries in the TSV format accepted by [`load_gazetteer`].
pub fn save_gazetteer(
    entries: &[GazetteerEntry],
    path: impl AsRef<Path>,
) -> Result<(), GazetteerError> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.surface);
        out.push('\t');
        out.push_str(&e.category);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| GazetteerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The folded view of a text used for scanning: lowercased, whitespace runs
/// collapsed to single spaces, outer whitespace dropped. `starts[i]` /
/// `ends[i]` map shadow byte `i` back to the original byte range that
/// produced it, so a shadow match `[s, e)` covers original bytes
/// `starts[s]..ends[e - 1]`. `char_initial[i]` marks the first shadow byte
/// produced by each source char (or whitespace run); matches must start and
/// end on these boundaries so that a multi-char case folding (e.g. 'İ' →
/// "i\u{307}") is consumed whole or not at all.
struct Shadow {
    text: String,
    starts: Vec<usize>,
    ends: Vec<usize>,
    char_initial: Vec<bool>,
}

impl Shadow {
    fn build(original: &str) -> Self {
        let mut text = String::with_capacity(original.len());
        let mut starts = Vec::with_capacity(original.len());
        let mut ends = Vec::with_capacity(original.len());
        let mut char_initial = Vec::with_capacity(original.len());
        let mut ws_start: Option<usize> = None;
        for (pos, ch) in original.char_indices() {
            if ch.is_whitespace() {
                ws_start.get_or_insert(pos);
                continue;
            }
            if let Some(ws) = ws_start.take() {
                if !text.is_empty() {
                    text.push(' ');
                    starts.push(ws);
                    ends.push(pos);
                    char_initial.push(true);
                }
            }
            let ch_end = pos + ch.len_utf8();
            for (fold_index, folded) in ch.to_lowercase().enumerate() {
                for byte_index in 0..folded.len_utf8() {
                    starts.push(pos);
                    ends.push(ch_end);
                    char_initial.push(fold_index == 0 && byte_index == 0);
                }
                text.push(folded);
            }
        }
        Shadow {
            text,
            starts,
            ends,
            char_initial,
        }
    }

    fn is_whole_char_match(&self, start: usize, end: usize) -> bool {
        self.char_initial[start] && (end == self.text.len() || self.char_initial[end])
    }
}

/// A position is a token boundary unless alphanumeric characters sit on
/// both sides of it. This keeps "mg" from matching inside "magnesium".
fn is_token_boundary(text: &str, pos: usize) -> bool {
    if pos == 0 || pos >= text.len() {
        return true;
    }
    let before = text[..pos].chars().next_back();
    let after = text[pos..].chars().next();
    match (before, after) {
        (Some(b), Some(a)) => !(b.is_alphanumeric() && a.is_alphanumeric()),
        _ => true,
    }
}
