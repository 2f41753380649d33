//! Preference-pair export: contrast gate-accepted expert-guided rewrites
//! (chosen) with naive paraphrases of the same note (rejected), for
//! downstream preference optimization. Pairs where the expert output does
//! not strictly dominate on quality are skipped so no inverted preference
//! labels leak into training data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AugmentedRecord, Dataset};
use crate::metrics::{evaluate_pair, MetricsError};
use crate::prompting::{build_prompt, builtin_template, PromptError, TEMPLATE_NAIVE};
use crate::weak_expert::{EntitySet, Extractor};

#[derive(Debug, Error)]
pub enum PairError {
    #[error("record sets cover different notes; missing from expert: [{missing_expert}], missing from naive: [{missing_naive}], missing from dataset: [{missing_dataset}]")]
    IdMismatch {
        missing_expert: String,
        missing_naive: String,
        missing_dataset: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pair at line {line}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One DPO-style training example. The prompt is the naive rendering (no
/// entity list), so a tuned policy must learn to respect constraints it is
/// not handed explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub note_id: String,
    pub chosen_pr: f64,
    pub chosen_hr: f64,
    pub rejected_pr: f64,
    pub rejected_hr: f64,
}

impl PreferencePair {
    /// Strict quality dominance: chosen is at least as good on both
    /// dimensions and strictly better on at least one.
    pub fn dominance_holds(&self) -> bool {
        self.chosen_pr >= self.rejected_pr
            && self.chosen_hr <= self.rejected_hr
            && (self.chosen_pr > self.rejected_pr || self.chosen_hr < self.rejected_hr)
    }
}

/// Pairs plus the notes that were skipped and why.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PairBuild {
    pub pairs: Vec<PreferencePair>,
    pub skipped_dominance: usize,
    pub skipped_unaccepted: usize,
}

/// Joins expert and naive records by source note, re-scores both sides with
/// the extractor, and keeps pairs whose chosen output strictly dominates.
/// Both record sets must cover exactly the same note ids.
pub fn build_pairs(
    dataset: &Dataset,
    expert_records: &[AugmentedRecord],
    naive_records: &[AugmentedRecord],
    extractor: &dyn Extractor,
) -> Result<PairBuild, PairError> {
    let expert_by_id: BTreeMap<&str, &AugmentedRecord> = expert_records
        .iter()
        .map(|r| (r.source_id.as_str(), r))
        .collect();
    let naive_by_id: BTreeMap<&str, &AugmentedRecord> = naive_records
        .iter()
        .map(|r| (r.source_id.as_str(), r))
        .collect();
    check_coverage(dataset, &expert_by_id, &naive_by_id)?;

    let naive_template = builtin_template(TEMPLATE_NAIVE).expect("builtin naive template");
    let mut build = PairBuild::default();
    for note in &dataset.notes {
        let (Some(expert), Some(naive)) = (
            expert_by_id.get(note.id.as_str()),
            naive_by_id.get(note.id.as_str()),
        ) else {
            continue;
        };
        if !expert.accepted {
            build.skipped_unaccepted += 1;
            continue;
        }
        let chosen_score = evaluate_pair(&note.text, &expert.text, extractor)?;
        let rejected_score = evaluate_pair(&note.text, &naive.text, extractor)?;
        let prompt = build_prompt(note, &EntitySet::new(), &naive_template)?;
        let pair = PreferencePair {
            prompt: prompt.user,
            chosen: expert.text.clone(),
            rejected: naive.text.clone(),
            note_id: note.id.clone(),
            chosen_pr: chosen_score.pr,
            chosen_hr: chosen_score.hr,
            rejected_pr: rejected_score.pr,
            rejected_hr: rejected_score.hr,
        };
        if pair.dominance_holds() {
            build.pairs.push(pair);
        } else {
            build.skipped_dominance += 1;
        }
    }
    Ok(build)
}

fn check_coverage(
    dataset: &Dataset,
    expert: &BTreeMap<&str, &AugmentedRecord>,
    naive: &BTreeMap<&str, &AugmentedRecord>,
) -> Result<(), PairError> {
    let dataset_ids: BTreeSet<&str> = dataset.notes.iter().map(|n| n.id.as_str()).collect();
    let expert_ids: BTreeSet<&str> = expert.keys().copied().collect();
    let naive_ids: BTreeSet<&str> = naive.keys().copied().collect();
    let union: BTreeSet<&str> = expert_ids.union(&naive_ids).copied().collect();
    let missing_expert: Vec<&str> = naive_ids.difference(&expert_ids).copied().collect();
    let missing_naive: Vec<&str> = expert_ids.difference(&naive_ids).copied().collect();
    let missing_dataset: Vec<&str> = union.difference(&dataset_ids).copied().collect();
    if missing_expert.is_empty() && missing_naive.is_empty() && missing_dataset.is_empty() {
        Ok(())
    } else {
        Err(PairError::IdMismatch {
            missing_expert: missing_expert.join(", "),
            missing_naive: missing_naive.join(", "),
            missing_dataset: missing_dataset.join(", "),
        })
    }
}

/// Writes pairs as JSONL in input order.
pub fn export_pairs(pairs: &[PreferencePair], path: impl AsRef<Path>) -> Result<(), PairError> {
    let path = path.as_ref();
    let as_io = |source: std::io::Error| PairError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(as_io)?;
    let mut writer = BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(pair).expect("serializable pair");
        writer.write_all(line.as_bytes()).map_err(as_io)?;
        writer.write_all(b"\n").map_err(as_io)?;
    }
    writer.flush().map_err(as_io)
}

/// Reads a pair file written by [`export_pairs`].
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>, PairError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| PairError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(line).map_err(|source| PairError::MalformedLine {
                line: idx + 1,
                source,
            })?,
        );
    }
    Ok(pairs)
}
