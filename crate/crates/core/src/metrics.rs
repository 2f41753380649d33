//! Entity normalization and the exact quality metrics that gate every
//! augmentation: the preservation rate (fraction of original entities that
//! survive the rewrite) and the hallucination rate (entities introduced by
//! the rewrite relative to the original entity count).

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::weak_expert::{to_entity_set, EntitySet, ExtractError, Extractor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty score list")]
    EmptyScores,
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Canonical form used for entity identity: NFC, case-folded, whitespace
/// runs collapsed to single spaces, outer whitespace removed.
pub fn normalize(surface: &str) -> String {
    let composed: String = surface.nfc().collect();
    fold_lower_collapse(&composed)
}

/// Case-fold and collapse whitespace without recomposition. This is the
/// transformation the gazetteer matcher applies to scanned text, where NFC
/// would break the byte-offset mapping back into the note.
pub(crate) fn fold_lower_collapse(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.extend(ch.to_lowercase());
    }
    out
}

/// Per-pair quality: the two entity sets, their overlap decomposition, and
/// the derived rates.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityScore {
    pub pr: f64,
    pub hr: f64,
    pub e_orig: EntitySet,
    pub e_aug: EntitySet,
    pub preserved: EntitySet,
    pub hallucinated: EntitySet,
}

/// PR = |e_aug ∩ e_orig| / |e_orig|. An empty original set has nothing to
/// preserve, so the rate is 1.0 by definition.
pub fn preservation_rate(e_orig: &EntitySet, e_aug: &EntitySet) -> f64 {
    if e_orig.is_empty() {
        return 1.0;
    }
    e_orig.intersection(e_aug).len() as f64 / e_orig.len() as f64
}

/// HR = |e_aug \ e_orig| / |e_orig|, with the denominator clamped to 1 when
/// the original set is empty. Values above 1.0 are legal.
pub fn hallucination_rate(e_orig: &EntitySet, e_aug: &EntitySet) -> f64 {
    let hallucinated = e_aug.difference(e_orig).len() as f64;
    hallucinated / e_orig.len().max(1) as f64
}

/// Scores a pair of already-extracted entity sets.
pub fn score_sets(e_orig: EntitySet, e_aug: EntitySet) -> QualityScore {
    let preserved = e_orig.intersection(&e_aug);
    let hallucinated = e_aug.difference(&e_orig);
    QualityScore {
        pr: preservation_rate(&e_orig, &e_aug),
        hr: hallucination_rate(&e_orig, &e_aug),
        e_orig,
        e_aug,
        preserved,
        hallucinated,
    }
}

/// Extracts both texts with the same extractor and scores the resulting
/// sets. The extractor must be the one that produced the constraint set.
pub fn evaluate_pair(
    original_text: &str,
    augmented_text: &str,
    extractor: &dyn Extractor,
) -> Result<QualityScore, MetricsError> {
    let e_orig = to_entity_set(&extractor.extract_spans(original_text)?);
    let e_aug = to_entity_set(&extractor.extract_spans(augmented_text)?);
    Ok(score_sets(e_orig, e_aug))
}

/// Corpus-level summary. `mean_*` are macro-averages (unweighted per-pair
/// means); `micro_*` pool the set sizes first and are present only when the
/// report was aggregated from full scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub n: usize,
    pub mean_pr: f64,
    pub mean_hr: f64,
    pub min_pr: f64,
    pub max_hr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_pr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_hr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_rate: Option<f64>,
}

/// Macro-averages a non-empty list of scores.
pub fn aggregate(scores: &[QualityScore]) -> Result<QualityReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let n = scores.len();
    let mut orig_total = 0usize;
    let mut preserved_total = 0usize;
    let mut hallucinated_total = 0usize;
    for s in scores {
        orig_total += s.e_orig.len();
        preserved_total += s.preserved.len();
        hallucinated_total += s.hallucinated.len();
    }
    Ok(QualityReport {
        n,
        mean_pr: scores.iter().map(|s| s.pr).sum::<f64>() / n as f64,
        mean_hr: scores.iter().map(|s| s.hr).sum::<f64>() / n as f64,
        min_pr: scores.iter().map(|s| s.pr).fold(f64::INFINITY, f64::min),
        max_hr: scores.iter().map(|s| s.hr).fold(0.0, f64::max),
        micro_pr: Some(if orig_total == 0 {
            1.0
        } else {
            preserved_total as f64 / orig_total as f64
        }),
        micro_hr: Some(hallucinated_total as f64 / orig_total.max(1) as f64),
        accept_rate: None,
    })
}

/// Summarizes rates that were stored on records (no entity sets available,
/// so micro aggregates are omitted).
pub fn aggregate_rates(prs: &[f64], hrs: &[f64]) -> Result<QualityReport, MetricsError> {
    if prs.is_empty() || prs.len() != hrs.len() {
        return Err(MetricsError::EmptyScores);
    }
    let n = prs.len();
    Ok(QualityReport {
        n,
        mean_pr: prs.iter().sum::<f64>() / n as f64,
        mean_hr: hrs.iter().sum::<f64>() / n as f64,
        min_pr: prs.iter().copied().fold(f64::INFINITY, f64::min),
        max_hr: hrs.iter().copied().fold(0.0, f64::max),
        micro_pr: None,
        micro_hr: None,
        accept_rate: None,
    })
}

/// Plain-text comparison table, one column block per named method.
pub fn render_table(rows: &[(String, QualityReport)]) -> String {
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>11}\n",
        "method", "n", "mean_pr", "mean_hr", "min_pr", "max_hr", "accept_rate"
    ));
    for (name, report) in rows {
        let accept = report
            .accept_rate
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<name_width$}  {:>6}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}  {:>11}\n",
            name, report.n, report.mean_pr, report.mean_hr, report.min_pr, report.max_hr, accept
        ));
    }
    out
}
