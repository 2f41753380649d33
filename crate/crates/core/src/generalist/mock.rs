//! Seeded deterministic rewrite mocks.
//!
//! The preserving mock emits every constraint span verbatim and perturbs
//! only the surrounding tokens (synonym substitution over a small
//! function-word table, plus sentence reordering). The faulty mock layers
//! calibrated entity deletion and distractor injection on top, modeling the
//! failure profile of an unguided rewriter.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::normalize;
use crate::weak_expert::EntitySpan;

/// Alternates for common function words and note verbs. Entity tokens are
/// never substituted; gap tokens are eligible only when their lowercase
/// form appears here.
const SYNONYM_TABLE: &[(&str, &[&str])] = &[
    ("a", &["one"]),
    ("admission", &["intake", "arrival"]),
    ("and", &["plus", "as well as"]),
    ("continues", &["maintains", "keeps"]),
    ("denies", &["disclaims"]),
    ("describes", &["recounts"]),
    ("exam", &["examination", "evaluation"]),
    ("follow", &["check"]),
    ("for", &["regarding"]),
    ("history", &["background"]),
    ("is", &["remains", "appears"]),
    ("morning", &["early hours"]),
    ("notes", &["records", "documents"]),
    ("on", &["upon"]),
    ("patient", &["individual", "subject"]),
    ("reports", &["describes", "mentions"]),
    ("reveals", &["shows"]),
    ("shows", &["demonstrates"]),
    ("since", &["following"]),
    ("stable", &["steady", "unchanged"]),
    ("the", &["this", "that"]),
    ("this", &["the"]),
    ("today", &["currently", "at present"]),
    ("was", &["had been"]),
    ("with", &["alongside"]),
    ("without", &["lacking"]),
];

const FAULT_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn synonym_map() -> &'static BTreeMap<&'static str, &'static [&'static str]> {
    static MAP: OnceLock<BTreeMap<&'static str, &'static [&'static str]>> = OnceLock::new();
    MAP.get_or_init(|| SYNONYM_TABLE.iter().copied().collect())
}

/// Every word the substitution stage can read or write, for checking that a
/// test lexicon stays disjoint from the mock's vocabulary.
pub fn synonym_vocabulary() -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    for (key, alts) in SYNONYM_TABLE {
        vocab.insert((*key).to_string());
        for alt in *alts {
            for word in alt.split_whitespace() {
                vocab.insert(word.to_string());
            }
        }
    }
    vocab
}

/// Rewrites `note_text` keeping every span surface verbatim. Output is a
/// pure function of `(note_text, spans, seed)`.
pub fn mock_preserving_rewrite(note_text: &str, spans: &[EntitySpan], seed: u64) -> String {
    rewrite_core(note_text, spans, seed, &BTreeSet::new(), &[])
}

/// Like the preserving mock, but deletes `⌊p·k⌋` of the k distinct
/// constraint entities (all occurrences) and appends `⌊q·k⌋` distractor
/// entities drawn from `distractors`, both chosen by seed.
pub fn mock_faulty_rewrite(
    note_text: &str,
    spans: &[EntitySpan],
    seed: u64,
    deletion_fraction: f64,
    injection_fraction: f64,
    distractors: &[String],
) -> String {
    let p = deletion_fraction.clamp(0.0, 1.0);
    let q = injection_fraction.max(0.0);
    let distinct: Vec<String> = spans
        .iter()
        .map(|s| normalize(&s.surface))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = distinct.len();
    let n_delete = ((p * k as f64).floor() as usize).min(k);
    let n_inject = (q * k as f64).floor() as usize;

    // Fault choices draw from a salted stream so that p = q = 0 leaves the
    // core rewrite stream untouched and reproduces the preserving mock.
    let mut fault_rng = ChaCha8Rng::seed_from_u64(seed ^ FAULT_STREAM_SALT);
    let deleted: BTreeSet<String> = if n_delete > 0 {
        distinct
            .choose_multiple(&mut fault_rng, n_delete)
            .cloned()
            .collect()
    } else {
        BTreeSet::new()
    };
    let injected: Vec<String> = if n_inject > 0 {
        let mut seen = BTreeSet::new();
        let pool: Vec<&String> = distractors
            .iter()
            .filter(|d| {
                let norm = normalize(d);
                !norm.is_empty() && !distinct.contains(&norm) && seen.insert(norm)
            })
            .collect();
        pool.choose_multiple(&mut fault_rng, n_inject.min(pool.len()))
            .map(|d| (*d).clone())
            .collect()
    } else {
        Vec::new()
    };

    rewrite_core(note_text, spans, seed, &deleted, &injected)
}

fn rewrite_core(
    note_text: &str,
    spans: &[EntitySpan],
    seed: u64,
    deleted: &BTreeSet<String>,
    injected: &[String],
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spans: Vec<&EntitySpan> = spans
        .iter()
        .filter(|s| {
            s.start < s.end
                && s.end <= note_text.len()
                && note_text.get(s.start..s.end) == Some(s.surface.as_str())
        })
        .collect();
    spans.sort_by_key(|s| s.start);

    let mut sentences: Vec<String> = Vec::new();
    for (start, end) in sentence_ranges(note_text, &spans) {
        let in_sentence: Vec<&&EntitySpan> = spans
            .iter()
            .filter(|s| s.start >= start && s.end <= end)
            .collect();
        let mut rewritten = String::new();
        let mut pos = start;
        for span in in_sentence {
            process_gap(&note_text[pos..span.start], &mut rng, &mut rewritten);
            if !deleted.contains(&normalize(&span.surface)) {
                rewritten.push_str(&span.surface);
            }
            pos = span.end;
        }
        process_gap(&note_text[pos..end], &mut rng, &mut rewritten);
        let trimmed = rewritten.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }

    sentences.shuffle(&mut rng);
    if !injected.is_empty() {
        sentences.push(format!("Also noted: {}.", injected.join(", ")));
    }
    sentences.join(" ")
}

/// Sentence byte ranges; boundaries that would fall inside a span are
/// suppressed so spans stay whole through reordering.
fn sentence_ranges(text: &str, spans: &[&EntitySpan]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((pos, ch)) = chars.next() {
        let terminator = matches!(ch, '.' | '?' | '!')
            && chars
                .peek()
                .map(|(_, next)| next.is_whitespace())
                .unwrap_or(false);
        if !terminator && ch != '\n' {
            continue;
        }
        let mut end = pos + ch.len_utf8();
        while let Some((next_pos, next_ch)) = chars.peek().copied() {
            if next_ch.is_whitespace() {
                end = next_pos + next_ch.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        if spans.iter().any(|s| s.start < end && end < s.end) {
            continue;
        }
        ranges.push((start, end));
        start = end;
    }
    if start < text.len() {
        ranges.push((start, text.len()));
    }
    ranges
}

/// Copies a non-entity gap, substituting eligible whole words in place and
/// leaving whitespace and punctuation untouched.
fn process_gap(gap: &str, rng: &mut ChaCha8Rng, out: &mut String) {
    let mut chars = gap.char_indices().peekable();
    while let Some((start, ch)) = chars.next() {
        let is_ws = ch.is_whitespace();
        let mut end = start + ch.len_utf8();
        while let Some((next_pos, next_ch)) = chars.peek().copied() {
            if next_ch.is_whitespace() == is_ws {
                end = next_pos + next_ch.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let run = &gap[start..end];
        if is_ws {
            out.push_str(run);
        } else {
            out.push_str(&substitute_word(run, rng));
        }
    }
}

fn substitute_word(word: &str, rng: &mut ChaCha8Rng) -> String {
    if !word.chars().all(char::is_alphabetic) {
        return word.to_string();
    }
    let key = word.to_lowercase();
    let Some(alternatives) = synonym_map().get(key.as_str()) else {
        return word.to_string();
    };
    // index 0 keeps the original word
    let pick = rng.random_range(0..=alternatives.len());
    if pick == 0 {
        return word.to_string();
    }
    let alt = alternatives[pick - 1];
    if word.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = alt.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        alt.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate_pair;
    use crate::weak_expert::{Gazetteer, GazetteerEntry};

    const NOTE: &str = "The patient reports chest pain and dizziness today. \
History shows metformin and warfarin on admission.";

    fn eval_gazetteer(extra: &[&str]) -> Gazetteer {
        let mut entries = vec![
            GazetteerEntry::new("chest pain", "sign_symptom"),
            GazetteerEntry::new("dizziness", "sign_symptom"),
            GazetteerEntry::new("metformin", "medication"),
            GazetteerEntry::new("warfarin", "medication"),
        ];
        for d in extra {
            entries.push(GazetteerEntry::new(*d, "medication"));
        }
        Gazetteer::compile(&entries).unwrap()
    }

    fn note_spans(g: &Gazetteer) -> Vec<EntitySpan> {
        g.extract(NOTE)
    }

    #[test]
    fn preserving_mock_is_deterministic() {
        let g = eval_gazetteer(&[]);
        let spans = note_spans(&g);
        assert_eq!(
            mock_preserving_rewrite(NOTE, &spans, 11),
            mock_preserving_rewrite(NOTE, &spans, 11)
        );
    }

    #[test]
    fn preserving_mock_scores_perfectly() {
        let g = eval_gazetteer(&[]);
        let spans = note_spans(&g);
        let out = mock_preserving_rewrite(NOTE, &spans, 5);
        let score = evaluate_pair(NOTE, &out, &g).unwrap();
        assert_eq!(score.pr, 1.0);
        assert_eq!(score.hr, 0.0);
    }

    #[test]
    fn preserving_mock_handles_zero_spans() {
        let out = mock_preserving_rewrite("The patient is stable today.", &[], 9);
        assert!(!out.is_empty());
    }

    #[test]
    fn different_seeds_differ_in_a_non_entity_token() {
        let g = eval_gazetteer(&[]);
        let spans = note_spans(&g);
        let one = mock_preserving_rewrite(NOTE, &spans, 1);
        let two = mock_preserving_rewrite(NOTE, &spans, 2);
        assert_ne!(one, two);
        for out in [&one, &two] {
            for surface in ["chest pain", "dizziness", "metformin", "warfarin"] {
                assert!(out.contains(surface), "{surface} missing from {out}");
            }
        }
    }

    #[test]
    fn zero_fractions_reproduce_preserving_mock() {
        let g = eval_gazetteer(&[]);
        let spans = note_spans(&g);
        let preserving = mock_preserving_rewrite(NOTE, &spans, 17);
        let faulty = mock_faulty_rewrite(NOTE, &spans, 17, 0.0, 0.0, &["insulin".into()]);
        assert_eq!(preserving, faulty);
    }

    #[test]
    fn faulty_mock_hits_exact_floor_counts() {
        let distractors: Vec<String> = vec![
            "insulin".into(),
            "nausea".into(),
            "syncope".into(),
            "apixaban".into(),
        ];
        let g = eval_gazetteer(&["insulin", "nausea", "syncope", "apixaban"]);
        let spans = note_spans(&g);
        assert_eq!(spans.len(), 4);
        let out = mock_faulty_rewrite(NOTE, &spans, 23, 0.5, 0.75, &distractors);
        let score = evaluate_pair(NOTE, &out, &g).unwrap();
        // k = 4: floor(0.5*4) = 2 deleted, floor(0.75*4) = 3 injected
        assert_eq!(score.pr, 0.5);
        assert_eq!(score.hr, 0.75);
    }

    #[test]
    fn full_deletion_zeroes_preservation() {
        let g = eval_gazetteer(&[]);
        let spans = note_spans(&g);
        let out = mock_faulty_rewrite(NOTE, &spans, 31, 1.0, 0.0, &[]);
        let score = evaluate_pair(NOTE, &out, &g).unwrap();
        assert_eq!(score.pr, 0.0);
    }

    #[test]
    fn injection_skips_entities_already_present() {
        let distractors: Vec<String> = vec!["metformin".into(), "insulin".into()];
        let g = eval_gazetteer(&["insulin"]);
        let spans = note_spans(&g);
        // only "insulin" is a legal distractor; floor(0.25*4) = 1 injection
        let out = mock_faulty_rewrite(NOTE, &spans, 7, 0.0, 0.25, &distractors);
        let score = evaluate_pair(NOTE, &out, &g).unwrap();
        assert_eq!(score.pr, 1.0);
        assert_eq!(score.hr, 0.25);
        assert!(out.contains("Also noted: insulin."));
    }

    #[test]
    fn spans_crossing_sentence_boundaries_stay_whole() {
        let text = "dose was 5 mg q.d. until review. next dose unchanged.";
        let g = Gazetteer::compile(&[GazetteerEntry::new("q.d. until", "schedule")]).unwrap();
        let spans = g.extract(text);
        assert_eq!(spans.len(), 1);
        let out = mock_preserving_rewrite(text, &spans, 3);
        assert!(out.contains("q.d. until"));
    }
}
