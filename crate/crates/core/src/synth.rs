//! Synthetic labeled clinical-style notes with matched gazetteers.
//!
//! Every generated note embeds its sampled entities verbatim inside filler
//! sentences whose vocabulary is disjoint from the entity lexicon, so
//! extraction over the returned gazetteer recovers exactly the per-note
//! ground truth. That closure property is what calibrates the metric and
//! gate tests downstream.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Label, Note};
use crate::metrics::normalize;
use crate::weak_expert::{EntitySet, GazetteerEntry};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("entity lexicon is empty")]
    EmptyLexicon,
    #[error("entities_per_note range ({lo}, {hi}) is invalid: {reason}")]
    BadRange {
        lo: usize,
        hi: usize,
        reason: String,
    },
    #[error("sentence template {template:?} must contain {{entity}} exactly once")]
    BadTemplate { template: String },
}

/// How a note's label derives from its embedded entities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    /// Positive when any embedded entity has the given category.
    CategoryPresence {
        category: String,
        positive: String,
        negative: String,
    },
    /// Positive when at least `min` entities are embedded.
    EntityCountThreshold {
        min: usize,
        positive: String,
        negative: String,
    },
    Constant {
        value: String,
    },
}

impl LabelRule {
    fn apply(&self, entities: &[&GazetteerEntry]) -> Label {
        match self {
            LabelRule::CategoryPresence {
                category,
                positive,
                negative,
            } => {
                let hit = entities.iter().any(|e| &e.category == category);
                Label::from(if hit {
                    positive.as_str()
                } else {
                    negative.as_str()
                })
            }
            LabelRule::EntityCountThreshold {
                min,
                positive,
                negative,
            } => Label::from(if entities.len() >= *min {
                positive.as_str()
            } else {
                negative.as_str()
            }),
            LabelRule::Constant { value } => Label::from(value.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_notes: usize,
    /// Inclusive range for the number of distinct entities per note.
    pub entities_per_note: (usize, usize),
    pub seed: u64,
    pub label_rule: LabelRule,
    #[serde(default = "builtin_lexicon")]
    pub lexicon: Vec<GazetteerEntry>,
    #[serde(default = "builtin_sentence_templates")]
    pub sentence_templates: Vec<String>,
    #[serde(default = "builtin_openers")]
    pub openers: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_notes: 100,
            entities_per_note: (2, 5),
            seed: 0,
            label_rule: LabelRule::CategoryPresence {
                category: "sign_symptom".into(),
                positive: "1".into(),
                negative: "0".into(),
            },
            lexicon: builtin_lexicon(),
            sentence_templates: builtin_sentence_templates(),
            openers: builtin_openers(),
        }
    }
}

/// Generated corpus plus the gazetteer that recovers it and the per-note
/// ground-truth entity sets (index-aligned with the dataset).
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub gazetteer: Vec<GazetteerEntry>,
    pub ground_truth: Vec<EntitySet>,
}

/// Deterministically generates `spec.n_notes` notes under `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    // dedup by normalized surface so sampled entities are distinct as sets
    let mut lexicon: Vec<GazetteerEntry> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for entry in &spec.lexicon {
        if seen.insert(normalize(&entry.surface)) {
            lexicon.push(entry.clone());
        }
    }
    let (lo, hi) = spec.entities_per_note;
    if spec.n_notes > 0 {
        if lexicon.is_empty() {
            return Err(SynthError::EmptyLexicon);
        }
        if lo > hi {
            return Err(SynthError::BadRange {
                lo,
                hi,
                reason: "lower bound exceeds upper bound".into(),
            });
        }
        if hi > lexicon.len() {
            return Err(SynthError::BadRange {
                lo,
                hi,
                reason: format!("lexicon has only {} distinct entries", lexicon.len()),
            });
        }
        if spec.sentence_templates.is_empty() || spec.openers.is_empty() {
            return Err(SynthError::BadTemplate {
                template: "(none provided)".into(),
            });
        }
        for template in &spec.sentence_templates {
            if template.matches("{entity}").count() != 1 {
                return Err(SynthError::BadTemplate {
                    template: template.clone(),
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut notes = Vec::with_capacity(spec.n_notes);
    let mut ground_truth = Vec::with_capacity(spec.n_notes);
    for i in 0..spec.n_notes {
        let k = rng.random_range(lo..=hi);
        let picked = rand::seq::index::sample(&mut rng, lexicon.len(), k);
        let entities: Vec<&GazetteerEntry> = picked.iter().map(|idx| &lexicon[idx]).collect();

        let mut sentences = Vec::with_capacity(entities.len() + 1);
        sentences.push(
            spec.openers
                .choose(&mut rng)
                .expect("non-empty openers")
                .clone(),
        );
        for entity in &entities {
            let template = spec
                .sentence_templates
                .choose(&mut rng)
                .expect("non-empty templates");
            sentences.push(template.replace("{entity}", &entity.surface));
        }

        let mut truth = EntitySet::new();
        for entity in &entities {
            truth.insert_with_category(&entity.surface, &entity.category);
        }
        ground_truth.push(truth);
        notes.push(Note {
            id: format!("synth-{i:04}"),
            text: sentences.join(" "),
            label: spec.label_rule.apply(&entities),
            meta: None,
        });
    }

    Ok(SynthOutput {
        dataset: Dataset::new(notes),
        gazetteer: lexicon,
        ground_truth,
    })
}

/// Built-in clinical-style entity lexicon. Entries never share tokens with
/// the filler sentences or the rewrite mocks' synonym vocabulary, and no
/// entry is nested inside another.
pub fn builtin_lexicon() -> Vec<GazetteerEntry> {
    const ENTRIES: &[(&str, &str)] = &[
        ("metformin", "medication"),
        ("lisinopril", "medication"),
        ("atorvastatin", "medication"),
        ("warfarin", "medication"),
        ("amiodarone", "medication"),
        ("furosemide", "medication"),
        ("clopidogrel", "medication"),
        ("levothyroxine", "medication"),
        ("apixaban", "medication"),
        ("prednisone", "medication"),
        ("gabapentin", "medication"),
        ("omeprazole", "medication"),
        ("chest pain", "sign_symptom"),
        ("shortness of breath", "sign_symptom"),
        ("dizziness", "sign_symptom"),
        ("nausea", "sign_symptom"),
        ("peripheral edema", "sign_symptom"),
        ("palpitations", "sign_symptom"),
        ("syncope", "sign_symptom"),
        ("productive cough", "sign_symptom"),
        ("night sweats", "sign_symptom"),
        ("blurred vision", "sign_symptom"),
        ("type 2 diabetes", "disease_disorder"),
        ("atrial fibrillation", "disease_disorder"),
        ("hypertension", "disease_disorder"),
        ("pneumonia", "disease_disorder"),
        ("heart failure", "disease_disorder"),
        ("chronic kidney disease", "disease_disorder"),
        ("hyperlipidemia", "disease_disorder"),
        ("sepsis", "disease_disorder"),
        ("anemia", "disease_disorder"),
        ("osteoarthritis", "disease_disorder"),
        ("500 mg", "measurement"),
        ("20 mg", "measurement"),
        ("40 mg", "measurement"),
        ("81 mg", "measurement"),
        ("10 units", "measurement"),
        ("2 liters", "measurement"),
        ("98.6 degrees", "measurement"),
        ("140 bpm", "measurement"),
    ];
    ENTRIES
        .iter()
        .map(|(s, c)| GazetteerEntry::new(*s, *c))
        .collect()
}

/// Filler sentences that embed one entity each.
pub fn builtin_sentence_templates() -> Vec<String> {
    [
        "Patient reports {entity} on admission.",
        "History shows {entity} since the last visit.",
        "Exam today reveals {entity} without complication.",
        "Plan continues {entity} as documented.",
        "Assessment notes {entity} this morning.",
        "Review confirms {entity} in the chart.",
        "Nursing observed {entity} overnight.",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Entity-free opening sentences.
pub fn builtin_openers() -> Vec<String> {
    [
        "Admission note for follow up.",
        "Progress note for morning rounds.",
        "Clinic visit summary follows.",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}
