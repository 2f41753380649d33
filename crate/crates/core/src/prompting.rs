//! Prompt construction: the constraint-carrying rewrite prompt, the two
//! baseline prompts (plain rephrase and style-only), and sentence-boundary
//! chunk plans for notes too long to rewrite in one call.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Note;
use crate::weak_expert::{EntitySet, EntitySpan};

pub const TEMPLATE_EXPERT: &str = "expert";
pub const TEMPLATE_NAIVE: &str = "naive";
pub const TEMPLATE_CATO: &str = "cato";

const PLACEHOLDER_NOTE: &str = "note";
const PLACEHOLDER_KEYWORDS: &str = "extracted_keywords";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unresolved placeholder {{{name}}}")]
    UnresolvedPlaceholder { name: String },
    #[error("template {name:?} must contain {{{placeholder}}}")]
    MissingPlaceholder {
        name: String,
        placeholder: &'static str,
    },
    #[error("template {name:?} must not contain {{{placeholder}}}")]
    ForbiddenPlaceholder {
        name: String,
        placeholder: &'static str,
    },
    #[error("template file {path} has no \"--- user ---\" section")]
    MissingUserSection { path: String },
    #[error("failed to read template {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named prompt template. `user_text` may reference `{note}` and
/// `{extracted_keywords}`; the expert template uses both, baselines only
/// `{note}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub system_text: String,
    pub user_text: String,
}

impl PromptTemplate {
    /// Checks placeholder well-formedness for the template's role.
    pub fn validate(&self) -> Result<(), PromptError> {
        for name in scan_placeholders(&self.user_text)
            .into_iter()
            .chain(scan_placeholders(&self.system_text))
        {
            if name != PLACEHOLDER_NOTE && name != PLACEHOLDER_KEYWORDS {
                return Err(PromptError::UnresolvedPlaceholder { name });
            }
        }
        if !self.user_text.contains("{note}") {
            return Err(PromptError::MissingPlaceholder {
                name: self.name.clone(),
                placeholder: "note",
            });
        }
        let has_keywords = self.user_text.contains("{extracted_keywords}");
        if self.name == TEMPLATE_EXPERT && !has_keywords {
            return Err(PromptError::MissingPlaceholder {
                name: self.name.clone(),
                placeholder: "extracted_keywords",
            });
        }
        if (self.name == TEMPLATE_NAIVE || self.name == TEMPLATE_CATO) && has_keywords {
            return Err(PromptError::ForbiddenPlaceholder {
                name: self.name.clone(),
                placeholder: "extracted_keywords",
            });
        }
        Ok(())
    }

    /// Whether rendering injects the constraint list.
    pub fn carries_constraints(&self) -> bool {
        self.user_text.contains("{extracted_keywords}")
    }
}

/// A fully substituted prompt plus the provenance the rewrite backends and
/// the audit log need: the source text, the rendered entity list, and the
/// located constraint spans.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    /// Entities rendered into the prompt; empty for baseline templates.
    pub entity_list: EntitySet,
    /// The text this prompt asks to rewrite.
    pub source_text: String,
    /// Constraint spans located in `source_text`, for backends that honor
    /// constraints structurally (the mocks).
    pub constraint_spans: Vec<EntitySpan>,
}

impl RenderedPrompt {
    pub fn with_constraint_spans(mut self, spans: Vec<EntitySpan>) -> Self {
        self.constraint_spans = spans;
        self
    }
}

/// Renders a template for a note. `{note}` becomes the note text and
/// `{extracted_keywords}` a comma-separated, lexicographically sorted list
/// of entity surfaces. Baseline templates ignore the entities entirely.
pub fn build_prompt(
    note: &Note,
    entities: &EntitySet,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, PromptError> {
    render(template, &note.text, entities)
}

/// Renders one chunk of a long note, optionally prefixing carry-over
/// context from the previously rewritten chunk so the backend keeps the
/// narrative coherent across calls.
pub fn render_chunk(
    template: &PromptTemplate,
    chunk_text: &str,
    entities: &EntitySet,
    carry_over: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    let mut rendered = render(template, chunk_text, entities)?;
    if let Some(context) = carry_over {
        rendered.user = format!(
            "Context (the rewritten text so far, for continuity only):\n{context}\n\n{}",
            rendered.user
        );
    }
    Ok(rendered)
}

fn render(
    template: &PromptTemplate,
    text: &str,
    entities: &EntitySet,
) -> Result<RenderedPrompt, PromptError> {
    template.validate()?;
    let carries = template.carries_constraints();
    let keywords = if carries {
        entities.iter().collect::<Vec<_>>().join(", ")
    } else {
        String::new()
    };
    let substitute = |s: &str| {
        s.replace("{note}", text)
            .replace("{extracted_keywords}", &keywords)
    };
    Ok(RenderedPrompt {
        system: substitute(&template.system_text),
        user: substitute(&template.user_text),
        entity_list: if carries {
            entities.clone()
        } else {
            EntitySet::new()
        },
        source_text: text.to_string(),
        constraint_spans: Vec::new(),
    })
}

fn scan_placeholders(s: &str) -> Vec<String> {
    let mut found = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(close) = s[i + 1..].find(['{', '}']) {
                let end = i + 1 + close;
                if bytes[end] == b'}' && end > i + 1 {
                    let name = &s[i + 1..end];
                    if name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                        found.push(name.to_string());
                        i = end + 1;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }
    found
}

/// The three built-in templates: the constraint-carrying expert prompt and
/// the two baselines (plain rephrase, style-only rewrite).
pub fn builtin_templates() -> Vec<PromptTemplate> {
    vec![
        PromptTemplate {
            name: TEMPLATE_EXPERT.into(),
            system_text:
                "You are a medical AI assistant with expertise in clinical documentation. \
Your task is to rewrite clinical notes while maintaining complete medical accuracy.\n\n\
Important instructions:\n\
- You must preserve all medical entities exactly as they appear.\n\
- Do not list or enumerate the entities — incorporate them naturally into the rewritten text.\n\
- You may change sentence structure, word choice, and writing style.\n\
- Do not change any medical terminology, dosages, measurements, or clinical findings.\n\
- Ensure the rewritten note contains the same medical information as the original."
                    .into(),
            user_text: "Original clinical note:\n{note}\n\n\
Medical entities to preserve (verbatim):\n{extracted_keywords}\n\n\
Rewrite instructions:\n\
Rewrite the original clinical note while naturally incorporating all listed medical entities. \
Do not list the entities separately. Maintain complete medical accuracy and do not alter any \
medical terminology, dosages, measurements, or clinical findings. Ensure the rewritten note \
conveys the same medical information as the original."
                .into(),
        },
        PromptTemplate {
            name: TEMPLATE_NAIVE.into(),
            system_text: "You are a helpful writing assistant.".into(),
            user_text: "Rephrase the following clinical note:\n\n{note}".into(),
        },
        PromptTemplate {
            name: TEMPLATE_CATO.into(),
            system_text: "You are a helpful writing assistant.".into(),
            user_text: "Rewrite the following clinical note, changing only the physician's \
writing style. Do not add or remove any content.\n\n{note}"
                .into(),
        },
    ]
}

/// Looks up a built-in template by name.
pub fn builtin_template(name: &str) -> Option<PromptTemplate> {
    builtin_templates().into_iter().find(|t| t.name == name)
}

/// Loads a custom template file using the `--- system ---` / `--- user ---`
/// delimiter convention. Text before the first delimiter is ignored; the
/// template name is the file stem.
pub fn load_template_file(path: impl AsRef<Path>) -> Result<PromptTemplate, PromptError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "custom".into());
    let mut system = String::new();
    let mut user = String::new();
    let mut current: Option<&mut String> = None;
    for line in raw.lines() {
        match line.trim() {
            "--- system ---" => current = Some(&mut system),
            "--- user ---" => current = Some(&mut user),
            _ => {
                if let Some(section) = current.as_deref_mut() {
                    if !section.is_empty() {
                        section.push('\n');
                    }
                    section.push_str(line);
                }
            }
        }
    }
    if user.is_empty() {
        return Err(PromptError::MissingUserSection {
            path: path.display().to_string(),
        });
    }
    let template = PromptTemplate {
        name,
        system_text: system,
        user_text: user,
    };
    template.validate()?;
    Ok(template)
}

/// A contiguous segment of a note in a chunk plan. `offset` anchors the
/// segment in the original text; `spans` are re-anchored to the segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub offset: usize,
    pub text: String,
    pub entities: EntitySet,
    pub spans: Vec<EntitySpan>,
    /// Filled during execution with bounded context from the previously
    /// rewritten chunk.
    pub carry_over: Option<String>,
}

/// An ordered partition of a note whose chunk texts concatenate back to the
/// original byte-for-byte.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkPlan {
    pub chunks: Vec<Chunk>,
}

impl ChunkPlan {
    /// Distributes spans to the chunk containing each span's start. A span
    /// that crosses a chunk boundary contributes its entity to that chunk's
    /// set but is not re-anchored (it cannot be located inside one chunk).
    pub fn assign_spans(&mut self, spans: &[EntitySpan]) {
        for span in spans {
            let Some(chunk) = self
                .chunks
                .iter_mut()
                .rev()
                .find(|c| span.start >= c.offset && span.start < c.offset + c.text.len())
            else {
                continue;
            };
            chunk
                .entities
                .insert_with_category(&span.surface, &span.category);
            if span.end <= chunk.offset + chunk.text.len() {
                chunk.spans.push(EntitySpan {
                    surface: span.surface.clone(),
                    category: span.category.clone(),
                    start: span.start - chunk.offset,
                    end: span.end - chunk.offset,
                });
            }
        }
    }

    /// Union of per-chunk entity sets.
    pub fn entity_union(&self) -> EntitySet {
        let mut union = EntitySet::new();
        for chunk in &self.chunks {
            for surface in chunk.entities.iter() {
                match chunk.entities.category_of(surface) {
                    Some(cat) => union.insert_with_category(surface, cat),
                    None => union.insert(surface),
                }
            }
        }
        union
    }
}

/// Splits text into sentence-boundary chunks of at most `max_units`
/// whitespace-delimited tokens, greedily packed. A single sentence longer
/// than `max_units` becomes its own oversize chunk.
pub fn plan_chunks(text: &str, max_units: usize) -> ChunkPlan {
    assert!(max_units >= 1, "max_units must be at least 1");
    let sentences = split_sentences(text);
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut current = String::new();
    let mut current_offset = 0usize;
    let mut current_units = 0usize;
    let mut consumed = 0usize;
    for sentence in sentences {
        let units = sentence.split_whitespace().count();
        if !current.is_empty() && current_units + units > max_units {
            chunks.push(Chunk {
                offset: current_offset,
                text: std::mem::take(&mut current),
                entities: EntitySet::new(),
                spans: Vec::new(),
                carry_over: None,
            });
            current_units = 0;
            current_offset = consumed;
        }
        current.push_str(sentence);
        current_units += units;
        consumed += sentence.len();
    }
    if !current.is_empty() || chunks.is_empty() {
        chunks.push(Chunk {
            offset: current_offset,
            text: current,
            entities: EntitySet::new(),
            spans: Vec::new(),
            carry_over: None,
        });
    }
    ChunkPlan { chunks }
}

/// Splits at sentence boundaries: `.`, `?`, or `!` followed by whitespace,
/// or a newline. The trailing whitespace run stays with its sentence so the
/// pieces concatenate losslessly.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((pos, ch)) = chars.next() {
        let terminator = matches!(ch, '.' | '?' | '!')
            && chars
                .peek()
                .map(|(_, next)| next.is_whitespace())
                .unwrap_or(false);
        let newline = ch == '\n';
        if !terminator && !newline {
            continue;
        }
        // absorb the whitespace run following the boundary
        let mut end = pos + ch.len_utf8();
        while let Some((next_pos, next_ch)) = chars.peek().copied() {
            if next_ch.is_whitespace() {
                end = next_pos + next_ch.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        sentences.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        sentences.push(&text[start..]);
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use proptest::prelude::*;

    fn note(text: &str) -> Note {
        Note {
            id: "n1".into(),
            text: text.into(),
            label: Label::from("1"),
            meta: None,
        }
    }

    fn expert() -> PromptTemplate {
        builtin_template(TEMPLATE_EXPERT).unwrap()
    }

    #[test]
    fn builtin_templates_are_three_and_valid() {
        let templates = builtin_templates();
        assert_eq!(templates.len(), 3);
        for t in &templates {
            t.validate().unwrap();
        }
    }

    #[test]
    fn expert_template_carries_required_instructions() {
        let t = expert();
        assert!(t.system_text.contains("complete medical accuracy"));
        assert!(t
            .system_text
            .contains("preserve all medical entities exactly as they appear"));
        assert!(t.user_text.contains("Do not list the entities separately"));
    }

    #[test]
    fn expert_prompt_with_no_entities_has_empty_list() {
        let rendered = build_prompt(&note("x"), &EntitySet::new(), &expert()).unwrap();
        assert!(rendered.user.contains('x'));
        assert!(rendered
            .user
            .contains("Medical entities to preserve (verbatim):\n\n"));
        assert!(rendered.entity_list.is_empty());
    }

    #[test]
    fn entities_render_sorted_and_verbatim() {
        let entities = EntitySet::from_surfaces(["metformin", "500 mg"]);
        let rendered = build_prompt(&note("taking things"), &entities, &expert()).unwrap();
        assert!(rendered.user.contains("500 mg, metformin"));
        for surface in entities.iter() {
            assert!(rendered.user.contains(surface));
        }
        assert_eq!(rendered.entity_list, entities);
    }

    #[test]
    fn naive_template_omits_entities() {
        let entities = EntitySet::from_surfaces(["metformin"]);
        let naive = builtin_template(TEMPLATE_NAIVE).unwrap();
        let rendered = build_prompt(&note("no meds here"), &entities, &naive).unwrap();
        assert!(!rendered.user.contains("metformin"));
        assert!(rendered.entity_list.is_empty());
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let template = PromptTemplate {
            name: "custom".into(),
            system_text: String::new(),
            user_text: "{note} and {mystery}".into(),
        };
        match build_prompt(&note("x"), &EntitySet::new(), &template).unwrap_err() {
            PromptError::UnresolvedPlaceholder { name } => assert_eq!(name, "mystery"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn expert_named_template_requires_keyword_placeholder() {
        let template = PromptTemplate {
            name: TEMPLATE_EXPERT.into(),
            system_text: String::new(),
            user_text: "{note}".into(),
        };
        assert!(matches!(
            template.validate(),
            Err(PromptError::MissingPlaceholder { .. })
        ));
    }

    #[test]
    fn braces_in_note_text_are_left_alone() {
        let rendered =
            build_prompt(&note("given {unusual} dose"), &EntitySet::new(), &expert()).unwrap();
        assert!(rendered.user.contains("{unusual}"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let entities = EntitySet::from_surfaces(["b", "a", "c"]);
        let one = build_prompt(&note("text"), &entities, &expert()).unwrap();
        let two = build_prompt(&note("text"), &entities, &expert()).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn template_file_round_trip() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(
            tmp.path(),
            "--- system ---\nYou rewrite text.\n--- user ---\nRewrite: {note}\nKeep: {extracted_keywords}",
        )
        .unwrap();
        let t = load_template_file(tmp.path()).unwrap();
        assert_eq!(t.system_text, "You rewrite text.");
        assert!(t.user_text.contains("{note}"));
        assert!(t.carries_constraints());
    }

    #[test]
    fn template_file_without_user_section_fails() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), "--- system ---\nonly system").unwrap();
        assert!(matches!(
            load_template_file(tmp.path()),
            Err(PromptError::MissingUserSection { .. })
        ));
    }

    #[test]
    fn short_text_is_single_chunk() {
        let plan = plan_chunks("one short sentence.", 100);
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].text, "one short sentence.");
    }

    #[test]
    fn two_sentences_split_at_boundary() {
        let s1 = "a b c d e f g h i j. ";
        let s2 = "k l m n o p q r s t.";
        let plan = plan_chunks(&format!("{s1}{s2}"), 10);
        assert_eq!(plan.chunks.len(), 2);
        assert_eq!(plan.chunks[0].text, s1);
        assert_eq!(plan.chunks[1].text, s2);
    }

    #[test]
    fn oversize_sentence_is_its_own_chunk() {
        let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let plan = plan_chunks(&text, 10);
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].text, text);
    }

    #[test]
    fn chunk_spans_are_reanchored() {
        let text = "alpha beta. gamma delta. epsilon zeta.";
        let mut plan = plan_chunks(text, 2);
        let spans = vec![EntitySpan {
            surface: "gamma".into(),
            category: "x".into(),
            start: 12,
            end: 17,
        }];
        plan.assign_spans(&spans);
        let owner = plan.chunks.iter().find(|c| !c.spans.is_empty()).unwrap();
        let s = &owner.spans[0];
        assert_eq!(&owner.text[s.start..s.end], "gamma");
        assert_eq!(plan.entity_union(), EntitySet::from_surfaces(["gamma"]));
    }

    #[test]
    fn straddling_span_still_reaches_the_entity_union() {
        let text = "alpha beta. gamma delta. epsilon zeta.";
        let mut plan = plan_chunks(text, 2);
        assert!(plan.chunks.len() > 1);
        // "beta. gamma" crosses the first chunk boundary
        let spans = vec![EntitySpan {
            surface: "beta. gamma".into(),
            category: "x".into(),
            start: 6,
            end: 17,
        }];
        plan.assign_spans(&spans);
        assert_eq!(
            plan.entity_union(),
            EntitySet::from_surfaces(["beta. gamma"])
        );
        // no chunk can locate it, so nobody re-anchors it
        assert!(plan.chunks.iter().all(|c| c.spans.is_empty()));
    }

    #[test]
    fn carry_over_is_prefixed_to_user_prompt() {
        let rendered = render_chunk(
            &expert(),
            "part two.",
            &EntitySet::new(),
            Some("part one rewritten"),
        )
        .unwrap();
        assert!(rendered.user.starts_with("Context"));
        assert!(rendered.user.contains("part one rewritten"));
        assert!(rendered.user.contains("part two."));
    }

    proptest! {
        #[test]
        fn chunks_reassemble_exactly(
            text in "[a-d \\.\\n!?]{0,200}",
            max_units in 1usize..20,
        ) {
            let plan = plan_chunks(&text, max_units);
            let joined: String = plan.chunks.iter().map(|c| c.text.as_str()).collect();
            prop_assert_eq!(joined, text);
        }

        #[test]
        fn chunk_token_budget_holds_unless_single_sentence(
            words in proptest::collection::vec("[a-z]{1,4}", 1..60),
            max_units in 1usize..12,
        ) {
            let text = words.join(" ") + ".";
            let plan = plan_chunks(&text, max_units);
            for chunk in &plan.chunks {
                let units = chunk.text.split_whitespace().count();
                let sentence_count = split_sentences(&chunk.text).len();
                prop_assert!(units <= max_units || sentence_count == 1);
            }
        }
    }
}
