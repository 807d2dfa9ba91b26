use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use tracing::warn;

use super::{AnnotatorBackend, AttributeLine, BackendOutput};
use crate::error::{Error, Result};
use crate::integrate::align;
use crate::llm_client::Completer;
use crate::preprocess::Chunk;
use crate::recognition::Mention;
use crate::terminology::AttributeKind;

const LOCATION_TEMPLATE: &str = "Here is one part of a medical note:\n{paragraph}\nFor each of the entities from the note, which are marked with double curly braces in the note, output its body location according to the note (Format: entity: location), which should be an exact substring from the note, and the location should be a noun or noun phrase or direction. If the note did not specify the location explicitly, only print 'null'.\nHere are the terms:{terms}";

const MODIFIER_TEMPLATE: &str = "Here is one part of a medical note:\n{paragraph}\nFor each of the entities from the note, which are marked with double curly braces in the note, output its modifiers according to the note (Format: entity: modifier), which should be an exact substring from the note, such as severity, chronicity, side, color or texture. Separate several modifiers with ';'. If the note did not specify a modifier explicitly, only print 'null'.\nHere are the terms:{terms}";

const VALUE_TEMPLATE: &str = "Here is one part of a medical note:\n{paragraph}\nFor each of the entities from the note, which are marked with double curly braces in the note, output its value according to the note (Format: entity: value), which should be an exact number or quantity from the note, without the unit. If the note did not specify the value explicitly, only print 'null'.\nHere are the terms:{terms}";

const UNIT_TEMPLATE: &str = "Here is one part of a medical note:\n{paragraph}\nFor each of the entities from the note, which are marked with double curly braces in the note, output the unit of its value according to the note (Format: entity: unit). If the note did not specify a value with a unit, only print 'null'.\nHere are the terms:{terms}";

const PURPOSE_TEMPLATE: &str = "Here is one part of a medical note:\n{paragraph}\nFor each of the entities from the note, which are marked with double curly braces in the note, output its purpose according to the note and medical knowledge (Format: entity: purpose), such as what a drug or procedure is meant to achieve. If the purpose cannot be determined, only print 'null'.\nHere are the terms:{terms}";

/// Prompt templates per attribute kind, with `{paragraph}`, `{kind}` and
/// `{terms}` placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: HashMap<AttributeKind, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let templates = [
            (AttributeKind::Location, LOCATION_TEMPLATE),
            (AttributeKind::Modifier, MODIFIER_TEMPLATE),
            (AttributeKind::Value, VALUE_TEMPLATE),
            (AttributeKind::Unit, UNIT_TEMPLATE),
            (AttributeKind::Purpose, PURPOSE_TEMPLATE),
        ]
        .into_iter()
        .map(|(k, t)| (k, t.to_string()))
        .collect();
        PromptTemplates { templates }
    }
}

impl PromptTemplates {
    /// Reads `<kind>.txt` (e.g. `location.txt`) from `dir` where present.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut out = PromptTemplates::default();
        for kind in AttributeKind::ALL {
            let path = dir.join(format!("{}.txt", kind.name()));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                out.set(kind, text);
            }
        }
        Ok(out)
    }

    pub fn set(&mut self, kind: AttributeKind, template: impl Into<String>) {
        self.templates.insert(kind, template.into());
    }

    pub fn get(&self, kind: AttributeKind) -> &str {
        &self.templates[&kind]
    }

    pub fn render(&self, kind: AttributeKind, paragraph: &str, terms: &[&str]) -> String {
        self.get(kind)
            .replace("{kind}", kind.name())
            .replace("{terms}", &terms.join("\n"))
            .replace("{paragraph}", paragraph)
    }
}

/// Chunk text with every mention wrapped in `{{ }}`.
pub fn mark_mentions(chunk: &Chunk, mentions: &[Mention]) -> String {
    let mut out = String::with_capacity(chunk.text.len() + 4 * mentions.len());
    let mut cursor = 0;
    for m in mentions {
        let start = m.norm_start - chunk.norm_start;
        let end = m.norm_end - chunk.norm_start;
        out.push_str(&chunk.text[cursor..start]);
        out.push_str("{{");
        out.push_str(&chunk.text[start..end]);
        out.push_str("}}");
        cursor = end;
    }
    out.push_str(&chunk.text[cursor..]);
    out
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 && line[digits..].starts_with(['.', ')']) {
        line[digits + 1..].trim_start()
    } else {
        line
    }
}

fn is_null_text(v: &str) -> bool {
    let v = v.trim().trim_matches(['\'', '"', '.']).to_lowercase();
    matches!(v.as_str(), "" | "null" | "none" | "n/a" | "not applicable")
}

/// Reads `entity: value` lines. Lines without a colon are counted as
/// unparsable; `null` values become empty value lists.
pub fn parse_response(text: &str, kind: AttributeKind) -> BackendOutput {
    let mut out = BackendOutput::default();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((entity, value)) = strip_list_marker(line).split_once(':') else {
            warn!(line = %raw, "unparsable attribute line");
            out.unparsable += 1;
            continue;
        };
        let entity = entity
            .trim()
            .trim_start_matches("{{")
            .trim_end_matches("}}")
            .trim()
            .trim_matches(['\'', '"']);
        if entity.is_empty() {
            out.unparsable += 1;
            continue;
        }
        let values = if is_null_text(value) {
            Vec::new()
        } else if kind.is_list() {
            value
                .split([';', ','])
                .map(str::trim)
                .filter(|v| !is_null_text(v))
                .map(str::to_string)
                .collect()
        } else {
            vec![value.trim().to_string()]
        };
        out.lines.push(AttributeLine::new(entity, values));
    }
    out
}

/// Attribute backend backed by a chat-completion endpoint (or a replayed
/// transcript of one).
#[derive(Clone)]
pub struct LlmBackend {
    client: Arc<dyn Completer>,
    templates: PromptTemplates,
}

impl LlmBackend {
    pub fn new(client: Arc<dyn Completer>, templates: PromptTemplates) -> Self {
        LlmBackend { client, templates }
    }

    pub fn prompt(&self, chunk: &Chunk, mentions: &[Mention], kind: AttributeKind) -> String {
        let terms: Vec<&str> = mentions.iter().map(|m| m.surface.as_str()).collect();
        self.templates
            .render(kind, &mark_mentions(chunk, mentions), &terms)
    }
}

impl AnnotatorBackend for LlmBackend {
    fn annotate(&self, chunk: &Chunk, mentions: &[Mention], kind: AttributeKind) -> Result<BackendOutput> {
        if mentions.is_empty() {
            return Ok(BackendOutput::default());
        }
        let prompt = self.prompt(chunk, mentions, kind);
        let response = self.client.complete(&prompt)?;
        let parsed = parse_response(&response, kind);
        if parsed.lines.is_empty() {
            return Err(Error::Backend(format!(
                "unusable response for {kind} in chunk {} of note {}",
                chunk.chunk_index, chunk.note_id
            )));
        }
        Ok(parsed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmExtraction {
    /// `(mention index, values)` in mention order; empty values are null.
    pub assigned: Vec<(usize, Vec<String>)>,
    /// Lines that could not be parsed or matched to a mention.
    pub dropped: usize,
    pub total_lines: usize,
}

/// Runs `backend` for one kind and aligns its lines back to `mentions`.
pub fn llm_extract(
    chunk: &Chunk,
    mentions: &[Mention],
    kind: AttributeKind,
    backend: &dyn AnnotatorBackend,
) -> Result<LlmExtraction> {
    let output = backend.annotate(chunk, mentions, kind)?;
    let alignment = align(mentions, &output.lines);
    for &line in &alignment.dropped {
        warn!(entity = %output.lines[line].entity, kind = %kind, "attribute line matches no mention");
    }
    let assigned = alignment
        .pairs
        .iter()
        .map(|&(line, mention)| (mention, output.lines[line].values.clone()))
        .collect();
    Ok(LlmExtraction {
        assigned,
        dropped: alignment.dropped.len() + output.unparsable,
        total_lines: output.lines.len() + output.unparsable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_client::{LlmError, ReplayCompleter, Transcript};
    use crate::terminology::SemanticType;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            note_id: "n".into(),
            chunk_index: 0,
            norm_start: 0,
            norm_end: text.len(),
            text: text.into(),
            token_count: 0,
            oversize: false,
        }
    }

    fn mention(text: &str, surface: &str) -> Mention {
        let s = text.find(surface).unwrap();
        Mention {
            note_id: "n".into(),
            chunk_index: 0,
            norm_start: s,
            norm_end: s + surface.len(),
            raw_start: s,
            raw_end: s + surface.len(),
            surface: surface.into(),
            canonical_phrase: surface.into(),
            concept_id: None,
            semantic_type: SemanticType::SignSymptomOrFinding,
            occurrence_ordinal: 1,
            ambiguous: false,
        }
    }

    struct Fixed(&'static str);
    impl Completer for Fixed {
        fn complete(&self, _: &str) -> std::result::Result<String, LlmError> {
            Ok(self.0.to_string())
        }
    }

    const TEXT: &str = "aspirated to the LLL with resultant high fever (105) and hypoxemia";

    fn case() -> (Chunk, Vec<Mention>) {
        (chunk(TEXT), vec![mention(TEXT, "fever"), mention(TEXT, "hypoxemia")])
    }

    #[test]
    fn location_prompt_is_verbatim() {
        let (c, ms) = case();
        let backend = LlmBackend::new(Arc::new(Fixed("")), PromptTemplates::default());
        let prompt = backend.prompt(&c, &ms, AttributeKind::Location);
        let expected = format!(
            "Here is one part of a medical note:\n{}\nFor each of the entities from the note, which are marked with double curly braces in the note, output its body location according to the note (Format: entity: location), which should be an exact substring from the note, and the location should be a noun or noun phrase or direction. If the note did not specify the location explicitly, only print 'null'.\nHere are the terms:{}",
            "aspirated to the LLL with resultant high {{fever}} (105) and {{hypoxemia}}",
            ["fever", "hypoxemia"].join("\n")
        );
        assert_eq!(prompt, expected);
    }

    #[test]
    fn extracts_lobe_location() {
        let (c, ms) = case();
        let backend = LlmBackend::new(
            Arc::new(Fixed("fever: null\nhypoxemia: Left Lower Lobe")),
            PromptTemplates::default(),
        );
        let got = llm_extract(&c, &ms, AttributeKind::Location, &backend).unwrap();
        assert_eq!(got.assigned, vec![(0, vec![]), (1, vec!["Left Lower Lobe".to_string()])]);
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn unknown_entity_dropped() {
        let (c, ms) = case();
        let backend = LlmBackend::new(
            Arc::new(Fixed("fever: null\nxyz: chest\nhypoxemia: Left Lower Lobe")),
            PromptTemplates::default(),
        );
        let got = llm_extract(&c, &ms, AttributeKind::Location, &backend).unwrap();
        assert_eq!(got.assigned.len(), 2);
        assert_eq!(got.dropped, 1);
        assert_eq!(got.total_lines, 3);
    }

    #[test]
    fn empty_response_is_backend_error() {
        let (c, ms) = case();
        let backend = LlmBackend::new(Arc::new(Fixed("")), PromptTemplates::default());
        assert!(matches!(
            llm_extract(&c, &ms, AttributeKind::Value, &backend),
            Err(Error::Backend(_))
        ));
        let garbage = LlmBackend::new(Arc::new(Fixed("I cannot help with that")), PromptTemplates::default());
        assert!(matches!(
            garbage.annotate(&c, &ms, AttributeKind::Value),
            Err(Error::Backend(_))
        ));
    }

    #[test]
    fn replay_miss_surfaces_as_llm_error() {
        let (c, ms) = case();
        let backend = LlmBackend::new(
            Arc::new(ReplayCompleter::new(Transcript::new())),
            PromptTemplates::default(),
        );
        assert!(matches!(
            backend.annotate(&c, &ms, AttributeKind::Unit),
            Err(Error::Llm(LlmError::ReplayMiss(_)))
        ));
    }

    #[test]
    fn response_parsing_details() {
        let out = parse_response(
            "- {{fever}}: high; intermittent\n2. hypoxemia: 'null'\nno colon here\n\nrash: Not applicable\n",
            AttributeKind::Modifier,
        );
        assert_eq!(
            out.lines,
            vec![
                AttributeLine::new("fever", vec!["high".into(), "intermittent".into()]),
                AttributeLine::new("hypoxemia", vec![]),
                AttributeLine::new("rash", vec![]),
            ]
        );
        assert_eq!(out.unparsable, 1);
        let scalar = parse_response("bp: 120/80, repeated", AttributeKind::Value);
        assert_eq!(scalar.lines[0].values, ["120/80, repeated"]);
    }

    #[test]
    fn custom_template_placeholders() {
        let mut t = PromptTemplates::default();
        t.set(AttributeKind::Value, "[{kind}] {paragraph} | {terms}");
        assert_eq!(t.render(AttributeKind::Value, "P", &["a", "b"]), "[value] P | a\nb");
    }
}
