use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::{AnnotatorBackend, AttributeLine, BackendOutput};
use crate::error::{Error, Result};
use crate::preprocess::{enclosing_sentence, Chunk};
use crate::recognition::Mention;
use crate::terminology::trie::{fold_str, SurfaceTrie};
use crate::terminology::AttributeKind;

const DEFAULT_ANATOMY: &str = include_str!("../../data/anatomy.txt");
const DEFAULT_MODIFIERS: &str = include_str!("../../data/modifiers.txt");
const DEFAULT_UNITS: &str = include_str!("../../data/units.txt");

const DIRECTIONS: &[&str] = &["left", "right", "bilateral", "upper", "lower"];

/// Words allowed between a mention and an anatomy term that follows it.
const PREPOSITIONS: &[&str] = &["in", "of", "on", "at", "over", "to", "into", "involving"];
const LINKERS: &[&str] = &["the", "his", "her", "both", "a"];

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Anatomy terms, each optionally with a display form (`LLL` shows as
/// `Left Lower Lobe`).
#[derive(Debug, Clone)]
pub struct AnatomyLexicon {
    trie: SurfaceTrie,
    display: Vec<Option<String>>,
}

impl AnatomyLexicon {
    pub fn parse(text: &str) -> Self {
        let mut trie = SurfaceTrie::new();
        let mut display = Vec::new();
        for line in content_lines(text) {
            let (surface, shown) = match line.split_once('\t') {
                Some((s, d)) => (s.trim(), Some(d.trim().to_string())),
                None => (line.trim(), None),
            };
            if trie.insert(surface, display.len() as u32).is_ok() {
                display.push(shown.filter(|d| !d.is_empty()));
            }
        }
        AnatomyLexicon { trie, display }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read(path)?))
    }

    pub fn len(&self) -> usize {
        self.display.len()
    }

    pub fn is_empty(&self) -> bool {
        self.display.is_empty()
    }
}

impl Default for AnatomyLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_ANATOMY)
    }
}

/// Word lists behind the rule backend.
#[derive(Debug, Clone)]
pub struct WordLists {
    pub anatomy: AnatomyLexicon,
    /// Case-folded modifier words.
    pub modifiers: HashSet<String>,
    /// Case-folded unit spellings.
    pub units: HashSet<String>,
}

fn word_set(text: &str) -> HashSet<String> {
    content_lines(text).map(|l| fold_str(l.trim())).collect()
}

impl Default for WordLists {
    fn default() -> Self {
        WordLists {
            anatomy: AnatomyLexicon::default(),
            modifiers: word_set(DEFAULT_MODIFIERS),
            units: word_set(DEFAULT_UNITS),
        }
    }
}

impl WordLists {
    /// Loads any given list, keeping the built-in default for the rest.
    pub fn load(anatomy: Option<&Path>, modifiers: Option<&Path>, units: Option<&Path>) -> Result<Self> {
        let mut lists = WordLists::default();
        if let Some(p) = anatomy {
            lists.anatomy = AnatomyLexicon::load(p)?;
        }
        if let Some(p) = modifiers {
            lists.modifiers = word_set(&read(p)?);
        }
        if let Some(p) = units {
            lists.units = word_set(&read(p)?);
        }
        Ok(lists)
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:(?:<=|>=|[<>≤≥])\s*)?\d+(?:\.\d+)?(?:/\d+(?:\.\d+)?)?").unwrap())
}

fn unit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[ \t]*(%|°[CFcf]?|[A-Za-zµ]+(?:/[A-Za-z0-9]+)?)").unwrap())
}

fn prev_char(text: &str, at: usize) -> Option<char> {
    text[..at].chars().next_back()
}

/// First number after the mention within `sentence`, and the unit right
/// after that number if it is a known unit. `mention` is relative to
/// `sentence`.
pub fn rule_extract_value_unit(
    sentence: &str,
    mention: Range<usize>,
    units: &HashSet<String>,
) -> (Option<String>, Option<String>) {
    let tail = &sentence[mention.end..];
    let found = number_re().find_iter(tail).find(|m| {
        let digits_at = m.as_str().find(|c: char| c.is_ascii_digit()).unwrap_or(0);
        let before_ok = if digits_at == 0 {
            !prev_char(tail, m.start()).is_some_and(char::is_alphanumeric)
        } else {
            true
        };
        let after_ok = !tail[m.end()..].starts_with(|c: char| c.is_ascii_digit());
        before_ok && after_ok
    });
    let Some(num) = found else {
        return (None, None);
    };
    let value = num.as_str().split_whitespace().collect::<String>();

    let unit = unit_re().captures(&tail[num.end()..]).and_then(|c| {
        let cand = c.get(1)?.as_str();
        let folded = fold_str(cand);
        if units.contains(&folded) {
            return Some(cand.to_string());
        }
        let head = cand.split('/').next()?;
        units.contains(&fold_str(head)).then(|| head.to_string())
    });
    (Some(value), unit)
}

/// Direction words directly before `at`, as raw text.
fn direction_prefix(sentence: &str, at: usize) -> Option<usize> {
    let mut start = at;
    for _ in 0..2 {
        let before = sentence[..start].trim_end_matches([' ', '\t']);
        if before.len() == start {
            break;
        }
        let word_start = before
            .char_indices()
            .rev()
            .take_while(|(_, c)| c.is_alphanumeric())
            .last()
            .map(|(i, _)| i)
            .unwrap_or(before.len());
        let word = &before[word_start..];
        if DIRECTIONS.contains(&fold_str(word).as_str()) {
            start = word_start;
        } else {
            break;
        }
    }
    (start < at).then_some(start)
}

/// True if `gap` reads like "in the left", tying a following anatomy term
/// to the mention before it.
fn prepositional_gap(gap: &str) -> bool {
    let words: Vec<String> = gap.split_whitespace().map(fold_str).collect();
    match words.split_first() {
        None => true,
        Some((first, rest)) => {
            PREPOSITIONS.contains(&first.as_str())
                && rest.len() <= 3
                && rest
                    .iter()
                    .all(|w| LINKERS.contains(&w.as_str()) || DIRECTIONS.contains(&w.as_str()))
        }
    }
}

/// Anatomy terms in the sentence, nearest to the mention first, at most two.
/// Terms after the mention count only when joined by a preposition; terms
/// inside `others` (other mentions, sentence-relative) are skipped.
pub fn rule_extract_locations(
    sentence: &str,
    mention: Range<usize>,
    others: &[Range<usize>],
    anatomy: &AnatomyLexicon,
) -> Vec<String> {
    let mut hits: Vec<(usize, usize, String)> = anatomy
        .trie
        .scan(sentence)
        .into_iter()
        .filter(|m| !others.iter().any(|o| o.start < m.end && m.start < o.end))
        .filter(|m| m.start < mention.end || prepositional_gap(&sentence[mention.end..m.start]))
        .map(|m| {
            let distance = if m.end <= mention.start {
                mention.start - m.end
            } else if m.start >= mention.end {
                m.start - mention.end
            } else {
                0
            };
            let shown = anatomy.display[m.id as usize]
                .clone()
                .unwrap_or_else(|| sentence[m.start..m.end].to_string());
            let text = match direction_prefix(sentence, m.start) {
                Some(p) => format!("{} {}", sentence[p..m.start].trim_end(), shown),
                None => shown,
            };
            (distance, m.start, text)
        })
        .collect();
    hits.sort_by_key(|(d, s, _)| (*d, *s));
    let mut out: Vec<String> = Vec::new();
    for (_, _, text) in hits {
        if !out.contains(&text) {
            out.push(text);
        }
        if out.len() == 2 {
            break;
        }
    }
    out
}

/// The run of modifier words immediately before the mention.
pub fn rule_extract_modifiers(
    sentence: &str,
    mention: Range<usize>,
    modifiers: &HashSet<String>,
) -> Vec<String> {
    let mut found = Vec::new();
    let mut end = mention.start;
    loop {
        let before = &sentence[..end];
        let trimmed = before.trim_end_matches([' ', '\t']);
        if trimmed.len() == before.len() {
            break;
        }
        let Some(ws) = trimmed
            .char_indices()
            .rev()
            .take_while(|(_, c)| c.is_alphanumeric() || *c == '-')
            .last()
            .map(|(i, _)| i)
        else {
            break;
        };
        let word = &trimmed[ws..];
        if !modifiers.contains(&fold_str(word)) {
            break;
        }
        found.push(word.to_string());
        end = ws;
    }
    found.reverse();
    found
}

/// Deterministic backend: word lists and a number pattern. Purposes are
/// always null.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend {
    lists: WordLists,
}

impl RuleBackend {
    pub fn new(lists: WordLists) -> Self {
        RuleBackend { lists }
    }

    pub fn word_lists(&self) -> &WordLists {
        &self.lists
    }

    /// Attribute values for the mention at `mention` in `text`; `others` are
    /// the remaining mention spans in the same text.
    pub fn extract(&self, text: &str, mention: Range<usize>, others: &[Range<usize>], kind: AttributeKind) -> Vec<String> {
        let bounds = enclosing_sentence(text, mention.start, mention.end);
        let local = mention.start - bounds.start..mention.end - bounds.start;
        let sentence = &text[bounds.clone()];
        match kind {
            AttributeKind::Location => {
                let others: Vec<Range<usize>> = others
                    .iter()
                    .filter(|o| o.start >= bounds.start && o.end <= bounds.end)
                    .map(|o| o.start - bounds.start..o.end - bounds.start)
                    .collect();
                rule_extract_locations(sentence, local, &others, &self.lists.anatomy)
            }
            AttributeKind::Modifier => rule_extract_modifiers(sentence, local, &self.lists.modifiers),
            AttributeKind::Value => rule_extract_value_unit(sentence, local, &self.lists.units)
                .0
                .into_iter()
                .collect(),
            AttributeKind::Unit => match rule_extract_value_unit(sentence, local, &self.lists.units) {
                (Some(_), Some(unit)) => vec![unit],
                _ => Vec::new(),
            },
            AttributeKind::Purpose => Vec::new(),
        }
    }
}

impl AnnotatorBackend for RuleBackend {
    fn annotate(&self, chunk: &Chunk, mentions: &[Mention], kind: AttributeKind) -> Result<BackendOutput> {
        let spans: Vec<Range<usize>> = mentions
            .iter()
            .map(|m| m.norm_start - chunk.norm_start..m.norm_end - chunk.norm_start)
            .collect();
        let lines = mentions
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let others: Vec<Range<usize>> = spans
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, r)| r.clone())
                    .collect();
                AttributeLine::new(m.canonical_phrase.clone(), self.extract(&chunk.text, spans[i].clone(), &others, kind))
            })
            .collect();
        Ok(BackendOutput {
            lines,
            unparsable: 0,
        })
    }
}
