//! Rule-based assertion status.
//!
//! Evaluation order for a mention: the Title rule, then the allergy-scope
//! rule, then the highest-priority trigger covering the mention, and finally
//! `Present`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::preprocess::{count_tokens, enclosing_sentence, is_section_header, paragraph_spans};

const BUILTIN_RULES: &str = include_str!("../data/assertion_rules.tsv");

/// Words that close a trigger's scope.
const TERMINATORS: &[&str] = &["but", "however", "although", "though", "except", "aside from"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssertionStatus {
    Present,
    Absent,
    Possible,
    Conditional,
    Hypothetical,
    NotAssociatedWithThePatient,
    Title,
}

impl AssertionStatus {
    pub const ALL: [AssertionStatus; 7] = [
        AssertionStatus::Present,
        AssertionStatus::Absent,
        AssertionStatus::Possible,
        AssertionStatus::Conditional,
        AssertionStatus::Hypothetical,
        AssertionStatus::NotAssociatedWithThePatient,
        AssertionStatus::Title,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AssertionStatus::Present => "Present",
            AssertionStatus::Absent => "Absent",
            AssertionStatus::Possible => "Possible",
            AssertionStatus::Conditional => "Conditional",
            AssertionStatus::Hypothetical => "Hypothetical",
            AssertionStatus::NotAssociatedWithThePatient => "Not_associated_with_the_patient",
            AssertionStatus::Title => "Title",
        }
    }
}

impl fmt::Display for AssertionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AssertionStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let want = s.trim();
        AssertionStatus::ALL
            .into_iter()
            .find(|st| st.label().eq_ignore_ascii_case(want))
            .ok_or_else(|| format!("unknown assertion status `{want}`"))
    }
}

impl Serialize for AssertionStatus {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AssertionStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Trigger precedes the mention.
    Forward,
    /// Trigger follows the mention.
    Backward,
    Bidirectional,
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(Scope::Forward),
            "backward" => Ok(Scope::Backward),
            "bidirectional" | "both" => Ok(Scope::Bidirectional),
            other => Err(format!("unknown scope `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerRule {
    pub trigger: String,
    pub scope: Scope,
    /// Maximum number of tokens allowed between trigger and mention, plus one.
    pub window: usize,
    pub status: AssertionStatus,
    pub priority: i32,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: TriggerRule,
    pattern: Regex,
}

/// Phrase regex with word boundaries on alphanumeric edges.
fn phrase_regex(phrase: &str) -> Regex {
    let body = phrase
        .split_whitespace()
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(r"\s+");
    let edge = |c: Option<char>| if c.is_some_and(char::is_alphanumeric) { r"\b" } else { "" };
    let pattern = format!(
        "(?i){}{}{}",
        edge(phrase.chars().next()),
        body,
        edge(phrase.chars().next_back())
    );
    Regex::new(&pattern).expect("escaped phrase is a valid regex")
}

/// Trigger rules ordered from highest to lowest priority.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
    terminators: Vec<Regex>,
}

impl RuleSet {
    pub fn new(rules: Vec<TriggerRule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.priority) {
                return Err(Error::Contract(format!("duplicate rule priority {}", r.priority)));
            }
        }
        Ok(Self::compile(rules))
    }

    fn compile(mut rules: Vec<TriggerRule>) -> Self {
        rules.sort_by(|a, b| b.priority.cmp(&a.priority));
        RuleSet {
            rules: rules
                .into_iter()
                .map(|rule| CompiledRule {
                    pattern: phrase_regex(&rule.trigger),
                    rule,
                })
                .collect(),
            terminators: TERMINATORS.iter().map(|t| phrase_regex(t)).collect(),
        }
    }

    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<RuleSet> = OnceLock::new();
        BUILTIN
            .get_or_init(|| Self::parse(BUILTIN_RULES, "builtin assertion rules").expect("built-in rules parse"))
            .clone()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Loads `path` if given; otherwise falls back to the built-in set only
    /// when `allow_builtin` is set.
    pub fn resolve(path: Option<&Path>, allow_builtin: bool) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None if allow_builtin => Ok(Self::builtin()),
            None => Err(Error::Config {
                field: "assertion_rules".into(),
                message: "no rule file given and built-in rules not requested".into(),
            }),
        }
    }

    /// `trigger<TAB>scope<TAB>window<TAB>status<TAB>priority`; `#` starts a comment line.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut rules = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::parse(origin, line_no, "expected 5 tab-separated fields"));
            }
            let err = |m: String| Error::parse(origin, line_no, m);
            if f[0].is_empty() {
                return Err(err("empty trigger".into()));
            }
            let scope: Scope = f[1].parse().map_err(err)?;
            let window: usize = f[2]
                .parse()
                .map_err(|_| err(format!("bad window `{}`", f[2])))?;
            if window == 0 {
                return Err(err("window must be at least 1".into()));
            }
            let status: AssertionStatus = f[3].parse().map_err(err)?;
            let priority: i32 = f[4]
                .parse()
                .map_err(|_| err(format!("bad priority `{}`", f[4])))?;
            if !seen.insert(priority) {
                return Err(err(format!("duplicate priority {priority}")));
            }
            rules.push(TriggerRule {
                trigger: f[0].to_string(),
                scope,
                window,
                status,
                priority,
            });
        }
        Ok(Self::compile(rules))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> impl Iterator<Item = &TriggerRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    fn gap_ok(&self, between: &str, window: usize) -> bool {
        count_tokens(between) < window && !self.terminators.iter().any(|t| t.is_match(between))
    }

    fn trigger_status(&self, sentence: &str, mention: Range<usize>) -> Option<AssertionStatus> {
        for c in &self.rules {
            for t in c.pattern.find_iter(sentence) {
                let forward = t.end() <= mention.start
                    && matches!(c.rule.scope, Scope::Forward | Scope::Bidirectional)
                    && self.gap_ok(&sentence[t.end()..mention.start], c.rule.window);
                let backward = mention.end <= t.start()
                    && matches!(c.rule.scope, Scope::Backward | Scope::Bidirectional)
                    && self.gap_ok(&sentence[mention.end..t.start()], c.rule.window);
                if forward || backward {
                    return Some(c.rule.status);
                }
            }
        }
        None
    }
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<RuleSet> {
    RuleSet::load(path)
}

fn allergy_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\ballerg(?:y|ies)\b").unwrap())
}

fn no_known_allergies_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bno\s+known\s+(?:drug\s+)?allergies\b|\bnkda\b").unwrap())
}

/// The allergy scope covering `mention`, if any: from the first
/// `allergy`/`allergies` token before the mention to the end of its block.
/// Blocks end at blank lines and section headers.
pub fn allergy_scope(text: &str, mention: Range<usize>) -> Option<Range<usize>> {
    let para = paragraph_spans(text)
        .into_iter()
        .find(|p| p.contains(&mention.start))?;

    let mut block = para.clone();
    let mut line_start = para.start;
    for line in text[para.clone()].split_inclusive('\n') {
        let line_end = line_start + line.len();
        if is_section_header(line) {
            if line_start <= mention.start {
                block.start = line_start;
            } else if line_start < block.end {
                block.end = line_start;
                break;
            }
        }
        line_start = line_end;
    }

    let token = allergy_re()
        .find_iter(&text[block.start..mention.start])
        .next()?;
    Some(block.start + token.start()..block.end)
}

fn check_span(text: &str, mention: &Range<usize>) -> Result<()> {
    let ok = mention.start < mention.end
        && mention.end <= text.len()
        && text.is_char_boundary(mention.start)
        && text.is_char_boundary(mention.end);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "mention span {}..{} is not inside the {}-byte context",
            mention.start,
            mention.end,
            text.len()
        )))
    }
}

fn is_title(text: &str, mention: &Range<usize>) -> bool {
    text[mention.clone()].chars().any(char::is_uppercase)
        && text[mention.end..].trim_start_matches([' ', '\t']).starts_with(':')
}

/// Assertion status of the mention at byte range `mention` of `text`, where
/// `text` is the note (or chunk) the mention was found in.
pub fn classify(text: &str, mention: Range<usize>, rules: &RuleSet) -> Result<AssertionStatus> {
    check_span(text, &mention)?;

    if is_title(text, &mention) {
        return Ok(AssertionStatus::Title);
    }

    if let Some(scope) = allergy_scope(text, mention.clone()) {
        return Ok(if no_known_allergies_re().is_match(&text[scope]) {
            AssertionStatus::Absent
        } else {
            AssertionStatus::Conditional
        });
    }

    let sentence = enclosing_sentence(text, mention.start, mention.end);
    let local = mention.start - sentence.start..mention.end - sentence.start;
    Ok(rules
        .trigger_status(&text[sentence], local)
        .unwrap_or(AssertionStatus::Present))
}
