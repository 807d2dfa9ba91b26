//! Scoring predictions against gold annotations.
//!
//! Phrases are matched greedily in document order. Attribute accuracy is
//! computed over matched pairs with a pluggable [`EquivalenceJudge`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::ops::AddAssign;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::assertion::AssertionStatus;
use crate::attributes::Attr;
use crate::error::{Error, Result};
use crate::integrate::Span;
use crate::llm_client::Completer;
use crate::terminology::AbbreviationTable;

/// One gold or predicted phrase. Gold files use the entity JSONL schema;
/// fields beyond these are ignored and absent attributes read as null.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub note_id: String,
    pub phrase: String,
    #[serde(default)]
    pub span: Option<Span>,
    #[serde(default)]
    pub assertion_status: Option<AssertionStatus>,
    #[serde(default)]
    pub locations: Attr<Vec<String>>,
    #[serde(default)]
    pub modifiers: Attr<Vec<String>>,
    #[serde(default)]
    pub value: Attr<String>,
    #[serde(default)]
    pub unit: Attr<String>,
}

pub type GoldAnnotation = EvalRecord;

pub fn parse_records<R: BufRead>(reader: R, origin: &str) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if rec.phrase.trim().is_empty() {
            return Err(Error::parse(origin, i + 1, "empty phrase"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<std::path::Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(std::io::BufReader::new(file), &path.display().to_string())
}

/// The scored columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Location,
    Modifier,
    Value,
    Unit,
    Status,
}

impl EvalKind {
    pub const ALL: [EvalKind; 5] = [
        EvalKind::Location,
        EvalKind::Modifier,
        EvalKind::Value,
        EvalKind::Unit,
        EvalKind::Status,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalKind::Location => "location",
            EvalKind::Modifier => "modifier",
            EvalKind::Value => "value",
            EvalKind::Unit => "unit",
            EvalKind::Status => "status",
        }
    }
}

impl fmt::Display for EvalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Contract(format!("unknown evaluation kind {s:?}")))
    }
}

/// Decides whether two attribute values mean the same thing. Must be
/// reflexive and symmetric.
pub trait EquivalenceJudge: Send + Sync {
    fn equivalent(&self, a: &str, b: &str, kind: EvalKind) -> bool;
}

const COMPARATORS: &[(&str, &str)] = &[
    ("less than or equal to", "<="),
    ("greater than or equal to", ">="),
    ("no more than", "<="),
    ("at most", "<="),
    ("at least", ">="),
    ("less than", "<"),
    ("greater than", ">"),
    ("more than", ">"),
    ("below", "<"),
    ("above", ">"),
    ("over", ">"),
    ("under", "<"),
    ("equal to", "="),
];

const UNIT_SYNONYMS: &[(&str, &str)] = &[
    ("millimeters of mercury", "mmhg"),
    ("millimetres of mercury", "mmhg"),
    ("millimeter of mercury", "mmhg"),
    ("beats per minute", "bpm"),
    ("breaths per minute", "/min"),
    ("per minute", "/min"),
    ("milliequivalents per liter", "meq/l"),
    ("degrees fahrenheit", "f"),
    ("degrees celsius", "c"),
    ("milligrams", "mg"),
    ("milligram", "mg"),
    ("micrograms", "mcg"),
    ("microgram", "mcg"),
    ("ug", "mcg"),
    ("grams", "g"),
    ("gram", "g"),
    ("kilograms", "kg"),
    ("kilogram", "kg"),
    ("milliliters", "ml"),
    ("milliliter", "ml"),
    ("millilitres", "ml"),
    ("liters", "l"),
    ("liter", "l"),
    ("litres", "l"),
    ("percent", "%"),
    ("units", "u"),
    ("unit", "u"),
    ("degrees", "°"),
    ("degree", "°"),
    ("deg", "°"),
];

/// Deterministic judge: lowercase, comparator words and unit names mapped
/// to symbols, then punctuation and whitespace removed.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizingJudge;

impl NormalizingJudge {
    pub fn normalize(s: &str) -> String {
        let lower = s.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut spaced = String::with_capacity(lower.len());
        for (i, &c) in chars.iter().enumerate() {
            let keep = c.is_alphanumeric()
                || matches!(c, '<' | '>' | '=' | '%' | '/' | '°')
                || (c == '.'
                    && i > 0
                    && chars[i - 1].is_ascii_digit()
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()));
            spaced.push(if keep { c } else { ' ' });
        }
        let mut padded = format!(" {} ", spaced.split_whitespace().collect::<Vec<_>>().join(" "));
        for (from, to) in COMPARATORS.iter().chain(UNIT_SYNONYMS) {
            let pattern = format!(" {from} ");
            let replacement = format!(" {to} ");
            while padded.contains(&pattern) {
                padded = padded.replace(&pattern, &replacement);
            }
        }
        padded.chars().filter(|c| !c.is_whitespace()).collect()
    }
}

impl EquivalenceJudge for NormalizingJudge {
    fn equivalent(&self, a: &str, b: &str, _kind: EvalKind) -> bool {
        Self::normalize(a) == Self::normalize(b)
    }
}

/// Asks a chat model, after a normalization shortcut. The pair is put in a
/// fixed order first so the same prompt is sent for `(a, b)` and `(b, a)`.
pub struct LlmJudge {
    client: Arc<dyn Completer>,
}

impl LlmJudge {
    pub fn new(client: Arc<dyn Completer>) -> Self {
        LlmJudge { client }
    }

    pub fn prompt(a: &str, b: &str, kind: EvalKind) -> String {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        format!(
            "Do these two {kind} values from a medical note mean the same thing?\nA: {x}\nB: {y}\nAnswer only yes or no."
        )
    }
}

impl EquivalenceJudge for LlmJudge {
    fn equivalent(&self, a: &str, b: &str, kind: EvalKind) -> bool {
        if NormalizingJudge.equivalent(a, b, kind) {
            return true;
        }
        match self.client.complete(&Self::prompt(a, b, kind)) {
            Ok(answer) => answer.trim().to_lowercase().starts_with("yes"),
            Err(e) => {
                warn!(error = %e, "equivalence judge failed; counting as different");
                false
            }
        }
    }
}

pub fn phrases_equivalent(a: &str, b: &str, abbreviations: &AbbreviationTable) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase() || abbreviations.relates(a, b)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseMatch {
    /// `(gold index, pred index)`.
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

fn spans_overlap(a: Option<Span>, b: Option<Span>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a.start < b.end && b.start < a.end,
        _ => true,
    }
}

/// Indices in document order: by span start when every record has a span,
/// file order otherwise.
fn document_order(records: &[EvalRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    if records.iter().all(|r| r.span.is_some()) {
        idx.sort_by_key(|&i| records[i].span.map(|s| (s.start, s.end)));
    }
    idx
}

/// Greedy one-to-one matching of one note's phrases.
pub fn match_phrases(gold: &[EvalRecord], pred: &[EvalRecord], abbreviations: &AbbreviationTable) -> PhraseMatch {
    let pred_order = document_order(pred);
    let mut used = vec![false; pred.len()];
    let mut out = PhraseMatch::default();
    for gi in document_order(gold) {
        let g = &gold[gi];
        let hit = pred_order.iter().copied().find(|&pi| {
            !used[pi]
                && spans_overlap(g.span, pred[pi].span)
                && phrases_equivalent(&g.phrase, &pred[pi].phrase, abbreviations)
        });
        match hit {
            Some(pi) => {
                used[pi] = true;
                out.pairs.push((gi, pi));
            }
            None => out.false_negatives.push(gi),
        }
    }
    out.false_positives = pred_order.into_iter().filter(|&pi| !used[pi]).collect();
    out.pairs.sort_unstable();
    out
}

/// `(precision, recall, f1)`; zero denominators give 0.
pub fn phrase_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    /// `None` when nothing was scored.
    pub fn fraction(self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

impl AddAssign for Accuracy {
    fn add_assign(&mut self, rhs: Self) {
        self.correct += rhs.correct;
        self.total += rhs.total;
    }
}

/// Attribute as an optional list, with empty lists read as null. `Err(())`
/// is "not applicable".
fn attr_values(r: &EvalRecord, kind: EvalKind) -> std::result::Result<Vec<String>, ()> {
    let list = |a: &Attr<Vec<String>>| match a {
        Attr::Value(v) => Ok(v.clone()),
        Attr::Null => Ok(Vec::new()),
        Attr::NotApplicable => Err(()),
    };
    let scalar = |a: &Attr<String>| match a {
        Attr::Value(v) if !v.trim().is_empty() => Ok(vec![v.clone()]),
        Attr::Value(_) | Attr::Null => Ok(Vec::new()),
        Attr::NotApplicable => Err(()),
    };
    match kind {
        EvalKind::Location => list(&r.locations),
        EvalKind::Modifier => list(&r.modifiers),
        EvalKind::Value => scalar(&r.value),
        EvalKind::Unit => scalar(&r.unit),
        EvalKind::Status => unreachable!("status is not an attribute"),
    }
}

fn lists_equivalent(gold: &[String], pred: &[String], kind: EvalKind, judge: &dyn EquivalenceJudge) -> bool {
    if gold.len() != pred.len() {
        return false;
    }
    let mut used = vec![false; pred.len()];
    gold.iter().all(|g| {
        match (0..pred.len()).find(|&i| !used[i] && judge.equivalent(g, &pred[i], kind)) {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

/// Whether one pair counts for `kind`, and if so whether it is correct.
fn score_pair(gold: &EvalRecord, pred: &EvalRecord, kind: EvalKind, judge: &dyn EquivalenceJudge) -> Option<bool> {
    if kind == EvalKind::Status {
        let g = gold.assertion_status?;
        return Some(pred.assertion_status == Some(g));
    }
    let g = attr_values(gold, kind).ok()?;
    Some(match attr_values(pred, kind) {
        Ok(p) => lists_equivalent(&g, &p, kind, judge),
        Err(()) => false,
    })
}

/// Accuracy over matched pairs whose gold side is applicable for `kind`.
/// Null is correct only against null.
pub fn attribute_accuracy(
    pairs: &[(&EvalRecord, &EvalRecord)],
    kind: EvalKind,
    judge: &dyn EquivalenceJudge,
) -> Accuracy {
    let mut acc = Accuracy::default();
    for &(g, p) in pairs {
        if let Some(ok) = score_pair(g, p, kind, judge) {
            acc.total += 1;
            acc.correct += usize::from(ok);
        }
    }
    acc
}

/// Same as [`attribute_accuracy`] for a kind given by name.
pub fn attribute_accuracy_named(
    pairs: &[(&EvalRecord, &EvalRecord)],
    kind: &str,
    judge: &dyn EquivalenceJudge,
) -> Result<Accuracy> {
    Ok(attribute_accuracy(pairs, kind.parse()?, judge))
}

/// Raw counts for one note or a pool of notes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: BTreeMap<EvalKind, Accuracy>,
}

impl AddAssign<&Counts> for Counts {
    fn add_assign(&mut self, rhs: &Counts) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
        for (&k, &a) in &rhs.accuracy {
            *self.accuracy.entry(k).or_default() += a;
        }
    }
}

pub fn score_note(
    gold: &[EvalRecord],
    pred: &[EvalRecord],
    abbreviations: &AbbreviationTable,
    judge: &dyn EquivalenceJudge,
) -> Counts {
    let m = match_phrases(gold, pred, abbreviations);
    let pairs: Vec<_> = m.pairs.iter().map(|&(g, p)| (&gold[g], &pred[p])).collect();
    Counts {
        tp: m.pairs.len(),
        fp: m.false_positives.len(),
        fn_: m.false_negatives.len(),
        accuracy: EvalKind::ALL
            .into_iter()
            .map(|k| (k, attribute_accuracy(&pairs, k, judge)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub notes: usize,
    pub phrase_precision: f64,
    pub phrase_recall: f64,
    pub phrase_f1: f64,
    /// `None` where no pair was scored.
    pub accuracy: BTreeMap<EvalKind, Option<f64>>,
    pub counts: Counts,
}

fn group(records: &[EvalRecord]) -> BTreeMap<&str, Vec<EvalRecord>> {
    let mut out: BTreeMap<&str, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.note_id.as_str()).or_default().push(r.clone());
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every note present on either side and aggregates.
pub fn evaluate(
    gold: &[EvalRecord],
    pred: &[EvalRecord],
    abbreviations: &AbbreviationTable,
    judge: &dyn EquivalenceJudge,
    averaging: Averaging,
) -> EvalReport {
    let gold_by_note = group(gold);
    let pred_by_note = group(pred);
    let mut ids: Vec<&str> = gold_by_note.keys().chain(pred_by_note.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let empty = Vec::new();
    let per_note: Vec<Counts> = ids
        .iter()
        .map(|id| {
            score_note(
                gold_by_note.get(id).unwrap_or(&empty),
                pred_by_note.get(id).unwrap_or(&empty),
                abbreviations,
                judge,
            )
        })
        .collect();
    let mut pooled = Counts::default();
    for c in &per_note {
        pooled += c;
    }
    for k in EvalKind::ALL {
        pooled.accuracy.entry(k).or_default();
    }
    let (phrase_precision, phrase_recall, phrase_f1, accuracy) = match averaging {
        Averaging::Micro => {
            let (p, r, f) = phrase_f1(pooled.tp, pooled.fp, pooled.fn_);
            let acc = pooled.accuracy.iter().map(|(&k, a)| (k, a.fraction())).collect();
            (p, r, f, acc)
        }
        Averaging::Macro => {
            let prf: Vec<_> = per_note.iter().map(|c| phrase_f1(c.tp, c.fp, c.fn_)).collect();
            let acc = EvalKind::ALL
                .into_iter()
                .map(|k| {
                    let fractions = per_note.iter().filter_map(|c| c.accuracy.get(&k).and_then(|a| a.fraction()));
                    (k, mean(fractions))
                })
                .collect();
            (
                mean(prf.iter().map(|x| x.0)).unwrap_or(0.0),
                mean(prf.iter().map(|x| x.1)).unwrap_or(0.0),
                mean(prf.iter().map(|x| x.2)).unwrap_or(0.0),
                acc,
            )
        }
    };
    EvalReport {
        averaging,
        notes: ids.len(),
        phrase_precision,
        phrase_recall,
        phrase_f1,
        accuracy,
        counts: pooled,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// Plain-text table with one column per scored field; `-` marks cells
    /// with nothing to score.
    pub fn render_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut header = vec!["Phrase".to_string()];
        let mut row = vec![cell(Some(self.phrase_f1))];
        for k in EvalKind::ALL {
            let mut name = k.name().to_string();
            name[..1].make_ascii_uppercase();
            header.push(name);
            row.push(cell(self.accuracy.get(&k).copied().flatten()));
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        format!(
            "{}\n{}\n\n{} averaging over {} notes: TP={} FP={} FN={} P={:.3} R={:.3} F1={:.4}\n",
            line(&header),
            line(&row),
            match self.averaging {
                Averaging::Micro => "micro",
                Averaging::Macro => "macro",
            },
            self.notes,
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.phrase_precision,
            self.phrase_recall,
            self.phrase_f1,
        )
    }
}
