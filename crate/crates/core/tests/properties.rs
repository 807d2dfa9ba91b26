mod common;

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;

use genie_core::assertion::{classify, AssertionStatus, RuleSet};
use genie_core::attributes::{
    llm_extract, AnnotatorBackend, AttributeLine, BackendOutput, RuleBackend, WordLists,
};
use genie_core::evaluate::{
    evaluate, phrase_f1, Averaging, Counts, EquivalenceJudge, EvalKind, EvalRecord, NormalizingJudge,
};
use genie_core::integrate::{align, parse_entities, serialize, NoteResult, StructuredEntity};
use genie_core::preprocess::{chunk_note, count_tokens, restore_linebreaks, Chunk, ChunkerConfig, RawNote};
use genie_core::recognition::{assign_ordinals, recognize, Mention};
use genie_core::terminology::trie::fold_str;
use genie_core::terminology::{
    build_index, parse_lexicon, AbbreviationTable, ApplicabilityTable, AttributeKind, SemanticType,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn index_matches_naive_scanner(surfaces in common::lexicon(200), text in common::text(2000)) {
        let lex = parse_lexicon(&common::lexicon_tsv(&surfaces), "gen").unwrap();
        let index = build_index(&lex.entries);
        let got: Vec<(usize, usize)> = index.find_all(&text).iter().map(|m| (m.start, m.end)).collect();
        let folded: Vec<String> = lex.entries.iter().map(|e| e.surface.clone()).collect();
        prop_assert_eq!(got, common::naive_scan(&folded, &text));
    }

    #[test]
    fn index_builds_are_deterministic(surfaces in common::lexicon(60), text in common::text(400)) {
        let lex = parse_lexicon(&common::lexicon_tsv(&surfaces), "gen").unwrap();
        let a = build_index(&lex.entries);
        let b = build_index(&lex.entries);
        let spans = |i: &genie_core::terminology::TermIndex| {
            i.find_all(&text).iter().map(|m| (m.start, m.end, m.entry.concept_id.clone())).collect::<Vec<_>>()
        };
        prop_assert_eq!(spans(&a), spans(&b));
    }

    #[test]
    fn mentions_are_faithful_and_ordered(surfaces in common::lexicon(40), text in common::text(600), budget in 3usize..40) {
        let lex = parse_lexicon(&common::lexicon_tsv(&surfaces), "gen").unwrap();
        let index = build_index(&lex.entries);
        let note = RawNote::new("n", text.clone());
        let norm = restore_linebreaks(&note);
        let cfg = ChunkerConfig { max_tokens: budget, ..ChunkerConfig::default() };
        let mut mentions: Vec<Mention> = chunk_note(&norm, &cfg)
            .iter()
            .flat_map(|c| recognize(c, &norm, &text, &index))
            .collect();
        assign_ordinals(&mut mentions);
        for w in mentions.windows(2) {
            prop_assert!(w[0].norm_end <= w[1].norm_start);
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        for m in &mentions {
            let entry = index.lookup(&m.surface).expect("surface is a lexicon entry");
            prop_assert_eq!(fold_str(&m.surface), entry.surface.clone());
            prop_assert_eq!(&norm.text[m.norm_start..m.norm_end], m.surface.as_str());
            let raw = text[m.raw_start..m.raw_end].replace(['\n', '\r'], " ");
            prop_assert_eq!(raw.len(), m.surface.len());
            let n = seen.entry(fold_str(&m.canonical_phrase)).or_insert(0);
            *n += 1;
            prop_assert_eq!(m.occurrence_ordinal, *n);
        }
    }

    #[test]
    fn chunks_tile_and_respect_budget(text in common::note_text(120), budget in 5usize..200) {
        let norm = restore_linebreaks(&RawNote::new("n", text));
        let cfg = ChunkerConfig { max_tokens: budget, ..ChunkerConfig::default() };
        let chunks = chunk_note(&norm, &cfg);
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        prop_assert_eq!(&joined, &norm.text);
        let mut at = 0;
        for c in &chunks {
            prop_assert_eq!(c.norm_start, at);
            prop_assert_eq!(&norm.text[c.norm_start..c.norm_end], c.text.as_str());
            prop_assert_eq!(c.token_count, count_tokens(&c.text));
            prop_assert!(c.token_count <= budget || c.oversize);
            at = c.norm_end;
        }
    }

    #[test]
    fn restoration_is_sound_and_idempotent(text in common::note_text(40)) {
        let raw = RawNote::new("n", text.clone());
        let norm = restore_linebreaks(&raw);
        prop_assert_eq!(norm.offset_map.len(), norm.text.len() + 1);
        prop_assert_eq!(*norm.offset_map.last().unwrap(), text.len());
        for (i, c) in norm.text.char_indices() {
            let r = norm.offset_map[i];
            let rc = text[r..].chars().next().unwrap();
            prop_assert!(rc == c || (c == ' ' && (rc == '\n' || rc == '\r')), "{:?} vs {:?}", c, rc);
        }
        prop_assert!(norm.offset_map.windows(2).all(|w| w[0] <= w[1]));
        let again = restore_linebreaks(&RawNote::new("n", norm.text.clone()));
        prop_assert_eq!(again.text, norm.text);
    }
}

fn mention(phrase: &str, start: usize) -> Mention {
    Mention {
        note_id: "n".into(),
        chunk_index: 0,
        norm_start: start,
        norm_end: start + phrase.len(),
        raw_start: start,
        raw_end: start + phrase.len(),
        surface: phrase.into(),
        canonical_phrase: phrase.into(),
        concept_id: None,
        semantic_type: SemanticType::SignSymptomOrFinding,
        occurrence_ordinal: 0,
        ambiguous: false,
    }
}

fn vocab() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "z", "A"]).prop_map(str::to_string)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn alignment_is_monotone_and_conserving(
        ms in proptest::collection::vec(vocab(), 0..12),
        ls in proptest::collection::vec(vocab(), 0..12),
    ) {
        let mentions: Vec<Mention> = ms.iter().enumerate().map(|(i, p)| mention(p, i * 2)).collect();
        let lines: Vec<AttributeLine> = ls.iter().map(|e| AttributeLine::new(e.clone(), vec!["v".into()])).collect();
        let a = align(&mentions, &lines);
        prop_assert_eq!(a.pairs.len() + a.dropped.len(), lines.len());
        for w in a.pairs.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for &(l, m) in &a.pairs {
            prop_assert!(mentions[m].canonical_phrase.eq_ignore_ascii_case(&lines[l].entity));
        }
        // A dropped line has no matching mention past the cursor at that point.
        for &d in &a.dropped {
            let cursor = a.pairs.iter().filter(|p| p.0 < d).map(|p| p.1 + 1).max().unwrap_or(0);
            prop_assert!(mentions[cursor..].iter().all(|m| !m.canonical_phrase.eq_ignore_ascii_case(&lines[d].entity)));
        }
    }
}

/// Returns the wrapped backend's lines in a scrambled order.
struct Shuffling<B> {
    inner: B,
    seed: u64,
}

impl<B: AnnotatorBackend> AnnotatorBackend for Shuffling<B> {
    fn annotate(&self, chunk: &Chunk, mentions: &[Mention], kind: AttributeKind) -> genie_core::Result<BackendOutput> {
        let mut out = self.inner.annotate(chunk, mentions, kind)?;
        let n = out.lines.len();
        if n > 1 {
            let mut state = self.seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                out.lines.swap(i, (state >> 33) as usize % (i + 1));
            }
        }
        Ok(out)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn shuffled_backend_output_still_aligns_in_order(seed in any::<u64>(), words in proptest::collection::vec(prop::sample::select(vec!["fever", "cough", "rash"]), 1..8)) {
        let text = words.iter().map(|w| format!("{w} 10 mg")).collect::<Vec<_>>().join(", ");
        let mut mentions = Vec::new();
        let mut at = 0;
        for w in &words {
            let s = text[at..].find(w).unwrap() + at;
            mentions.push(mention(w, s));
            at = s + w.len();
        }
        let chunk = Chunk {
            note_id: "n".into(),
            chunk_index: 0,
            norm_start: 0,
            norm_end: text.len(),
            text: text.clone(),
            token_count: count_tokens(&text),
            oversize: false,
        };
        let backend = Shuffling { inner: RuleBackend::default(), seed };
        let got = llm_extract(&chunk, &mentions, AttributeKind::Value, &backend).unwrap();
        prop_assert_eq!(got.assigned.len() + got.dropped, got.total_lines);
        prop_assert!(got.assigned.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn rule_backend_is_deterministic_and_unit_needs_value(s in "[a-z ]{0,10}(fever|pain)[a-z0-9 ./%]{0,20}") {
        let start = s.find("fever").or_else(|| s.find("pain")).unwrap();
        let end = start + if s[start..].starts_with("fever") { 5 } else { 4 };
        let b = RuleBackend::new(WordLists::default());
        for kind in AttributeKind::ALL {
            prop_assert_eq!(b.extract(&s, start..end, &[], kind), b.extract(&s, start..end, &[], kind));
        }
        if !b.extract(&s, start..end, &[], AttributeKind::Unit).is_empty() {
            prop_assert!(!b.extract(&s, start..end, &[], AttributeKind::Value).is_empty());
        }
    }

    #[test]
    fn entities_round_trip(entities in proptest::collection::vec(common::entity(), 0..6)) {
        let result = NoteResult {
            note_id: "n".into(),
            entities: entities.clone(),
            dropped_attribute_lines: 0,
            total_attribute_lines: 0,
            rejected: false,
            error: None,
        };
        let text = serialize(&[result]);
        prop_assert_eq!(text.lines().count(), entities.len());
        let back: Vec<StructuredEntity> = parse_entities(text.as_bytes(), "mem").unwrap();
        prop_assert_eq!(back, entities);
    }

    #[test]
    fn judge_is_reflexive_and_symmetric(a in "\\PC{0,20}", b in "\\PC{0,20}") {
        let j = NormalizingJudge;
        for kind in EvalKind::ALL {
            prop_assert!(j.equivalent(&a, &a, kind));
            prop_assert_eq!(j.equivalent(&a, &b, kind), j.equivalent(&b, &a, kind));
        }
    }

    #[test]
    fn f1_bounds(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let (p, r, f) = phrase_f1(tp, fp, fn_);
        for x in [p, r, f] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(f <= p.max(r) + 1e-12 && f >= p.min(r).min(f));
        prop_assert_eq!(f == 1.0, tp > 0 && fp == 0 && fn_ == 0);
        if p + r > 0.0 {
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_average_equals_summed_counts(
        notes in proptest::collection::vec(
            (proptest::collection::vec(vocab(), 0..6), proptest::collection::vec(vocab(), 0..6)),
            1..5,
        )
    ) {
        let rec = |note: usize, p: &str| EvalRecord {
            note_id: format!("n{note}"),
            phrase: p.into(),
            span: None,
            assertion_status: Some(AssertionStatus::Present),
            locations: Default::default(),
            modifiers: Default::default(),
            value: Default::default(),
            unit: Default::default(),
        };
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        let mut summed = Counts::default();
        let table = AbbreviationTable::new();
        for (i, (g, p)) in notes.iter().enumerate() {
            let g: Vec<_> = g.iter().map(|x| rec(i, x)).collect();
            let p: Vec<_> = p.iter().map(|x| rec(i, x)).collect();
            let per = evaluate(&g, &p, &table, &NormalizingJudge, Averaging::Micro);
            summed += &per.counts;
            gold.extend(g);
            pred.extend(p);
        }
        let all = evaluate(&gold, &pred, &table, &NormalizingJudge, Averaging::Micro);
        prop_assert_eq!(all.counts.tp, summed.tp);
        prop_assert_eq!(all.counts.fp, summed.fp);
        prop_assert_eq!(all.counts.fn_, summed.fn_);
        for k in EvalKind::ALL {
            prop_assert_eq!(all.counts.accuracy.get(&k).copied().unwrap_or_default(), summed.accuracy.get(&k).copied().unwrap_or_default());
        }
        prop_assert!(all.counts.tp <= gold.len().min(pred.len()));
    }
}

fn rule_triggers() -> Vec<String> {
    RuleSet::builtin().rules().map(|r| r.trigger.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn title_and_allergy_override_triggers(trigger in prop::sample::select(rule_triggers()), filler in "[a-z]{1,6}") {
        let rules = RuleSet::builtin();
        let title = format!("{trigger} {filler} FEVER: yes");
        let s = title.find("FEVER").unwrap();
        prop_assert_eq!(classify(&title, s..s + 5, &rules).unwrap(), AssertionStatus::Title);

        let allergy = format!("Allergies: {trigger} penicillin");
        let s = allergy.find("penicillin").unwrap();
        let status = classify(&allergy, s..s + 10, &rules).unwrap();
        prop_assert_eq!(status, AssertionStatus::Conditional);
    }

    #[test]
    fn classify_is_total_and_deterministic(text in common::note_text(20), pick in any::<prop::sample::Index>()) {
        let rules = RuleSet::builtin();
        let words: Vec<(usize, &str)> = text.match_indices(|c: char| c.is_alphabetic()).collect();
        prop_assume!(!words.is_empty());
        let (start, _) = words[pick.index(words.len())];
        let end = start + text[start..].find(|c: char| !c.is_alphabetic()).unwrap_or(text.len() - start);
        let a = classify(&text, start..end, &rules).unwrap();
        prop_assert_eq!(a, classify(&text, start..end, &rules).unwrap());
        prop_assert!(AssertionStatus::ALL.contains(&a));
    }
}

#[test]
fn applicability_is_total() {
    let table = ApplicabilityTable::default();
    for t in SemanticType::REPORTABLE {
        let kinds = table.applicable(t).unwrap();
        let purposeless = !matches!(
            t,
            SemanticType::ChemicalOrDrug
                | SemanticType::DiagnosticProcedure
                | SemanticType::TherapeuticOrPreventiveProcedure
                | SemanticType::LaboratoryProcedure
        );
        assert_eq!(!kinds.contains(AttributeKind::Purpose), purposeless, "{t}");
    }
    assert!(table.applicable(SemanticType::Other).is_err());
}

#[test]
fn replay_runs_are_identical() {
    use genie_core::llm_client::{ReplayCompleter, Transcript};
    use genie_core::attributes::{LlmBackend, PromptTemplates};
    use genie_core::pipeline::Pipeline;

    let lex = parse_lexicon("fever\tC1\tSign, Symptom, or Finding\nhypoxemia\tC2\tSign, Symptom, or Finding\n", "t").unwrap();
    let note = RawNote::new("n", "High fever (105) and hypoxemia.");
    let templates = PromptTemplates::default();
    let probe = Pipeline::new(build_index(&lex.entries));
    let mut work = probe.preprocess(&note);
    probe.recognize(&mut work);
    let mentions = work.mentions.clone().unwrap();
    let backend_for_prompts = LlmBackend::new(Arc::new(ReplayCompleter::new(Transcript::new())), templates.clone());
    let mut t = Transcript::new();
    for kind in AttributeKind::ALL {
        let prompt = backend_for_prompts.prompt(&work.chunks[0], &mentions, kind);
        t.record(&prompt, "fever: 105\nhypoxemia: null");
    }
    let run = || {
        let backend = LlmBackend::new(Arc::new(ReplayCompleter::new(t.clone())), templates.clone());
        let p = Pipeline::new(build_index(&lex.entries)).with_backend(Arc::new(backend));
        serialize(&p.structure_batch(std::slice::from_ref(&note)).unwrap())
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}
