//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sdst_core::corpus::{Corpus, Dialogue, DialogueState, PredictionSet, SlotDef, SlotKind, SlotSchema, Turn};
use sdst_core::dst_metrics::{jga, slot_precision, sta};
use sdst_core::entity_corrector::{default_grid, detect_corpus_entities, tune_threshold, AgentScope, Gazetteer};
use sdst_core::error_simulator::{augment_corpus, estimate_error_matrix, edit_log_csv, EditCount, InjectionConfig};
use sdst_core::error_taxonomy::{build_context_ablation, taxonomy_report, ErrorCategory};
use sdst_core::normalizer::{normalize_text, RuleSet};
use sdst_core::state_codec::{build_model_input, parse_state, serialize_state, InputBudget, ParseMode, TextSource};
use sdst_core::text::word_forms;
use sdst_core::text_metrics::{align_chars, edit_rate, levenshtein, levenshtein_seq, similarity, RateUnit};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn toy() -> Corpus {
    let dir = root().join("data/toy");
    let mut corpus = sdst_core::corpus::ingest_corpus(dir.join("corpus.jsonl"), dir.join("schema.json")).unwrap();
    sdst_core::corpus::attach_hypotheses(&mut corpus, dir.join("transcripts.jsonl")).unwrap();
    corpus
}

fn toy_predictions(corpus: &Corpus, name: &str) -> PredictionSet {
    sdst_core::corpus::load_predictions(root().join("data/toy").join(name), corpus).unwrap()
}

// ---------------------------------------------------------------- random corpora

const VALUES: [&str; 8] = ["cambridge", "ely", "the acorn", "cheap", "north", "5:30 pm", "a b=c", "x"];
const WORDS: [&str; 10] = ["i", "need", "a", "train", "to", "the", "hotel", "please", "book", "it"];

fn random_schema() -> SlotSchema {
    let slot = |name: &str, kind| SlotDef {
        name: name.into(),
        kind,
        allowed_values: match kind {
            SlotKind::Categorical => VALUES.iter().map(|v| v.to_string()).collect(),
            _ => vec![],
        },
    };
    SlotSchema::new(vec![
        slot("hotel-area", SlotKind::Categorical),
        slot("hotel-name", SlotKind::NonCategorical),
        slot("hotel-price", SlotKind::Categorical),
        slot("train-arriveby", SlotKind::Time),
        slot("train-day", SlotKind::Categorical),
        slot("train-departure", SlotKind::NonCategorical),
        slot("train-destination", SlotKind::NonCategorical),
        slot("taxi-leaveat", SlotKind::Time),
    ])
    .unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, schema: &SlotSchema) -> DialogueState {
    let mut state = DialogueState::new();
    for def in schema.slots() {
        if rng.random_bool(0.35) {
            state.insert(def.name.clone(), VALUES.choose(rng).unwrap()).unwrap();
        }
    }
    state
}

fn random_text(rng: &mut ChaCha8Rng, extra: &[&str]) -> String {
    let n = rng.random_range(1..8);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    for e in extra {
        if rng.random_bool(0.6) {
            words.insert(rng.random_range(0..=words.len()), e);
        }
    }
    words.join(" ")
}

fn random_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let schema = random_schema();
    let dialogues = (0..rng.random_range(1..6))
        .map(|d| {
            let mut turns = Vec::new();
            for _ in 0..rng.random_range(1..5) {
                let state = random_state(rng, &schema);
                let values: Vec<&str> = state.iter().map(|(_, v)| v).collect();
                let text = random_text(rng, &values);
                turns.push(Turn::user(text.clone(), state).with_hyp(text));
                turns.push(Turn::agent(random_text(rng, &[])));
            }
            if rng.random_bool(0.5) {
                turns.pop();
            }
            Dialogue {
                id: format!("r{d}"),
                turns,
            }
        })
        .collect();
    Corpus::new(schema, dialogues).unwrap()
}

fn random_predictions(rng: &mut ChaCha8Rng, corpus: &Corpus) -> PredictionSet {
    let mut preds = PredictionSet::new("random");
    for t in corpus.user_turns() {
        let gold = t.gold_state();
        let state = match rng.random_range(0..6) {
            0 => continue,
            1 => gold.clone(),
            2 => random_state(rng, corpus.schema()),
            _ => {
                let mut s = gold.clone();
                for def in corpus.schema().slots() {
                    match rng.random_range(0..8) {
                        0 => {
                            s.remove(&def.name);
                        }
                        1 => s.insert(def.name.clone(), VALUES.choose(rng).unwrap()).unwrap(),
                        _ => {}
                    }
                }
                s
            }
        };
        preds.insert(corpus, &t.dialogue.id, t.index, state).unwrap();
    }
    preds
}

// ---------------------------------------------------------------- criteria

fn metric_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut corpora = vec![toy()];
    corpora.extend((0..100).map(|_| random_corpus(&mut rng)));
    for (i, corpus) in corpora.iter().enumerate() {
        let gold = PredictionSet::gold(corpus);
        let (j, s) = (jga(&gold, corpus), sta(&gold, corpus));
        ensure(j == 1.0 && s.sta == 1.0, || format!("corpus {i}: JGA {j} STA {}", s.sta))?;
        for (slot, p) in slot_precision(&gold, corpus) {
            ensure(p.precision == 1.0, || format!("corpus {i}: {slot} precision {}", p.precision))?;
        }
    }
    Ok(format!("{} corpora (toy + 100 random)", corpora.len()))
}

fn jga_below_sta() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut strict = 0;
    for i in 0..1000 {
        let corpus = random_corpus(&mut rng);
        let preds = random_predictions(&mut rng, &corpus);
        let (j, s) = (jga(&preds, &corpus), sta(&preds, &corpus).sta);
        ensure(j <= s, || format!("pair {i}: JGA {j} > STA {s}"))?;
        strict += usize::from(j < s);
    }
    Ok(format!("1000 pairs, {strict} with JGA < STA"))
}

/// All strings over `abcd` up to length 7 in length-then-lexicographic
/// order, with the index of each string's one-shorter prefix.
fn all_strings() -> (Vec<Vec<u8>>, Vec<usize>) {
    let mut strings = vec![Vec::new()];
    let mut parent = vec![0];
    let mut level = 0..1;
    for _ in 0..7 {
        let start = strings.len();
        for p in level.clone() {
            for c in b"abcd" {
                let mut s = strings[p].clone();
                s.push(*c);
                strings.push(s);
                parent.push(p);
            }
        }
        level = start..strings.len();
    }
    (strings, parent)
}

fn levenshtein_oracle() -> Check {
    let started = Instant::now();
    let (strings, parent) = all_strings();
    let n = strings.len();

    // d(a, b) by the recursive definition over prefixes:
    // d(a'x, b'y) = min(d(a', b') + [x != y], d(a', b'y) + 1, d(a'x, b') + 1).
    fn visit(
        a: &mut Vec<u8>,
        parent_row: Option<&[u8]>,
        strings: &[Vec<u8>],
        parent: &[usize],
        checked: &mut u64,
    ) -> std::result::Result<(), String> {
        let n = strings.len();
        let mut row = vec![0u8; n];
        match (parent_row, a.last()) {
            (Some(up), Some(&x)) => {
                row[0] = a.len() as u8;
                for ib in 1..n {
                    let (pb, y) = (parent[ib], *strings[ib].last().unwrap());
                    row[ib] = (up[pb] + u8::from(x != y)).min(up[ib] + 1).min(row[pb] + 1);
                }
            }
            _ => {
                for (ib, s) in strings.iter().enumerate() {
                    row[ib] = s.len() as u8;
                }
            }
        }
        for (ib, b) in strings.iter().enumerate() {
            let got = levenshtein_seq(a, b);
            if got != row[ib] as usize {
                return Err(format!("{:?} vs {:?}: dp {got}, oracle {}", a, b, row[ib]));
            }
        }
        *checked += n as u64;
        if a.len() < 7 {
            for c in b"abcd" {
                a.push(*c);
                visit(a, Some(&row), strings, parent, checked)?;
                a.pop();
            }
        }
        Ok(())
    }

    let mut checked = 0u64;
    visit(&mut Vec::new(), None, &strings, &parent, &mut checked)?;
    ensure(checked == (n * n) as u64, || format!("checked {checked} of {} pairs", n * n))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alphabet: Vec<char> = "abcé ü字".chars().collect();
    for _ in 0..10_000 {
        let s = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.random_range(0..30);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
        };
        let (r, h) = (s(&mut rng), s(&mut rng));
        let script = align_chars(&r, &h);
        ensure(script.apply(&r).as_deref() == Some(h.as_str()), || format!("replay of {r:?} -> {h:?}"))?;
        ensure(script.error_count() == levenshtein(&r, &h), || format!("script cost {r:?} -> {h:?}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("{checked} pairs exhaustive + 10000 replays in {elapsed:.1?}"))
}

fn codec_round_trip() -> Check {
    let schema = random_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let garbage = ["", " ", "junk", "=x", "hotel-name=", "nope-slot=v", "hotel-area", " = ", "train-day=  "];
    for i in 0..10_000 {
        let state = random_state(&mut rng, &schema);
        let text = serialize_state(&state).map_err(|e| e.to_string())?;
        let back = parse_state(&text, &schema, ParseMode::Strict).map_err(|e| format!("{text:?}: {e}"))?;
        ensure(back.state == state, || format!("state {i}: {text:?} round-tripped to {:?}", back.state))?;

        let mut segments: Vec<String> = text.split(';').filter(|s| !s.is_empty()).map(String::from).collect();
        for _ in 0..rng.random_range(0..4) {
            let at = rng.random_range(0..=segments.len());
            segments.insert(at, garbage.choose(&mut rng).unwrap().to_string());
        }
        if !segments.is_empty() && rng.random_bool(0.3) {
            let k = rng.random_range(0..segments.len());
            segments.push(segments[k].clone());
        }
        let mutated = segments.join(";");
        let parsed = parse_state(&mutated, &schema, ParseMode::Lenient).map_err(|e| format!("{mutated:?}: {e}"))?;

        // Independent reading: a segment is well formed when it has a known
        // slot, a non-blank value and the slot was not seen before.
        let mut expected = DialogueState::new();
        for seg in mutated.split(';') {
            let Some((slot, value)) = seg.split_once('=') else { continue };
            let slot = slot.trim();
            if schema.contains(slot) && !value.trim().is_empty() && !expected.contains(slot) {
                expected.insert(slot, value).unwrap();
            }
        }
        ensure(parsed.state == expected, || format!("{mutated:?}: got {:?}", parsed.state))?;
    }
    Ok("10000 states round-tripped, mutated strings parsed leniently".into())
}

fn normalizer_idempotence() -> Check {
    let rules = RuleSet::default();
    let time = Regex::new(r"^\d{1,2}:\d{2} (am|pm)$").unwrap();
    let check = |s: &str| -> std::result::Result<(), String> {
        let once = normalize_text(s, &rules);
        ensure(normalize_text(&once, &rules) == once, || format!("not idempotent on {s:?}"))?;
        let words: Vec<&str> = once.split(' ').collect();
        for (i, w) in words.iter().enumerate() {
            if w.contains(':') {
                let emitted = format!("{w} {}", words.get(i + 1).copied().unwrap_or(""));
                ensure(time.is_match(&emitted), || format!("time {emitted:?} from {s:?}"))?;
            }
        }
        Ok(())
    };
    let pieces = [
        "I'd", "can't", "King's", "p.m.", "a.m", "PM", "am", "5", "17", "00", "12", ":", ".", ",", "!", "30", "five",
        "thirty", "oh", "twelve", "forty", "center", "—", "-", "'", "é", "İ", " ", "  ", "1730", "½", "7:45", "19.15",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let s: String = if rng.random_bool(0.5) {
            (0..rng.random_range(0..20)).map(|_| *pieces.choose(&mut rng).unwrap()).collect()
        } else {
            (0..rng.random_range(0..30))
                .map(|_| char::from_u32(rng.random_range(0x20..0x2100)).unwrap_or('?'))
                .collect()
        };
        check(&s)?;
    }
    let corpus = toy();
    let mut texts = 0;
    for d in corpus.dialogues() {
        for t in &d.turns {
            for s in [Some(&t.gold_text), t.hyp_text.as_ref()].into_iter().flatten() {
                check(s)?;
                texts += 1;
            }
        }
    }
    Ok(format!("10000 random strings + {texts} toy texts"))
}

fn mean_corpus_cer(corpus: &Corpus) -> f64 {
    let rates: Vec<f64> = corpus
        .user_turns()
        .map(|t| edit_rate(&t.turn.gold_text, t.turn.working_text.as_deref().unwrap(), RateUnit::Char).unwrap())
        .collect();
    rates.iter().sum::<f64>() / rates.len() as f64
}

fn error_matrix_sanity() -> Check {
    let corpus = toy();
    let golds: Vec<(String, String)> = corpus
        .user_turns()
        .map(|t| (t.turn.gold_text.clone(), t.turn.gold_text.clone()))
        .collect();
    let identity = estimate_error_matrix(&golds).map_err(|e| e.to_string())?;
    ensure(identity.type_counts() == [0, 0, 0], || "self pairs produced errors".into())?;
    for (i, row) in identity.sub_counts.iter().enumerate() {
        ensure(row.iter().enumerate().all(|(j, &c)| (c > 0) == (i == j)), || {
            format!("row {:?} not diagonal", identity.alphabet[i])
        })?;
    }

    let pairs: Vec<(String, String)> = corpus
        .user_turns()
        .map(|t| (t.turn.gold_text.clone(), t.turn.hyp_text.clone().unwrap()))
        .collect();
    let matrix = estimate_error_matrix(&pairs).map_err(|e| e.to_string())?;
    let lambdas = [0.0, 0.5, 1.0, 2.0];
    let mut stats = Vec::new();
    for lambda in lambdas {
        let cers: Vec<f64> = (0..20)
            .map(|seed| {
                let config = InjectionConfig {
                    edits: EditCount::Poisson(lambda),
                    ..InjectionConfig::new(seed)
                };
                mean_corpus_cer(&augment_corpus(&corpus, &matrix, &config).unwrap().corpus)
            })
            .collect();
        let mean = cers.iter().sum::<f64>() / 20.0;
        let var = cers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 19.0;
        stats.push((mean, (var / 20.0).sqrt()));
    }
    for k in 1..stats.len() {
        let ((m0, s0), (m1, s1)) = (stats[k - 1], stats[k]);
        ensure(m1 >= m0 - 3.0 * (s0 * s0 + s1 * s1).sqrt(), || {
            format!("mean CER fell from {m0:.4} to {m1:.4} at lambda {}", lambdas[k])
        })?;
    }

    let config = InjectionConfig::new(99);
    let (a, b) = (
        augment_corpus(&corpus, &matrix, &config).unwrap(),
        augment_corpus(&corpus, &matrix, &config).unwrap(),
    );
    ensure(
        a.corpus.to_jsonl() == b.corpus.to_jsonl() && edit_log_csv(&a.edits).unwrap() == edit_log_csv(&b.edits).unwrap(),
        || "same seed gave different output".into(),
    )?;
    let means: Vec<String> = stats.iter().map(|(m, _)| format!("{m:.4}")).collect();
    Ok(format!("diagonal self matrix; mean CER by lambda {lambdas:?}: {}; seed-deterministic", means.join(" ")))
}

fn entity_correction() -> Check {
    // (agent entity, user misrecognition); CERs 1/19, 1/24, 1/12, 1/10, 1/15.
    let cases = [
        ("Huntingdon Marriott", "huntingdun marriott"),
        ("Cherry Hinton Water Play", "cherry hinton waterplay"),
        ("Kettles Yard", "kettle yard"),
        ("Golden Wok", "golden wak"),
        ("Christs College", "chrysts college"),
    ];
    let schema = random_schema();
    let mut dialogues = Vec::new();
    for (i, (entity, heard)) in cases.iter().enumerate() {
        for j in 0..2 {
            let gold = format!("please book {entity} for me");
            dialogues.push(Dialogue {
                id: format!("c{i}-{j}"),
                turns: vec![
                    Turn::user("i need a place", DialogueState::new()).with_hyp("i need a place"),
                    Turn::agent(format!("{entity} is available.")),
                    Turn::user(gold, DialogueState::new()).with_hyp(format!("please book {heard} for me")),
                ],
            });
        }
    }
    let corpus = Corpus::new(schema, dialogues).unwrap();
    let mut names: Vec<&str> = cases.iter().map(|c| c.0).collect();
    names.extend(cases.iter().map(|c| c.1));
    for (entity, heard) in cases {
        let cer = levenshtein(&entity.to_lowercase(), heard) as f64 / entity.chars().count() as f64;
        ensure(cer > 0.0 && cer <= 0.1, || format!("fixture CER {cer} for {heard}"))?;
    }
    let (user, agent) = detect_corpus_entities(&corpus, &Gazetteer::new(names));
    ensure(user.len() == 10 && agent.len() == 10, || format!("{} user / {} agent spans", user.len(), agent.len()))?;
    let curve =
        tune_threshold(&corpus, &user, &agent, &default_grid(), AgentScope::Previous).map_err(|e| e.to_string())?;
    let at = |tau: f64| curve.curve.iter().find(|(t, _)| *t == tau).map(|(_, v)| *v).unwrap();
    ensure(curve.best >= 0.1, || format!("tuned threshold {}", curve.best))?;
    ensure(at(curve.best) < at(0.0), || {
        format!("CER {} at tau {} not below {} at 0", at(curve.best), curve.best, at(0.0))
    })?;
    Ok(format!(
        "tau = {}, mean CER {:.4} -> {:.4}",
        curve.best,
        at(0.0),
        at(curve.best)
    ))
}

/// Brute-force category of one instance: exact lowercase equality and a scan
/// of every word window of the context.
fn brute_force_category(gold: &str, pred: Option<&str>, context: &str) -> ErrorCategory {
    let Some(pred) = pred else { return ErrorCategory::Omitted };
    let ds = pred.to_lowercase() == gold.to_lowercase();
    let words: Vec<String> = context
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let target: Vec<String> = gold.split(' ').map(str::to_lowercase).collect();
    let ctx = (0..words.len()).any(|i| words[i..].starts_with(&target));
    match (ds, ctx) {
        (true, true) => ErrorCategory::DsMatchCtxMatch,
        (true, false) => ErrorCategory::DsMatchCtxNoMatch,
        (false, true) => ErrorCategory::DsNoMatchCtxMatch,
        (false, false) => ErrorCategory::DsNoMatchCtxNoMatch,
    }
}

fn pair_count(corpus: &Corpus) -> usize {
    corpus
        .user_turns()
        .map(|t| {
            t.gold_state()
                .slots()
                .filter(|s| corpus.schema().kind_of(s) == Some(SlotKind::NonCategorical))
                .count()
        })
        .sum()
}

fn taxonomy_partition() -> Check {
    let budget = InputBudget::default();
    let mut fixtures = 0;
    let toy = toy();
    let toy_sets = [
        PredictionSet::gold(&toy),
        PredictionSet::new("empty"),
        toy_predictions(&toy, "predictions.asr.jsonl"),
        toy_predictions(&toy, "predictions.oracle.jsonl"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases: Vec<(Corpus, PredictionSet)> = toy_sets.into_iter().map(|p| (toy.clone(), p)).collect();
    for _ in 0..100 {
        let corpus = random_corpus(&mut rng);
        let preds = random_predictions(&mut rng, &corpus);
        cases.push((corpus, preds));
    }
    for (corpus, preds) in &cases {
        for source in [TextSource::Gold, TextSource::Hyp] {
            let report = taxonomy_report(preds, corpus, source, &budget).map_err(|e| e.to_string())?;
            let sum: usize = report.counts.values().sum();
            ensure(sum == report.total && sum == pair_count(corpus), || {
                format!("counts sum {sum}, total {}, pairs {}", report.total, pair_count(corpus))
            })?;
            fixtures += 1;
        }
    }

    let (corpus, preds, expected) = hand_built_fixture();
    let report = taxonomy_report(&preds, &corpus, TextSource::Hyp, &budget).map_err(|e| e.to_string())?;
    ensure(report.instances.len() == 10, || format!("{} instances", report.instances.len()))?;
    for (inst, want) in report.instances.iter().zip(&expected) {
        let dialogue = corpus.get(&inst.dialogue_id).unwrap();
        let context = build_model_input(dialogue, inst.user_turn, TextSource::Hyp, &budget).unwrap();
        let oracle = brute_force_category(&inst.gold, inst.predicted.as_deref(), &context);
        ensure(inst.category == oracle && oracle == *want, || {
            format!(
                "{} turn {} {}: got {}, brute force {}, expected {}",
                inst.dialogue_id, inst.user_turn, inst.slot, inst.category, oracle, want
            )
        })?;
    }
    Ok(format!("{fixtures} fixtures partition; 10-instance fixture matches brute force"))
}

fn hand_built_fixture() -> (Corpus, PredictionSet, Vec<ErrorCategory>) {
    let schema = SlotSchema::new(
        [
            "attraction-name",
            "hotel-name",
            "restaurant-name",
            "taxi-departure",
            "taxi-destination",
            "train-destination",
        ]
        .iter()
        .map(|n| SlotDef {
            name: n.to_string(),
            kind: SlotKind::NonCategorical,
            allowed_values: vec![],
        })
        .collect(),
    )
    .unwrap();
    let st = |pairs: &[(&str, &str)]| DialogueState::from_pairs(pairs.iter().copied()).unwrap();
    let same = |text: &str, state| Turn::user(text, state).with_hyp(text);
    let h1 = Dialogue {
        id: "h1".into(),
        turns: vec![
            same("I want the Huntingdon Marriott", st(&[("hotel-name", "huntingdon marriott")])),
            Turn::agent("Sure."),
            same(
                "Definitely book it, then a train.",
                st(&[
                    ("hotel-name", "huntingdon marriott"),
                    ("train-destination", "ely"),
                    ("attraction-name", "byard art"),
                ]),
            ),
        ],
    };
    let h2 = Dialogue {
        id: "h2".into(),
        turns: vec![
            Turn::user("a table at Golden Wok", st(&[("restaurant-name", "golden wok")])).with_hyp("a table at golden walk"),
            Turn::agent("Golden Wok is booked."),
            same(
                "and a taxi to the hotel",
                st(&[("restaurant-name", "golden wok"), ("taxi-destination", "acorn guest house")]),
            ),
            Turn::agent("From where?"),
            Turn::user(
                "from kettles yard",
                st(&[
                    ("restaurant-name", "golden wok"),
                    ("taxi-destination", "acorn guest house"),
                    ("taxi-departure", "kettles yard"),
                ]),
            )
            .with_hyp("from kettle yard"),
        ],
    };
    let corpus = Corpus::new(schema, vec![h1, h2]).unwrap();
    let mut preds = PredictionSet::new("fixture");
    let mut put = |d: &str, t: usize, s: DialogueState| preds.insert(&corpus, d, t, s).unwrap();
    put("h1", 0, st(&[("hotel-name", "huntingdon marriott")]));
    put(
        "h1",
        1,
        st(&[
            ("hotel-name", "huntington"),
            ("train-destination", "ely"),
            ("attraction-name", "the copper kettle"),
        ]),
    );
    put("h2", 0, st(&[("restaurant-name", "golden walk")]));
    put("h2", 1, st(&[("restaurant-name", "golden wok")]));
    put(
        "h2",
        2,
        st(&[
            ("restaurant-name", "pizza hut"),
            ("taxi-destination", "acorn guest house"),
            ("taxi-departure", "kettles yard"),
        ]),
    );
    use ErrorCategory::*;
    // Instances come in corpus order, slots alphabetical within a turn.
    let expected = vec![
        DsMatchCtxMatch,     // h1/0 hotel-name
        DsNoMatchCtxNoMatch, // h1/1 attraction-name (hallucinated)
        DsNoMatchCtxMatch,   // h1/1 hotel-name
        DsMatchCtxNoMatch,   // h1/1 train-destination ("definitely" is no match)
        DsNoMatchCtxNoMatch, // h2/0 restaurant-name copied from the hypothesis
        DsMatchCtxMatch,     // h2/1 restaurant-name
        Omitted,             // h2/1 taxi-destination
        DsNoMatchCtxMatch,   // h2/2 restaurant-name
        DsMatchCtxNoMatch,   // h2/2 taxi-departure
        DsMatchCtxNoMatch,   // h2/2 taxi-destination
    ];
    (corpus, preds, expected)
}

/// Mock extractive tracker: copies the context word n-gram closest to each
/// gold non-categorical value; other slots are predicted correctly.
fn mock_tracker(corpus: &Corpus, inputs: &[sdst_core::state_codec::ModelInput]) -> PredictionSet {
    let mut preds = PredictionSet::new("mock");
    for input in inputs {
        let dialogue = corpus.get(&input.dialogue_id).unwrap();
        let gold = dialogue.user_turn(input.user_turn).unwrap().gold_state.as_ref().unwrap();
        let words = word_forms(&input.input);
        let mut state = DialogueState::new();
        for (slot, value) in gold.iter() {
            if corpus.schema().kind_of(slot) != Some(SlotKind::NonCategorical) {
                state.insert(slot, value).unwrap();
                continue;
            }
            let w = value.split(' ').count();
            let mut best: Option<(f64, String)> = None;
            for n in w.saturating_sub(1).max(1)..=w + 2 {
                for window in words.windows(n) {
                    let gram = window.join(" ");
                    let score = similarity(&gram, value);
                    if best.as_ref().is_none_or(|(s, _)| score > *s) {
                        best = Some((score, gram));
                    }
                }
            }
            if let Some((_, gram)) = best {
                state.insert(slot, &gram).unwrap();
            }
        }
        preds.insert(corpus, &input.dialogue_id, input.user_turn, state).unwrap();
    }
    preds
}

fn context_ablation() -> Check {
    let toy = toy();
    let pairs: Vec<(String, String)> = toy
        .user_turns()
        .map(|t| (t.turn.gold_text.clone(), t.turn.hyp_text.clone().unwrap()))
        .collect();
    let matrix = estimate_error_matrix(&pairs).map_err(|e| e.to_string())?;
    let budget = InputBudget::default();
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for seed in 0..20 {
        let config = InjectionConfig {
            edits: EditCount::Poisson(1.0),
            ..InjectionConfig::new(seed)
        };
        let mut noisy = augment_corpus(&toy, &matrix, &config).unwrap().corpus;
        for d in noisy.dialogues().to_vec() {
            let mut d = d;
            for t in d.turns.iter_mut().filter(|t| t.is_user()) {
                t.hyp_text = t.working_text.take();
            }
            noisy.replace_dialogue(d).unwrap();
        }
        let (a, b) = build_context_ablation(&noisy, &budget).map_err(|e| e.to_string())?;
        let (ja, jb) = (jga(&mock_tracker(&noisy, &a), &noisy), jga(&mock_tracker(&noisy, &b), &noisy));
        ensure(jb >= ja, || format!("seed {seed}: JGA A {ja:.4} > B {jb:.4}"))?;
        sum_a += ja;
        sum_b += jb;
    }
    Ok(format!("20 seeds, mean JGA A {:.4} <= B {:.4}", sum_a / 20.0, sum_b / 20.0))
}

fn end_to_end() -> Check {
    let started = Instant::now();
    let bin = env!("CARGO_BIN_EXE_sdst");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path();
    let o = |step: &str| out.join(step).to_string_lossy().into_owned();
    let corrected = format!("{}/corpus.jsonl", o("correct"));
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest", "--corpus", "data/toy/corpus.jsonl", "--transcripts", "data/toy/transcripts.jsonl"],
        vec!["normalize", "--corpus", &format!("{}/corpus.jsonl", o("ingest"))],
        vec![
            "correct-entities",
            "--corpus",
            &format!("{}/corpus.jsonl", o("normalize")),
            "--gazetteer",
            "data/toy/gazetteer.txt",
            "--threshold",
            "0.2",
        ],
        vec![
            "evaluate",
            "--corpus",
            &corrected,
            "--predictions",
            "data/toy/predictions.asr.jsonl",
            "--baseline",
            "data/toy/predictions.oracle.jsonl",
        ],
        vec!["categorize", "--corpus", &corrected, "--predictions", "data/toy/predictions.asr.jsonl", "--source", "working"],
        vec![
            "similarity-hist",
            "--corpus",
            &corrected,
            "--predictions",
            "data/toy/predictions.asr.jsonl",
            "--source",
            "working",
        ],
        vec![
            "report",
            "--corpus",
            &corrected,
            "--predictions",
            "data/toy/predictions.asr.jsonl",
            "data/toy/predictions.oracle.jsonl",
            "--source",
            "working",
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let dirs = ["ingest", "normalize", "correct", "evaluate", "categorize", "similarity", "report"];
    for (step, dir) in steps.iter().zip(dirs) {
        let status = Command::new(bin)
            .current_dir(root())
            .arg("--out-dir")
            .arg(out.join(dir))
            .args(step)
            .args(["--schema", "data/toy/schema.json"])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("{} failed: {}", step[0], String::from_utf8_lossy(&status.stderr))
        })?;
    }
    let elapsed = started.elapsed();
    let golden = root().join("data/toy/golden");
    let mut compared = 0;
    for dir in dirs {
        let mut names: Vec<_> = std::fs::read_dir(golden.join(dir)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let want = std::fs::read(golden.join(dir).join(&name)).unwrap();
            let got = std::fs::read(out.join(dir).join(&name)).map_err(|e| format!("{dir}/{name:?}: {e}"))?;
            ensure(want == got, || format!("{dir}/{} differs from golden", name.to_string_lossy()))?;
            compared += 1;
        }
    }
    ensure(elapsed < Duration::from_secs(10), || format!("pipeline took {elapsed:.1?}"))?;
    Ok(format!("7 steps in {elapsed:.2?}, {compared} files byte-identical to golden"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("metric identity", metric_identity),
        ("JGA <= STA", jga_below_sta),
        ("levenshtein/alignment oracle", levenshtein_oracle),
        ("codec round-trip", codec_round_trip),
        ("normalizer idempotence", normalizer_idempotence),
        ("error-matrix sanity", error_matrix_sanity),
        ("entity-correction effectiveness", entity_correction),
        ("taxonomy partition", taxonomy_partition),
        ("context-ablation direction", context_ablation),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
