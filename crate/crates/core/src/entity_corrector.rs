//! Correction of misrecognized proper nouns in user hypotheses using the
//! entities the agent mentioned, gated by a character-error-rate threshold.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, EntitySpan};
use crate::error::{Error, Result};
use crate::text::{canonicalize, char_len, char_slice, replace_char_range, word_forms, word_tokens};
use crate::text_metrics::{edit_rate, levenshtein, RateUnit};

/// Known entity strings used as a stand-in tagger.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    /// Word forms of each entry, longest first.
    entries: Vec<Vec<String>>,
}

impl Gazetteer {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut entries: Vec<Vec<String>> = entries
            .into_iter()
            .map(|e| word_forms(&canonicalize(e.as_ref())))
            .filter(|forms| !forms.is_empty())
            .collect();
        entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        entries.dedup();
        Gazetteer { entries }
    }

    /// One entry per line; blank lines and `#` comments are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Longest-match, non-overlapping, left-to-right whole-word matches of
/// gazetteer entries in `text` (case-insensitive).
pub fn detect_entities_gazetteer(dialogue_id: &str, turn: usize, text: &str, gazetteer: &Gazetteer) -> Vec<EntitySpan> {
    let tokens = word_tokens(text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = gazetteer.entries.iter().find(|entry| {
            i + entry.len() <= tokens.len() && tokens[i..i + entry.len()].iter().zip(entry.iter()).all(|(t, w)| &t.norm == w)
        });
        match hit {
            Some(entry) => {
                let (start, end) = (tokens[i].start, tokens[i + entry.len() - 1].end);
                spans.push(EntitySpan {
                    dialogue_id: dialogue_id.to_string(),
                    turn,
                    start,
                    end,
                    surface: char_slice(text, start, end).expect("token bounds").to_string(),
                });
                i += entry.len();
            }
            None => i += 1,
        }
    }
    spans
}

/// Gazetteer spans over the current text of every turn, split into
/// `(user spans, agent spans)`.
pub fn detect_corpus_entities(corpus: &Corpus, gazetteer: &Gazetteer) -> (Vec<EntitySpan>, Vec<EntitySpan>) {
    let (mut user, mut agent) = (Vec::new(), Vec::new());
    for dialogue in corpus.dialogues() {
        for (pos, turn) in dialogue.turns.iter().enumerate() {
            let spans = detect_entities_gazetteer(&dialogue.id, pos, turn.current_text(), gazetteer);
            if turn.is_user() { &mut user } else { &mut agent }.extend(spans);
        }
    }
    (user, agent)
}

/// Splits spans by the speaker of the turn they point at. Spans pointing
/// outside the corpus are rejected.
pub fn split_by_speaker(corpus: &Corpus, spans: Vec<EntitySpan>) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
    let (mut user, mut agent) = (Vec::new(), Vec::new());
    for span in spans {
        let turn = corpus
            .get(&span.dialogue_id)
            .and_then(|d| d.turns.get(span.turn))
            .ok_or_else(|| Error::DanglingReference {
                dialogue: span.dialogue_id.clone(),
                turn: span.turn,
            })?;
        if turn.is_user() { &mut user } else { &mut agent }.push(span);
    }
    Ok((user, agent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentScope {
    /// Agent turns before the user turn being corrected.
    #[default]
    Previous,
    WholeDialogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    pub threshold: f64,
    pub scope: AgentScope,
}

impl CorrectionConfig {
    pub fn new(threshold: f64, scope: AgentScope) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!("threshold {threshold} outside [0, 1]")));
        }
        Ok(CorrectionConfig { threshold, scope })
    }
}

/// One applied replacement. `turn` is the position among all turns and
/// offsets refer to the text before correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub dialogue_id: String,
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
    pub cer: f64,
}

/// `levenshtein(reference, hyp) / |reference|` on canonicalized strings.
/// The agent-side entity is the reference.
pub fn entity_cer(reference: &str, hyp: &str) -> Option<f64> {
    let (reference, hyp) = (canonicalize(reference), canonicalize(hyp));
    let len = char_len(&reference);
    (len > 0).then(|| levenshtein(&reference, &hyp) as f64 / len as f64)
}

/// Replaces user entities with the closest in-scope agent entity when
/// `0 < CER <= threshold`. Every user turn with a hypothesis gets
/// `working_text` set (to the corrected text, or unchanged text otherwise).
pub fn correct_user_entities(
    dialogue: &Dialogue,
    user_spans: &[EntitySpan],
    agent_spans: &[EntitySpan],
    config: &CorrectionConfig,
) -> Result<(Dialogue, Vec<Replacement>)> {
    let lookup = |span: &EntitySpan| {
        if span.dialogue_id != dialogue.id {
            return Err(Error::DanglingReference {
                dialogue: span.dialogue_id.clone(),
                turn: span.turn,
            });
        }
        dialogue.turns.get(span.turn).ok_or_else(|| Error::DanglingReference {
            dialogue: span.dialogue_id.clone(),
            turn: span.turn,
        })
    };

    let mut agent: Vec<&EntitySpan> = Vec::with_capacity(agent_spans.len());
    for span in agent_spans {
        let turn = lookup(span)?;
        if turn.is_user() {
            return Err(Error::StructureError(format!("agent span points at user turn {}", span.turn)));
        }
        if !span.matches(&turn.gold_text) {
            return Err(span.stale());
        }
        agent.push(span);
    }
    agent.sort_by_key(|s| (s.turn, s.start, s.end));

    let mut by_turn: BTreeMap<usize, Vec<&EntitySpan>> = BTreeMap::new();
    for span in user_spans {
        let turn = lookup(span)?;
        if !turn.is_user() {
            return Err(Error::StructureError(format!("user span points at agent turn {}", span.turn)));
        }
        by_turn.entry(span.turn).or_default().push(span);
    }

    let mut corrected = dialogue.clone();
    let mut log = Vec::new();
    for (index, pos, turn) in dialogue.user_turns() {
        let base = turn.working_text.as_deref().or(turn.hyp_text.as_deref());
        let spans = by_turn.remove(&pos).unwrap_or_default();
        let Some(base) = base else {
            if spans.is_empty() {
                continue;
            }
            return Err(Error::MissingVariant {
                dialogue: dialogue.id.clone(),
                turn: index,
                variant: "hyp",
            });
        };
        let mut spans = spans;
        spans.sort_by_key(|s| (s.start, s.end));
        for pair in spans.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::SpanOverlap((pair[0].start, pair[0].end), (pair[1].start, pair[1].end)));
            }
        }
        if let Some(stale) = spans.iter().find(|s| !s.matches(base)) {
            return Err(stale.stale());
        }

        let mut turn_log = Vec::new();
        for span in &spans {
            let in_scope = agent.iter().filter(|a| match config.scope {
                AgentScope::Previous => a.turn < pos,
                AgentScope::WholeDialogue => true,
            });
            let mut best: Option<(f64, &EntitySpan)> = None;
            for candidate in in_scope {
                if let Some(cer) = entity_cer(&candidate.surface, &span.surface) {
                    if best.is_none_or(|(b, _)| cer < b) {
                        best = Some((cer, candidate));
                    }
                }
            }
            if let Some((cer, candidate)) = best.filter(|(cer, _)| *cer > 0.0 && *cer <= config.threshold) {
                turn_log.push(Replacement {
                    dialogue_id: dialogue.id.clone(),
                    turn: pos,
                    start: span.start,
                    end: span.end,
                    original: span.surface.clone(),
                    replacement: candidate.surface.clone(),
                    cer,
                });
            }
        }

        let mut text = base.to_string();
        for r in turn_log.iter().rev() {
            text = replace_char_range(&text, r.start, r.end, &r.replacement).expect("validated span");
        }
        corrected.turns[pos].working_text = Some(text);
        log.extend(turn_log);
    }
    Ok((corrected, log))
}

/// Applies [`correct_user_entities`] to every dialogue. The log is ordered
/// by (dialogue id, turn, offset).
pub fn correct_corpus(
    corpus: &Corpus,
    user_spans: &[EntitySpan],
    agent_spans: &[EntitySpan],
    config: &CorrectionConfig,
) -> Result<(Corpus, Vec<Replacement>)> {
    let group = |spans: &[EntitySpan]| -> Result<BTreeMap<String, Vec<EntitySpan>>> {
        let mut map: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
        for span in spans {
            if corpus.get(&span.dialogue_id).is_none() {
                return Err(Error::DanglingReference {
                    dialogue: span.dialogue_id.clone(),
                    turn: span.turn,
                });
            }
            map.entry(span.dialogue_id.clone()).or_default().push(span.clone());
        }
        Ok(map)
    };
    let (users, agents) = (group(user_spans)?, group(agent_spans)?);
    let mut out = corpus.clone();
    let mut log = Vec::new();
    for dialogue in corpus.dialogues() {
        let none = Vec::new();
        let user = users.get(&dialogue.id).unwrap_or(&none);
        let agent = agents.get(&dialogue.id).unwrap_or(&none);
        let (fixed, entries) = correct_user_entities(dialogue, user, agent, config)?;
        out.replace_dialogue(fixed)?;
        log.extend(entries);
    }
    log.sort_by(|a, b| (&a.dialogue_id, a.turn, a.start).cmp(&(&b.dialogue_id, b.turn, b.start)));
    Ok((out, log))
}

/// `dialogue_id,turn,start,end,original,replacement,cer`
pub fn replacement_log_csv(log: &[Replacement]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["dialogue_id", "turn", "start", "end", "original", "replacement", "cer"])?;
    for r in log {
        writer.write_record([
            r.dialogue_id.as_str(),
            &r.turn.to_string(),
            &r.start.to_string(),
            &r.end.to_string(),
            &r.original,
            &r.replacement,
            &format!("{:.6}", r.cer),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}

/// `0.00, 0.05, ..., 0.50`.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub best: f64,
    /// `(threshold, objective)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

impl ThresholdCurve {
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["threshold", "objective"])?;
        for (tau, objective) in &self.curve {
            writer.write_record([format!("{tau:.2}"), format!("{objective:.6}")])?;
        }
        Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
    }
}

/// Mean char-level error rate of corrected user text against gold.
pub fn corrected_cer(corpus: &Corpus) -> Result<f64> {
    let mut total = 0.0;
    let mut turns = 0usize;
    for t in corpus.user_turns() {
        let text = t
            .turn
            .working_text
            .as_deref()
            .or(t.turn.hyp_text.as_deref())
            .ok_or_else(|| Error::MissingVariant {
                dialogue: t.dialogue.id.clone(),
                turn: t.index,
                variant: "hyp",
            })?;
        total += edit_rate(&t.turn.gold_text, text, RateUnit::Char)?;
        turns += 1;
    }
    Ok(if turns == 0 { 0.0 } else { total / turns as f64 })
}

/// Sweeps `grid` and returns the threshold minimizing mean corrected CER
/// against gold; ties go to the smallest threshold.
pub fn tune_threshold(
    corpus: &Corpus,
    user_spans: &[EntitySpan],
    agent_spans: &[EntitySpan],
    grid: &[f64],
    scope: AgentScope,
) -> Result<ThresholdCurve> {
    tune_threshold_by(corpus, user_spans, agent_spans, grid, scope, corrected_cer)
}

/// Like [`tune_threshold`] with a caller-supplied objective to minimize,
/// e.g. negative JGA of an external tracker run on the corrected corpus.
pub fn tune_threshold_by<F>(
    corpus: &Corpus,
    user_spans: &[EntitySpan],
    agent_spans: &[EntitySpan],
    grid: &[f64],
    scope: AgentScope,
    mut objective: F,
) -> Result<ThresholdCurve>
where
    F: FnMut(&Corpus) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty threshold grid".into()));
    }
    if let Some(t) = corpus.user_turns().find(|t| t.turn.hyp_text.is_none()) {
        return Err(Error::MissingVariant {
            dialogue: t.dialogue.id.clone(),
            turn: t.index,
            variant: "hyp",
        });
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut curve = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &tau in &sorted {
        let config = CorrectionConfig::new(tau, scope)?;
        let (corrected, _) = correct_corpus(corpus, user_spans, agent_spans, &config)?;
        let value = objective(&corrected)?;
        curve.push((tau, value));
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((tau, value));
        }
    }
    Ok(ThresholdCurve {
        best: best.expect("non-empty grid").0,
        curve,
    })
}
