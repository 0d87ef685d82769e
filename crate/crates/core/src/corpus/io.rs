use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, DialogueState, SlotSchema, Speaker, Turn};
use crate::error::{Error, Result};
use crate::state_codec::{parse_state, serialize_state, ParseMode};
use crate::text::char_slice;

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    working: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<BTreeMap<String, String>>,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines of a JSON Lines document, paired with 1-based line numbers.
fn jsonl<T: DeserializeOwned>(text: &str) -> impl Iterator<Item = (usize, Result<T>)> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| (i + 1, serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))))
}

fn dialogue_from_record(record: DialogueRecord) -> Result<Dialogue> {
    let turns = record
        .turns
        .into_iter()
        .map(|t| {
            let gold_state = t.state.map(|map| DialogueState::from_pairs(map.iter().map(|(k, v)| (k.clone(), v.as_str())))).transpose()?;
            Ok(Turn {
                speaker: t.speaker,
                gold_text: t.text,
                hyp_text: t.hyp,
                working_text: t.working,
                gold_state,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dialogue { id: record.id, turns })
}

fn dialogue_to_record(dialogue: &Dialogue) -> DialogueRecord {
    DialogueRecord {
        id: dialogue.id.clone(),
        turns: dialogue
            .turns
            .iter()
            .map(|t| TurnRecord {
                speaker: t.speaker,
                text: t.gold_text.clone(),
                hyp: t.hyp_text.clone(),
                working: t.working_text.clone(),
                state: t.gold_state.as_ref().map(|s| s.as_map().clone()),
            })
            .collect(),
    }
}

impl Corpus {
    /// Parses a corpus from JSON Lines, one dialogue per line. Errors carry
    /// the 1-based line number relative to `origin`.
    pub fn from_jsonl(text: &str, schema: SlotSchema, origin: &Path) -> Result<Corpus> {
        let mut dialogues = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (line, record) in jsonl::<DialogueRecord>(text) {
            let located = |e: Error| e.in_file(origin, Some(line));
            let dialogue = record.and_then(dialogue_from_record).map_err(located)?;
            dialogue.validate(&schema).map_err(located)?;
            if !seen.insert(dialogue.id.clone()) {
                return Err(located(Error::DuplicateId(dialogue.id)));
            }
            dialogues.push(dialogue);
        }
        Corpus::new(schema, dialogues)
    }

    pub fn read(path: impl AsRef<Path>, schema: SlotSchema) -> Result<Corpus> {
        let path = path.as_ref();
        Corpus::from_jsonl(&read_file(path)?, schema, path)
    }

    /// Serializes to the corpus JSON Lines format; text variants and states
    /// are written when present.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for dialogue in self.dialogues() {
            out.push_str(&serde_json::to_string(&dialogue_to_record(dialogue)).expect("corpus serializes"));
            out.push('\n');
        }
        out
    }

    /// Sets hypothesis texts from transcript records; validates every record
    /// before changing anything. Returns the number of attached hypotheses.
    pub fn attach_hypotheses(&mut self, records: &[TranscriptRecord]) -> Result<usize> {
        let targets = records
            .iter()
            .map(|r| r.resolve(self))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.apply_hypotheses(records.iter().zip(targets)))
    }

    fn apply_hypotheses<'a>(&mut self, items: impl Iterator<Item = (&'a TranscriptRecord, usize)>) -> usize {
        let mut count = 0;
        for (record, position) in items {
            let dialogue = self.dialogue_mut(&record.dialogue_id).expect("resolved");
            dialogue.turns[position].hyp_text = Some(record.hyp.clone());
            count += 1;
        }
        count
    }
}

/// Reads and validates a corpus against the schema file.
pub fn ingest_corpus(corpus_file: impl AsRef<Path>, schema_file: impl AsRef<Path>) -> Result<Corpus> {
    let schema = SlotSchema::load(schema_file)?;
    Corpus::read(corpus_file, schema)
}

/// One transcript record. Exactly one of `user_turn` (index among user
/// turns) or `turn` (position among all turns) addresses the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_turn: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
    pub hyp: String,
}

impl TranscriptRecord {
    pub fn for_user_turn(dialogue_id: impl Into<String>, user_turn: usize, hyp: impl Into<String>) -> Self {
        TranscriptRecord {
            dialogue_id: dialogue_id.into(),
            user_turn: Some(user_turn),
            turn: None,
            hyp: hyp.into(),
        }
    }

    /// Position of the addressed turn in its dialogue.
    pub(crate) fn resolve(&self, corpus: &Corpus) -> Result<usize> {
        let dangling = |turn| Error::DanglingReference {
            dialogue: self.dialogue_id.clone(),
            turn,
        };
        let dialogue = corpus
            .get(&self.dialogue_id)
            .ok_or_else(|| dangling(self.user_turn.or(self.turn).unwrap_or(0)))?;
        match (self.user_turn, self.turn) {
            (Some(idx), None) => dialogue.user_turn_position(idx).ok_or_else(|| dangling(idx)),
            (None, Some(pos)) => match dialogue.turns.get(pos) {
                None => Err(dangling(pos)),
                Some(t) if !t.is_user() => Err(Error::StructureError(format!(
                    "hypothesis for agent turn {pos} of dialogue `{}`",
                    self.dialogue_id
                ))),
                Some(_) => Ok(pos),
            },
            _ => Err(Error::Parse("transcript record needs exactly one of `user_turn` or `turn`".into())),
        }
    }
}

pub fn read_transcripts(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>> {
    let path = path.as_ref();
    jsonl(&read_file(path)?)
        .map(|(line, r)| r.map_err(|e| e.in_file(path, Some(line))))
        .collect()
}

/// Attaches the hypotheses in `transcripts_file`. Idempotent for the same file.
pub fn attach_hypotheses(corpus: &mut Corpus, transcripts_file: impl AsRef<Path>) -> Result<usize> {
    let path = transcripts_file.as_ref();
    let text = read_file(path)?;
    let mut resolved = Vec::new();
    for (line, record) in jsonl::<TranscriptRecord>(&text) {
        let located = |e: Error| e.in_file(path, Some(line));
        let record = record.map_err(located)?;
        let position = record.resolve(corpus).map_err(located)?;
        resolved.push((record, position));
    }
    Ok(corpus.apply_hypotheses(resolved.iter().map(|(r, p)| (r, *p))))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionWarning {
    pub line: usize,
    pub dialogue_id: String,
    pub user_turn: usize,
    pub message: String,
}

#[derive(Deserialize, Serialize)]
struct PredictionRecord {
    dialogue_id: String,
    user_turn: usize,
    state: String,
}

/// Predicted dialogue states keyed by (dialogue id, user-turn index).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    entries: BTreeMap<(String, usize), DialogueState>,
    /// Free-text label naming the tracker that produced the predictions.
    pub provenance: String,
    warnings: Vec<PredictionWarning>,
    rows: usize,
}

impl PredictionSet {
    pub fn new(provenance: impl Into<String>) -> Self {
        PredictionSet {
            provenance: provenance.into(),
            ..Default::default()
        }
    }

    /// The gold states of `corpus` used as predictions.
    pub fn gold(corpus: &Corpus) -> Self {
        let mut set = PredictionSet::new("gold");
        for turn in corpus.user_turns() {
            set.entries
                .insert((turn.dialogue.id.clone(), turn.index), turn.gold_state().clone());
        }
        set.rows = set.entries.len();
        set
    }

    /// Adds a prediction after checking that it refers to a user turn of
    /// `corpus` and that the key is new.
    pub fn insert(&mut self, corpus: &Corpus, dialogue_id: &str, user_turn: usize, state: DialogueState) -> Result<()> {
        let exists = corpus
            .get(dialogue_id)
            .is_some_and(|d| d.user_turn_position(user_turn).is_some());
        if !exists {
            return Err(Error::DanglingReference {
                dialogue: dialogue_id.to_string(),
                turn: user_turn,
            });
        }
        state.validate(corpus.schema())?;
        let key = (dialogue_id.to_string(), user_turn);
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateEntry {
                dialogue: key.0,
                turn: user_turn,
            });
        }
        self.entries.insert(key, state);
        self.rows += 1;
        Ok(())
    }

    /// Parses prediction JSON Lines. Linearized states are read leniently:
    /// malformed segments are skipped and reported as warnings, never
    /// dropping the row itself.
    pub fn from_jsonl(text: &str, corpus: &Corpus, provenance: impl Into<String>, origin: &Path) -> Result<Self> {
        let mut set = PredictionSet::new(provenance);
        for (line, record) in jsonl::<PredictionRecord>(text) {
            let located = |e: Error| e.in_file(origin, Some(line));
            let record = record.map_err(located)?;
            let parsed = parse_state(&record.state, corpus.schema(), ParseMode::Lenient).map_err(located)?;
            set.insert(corpus, &record.dialogue_id, record.user_turn, parsed.state)
                .map_err(located)?;
            set.warnings.extend(parsed.warnings.into_iter().map(|message| PredictionWarning {
                line,
                dialogue_id: record.dialogue_id.clone(),
                user_turn: record.user_turn,
                message,
            }));
        }
        Ok(set)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for ((dialogue_id, user_turn), state) in &self.entries {
            let record = PredictionRecord {
                dialogue_id: dialogue_id.clone(),
                user_turn: *user_turn,
                state: serialize_state(state)?,
            };
            out.push_str(&serde_json::to_string(&record).expect("prediction serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn get(&self, dialogue_id: &str, user_turn: usize) -> Option<&DialogueState> {
        // BTreeMap lookups need an owned key; predictions are small enough.
        self.entries.get(&(dialogue_id.to_string(), user_turn))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &DialogueState)> {
        self.entries.iter().map(|((d, t), s)| (d.as_str(), *t, s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of rows read (or inserted).
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn warnings(&self) -> &[PredictionWarning] {
        &self.warnings
    }
}

/// Reads a predictions file; the provenance label is the file name.
pub fn load_predictions(pred_file: impl AsRef<Path>, corpus: &Corpus) -> Result<PredictionSet> {
    let path = pred_file.as_ref();
    let text = read_file(path)?;
    let provenance = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    PredictionSet::from_jsonl(&text, corpus, provenance, path)
}

/// A named-entity mention. `turn` is the position among all turns of the
/// dialogue; offsets count chars of that turn's current text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub dialogue_id: String,
    pub turn: usize,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    /// Whether the span is in bounds and its surface matches `text`.
    pub fn matches(&self, text: &str) -> bool {
        self.start < self.end && char_slice(text, self.start, self.end) == Some(self.surface.as_str())
    }

    pub(crate) fn stale(&self) -> Error {
        Error::StaleSpan {
            dialogue: self.dialogue_id.clone(),
            turn: self.turn,
            start: self.start,
            end: self.end,
            surface: self.surface.clone(),
        }
    }

    /// Checks the span against the current text of its turn in `corpus`.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        let turn = corpus
            .get(&self.dialogue_id)
            .and_then(|d| d.turns.get(self.turn))
            .ok_or_else(|| Error::DanglingReference {
                dialogue: self.dialogue_id.clone(),
                turn: self.turn,
            })?;
        if self.matches(turn.current_text()) {
            Ok(())
        } else {
            Err(self.stale())
        }
    }
}

pub fn read_entity_spans(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<EntitySpan>> {
    let path = path.as_ref();
    let mut spans = Vec::new();
    for (line, span) in jsonl::<EntitySpan>(&read_file(path)?) {
        let located = |e: Error| e.in_file(path, Some(line));
        let span = span.map_err(located)?;
        span.check(corpus).map_err(located)?;
        spans.push(span);
    }
    Ok(spans)
}
