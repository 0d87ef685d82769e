//! Corpus data model: slot schema, dialogues, turns and dialogue states,
//! plus ingestion of every external file the toolkit reads.

mod io;
mod schema;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::canonicalize;

pub use io::{
    attach_hypotheses, ingest_corpus, load_predictions, read_entity_spans, read_transcripts, EntitySpan,
    PredictionSet, PredictionWarning, TranscriptRecord,
};
pub use schema::{SlotDef, SlotKind, SlotSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

/// Slot name to canonicalized value. Iteration order is lexicographic by slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DialogueState {
    entries: BTreeMap<String, String>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `value` after canonicalization, replacing any previous value.
    pub fn insert(&mut self, slot: impl Into<String>, value: &str) -> Result<()> {
        let slot = slot.into();
        let value = canonicalize(value);
        if value.is_empty() {
            return Err(Error::EmptySlotValue(slot));
        }
        self.entries.insert(slot, value);
        Ok(())
    }

    pub fn from_pairs<'a, I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, &'a str)>,
        S: Into<String>,
    {
        let mut state = Self::new();
        for (slot, value) in pairs {
            state.insert(slot, value)?;
        }
        Ok(state)
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.entries.get(slot).map(String::as_str)
    }

    pub fn contains(&self, slot: &str) -> bool {
        self.entries.contains_key(slot)
    }

    pub fn remove(&mut self, slot: &str) -> Option<String> {
        self.entries.remove(slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn same_slots(&self, other: &DialogueState) -> bool {
        self.entries.len() == other.entries.len() && self.entries.keys().eq(other.entries.keys())
    }

    pub fn validate(&self, schema: &SlotSchema) -> Result<()> {
        match self.slots().find(|s| !schema.contains(s)) {
            Some(slot) => Err(Error::SchemaViolation(slot.to_string())),
            None => Ok(()),
        }
    }

    pub(crate) fn as_map(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub gold_text: String,
    pub hyp_text: Option<String>,
    /// Output of normalization, entity correction or error injection.
    pub working_text: Option<String>,
    /// Present exactly on user turns.
    pub gold_state: Option<DialogueState>,
}

impl Turn {
    pub fn user(gold_text: impl Into<String>, gold_state: DialogueState) -> Self {
        Turn {
            speaker: Speaker::User,
            gold_text: gold_text.into(),
            hyp_text: None,
            working_text: None,
            gold_state: Some(gold_state),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::Agent,
            gold_text: text.into(),
            hyp_text: None,
            working_text: None,
            gold_state: None,
        }
    }

    pub fn with_hyp(mut self, hyp: impl Into<String>) -> Self {
        self.hyp_text = Some(hyp.into());
        self
    }

    pub fn is_user(&self) -> bool {
        self.speaker == Speaker::User
    }

    /// The most processed text available: working, then hypothesis, then
    /// gold. Agent turns always use their gold text.
    pub fn current_text(&self) -> &str {
        match self.speaker {
            Speaker::Agent => &self.gold_text,
            Speaker::User => self
                .working_text
                .as_deref()
                .or(self.hyp_text.as_deref())
                .unwrap_or(&self.gold_text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    /// Checks turn structure and that every gold state fits `schema`.
    pub fn validate(&self, schema: &SlotSchema) -> Result<()> {
        let structure = |msg: String| Err(Error::StructureError(format!("dialogue `{}`: {msg}", self.id)));
        if self.id.trim().is_empty() {
            return Err(Error::StructureError("empty dialogue id".into()));
        }
        if self.turns.is_empty() {
            return structure("no turns".into());
        }
        for (pos, turn) in self.turns.iter().enumerate() {
            let expected = if pos % 2 == 0 { Speaker::User } else { Speaker::Agent };
            if turn.speaker != expected {
                return structure(format!("turn {pos} breaks user/agent alternation"));
            }
            if turn.gold_text.trim().is_empty() {
                return structure(format!("turn {pos} has empty text"));
            }
            match (&turn.gold_state, turn.speaker) {
                (None, Speaker::User) => return structure(format!("user turn {pos} has no state")),
                (Some(_), Speaker::Agent) => return structure(format!("agent turn {pos} carries a state")),
                (Some(state), Speaker::User) => state.validate(schema)?,
                (None, Speaker::Agent) => {}
            }
        }
        Ok(())
    }

    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.is_user()).count()
    }

    /// Position in `turns` of the `index`-th user turn.
    pub fn user_turn_position(&self, index: usize) -> Option<usize> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_user())
            .nth(index)
            .map(|(pos, _)| pos)
    }

    pub fn user_turn(&self, index: usize) -> Option<&Turn> {
        self.user_turn_position(index).map(|pos| &self.turns[pos])
    }

    pub fn user_turn_mut(&mut self, index: usize) -> Option<&mut Turn> {
        self.user_turn_position(index).map(move |pos| &mut self.turns[pos])
    }

    /// User-turn index of the turn at `position`, if it is a user turn.
    pub fn user_index_of(&self, position: usize) -> Option<usize> {
        let turn = self.turns.get(position)?;
        turn.is_user()
            .then(|| self.turns[..position].iter().filter(|t| t.is_user()).count())
    }

    /// `(user-turn index, position, turn)` for every user turn, in order.
    pub fn user_turns(&self) -> impl Iterator<Item = (usize, usize, &Turn)> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_user())
            .enumerate()
            .map(|(idx, (pos, t))| (idx, pos, t))
    }
}

/// A validated collection of dialogues bound to its slot schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    schema: SlotSchema,
    dialogues: Vec<Dialogue>,
    index: HashMap<String, usize>,
}

/// One user turn of a corpus, as yielded by [`Corpus::user_turns`].
#[derive(Debug, Clone, Copy)]
pub struct UserTurnRef<'a> {
    pub dialogue: &'a Dialogue,
    pub index: usize,
    pub position: usize,
    pub turn: &'a Turn,
}

impl<'a> UserTurnRef<'a> {
    pub fn gold_state(&self) -> &'a DialogueState {
        self.turn.gold_state.as_ref().expect("validated user turn has a state")
    }
}

impl Corpus {
    pub fn new(schema: SlotSchema, dialogues: Vec<Dialogue>) -> Result<Self> {
        let mut index = HashMap::with_capacity(dialogues.len());
        for (i, dialogue) in dialogues.iter().enumerate() {
            dialogue.validate(&schema)?;
            if index.insert(dialogue.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(dialogue.id.clone()));
            }
        }
        Ok(Corpus {
            schema,
            dialogues,
            index,
        })
    }

    pub fn schema(&self) -> &SlotSchema {
        &self.schema
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.index.get(id).map(|&i| &self.dialogues[i])
    }

    pub fn user_turn_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::user_turn_count).sum()
    }

    pub fn user_turns(&self) -> impl Iterator<Item = UserTurnRef<'_>> {
        self.dialogues.iter().flat_map(|dialogue| {
            dialogue.user_turns().map(move |(index, position, turn)| UserTurnRef {
                dialogue,
                index,
                position,
                turn,
            })
        })
    }

    /// Replaces the dialogue with the same id. Only the text variants
    /// (`hyp_text`, `working_text`) may differ from the stored dialogue.
    pub fn replace_dialogue(&mut self, dialogue: Dialogue) -> Result<()> {
        let &i = self.index.get(&dialogue.id).ok_or_else(|| Error::DanglingReference {
            dialogue: dialogue.id.clone(),
            turn: 0,
        })?;
        let current = &self.dialogues[i];
        let same_shape = current.turns.len() == dialogue.turns.len()
            && current.turns.iter().zip(&dialogue.turns).all(|(a, b)| {
                a.speaker == b.speaker && a.gold_text == b.gold_text && a.gold_state == b.gold_state
            });
        if !same_shape {
            return Err(Error::StructureError(format!(
                "replacement for dialogue `{}` changes its gold content",
                dialogue.id
            )));
        }
        self.dialogues[i] = dialogue;
        Ok(())
    }

    pub(crate) fn dialogues_mut(&mut self) -> &mut [Dialogue] {
        &mut self.dialogues
    }

    pub(crate) fn dialogue_mut(&mut self, id: &str) -> Option<&mut Dialogue> {
        let &i = self.index.get(id)?;
        Some(&mut self.dialogues[i])
    }

    /// Sets `working_text` on every user turn from `f`, leaving it unset
    /// where `f` returns `None`.
    pub fn map_working_text<F>(&mut self, mut f: F)
    where
        F: FnMut(&Dialogue, usize, &Turn) -> Option<String>,
    {
        for dialogue in &mut self.dialogues {
            let updates: Vec<(usize, Option<String>)> =
                dialogue.user_turns().map(|(idx, pos, turn)| (pos, f(dialogue, idx, turn))).collect();
            for (pos, text) in updates {
                if let Some(text) = text {
                    dialogue.turns[pos].working_text = Some(text);
                }
            }
        }
    }
}
