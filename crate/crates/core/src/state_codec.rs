//! Linearized dialogue states (`slot1=value1;...;slotn=valuen`) and the
//! `user: ... agent: ...` dialogue-history inputs consumed by a generative
//! state tracker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, DialogueState, SlotSchema, Turn};
use crate::error::{Error, Result};
use crate::text::{canonicalize, char_len};

const SEGMENT_SEP: char = ';';
const VALUE_SEP: char = '=';

/// Slots in lexicographic order, `name=value` joined by `;`.
pub fn serialize_state(state: &DialogueState) -> Result<String> {
    let mut out = String::new();
    for (slot, value) in state.iter() {
        if value.contains(SEGMENT_SEP) {
            return Err(Error::UnserializableValue(slot.to_string()));
        }
        if !out.is_empty() {
            out.push(SEGMENT_SEP);
        }
        out.push_str(slot);
        out.push(VALUE_SEP);
        out.push_str(value);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Any malformed segment or unknown slot is an error.
    Strict,
    /// Bad segments are skipped and reported as warnings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedState {
    pub state: DialogueState,
    pub warnings: Vec<String>,
}

/// Inverse of [`serialize_state`]. Each segment is split on its first `=`,
/// so values may themselves contain `=`. Blank segments are ignored.
pub fn parse_state(text: &str, schema: &SlotSchema, mode: ParseMode) -> Result<ParsedState> {
    let mut state = DialogueState::new();
    let mut warnings = Vec::new();
    for segment in text.split(SEGMENT_SEP) {
        if segment.trim().is_empty() {
            continue;
        }
        let parsed = parse_segment(segment, schema).and_then(|(slot, value)| {
            if state.contains(slot) {
                return Err(Error::MalformedSegment(format!("{} (repeated slot)", segment.trim())));
            }
            state.insert(slot, value)
        });
        if let Err(e) = parsed {
            match mode {
                ParseMode::Strict => return Err(e),
                ParseMode::Lenient => warnings.push(e.to_string()),
            }
        }
    }
    Ok(ParsedState { state, warnings })
}

fn parse_segment<'a>(segment: &'a str, schema: &SlotSchema) -> Result<(&'a str, &'a str)> {
    let (slot, value) = segment
        .split_once(VALUE_SEP)
        .ok_or_else(|| Error::MalformedSegment(segment.to_string()))?;
    let slot = slot.trim();
    if slot.is_empty() || canonicalize(value).is_empty() {
        return Err(Error::MalformedSegment(segment.to_string()));
    }
    if !schema.contains(slot) {
        return Err(Error::UnknownSlot(slot.to_string()));
    }
    Ok((slot, value))
}

/// Character budget for model inputs. Truncation drops the oldest whole
/// user/agent pairs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBudget {
    pub max_chars: usize,
    /// Append the agent turn that follows the current user turn.
    pub include_following_agent: bool,
}

impl Default for InputBudget {
    fn default() -> Self {
        InputBudget {
            max_chars: 3000,
            include_following_agent: false,
        }
    }
}

impl InputBudget {
    pub fn new(max_chars: usize) -> Result<Self> {
        if max_chars == 0 {
            return Err(Error::InvalidConfig("max_chars must be positive".into()));
        }
        Ok(InputBudget {
            max_chars,
            ..Default::default()
        })
    }
}

/// Which text variant fills the user turns of a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Gold,
    Hyp,
    Working,
    /// Gold text for all previous user turns, hypothesis for the current one.
    OracleContext,
}

impl TextSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TextSource::Gold => "gold",
            TextSource::Hyp => "hyp",
            TextSource::Working => "working",
            TextSource::OracleContext => "oracle_context",
        }
    }

    fn user_text<'a>(self, dialogue: &Dialogue, index: usize, current: usize, turn: &'a Turn) -> Result<&'a str> {
        let (text, variant) = match self {
            TextSource::Gold => (Some(turn.gold_text.as_str()), "gold"),
            TextSource::OracleContext if index < current => (Some(turn.gold_text.as_str()), "gold"),
            TextSource::Hyp | TextSource::OracleContext => (turn.hyp_text.as_deref(), "hyp"),
            TextSource::Working => (turn.working_text.as_deref(), "working"),
        };
        text.ok_or_else(|| Error::MissingVariant {
            dialogue: dialogue.id.clone(),
            turn: index,
            variant,
        })
    }
}

impl fmt::Display for TextSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TextSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(TextSource::Gold),
            "hyp" => Ok(TextSource::Hyp),
            "working" => Ok(TextSource::Working),
            "oracle_context" | "oracle-context" => Ok(TextSource::OracleContext),
            other => Err(Error::InvalidConfig(format!("unknown text source `{other}`"))),
        }
    }
}

fn squash_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dialogue history up to user turn `t`, as `user: U1 agent: A1 ... user: Ut`.
///
/// If even the final pair exceeds the budget, its last `max_chars` chars are
/// returned.
pub fn build_model_input(dialogue: &Dialogue, t: usize, source: TextSource, budget: &InputBudget) -> Result<String> {
    if budget.max_chars == 0 {
        return Err(Error::InvalidConfig("max_chars must be positive".into()));
    }
    if dialogue.user_turn_position(t).is_none() {
        return Err(Error::TurnOutOfRange {
            dialogue: dialogue.id.clone(),
            turn: t,
        });
    }
    let mut pairs = Vec::with_capacity(t + 1);
    for (index, position, turn) in dialogue.user_turns().take(t + 1) {
        let mut pair = format!("user: {}", squash_whitespace(source.user_text(dialogue, index, t, turn)?));
        let agent = dialogue.turns.get(position + 1).filter(|a| !a.is_user());
        if let Some(agent) = agent.filter(|_| index < t || budget.include_following_agent) {
            pair.push_str(" agent: ");
            pair.push_str(&squash_whitespace(&agent.gold_text));
        }
        pairs.push(pair);
    }

    // Keep the longest suffix of pairs that fits.
    let mut length = 0;
    let mut first_kept = pairs.len();
    for (i, pair) in pairs.iter().enumerate().rev() {
        let extra = char_len(pair) + usize::from(first_kept < pairs.len());
        if length + extra > budget.max_chars {
            break;
        }
        length += extra;
        first_kept = i;
    }
    if first_kept == pairs.len() {
        let last = pairs.last().expect("at least one pair");
        let skip = char_len(last) - budget.max_chars;
        return Ok(last.chars().skip(skip).collect());
    }
    Ok(pairs[first_kept..].join(" "))
}

/// One line of the model-input file consumed by an external tracker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub dialogue_id: String,
    pub user_turn: usize,
    pub input: String,
}

/// Model inputs for every user turn of the corpus, in corpus order.
pub fn model_inputs(corpus: &Corpus, source: TextSource, budget: &InputBudget) -> Result<Vec<ModelInput>> {
    corpus
        .user_turns()
        .map(|t| {
            Ok(ModelInput {
                dialogue_id: t.dialogue.id.clone(),
                user_turn: t.index,
                input: build_model_input(t.dialogue, t.index, source, budget)?,
            })
        })
        .collect()
}

pub fn model_inputs_to_jsonl(inputs: &[ModelInput]) -> String {
    inputs
        .iter()
        .map(|m| serde_json::to_string(m).expect("model input serializes") + "\n")
        .collect()
}
