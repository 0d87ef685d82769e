//! Character-level ASR error matrix estimation and matrix-guided error
//! injection into non-categorical slot-value spans.

use std::collections::BTreeSet;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SlotKind, TranscriptRecord};
use crate::error::{Error, Result};
use crate::text::find_phrase;
use crate::text_metrics::{align_chars, EditOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Substitute,
    Delete,
    Insert,
}

impl OpKind {
    pub const ALL: [OpKind; 3] = [OpKind::Substitute, OpKind::Delete, OpKind::Insert];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Substitute => "substitute",
            OpKind::Delete => "delete",
            OpKind::Insert => "insert",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "substitute" | "sub" => Ok(OpKind::Substitute),
            "delete" | "del" => Ok(OpKind::Delete),
            "insert" | "ins" => Ok(OpKind::Insert),
            other => Err(Error::InvalidConfig(format!("unknown edit op `{other}`"))),
        }
    }
}

/// Raw alignment counts. `sub_counts[i][j]` counts reference char
/// `alphabet[i]` aligned to hypothesis char `alphabet[j]`, so the diagonal
/// holds matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub alphabet: Vec<char>,
    pub sub_counts: Vec<Vec<u64>>,
    pub del_counts: Vec<u64>,
    pub ins_counts: Vec<u64>,
}

/// Relative frequency of each error op kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeRates {
    pub substitute: f64,
    pub delete: f64,
    pub insert: f64,
}

impl TypeRates {
    pub fn get(&self, op: OpKind) -> f64 {
        match op {
            OpKind::Substitute => self.substitute,
            OpKind::Delete => self.delete,
            OpKind::Insert => self.insert,
        }
    }
}

/// Counts aligned (reference, hypothesis) pairs.
pub fn estimate_error_matrix<R, H>(pairs: &[(R, H)]) -> Result<ErrorMatrix>
where
    R: AsRef<str>,
    H: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let alphabet: BTreeSet<char> = pairs
        .iter()
        .flat_map(|(r, h)| r.as_ref().chars().chain(h.as_ref().chars()))
        .collect();
    let mut matrix = ErrorMatrix::zeros(alphabet.into_iter().collect());
    for (r, h) in pairs {
        for op in align_chars(r.as_ref(), h.as_ref()).ops {
            match op {
                EditOp::Match { ch } => {
                    let i = matrix.index(ch).expect("in alphabet");
                    matrix.sub_counts[i][i] += 1;
                }
                EditOp::Substitute { from, to } => {
                    let (i, j) = (matrix.index(from).expect("in alphabet"), matrix.index(to).expect("in alphabet"));
                    matrix.sub_counts[i][j] += 1;
                }
                EditOp::Delete { ch } => {
                    let i = matrix.index(ch).expect("in alphabet");
                    matrix.del_counts[i] += 1;
                }
                EditOp::Insert { ch } => {
                    let i = matrix.index(ch).expect("in alphabet");
                    matrix.ins_counts[i] += 1;
                }
            }
        }
    }
    Ok(matrix)
}

impl ErrorMatrix {
    pub fn zeros(alphabet: Vec<char>) -> Self {
        let n = alphabet.len();
        ErrorMatrix {
            alphabet,
            sub_counts: vec![vec![0; n]; n],
            del_counts: vec![0; n],
            ins_counts: vec![0; n],
        }
    }

    pub fn index(&self, ch: char) -> Option<usize> {
        self.alphabet.binary_search(&ch).ok()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alphabet.len();
        if self.alphabet.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("matrix alphabet must be sorted and unique".into()));
        }
        if self.sub_counts.len() != n
            || self.sub_counts.iter().any(|row| row.len() != n)
            || self.del_counts.len() != n
            || self.ins_counts.len() != n
        {
            return Err(Error::InvalidConfig(format!("matrix dimensions do not match alphabet of {n}")));
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let matrix: ErrorMatrix = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| e.in_file(path, None))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes") + "\n"
    }

    pub fn type_counts(&self) -> [u64; 3] {
        let sub = self
            .sub_counts
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c).sum::<u64>())
            .sum();
        [sub, self.del_counts.iter().sum(), self.ins_counts.iter().sum()]
    }

    /// Uniform when the matrix holds no errors at all.
    pub fn type_rates(&self) -> TypeRates {
        let [s, d, i] = self.type_counts();
        let total = (s + d + i) as f64;
        if total == 0.0 {
            let third = 1.0 / 3.0;
            return TypeRates {
                substitute: third,
                delete: third,
                insert: third,
            };
        }
        TypeRates {
            substitute: s as f64 / total,
            delete: d as f64 / total,
            insert: i as f64 / total,
        }
    }

    /// Smoothed outcome distribution for reference char `ch`: one entry per
    /// alphabet char (hypothesis char, diagonal = kept) followed by deletion.
    /// Characters outside the alphabet get the pure smoothing row.
    pub fn row_probabilities(&self, ch: char, smoothing: f64) -> Vec<f64> {
        let n = self.alphabet.len();
        let mut row: Vec<f64> = match self.index(ch) {
            Some(i) => self.sub_counts[i]
                .iter()
                .chain(std::iter::once(&self.del_counts[i]))
                .map(|&c| c as f64 + smoothing)
                .collect(),
            None => vec![smoothing; n + 1],
        };
        normalize(&mut row);
        row
    }

    /// Smoothed distribution over inserted characters.
    pub fn insertion_probabilities(&self, smoothing: f64) -> Vec<f64> {
        let mut row: Vec<f64> = self.ins_counts.iter().map(|&c| c as f64 + smoothing).collect();
        normalize(&mut row);
        row
    }

    /// Unnormalized weights for replacing `ch` with a different char.
    fn substitution_weights(&self, ch: char, smoothing: f64) -> Vec<f64> {
        let own = self.index(ch);
        (0..self.alphabet.len())
            .map(|j| {
                if Some(j) == own {
                    0.0
                } else {
                    own.map_or(0.0, |i| self.sub_counts[i][j] as f64) + smoothing
                }
            })
            .collect()
    }
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|p| *p /= total);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditCount {
    /// k ~ Poisson(λ) per span.
    Poisson(f64),
    /// Exactly k edits per span.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub edits: EditCount,
    pub allowed: BTreeSet<OpKind>,
    pub seed: u64,
    /// Additive smoothing applied to every matrix cell before sampling.
    pub smoothing: f64,
    /// Corrupt only the last user turn of each dialogue.
    pub final_turn_only: bool,
}

impl InjectionConfig {
    pub fn new(seed: u64) -> Self {
        InjectionConfig {
            edits: EditCount::Poisson(1.0),
            allowed: OpKind::ALL.into_iter().collect(),
            seed,
            smoothing: 1.0,
            final_turn_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EditCount::Poisson(lambda) = self.edits {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::InvalidConfig(format!("lambda must be a finite value >= 0, got {lambda}")));
            }
        }
        if self.allowed.is_empty() {
            return Err(Error::InvalidConfig("no edit operations allowed".into()));
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return Err(Error::InvalidConfig(format!("smoothing must be >= 0, got {}", self.smoothing)));
        }
        Ok(())
    }
}

/// One applied edit. `position` is the char offset in the text at the time
/// the edit was made; `span` indexes the input span list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub span: usize,
    pub op: OpKind,
    pub position: usize,
    pub from: Option<char>,
    pub to: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub text: String,
    /// Input spans with offsets moved to the corrupted text, in input order.
    pub spans: Vec<(usize, usize)>,
    pub edits: Vec<Edit>,
}

/// Corrupts `spans` of `text` with a generator seeded from `config.seed`.
pub fn inject_errors(text: &str, spans: &[(usize, usize)], matrix: &ErrorMatrix, config: &InjectionConfig) -> Result<Injection> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    inject_errors_with(text, spans, matrix, config, &mut rng)
}

/// Same as [`inject_errors`] drawing from a caller-owned generator. Spans
/// are processed left to right.
pub fn inject_errors_with<R: Rng>(
    text: &str,
    spans: &[(usize, usize)],
    matrix: &ErrorMatrix,
    config: &InjectionConfig,
    rng: &mut R,
) -> Result<Injection> {
    config.validate()?;
    let mut chars: Vec<char> = text.chars().collect();
    if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s > e || e > chars.len()) {
        return Err(Error::InvalidConfig(format!(
            "span ({s}, {e}) outside text of {} chars",
            chars.len()
        )));
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i]);
    for pair in order.windows(2) {
        let (a, b) = (spans[pair[0]], spans[pair[1]]);
        if b.0 < a.1 {
            return Err(Error::SpanOverlap(a, b));
        }
    }

    let poisson = match config.edits {
        EditCount::Poisson(lambda) if lambda > 0.0 => {
            Some(Poisson::new(lambda).map_err(|e| Error::InvalidConfig(e.to_string()))?)
        }
        _ => None,
    };
    let rates = matrix.type_rates();
    let allowed: Vec<OpKind> = config.allowed.iter().copied().collect();
    let mut op_weights: Vec<f64> = allowed.iter().map(|&op| rates.get(op)).collect();
    if op_weights.iter().all(|&w| w == 0.0) {
        op_weights.fill(1.0);
    }
    let op_dist = WeightedIndex::new(&op_weights).expect("positive op weights");
    let ins_weights = matrix.insertion_probabilities(config.smoothing);
    let ins_dist = WeightedIndex::new(&ins_weights).ok();

    let mut updated = spans.to_vec();
    let mut edits = Vec::new();
    let mut shift: isize = 0;
    for &i in &order {
        let start = (spans[i].0 as isize + shift) as usize;
        let mut end = (spans[i].1 as isize + shift) as usize;
        let k = match (config.edits, &poisson) {
            (EditCount::Fixed(k), _) => k,
            (_, Some(p)) => p.sample(rng) as usize,
            _ => 0,
        };
        for _ in 0..k {
            let op = allowed[op_dist.sample(rng)];
            match op {
                OpKind::Delete => {
                    if end == start {
                        continue;
                    }
                    let pos = rng.random_range(start..end);
                    let from = chars.remove(pos);
                    end -= 1;
                    edits.push(Edit {
                        span: i,
                        op,
                        position: pos,
                        from: Some(from),
                        to: None,
                    });
                }
                OpKind::Insert => {
                    let Some(dist) = &ins_dist else { continue };
                    let pos = rng.random_range(start..=end);
                    let to = matrix.alphabet[dist.sample(rng)];
                    chars.insert(pos, to);
                    end += 1;
                    edits.push(Edit {
                        span: i,
                        op,
                        position: pos,
                        from: None,
                        to: Some(to),
                    });
                }
                OpKind::Substitute => {
                    let candidates: Vec<(usize, WeightedIndex<f64>)> = (start..end)
                        .filter_map(|pos| {
                            WeightedIndex::new(matrix.substitution_weights(chars[pos], config.smoothing))
                                .ok()
                                .map(|d| (pos, d))
                        })
                        .collect();
                    if candidates.is_empty() {
                        continue;
                    }
                    let (pos, dist) = &candidates[rng.random_range(0..candidates.len())];
                    let to = matrix.alphabet[dist.sample(rng)];
                    let from = std::mem::replace(&mut chars[*pos], to);
                    edits.push(Edit {
                        span: i,
                        op,
                        position: *pos,
                        from: Some(from),
                        to: Some(to),
                    });
                }
            }
        }
        shift += end as isize - (spans[i].1 as isize + shift);
        updated[i] = (start, end);
    }
    Ok(Injection {
        text: chars.into_iter().collect(),
        spans: updated,
        edits,
    })
}

/// Counts from one augmentation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub user_turns: usize,
    pub corrupted_turns: usize,
    pub targeted_values: usize,
    /// Non-categorical values not found verbatim in their turn.
    pub skipped_missing: usize,
    /// Values whose span coincides with or overlaps one already targeted.
    pub skipped_overlap: usize,
    pub edits: usize,
}

/// An edit tagged with the turn it was applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnEdit {
    pub dialogue_id: String,
    pub user_turn: usize,
    pub slot: String,
    #[serde(flatten)]
    pub edit: Edit,
}

#[derive(Debug, Clone)]
pub struct Augmentation {
    pub corpus: Corpus,
    pub stats: AugmentStats,
    pub edits: Vec<TurnEdit>,
}

/// Per-dialogue generator seed: `seed XOR fnv1a64(dialogue id)`.
pub fn dialogue_seed(seed: u64, dialogue_id: &str) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(dialogue_id.as_bytes());
    seed ^ hasher.finish()
}

/// Sets `working_text` on every user turn to its gold text with errors
/// injected into the spans of its non-categorical gold values. Gold states
/// are left untouched.
pub fn augment_corpus(corpus: &Corpus, matrix: &ErrorMatrix, config: &InjectionConfig) -> Result<Augmentation> {
    config.validate()?;
    matrix.validate()?;
    let mut out = corpus.clone();
    let mut stats = AugmentStats::default();
    let mut log = Vec::new();
    let schema = corpus.schema().clone();
    for dialogue in out.dialogues_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(dialogue_seed(config.seed, &dialogue.id));
        let last = dialogue.user_turn_count().saturating_sub(1);
        let targets: Vec<(usize, usize)> = dialogue.user_turns().map(|(index, pos, _)| (index, pos)).collect();
        for (index, pos) in targets {
            stats.user_turns += 1;
            let turn = &dialogue.turns[pos];
            if config.final_turn_only && index != last {
                dialogue.turns[pos].working_text = Some(turn.gold_text.clone());
                continue;
            }
            let mut spans: Vec<(usize, usize)> = Vec::new();
            let mut slots = Vec::new();
            for (slot, value) in turn.gold_state.iter().flat_map(|s| s.iter()) {
                if schema.kind_of(slot) != Some(SlotKind::NonCategorical) {
                    continue;
                }
                match find_phrase(&turn.gold_text, value) {
                    None => stats.skipped_missing += 1,
                    Some(span) if spans.iter().any(|&(s, e)| span.0 < e && s < span.1) => stats.skipped_overlap += 1,
                    Some(span) => {
                        spans.push(span);
                        slots.push(slot.to_string());
                    }
                }
            }
            stats.targeted_values += spans.len();
            let injection = inject_errors_with(&turn.gold_text, &spans, matrix, config, &mut rng)?;
            if injection.text != turn.gold_text {
                stats.corrupted_turns += 1;
            }
            stats.edits += injection.edits.len();
            log.extend(injection.edits.into_iter().map(|edit| TurnEdit {
                dialogue_id: dialogue.id.clone(),
                user_turn: index,
                slot: slots[edit.span].clone(),
                edit,
            }));
            dialogue.turns[pos].working_text = Some(injection.text);
        }
    }
    Ok(Augmentation {
        corpus: out,
        stats,
        edits: log,
    })
}

/// Uses externally produced noisy texts (e.g. a TTS and ASR round trip) as
/// `working_text`. Turns without a record keep their gold text.
pub fn augment_from_transcripts(corpus: &Corpus, records: &[TranscriptRecord]) -> Result<Augmentation> {
    let targets = records.iter().map(|r| r.resolve(corpus)).collect::<Result<Vec<_>>>()?;
    let mut out = corpus.clone();
    for dialogue in out.dialogues_mut() {
        for turn in dialogue.turns.iter_mut().filter(|t| t.is_user()) {
            turn.working_text = Some(turn.gold_text.clone());
        }
    }
    for (record, pos) in records.iter().zip(targets) {
        let dialogue = out.dialogue_mut(&record.dialogue_id).expect("resolved");
        dialogue.turns[pos].working_text = Some(record.hyp.clone());
    }
    let mut stats = AugmentStats::default();
    for t in out.user_turns() {
        stats.user_turns += 1;
        if t.turn.working_text.as_deref() != Some(t.turn.gold_text.as_str()) {
            stats.corrupted_turns += 1;
        }
    }
    Ok(Augmentation {
        corpus: out,
        stats,
        edits: Vec::new(),
    })
}

/// `dialogue_id,user_turn,slot,op,position,from,to`
pub fn edit_log_csv(edits: &[TurnEdit]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["dialogue_id", "user_turn", "slot", "op", "position", "from", "to"])?;
    let ch = |c: Option<char>| c.map(String::from).unwrap_or_default();
    for e in edits {
        writer.write_record([
            e.dialogue_id.as_str(),
            &e.user_turn.to_string(),
            &e.slot,
            e.edit.op.as_str(),
            &e.edit.position.to_string(),
            &ch(e.edit.from),
            &ch(e.edit.to),
        ])?;
    }
    Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
}
