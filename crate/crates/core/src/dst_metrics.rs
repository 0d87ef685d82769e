//! Joint-goal accuracy, slot-type accuracy with omission breakdown,
//! per-slot value precision and slot-kind macro summaries.
//!
//! User turns without a prediction are scored as an empty predicted state.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DialogueState, PredictionSet, SlotKind, SlotSchema, UserTurnRef};
use crate::error::Result;

static EMPTY_STATE: LazyLock<DialogueState> = LazyLock::new(DialogueState::new);

fn predicted<'a>(preds: &'a PredictionSet, turn: &UserTurnRef<'_>) -> &'a DialogueState {
    preds.get(&turn.dialogue.id, turn.index).unwrap_or(&EMPTY_STATE)
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of user turns whose predicted state equals the gold state.
pub fn jga(preds: &PredictionSet, corpus: &Corpus) -> f64 {
    let hits = corpus
        .user_turns()
        .filter(|t| predicted(preds, t) == t.gold_state())
        .count();
    rate(hits, corpus.user_turn_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaSummary {
    pub sta: f64,
    /// Gold slots absent from the prediction, over turns failing STA.
    pub missing: usize,
    /// Predicted slots absent from gold, over turns failing STA.
    pub spurious: usize,
    /// `missing / (missing + spurious)`; `None` when there are no slot errors.
    pub omission_share: Option<f64>,
}

/// Fraction of user turns whose predicted slot-name set equals the gold one.
pub fn sta(preds: &PredictionSet, corpus: &Corpus) -> StaSummary {
    let (mut hits, mut missing, mut spurious) = (0, 0, 0);
    for turn in corpus.user_turns() {
        let (pred, gold) = (predicted(preds, &turn), turn.gold_state());
        if pred.same_slots(gold) {
            hits += 1;
            continue;
        }
        missing += gold.slots().filter(|s| !pred.contains(s)).count();
        spurious += pred.slots().filter(|s| !gold.contains(s)).count();
    }
    let errors = missing + spurious;
    StaSummary {
        sta: rate(hits, corpus.user_turn_count()),
        missing,
        spurious,
        omission_share: (errors > 0).then(|| missing as f64 / errors as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotPrecision {
    pub precision: f64,
    pub predicted_count: usize,
    pub correct_count: usize,
}

/// Per-slot precision of predicted values. Slots never predicted are absent.
pub type SlotPrecisionTable = BTreeMap<String, SlotPrecision>;

pub fn slot_precision(preds: &PredictionSet, corpus: &Corpus) -> SlotPrecisionTable {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for turn in corpus.user_turns() {
        let gold = turn.gold_state();
        for (slot, value) in predicted(preds, &turn).iter() {
            let entry = counts.entry(slot.to_string()).or_default();
            entry.0 += 1;
            entry.1 += usize::from(gold.get(slot) == Some(value));
        }
    }
    counts
        .into_iter()
        .map(|(slot, (predicted_count, correct_count))| {
            let p = SlotPrecision {
                precision: rate(correct_count, predicted_count),
                predicted_count,
                correct_count,
            };
            (slot, p)
        })
        .collect()
}

/// Unweighted mean of the defined per-slot precisions of each slot kind.
/// Kinds without any defined precision are absent.
pub fn group_summary(table: &SlotPrecisionTable, schema: &SlotSchema) -> BTreeMap<SlotKind, f64> {
    let mut sums: BTreeMap<SlotKind, (f64, usize)> = BTreeMap::new();
    for (slot, p) in table {
        if let Some(kind) = schema.kind_of(slot) {
            let entry = sums.entry(kind).or_default();
            entry.0 += p.precision;
            entry.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub provenance: String,
    pub turns: usize,
    pub jga: f64,
    pub sta: f64,
    pub omission_share: Option<f64>,
    pub missing_slots: usize,
    pub spurious_slots: usize,
    pub per_slot_precision: SlotPrecisionTable,
    pub group_summary: BTreeMap<SlotKind, f64>,
}

pub fn evaluate(preds: &PredictionSet, corpus: &Corpus) -> MetricReport {
    let sta = sta(preds, corpus);
    let table = slot_precision(preds, corpus);
    MetricReport {
        provenance: preds.provenance.clone(),
        turns: corpus.user_turn_count(),
        jga: jga(preds, corpus),
        sta: sta.sta,
        omission_share: sta.omission_share,
        missing_slots: sta.missing,
        spurious_slots: sta.spurious,
        group_summary: group_summary(&table, corpus.schema()),
        per_slot_precision: table,
    }
}

/// `other - baseline` for every metric both reports define.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub jga: f64,
    pub sta: f64,
    pub group: BTreeMap<SlotKind, f64>,
    pub per_slot: BTreeMap<String, f64>,
}

pub fn compare(baseline: &MetricReport, other: &MetricReport) -> MetricDelta {
    let group = baseline
        .group_summary
        .iter()
        .filter_map(|(k, b)| other.group_summary.get(k).map(|o| (*k, o - b)))
        .collect();
    let per_slot = baseline
        .per_slot_precision
        .iter()
        .filter_map(|(s, b)| {
            other
                .per_slot_precision
                .get(s)
                .map(|o| (s.clone(), o.precision - b.precision))
        })
        .collect();
    MetricDelta {
        jga: other.jga - baseline.jga,
        sta: other.sta - baseline.sta,
        group,
        per_slot,
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per predicted slot: `slot,kind,predicted_count,correct_count,precision`.
    pub fn per_slot_csv(&self, schema: &SlotSchema) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["slot", "kind", "predicted_count", "correct_count", "precision"])?;
        for (slot, p) in &self.per_slot_precision {
            let kind = schema.kind_of(slot).map(SlotKind::as_str).unwrap_or("");
            writer.write_record([
                slot.as_str(),
                kind,
                &p.predicted_count.to_string(),
                &p.correct_count.to_string(),
                &format!("{:.6}", p.precision),
            ])?;
        }
        Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
    }
}
