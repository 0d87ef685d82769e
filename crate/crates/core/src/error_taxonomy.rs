//! Classification of non-categorical value errors by whether the tracker
//! got the value right and whether the value was present in its input,
//! plus the similarity histogram and context-ablation inputs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DialogueState, PredictionSet, SlotKind, SlotSchema};
use crate::error::{Error, Result};
use crate::state_codec::{build_model_input, model_inputs, InputBudget, ModelInput, TextSource};
use crate::text::{canonicalize, contains_phrase};
use crate::text_metrics::best_ngram_similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    DsMatchCtxMatch,
    DsMatchCtxNoMatch,
    DsNoMatchCtxMatch,
    DsNoMatchCtxNoMatch,
    Omitted,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::DsMatchCtxMatch,
        ErrorCategory::DsMatchCtxNoMatch,
        ErrorCategory::DsNoMatchCtxMatch,
        ErrorCategory::DsNoMatchCtxNoMatch,
        ErrorCategory::Omitted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::DsMatchCtxMatch => "ds_match_ctx_match",
            ErrorCategory::DsMatchCtxNoMatch => "ds_match_ctx_no_match",
            ErrorCategory::DsNoMatchCtxMatch => "ds_no_match_ctx_match",
            ErrorCategory::DsNoMatchCtxNoMatch => "ds_no_match_ctx_no_match",
            ErrorCategory::Omitted => "omitted",
        }
    }

    pub fn ds_match(self) -> Option<bool> {
        match self {
            ErrorCategory::DsMatchCtxMatch | ErrorCategory::DsMatchCtxNoMatch => Some(true),
            ErrorCategory::DsNoMatchCtxMatch | ErrorCategory::DsNoMatchCtxNoMatch => Some(false),
            ErrorCategory::Omitted => None,
        }
    }

    pub fn ctx_match(self) -> Option<bool> {
        match self {
            ErrorCategory::DsMatchCtxMatch | ErrorCategory::DsNoMatchCtxMatch => Some(true),
            ErrorCategory::DsMatchCtxNoMatch | ErrorCategory::DsNoMatchCtxNoMatch => Some(false),
            ErrorCategory::Omitted => None,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Category of one (turn, gold non-categorical slot) pair. `context` is the
/// tracker input for the turn.
pub fn categorize_value_error(
    slot: &str,
    gold: &str,
    pred: &DialogueState,
    context: &str,
    schema: &SlotSchema,
) -> Result<ErrorCategory> {
    match schema.kind_of(slot) {
        Some(SlotKind::NonCategorical) => {}
        Some(kind) => return Err(Error::WrongSlotKind(format!("`{slot}` is {kind}, not non_categorical"))),
        None => return Err(Error::UnknownSlot(slot.to_string())),
    }
    let Some(predicted) = pred.get(slot) else {
        return Ok(ErrorCategory::Omitted);
    };
    let ds = canonicalize(predicted) == canonicalize(gold);
    let ctx = contains_phrase(context, gold);
    Ok(match (ds, ctx) {
        (true, true) => ErrorCategory::DsMatchCtxMatch,
        (true, false) => ErrorCategory::DsMatchCtxNoMatch,
        (false, true) => ErrorCategory::DsNoMatchCtxMatch,
        (false, false) => ErrorCategory::DsNoMatchCtxNoMatch,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorizedValue {
    pub dialogue_id: String,
    pub user_turn: usize,
    pub slot: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub category: ErrorCategory,
    #[serde(skip)]
    context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub source: TextSource,
    pub total: usize,
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub instances: Vec<CategorizedValue>,
}

/// Categorizes every (user turn, gold non-categorical slot) pair, using the
/// model input rebuilt from `source` as context. Turns without a prediction
/// count as empty states.
pub fn taxonomy_report(
    preds: &PredictionSet,
    corpus: &Corpus,
    source: TextSource,
    budget: &InputBudget,
) -> Result<TaxonomyReport> {
    let schema = corpus.schema();
    let empty = DialogueState::new();
    let mut counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let mut instances = Vec::new();
    for t in corpus.user_turns() {
        let targets: Vec<(&str, &str)> = t
            .gold_state()
            .iter()
            .filter(|(slot, _)| schema.kind_of(slot) == Some(SlotKind::NonCategorical))
            .collect();
        if targets.is_empty() {
            continue;
        }
        let context = build_model_input(t.dialogue, t.index, source, budget)?;
        let pred = preds.get(&t.dialogue.id, t.index).unwrap_or(&empty);
        for (slot, gold) in targets {
            let category = categorize_value_error(slot, gold, pred, &context, schema)?;
            *counts.get_mut(&category).expect("all categories present") += 1;
            instances.push(CategorizedValue {
                dialogue_id: t.dialogue.id.clone(),
                user_turn: t.index,
                slot: slot.to_string(),
                gold: gold.to_string(),
                predicted: pred.get(slot).map(str::to_string),
                category,
                context: context.clone(),
            });
        }
    }
    Ok(TaxonomyReport {
        source,
        total: instances.len(),
        counts,
        instances,
    })
}

impl TaxonomyReport {
    /// `category,count`, every category listed, followed by a `total` row.
    pub fn counts_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["category", "count"])?;
        for (category, count) in &self.counts {
            writer.write_record([category.as_str(), &count.to_string()])?;
        }
        writer.write_record(["total", &self.total.to_string()])?;
        Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// One context-no-match instance with its closest context n-gram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub dialogue_id: String,
    pub user_turn: usize,
    pub slot: String,
    pub gold: String,
    pub predicted: String,
    pub best_ngram: String,
    pub score: f64,
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub bin_width: f64,
    /// `(low, high)` per bin; the last bin is closed on the right.
    pub bins: Vec<(f64, f64)>,
    pub corrected: Vec<usize>,
    pub uncorrected: Vec<usize>,
    pub rows: Vec<SimilarityRow>,
}

impl SimilarityHistogram {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width <= 100.0) {
            return Err(Error::InvalidConfig(format!("bin width must be in (0, 100], got {bin_width}")));
        }
        let count = (100.0 / bin_width).ceil() as usize;
        let bins: Vec<(f64, f64)> = (0..count)
            .map(|i| (i as f64 * bin_width, ((i + 1) as f64 * bin_width).min(100.0)))
            .collect();
        Ok(SimilarityHistogram {
            bin_width,
            corrected: vec![0; bins.len()],
            uncorrected: vec![0; bins.len()],
            bins,
            rows: Vec::new(),
        })
    }

    pub fn bin_of(&self, score: f64) -> usize {
        ((score / self.bin_width).floor() as usize).min(self.bins.len() - 1)
    }

    pub fn add(&mut self, row: SimilarityRow) {
        let bin = self.bin_of(row.score);
        if row.corrected {
            self.corrected[bin] += 1;
        } else {
            self.uncorrected[bin] += 1;
        }
        self.rows.push(row);
    }

    /// `bin_low,bin_high,corrected_count,uncorrected_count`
    pub fn bins_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["bin_low", "bin_high", "corrected_count", "uncorrected_count"])?;
        for (i, (low, high)) in self.bins.iter().enumerate() {
            writer.write_record([
                fmt_num(*low),
                fmt_num(*high),
                self.corrected[i].to_string(),
                self.uncorrected[i].to_string(),
            ])?;
        }
        Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
    }

    pub fn rows_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record([
            "dialogue_id",
            "user_turn",
            "slot",
            "gold",
            "predicted",
            "best_ngram",
            "score",
            "corrected",
        ])?;
        for r in &self.rows {
            writer.write_record([
                r.dialogue_id.as_str(),
                &r.user_turn.to_string(),
                &r.slot,
                &r.gold,
                &r.predicted,
                &r.best_ngram,
                &format!("{:.4}", r.score),
                &r.corrected.to_string(),
            ])?;
        }
        Ok(String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("utf-8 csv"))
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

/// Histogram of best n-gram similarity between gold values and the context
/// for context-no-match instances, split by whether the tracker recovered
/// the gold value. Omitted slots are not included.
pub fn similarity_distribution(report: &TaxonomyReport, bin_width: f64) -> Result<SimilarityHistogram> {
    let mut histogram = SimilarityHistogram::new(bin_width)?;
    for inst in &report.instances {
        if inst.category.ctx_match() != Some(false) {
            continue;
        }
        let best = best_ngram_similarity(&inst.gold, &inst.context)?;
        histogram.add(SimilarityRow {
            dialogue_id: inst.dialogue_id.clone(),
            user_turn: inst.user_turn,
            slot: inst.slot.clone(),
            gold: inst.gold.clone(),
            predicted: inst.predicted.clone().unwrap_or_default(),
            best_ngram: best.best_ngram,
            score: best.score,
            corrected: inst.category.ds_match() == Some(true),
        });
    }
    Ok(histogram)
}

/// Line-aligned tracker inputs for the context ablation: condition A uses
/// hypotheses for every user turn, condition B uses gold text for the
/// previous user turns and the hypothesis for the current one.
pub fn build_context_ablation(corpus: &Corpus, budget: &InputBudget) -> Result<(Vec<ModelInput>, Vec<ModelInput>)> {
    if let Some(t) = corpus.user_turns().find(|t| t.turn.hyp_text.is_none()) {
        return Err(Error::MissingVariant {
            dialogue: t.dialogue.id.clone(),
            turn: t.index,
            variant: "hyp",
        });
    }
    Ok((
        model_inputs(corpus, TextSource::Hyp, budget)?,
        model_inputs(corpus, TextSource::OracleContext, budget)?,
    ))
}
