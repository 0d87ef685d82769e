//! Markdown summary combining metric reports, value-error categories and
//! the similarity histogram.

use std::fmt::Write;

use crate::corpus::{SlotKind, SlotSchema};
use crate::dst_metrics::{compare, MetricReport};
use crate::error_taxonomy::{ErrorCategory, SimilarityHistogram, TaxonomyReport};

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn signed_pct(x: f64) -> String {
    format!("{:+.2}", 100.0 * x)
}

fn or_dash(x: Option<String>) -> String {
    x.unwrap_or_else(|| "-".to_string())
}

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn header(out: &mut String, cells: &[&str]) {
    let cells: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
    out.push_str(&row(&cells));
    out.push_str(&row(&vec!["---".to_string(); cells.len()]));
}

/// Renders the summary. The first report is the baseline for the delta
/// table. Scores are percentages.
pub fn markdown_summary(
    schema: &SlotSchema,
    reports: &[MetricReport],
    taxonomy: Option<&TaxonomyReport>,
    histogram: Option<&SimilarityHistogram>,
) -> String {
    let mut out = String::from("# Dialogue state tracking report\n");

    if !reports.is_empty() {
        out.push_str("\n## Overall\n\n");
        header(&mut out, &["system", "turns", "JGA", "STA", "omission share", "missing", "spurious"]);
        for r in reports {
            out.push_str(&row(&[
                r.provenance.clone(),
                r.turns.to_string(),
                pct(r.jga),
                pct(r.sta),
                or_dash(r.omission_share.map(pct)),
                r.missing_slots.to_string(),
                r.spurious_slots.to_string(),
            ]));
        }

        out.push_str("\n## Slot precision by kind\n\n");
        let mut cols = vec!["system"];
        cols.extend(SlotKind::ALL.iter().map(|k| k.as_str()));
        header(&mut out, &cols);
        for r in reports {
            let mut cells = vec![r.provenance.clone()];
            cells.extend(SlotKind::ALL.iter().map(|k| or_dash(r.group_summary.get(k).map(|&p| pct(p)))));
            out.push_str(&row(&cells));
        }

        if reports.len() > 1 {
            out.push_str(&format!("\n## Change against {}\n\n", reports[0].provenance));
            let mut cols = vec!["system", "JGA", "STA"];
            cols.extend(SlotKind::ALL.iter().map(|k| k.as_str()));
            header(&mut out, &cols);
            for r in &reports[1..] {
                let delta = compare(&reports[0], r);
                let mut cells = vec![r.provenance.clone(), signed_pct(delta.jga), signed_pct(delta.sta)];
                cells.extend(SlotKind::ALL.iter().map(|k| or_dash(delta.group.get(k).map(|&d| signed_pct(d)))));
                out.push_str(&row(&cells));
            }
        }

        out.push_str("\n## Per-slot precision\n\n");
        let mut cols = vec!["slot", "kind"];
        cols.extend(reports.iter().map(|r| r.provenance.as_str()));
        header(&mut out, &cols);
        for def in schema.slots() {
            if reports.iter().all(|r| !r.per_slot_precision.contains_key(&def.name)) {
                continue;
            }
            let mut cells = vec![def.name.clone(), def.kind.to_string()];
            cells.extend(
                reports
                    .iter()
                    .map(|r| or_dash(r.per_slot_precision.get(&def.name).map(|p| pct(p.precision)))),
            );
            out.push_str(&row(&cells));
        }
    }

    if let Some(t) = taxonomy {
        let _ = write!(out, "\n## Non-categorical value errors ({} context)\n\n", t.source);
        header(&mut out, &["category", "count", "share"]);
        for category in ErrorCategory::ALL {
            let count = t.counts.get(&category).copied().unwrap_or(0);
            let share = (t.total > 0).then(|| pct(count as f64 / t.total as f64));
            out.push_str(&row(&[category.to_string(), count.to_string(), or_dash(share)]));
        }
        out.push_str(&row(&["total".into(), t.total.to_string(), String::new()]));
    }

    if let Some(h) = histogram {
        out.push_str("\n## Similarity of context-no-match values\n\n");
        header(&mut out, &["score bin", "corrected", "uncorrected"]);
        for (i, (low, high)) in h.bins.iter().enumerate() {
            let close = if i + 1 == h.bins.len() { "]" } else { ")" };
            out.push_str(&row(&[
                format!("[{low}, {high}{close}"),
                h.corrected[i].to_string(),
                h.uncorrected[i].to_string(),
            ]));
        }
    }
    out
}
