//! Edit-distance primitives: Levenshtein distance, character alignment,
//! WER/CER and closest-n-gram similarity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::canonicalize;

/// Unit-cost edit distance between two sequences.
pub fn levenshtein_seq<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    const STACK: usize = 32;
    if b.len() < STACK {
        let mut row = [0usize; STACK];
        return levenshtein_row(a, b, &mut row[..=b.len()]);
    }
    levenshtein_row(a, b, &mut vec![0; b.len() + 1])
}

/// Single-row DP; `row` has length `b.len() + 1`.
fn levenshtein_row<T: PartialEq>(a: &[T], b: &[T], row: &mut [usize]) -> usize {
    for (j, r) in row.iter_mut().enumerate() {
        *r = j;
    }
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(x != y)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_seq(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Match { ch: char },
    Substitute { from: char, to: char },
    Delete { ch: char },
    Insert { ch: char },
}

impl EditOp {
    pub fn is_error(&self) -> bool {
        !matches!(self, EditOp::Match { .. })
    }
}

/// An optimal alignment of a reference onto a hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn error_count(&self) -> usize {
        self.ops.iter().filter(|op| op.is_error()).count()
    }

    /// Replays the script over `reference`. Returns `None` if the script
    /// does not consume `reference` exactly.
    pub fn apply(&self, reference: &str) -> Option<String> {
        let mut source = reference.chars();
        let mut out = String::new();
        for op in &self.ops {
            match *op {
                EditOp::Match { ch } => {
                    (source.next()? == ch).then_some(())?;
                    out.push(ch);
                }
                EditOp::Substitute { from, to } => {
                    (source.next()? == from).then_some(())?;
                    out.push(to);
                }
                EditOp::Delete { ch } => (source.next()? == ch).then_some(())?,
                EditOp::Insert { ch } => out.push(ch),
            }
        }
        source.next().is_none().then_some(out)
    }
}

/// One minimal-cost alignment of `reference` onto `hyp`. Backtrace ties are
/// resolved in the fixed order match, substitute, delete, insert.
pub fn align_chars(reference: &str, hyp: &str) -> EditScript {
    let a: Vec<char> = reference.chars().collect();
    let b: Vec<char> = hyp.chars().collect();
    let (m, n) = (a.len(), b.len());
    let width = n + 1;
    let mut dist = vec![0usize; (m + 1) * width];
    for i in 0..=m {
        dist[i * width] = i;
    }
    for j in 0..=n {
        dist[j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = dist[(i - 1) * width + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = dist[(i - 1) * width + j] + 1;
            let ins = dist[i * width + j - 1] + 1;
            dist[i * width + j] = sub.min(del).min(ins);
        }
    }

    let at = |i: usize, j: usize| dist[i * width + j];
    let mut ops = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = at(i, j);
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && here == at(i - 1, j - 1) {
            ops.push(EditOp::Match { ch: a[i - 1] });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && here == at(i - 1, j - 1) + 1 {
            ops.push(EditOp::Substitute {
                from: a[i - 1],
                to: b[j - 1],
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == at(i - 1, j) + 1 {
            ops.push(EditOp::Delete { ch: a[i - 1] });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { ch: b[j - 1] });
            j -= 1;
        }
    }
    ops.reverse();
    EditScript { ops }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    Word,
    Char,
}

impl FromStr for RateUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(RateUnit::Word),
            "char" => Ok(RateUnit::Char),
            other => Err(Error::InvalidConfig(format!("unknown rate unit `{other}`"))),
        }
    }
}

impl fmt::Display for RateUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateUnit::Word => "word",
            RateUnit::Char => "char",
        })
    }
}

/// WER or CER: edit distance over units divided by the reference unit
/// count. Both sides are canonicalized first.
pub fn edit_rate(reference: &str, hyp: &str, unit: RateUnit) -> Result<f64> {
    let (reference, hyp) = (canonicalize(reference), canonicalize(hyp));
    let (distance, len) = match unit {
        RateUnit::Word => {
            let r: Vec<&str> = reference.split(' ').filter(|w| !w.is_empty()).collect();
            let h: Vec<&str> = hyp.split(' ').filter(|w| !w.is_empty()).collect();
            (levenshtein_seq(&r, &h), r.len())
        }
        RateUnit::Char => {
            let r: Vec<char> = reference.chars().collect();
            let h: Vec<char> = hyp.chars().collect();
            (levenshtein_seq(&r, &h), r.len())
        }
    };
    if len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(distance as f64 / len as f64)
}

/// Score in `[0, 100]` of the context n-gram closest to a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub score: f64,
    pub best_ngram: String,
}

/// Range of n-gram lengths searched, relative to the value's word count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramWindow {
    pub below: usize,
    pub above: usize,
}

impl Default for NgramWindow {
    fn default() -> Self {
        NgramWindow { below: 1, above: 2 }
    }
}

/// `100 * (1 - d / max(len_a, len_b))` over chars; two empty strings score 100.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(a, b) as f64 / longest as f64)
}

pub fn best_ngram_similarity(value: &str, context: &str) -> Result<SimilarityScore> {
    best_ngram_similarity_with(value, context, NgramWindow::default())
}

/// Best-scoring word n-gram of `context` against `value`, both
/// canonicalized. Lengths searched are `[max(1, w - below), w + above]`
/// for a `w`-word value, clipped to the context length; a context shorter
/// than the window is scored as a single n-gram. Ties go to the earliest
/// start, then the shortest n-gram.
pub fn best_ngram_similarity_with(value: &str, context: &str, window: NgramWindow) -> Result<SimilarityScore> {
    let value = canonicalize(value);
    if value.is_empty() {
        return Err(Error::EmptyValue);
    }
    let context = canonicalize(context);
    let words: Vec<&str> = context.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return Ok(SimilarityScore {
            score: 0.0,
            best_ngram: String::new(),
        });
    }
    let value_words = value.split(' ').count();
    let lo = value_words.saturating_sub(window.below).max(1).min(words.len());
    let hi = (value_words + window.above).min(words.len()).max(lo);

    let mut best: Option<(f64, String)> = None;
    for start in 0..words.len() {
        for n in lo..=hi {
            if start + n > words.len() {
                break;
            }
            let gram = words[start..start + n].join(" ");
            let score = similarity(&gram, &value);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, gram));
            }
        }
    }
    let (score, best_ngram) = best.expect("at least one n-gram");
    Ok(SimilarityScore { score, best_ngram })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exponential recursion straight from the definition.
    fn naive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    fn naive_str(a: &str, b: &str) -> usize {
        naive(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>())
    }

    #[test]
    fn distance_examples_agree_with_naive_oracle() {
        for (a, b) in [("huntington", "huntingdon"), ("kitten", "sitting"), ("", "abc"), ("flaw", "lawn")] {
            assert_eq!(levenshtein(a, b), naive_str(a, b), "{a} / {b}");
        }
        assert_eq!(levenshtein("huntington", "huntingdon"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn alignment_examples() {
        let script = align_chars("cat", "cot");
        assert_eq!(
            script.ops,
            [
                EditOp::Match { ch: 'c' },
                EditOp::Substitute { from: 'a', to: 'o' },
                EditOp::Match { ch: 't' }
            ]
        );
        assert_eq!(align_chars("abc", "abc").error_count(), 0);
        assert_eq!(align_chars("abc", "abc").ops.len(), 3);
        assert_eq!(
            align_chars("ab", "").ops,
            [EditOp::Delete { ch: 'a' }, EditOp::Delete { ch: 'b' }]
        );
        assert_eq!(align_chars("", "xy").ops, [EditOp::Insert { ch: 'x' }, EditOp::Insert { ch: 'y' }]);
    }

    #[test]
    fn apply_rejects_foreign_reference() {
        let script = align_chars("cat", "cot");
        assert_eq!(script.apply("cat").as_deref(), Some("cot"));
        assert_eq!(script.apply("cut"), None);
        assert_eq!(script.apply("cats"), None);
    }

    #[test]
    fn word_and_char_rates() {
        let wer = edit_rate("i want a cheap hotel", "i want cheap hotels", RateUnit::Word).unwrap();
        assert!((wer - 0.4).abs() < 1e-12);
        assert_eq!(edit_rate("Same  text", "same text", RateUnit::Char).unwrap(), 0.0);
        assert_eq!(edit_rate("same text", "same text", RateUnit::Word).unwrap(), 0.0);
        assert!(matches!(edit_rate("", "x", RateUnit::Word), Err(Error::EmptyReference)));
        assert!(matches!(edit_rate("  ", "x", RateUnit::Char), Err(Error::EmptyReference)));
    }

    #[test]
    fn ngram_similarity_examples() {
        let exact = best_ngram_similarity("boney to boyd", "i am going from boney to boyd today").unwrap();
        assert_eq!(exact.score, 100.0);
        assert_eq!(exact.best_ngram, "boney to boyd");

        let near = best_ngram_similarity("cambridge", "i leave from camebridge").unwrap();
        assert_eq!(near.best_ngram, "camebridge");
        assert!((near.score - 90.0).abs() < 1e-9);

        let empty = best_ngram_similarity("x", "").unwrap();
        assert_eq!(empty.score, 0.0);
        assert_eq!(empty.best_ngram, "");

        assert!(matches!(best_ngram_similarity(" ", "abc"), Err(Error::EmptyValue)));
    }

    #[test]
    fn short_context_is_scored_whole() {
        let s = best_ngram_similarity("boney to boyd", "boyd").unwrap();
        assert_eq!(s.best_ngram, "boyd");
        assert!(s.score < 100.0);
    }

    #[test]
    fn ties_prefer_earliest_ngram() {
        let s = best_ngram_similarity("abcd", "abce abcf").unwrap();
        assert_eq!(s.best_ngram, "abce");
    }
}
