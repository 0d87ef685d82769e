//! Small text utilities shared across modules.
//!
//! All offsets handled here are counted in Unicode scalar values (`char`s),
//! never bytes.

/// Lowercase, collapse internal whitespace runs to a single space, trim.
pub fn canonicalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by char offsets `[start, end)`. Returns `None` when out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let begin = byte_offset(s, start)?;
    let finish = byte_offset(s, end)?;
    Some(&s[begin..finish])
}

/// Replace the char range `[start, end)` of `s` with `with`.
pub fn replace_char_range(s: &str, start: usize, end: usize, with: &str) -> Option<String> {
    let begin = byte_offset(s, start)?;
    let finish = byte_offset(s, end)?;
    if begin > finish {
        return None;
    }
    let mut out = String::with_capacity(s.len() + with.len());
    out.push_str(&s[..begin]);
    out.push_str(with);
    out.push_str(&s[finish..]);
    Some(out)
}

fn byte_offset(s: &str, chars: usize) -> Option<usize> {
    if chars == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (i, _) in s.char_indices() {
        if seen == chars {
            return Some(i);
        }
        seen += 1;
    }
    (seen == chars).then_some(s.len())
}

/// A word token: a maximal run of alphanumerics and apostrophes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased form used for matching.
    pub norm: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

pub fn word_tokens(s: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, c) in s.chars().enumerate() {
        if is_word_char(c) {
            current
                .get_or_insert_with(|| (i, String::new()))
                .1
                .extend(c.to_lowercase());
        } else if let Some((start, norm)) = current.take() {
            tokens.push(Token { norm, start, end: i });
        }
    }
    if let Some((start, norm)) = current {
        tokens.push(Token {
            norm,
            start,
            end: char_len(s),
        });
    }
    tokens
}

/// Lowercased word forms of `s`, as produced by [`word_tokens`].
pub fn word_forms(s: &str) -> Vec<String> {
    word_tokens(s).into_iter().map(|t| t.norm).collect()
}

/// First occurrence of `phrase` in `text` as a whole-word, case-insensitive
/// token sequence. Returns the char span in `text`.
pub fn find_phrase(text: &str, phrase: &str) -> Option<(usize, usize)> {
    let needle = word_forms(phrase);
    if needle.is_empty() {
        return None;
    }
    let hay = word_tokens(text);
    find_token_run(&hay, &needle).map(|i| (hay[i].start, hay[i + needle.len() - 1].end))
}

/// Whether `phrase` occurs in `text` on word boundaries (case-insensitive).
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_phrase(text, phrase).is_some()
}

pub(crate) fn find_token_run(hay: &[Token], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()].iter().zip(needle).all(|(t, n)| &t.norm == n))
}
