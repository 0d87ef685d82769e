//! Rule-based transcript normalization: lowercasing, contraction expansion,
//! spelling conventions, punctuation stripping and canonical time formats.
//!
//! All rules live in a [`RuleSet`] loaded from JSON so they can be audited
//! and swapped; [`RuleSet::default`] is the bundled `rules/default.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_RULES: &str = include_str!("../rules/default.json");

static DEFAULT_RULESET: LazyLock<RuleSet> =
    LazyLock::new(|| RuleSet::from_json_str(DEFAULT_RULES).expect("bundled rules are valid"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApostrophePolicy {
    /// `king's` becomes `kings`.
    #[default]
    Join,
    /// `king's` becomes `king s`.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PunctuationPolicy {
    #[serde(default)]
    pub apostrophes: ApostrophePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeFormat {
    /// `5:30 pm`
    #[default]
    #[serde(rename = "12h")]
    TwelveHour,
    /// `17:30`
    #[serde(rename = "24h")]
    TwentyFourHour,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub version: String,
    #[serde(deserialize_with = "unique_map")]
    pub contractions: BTreeMap<String, String>,
    #[serde(deserialize_with = "unique_map")]
    pub spellings: BTreeMap<String, String>,
    #[serde(default)]
    pub punctuation: PunctuationPolicy,
    /// Number words usable in spoken times (`zero` .. `fifty`, plus `oh`).
    #[serde(deserialize_with = "unique_map")]
    pub time_words: BTreeMap<String, u32>,
    #[serde(default)]
    pub time_format: TimeFormat,
}

/// Deserializes a JSON object into a map, rejecting duplicate keys.
fn unique_map<'de, D, V>(deserializer: D) -> std::result::Result<BTreeMap<String, V>, D::Error>
where
    D: Deserializer<'de>,
    V: Deserialize<'de>,
{
    struct UniqueMap<V>(std::marker::PhantomData<V>);

    impl<'de, V: Deserialize<'de>> Visitor<'de> for UniqueMap<V> {
        type Value = BTreeMap<String, V>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map with unique keys")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
            let mut map = BTreeMap::new();
            while let Some((key, value)) = access.next_entry::<String, V>()? {
                if map.contains_key(&key) {
                    return Err(serde::de::Error::custom(format!("duplicate key `{key}`")));
                }
                map.insert(key, value);
            }
            Ok(map)
        }
    }

    deserializer.deserialize_map(UniqueMap(std::marker::PhantomData))
}

impl Default for RuleSet {
    fn default() -> Self {
        DEFAULT_RULESET.clone()
    }
}

impl RuleSet {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let rules: RuleSet = serde_json::from_str(json).map_err(|e| Error::InvalidRules(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&json).map_err(|e| e.in_file(path, None))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }

    /// Table outputs must be plain lowercase words that are not themselves
    /// keys, so applying a table twice equals applying it once.
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidRules(msg));
        let plain = |s: &str| {
            !s.trim().is_empty()
                && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == ' ')
        };
        for (name, table) in [("contractions", &self.contractions), ("spellings", &self.spellings)] {
            for (key, out) in table {
                if key.is_empty() || key.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                    return bad(format!("{name}: key `{key}` must be a single lowercase token"));
                }
                if !plain(out) {
                    return bad(format!("{name}: output `{out}` must be lowercase words"));
                }
                if let Some(w) = out.split_whitespace().find(|w| table.contains_key(*w)) {
                    return bad(format!("{name}: output word `{w}` of `{key}` is itself a key"));
                }
            }
        }
        if let Some(key) = self
            .spellings
            .keys()
            .find(|k| !k.chars().all(|c| c.is_alphanumeric()) || MERIDIEMS.contains(&k.as_str()))
        {
            return bad(format!("spellings: key `{key}` must be alphanumeric and not a meridiem"));
        }
        if let Some((w, v)) = self.time_words.iter().find(|(w, v)| **v > 59 || !plain(w) || w.contains(' ')) {
            return bad(format!("time_words: `{w}` = {v} is not a single word in 0..=59"));
        }
        Ok(())
    }

    /// Full normalization pipeline; see [`normalize_text`].
    pub fn normalize(&self, text: &str) -> String {
        let text = text.to_lowercase();
        let text = map_typography(&text);
        let text = self.expand_contractions(&text);
        let text = DOTTED_MERIDIEM.replace_all(&text, "${1}m");
        // Times first, while `p.m.` and `5.30` still carry their dots.
        let text = self.normalize_times(&text);
        let text = self.strip_punctuation(&text);
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let text = self.apply_spellings(&text);
        self.normalize_times(&text)
    }

    fn expand_contractions(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| {
            let core = word.trim_matches('\'');
            match self.contractions.get(core) {
                Some(expanded) => {
                    let lead = word.len() - word.trim_start_matches('\'').len();
                    let trail = word.len() - word.trim_end_matches('\'').len();
                    out.push_str(&word[..lead]);
                    out.push_str(expanded);
                    out.push_str(&word[word.len() - trail..]);
                }
                None => out.push_str(word),
            }
            word.clear();
        };
        for c in text.chars() {
            if c.is_alphanumeric() || c == '\'' {
                word.push(c);
            } else {
                flush(&mut word, &mut out);
                out.push(c);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    /// Every character that is not a lowercase-able alphanumeric or
    /// whitespace becomes a space, except apostrophes (per policy) and the
    /// colon of a well-formed `H:MM`.
    fn strip_punctuation(&self, text: &str) -> String {
        let chars: Vec<char> = text
            .chars()
            .filter_map(|c| match c {
                '\'' => match self.punctuation.apostrophes {
                    ApostrophePolicy::Join => None,
                    ApostrophePolicy::Split => Some(' '),
                },
                ':' => Some(':'),
                c if c.is_whitespace() || (c.is_alphanumeric() && !c.is_uppercase()) => Some(c),
                _ => Some(' '),
            })
            .collect();
        (0..chars.len())
            .map(|i| match chars[i] {
                ':' if is_clock_colon(&chars, i) => ':',
                ':' => ' ',
                c => c,
            })
            .collect()
    }

    fn apply_spellings(&self, text: &str) -> String {
        text.split(' ')
            .map(|w| self.spellings.get(w).map(String::as_str).unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Rewrites spoken and written time mentions to the configured format;
    /// see [`normalize_times`].
    pub fn normalize_times(&self, text: &str) -> String {
        let text = self.rewrite_word_times(text);
        rewrite_digit_times(&text, self.time_format)
    }

    fn word_value(&self, token: &str) -> Option<u32> {
        self.time_words.get(&token.to_lowercase()).copied()
    }

    fn minutes_at(&self, tokens: &[(usize, usize, &str)], i: usize) -> Vec<(usize, u32)> {
        let value = |k: usize| tokens.get(k).and_then(|t| self.word_value(t.2));
        let mut options = Vec::new();
        if let (Some(a), Some(b)) = (value(i), value(i + 1)) {
            if (1..=9).contains(&b) && matches!(a, 0 | 20 | 30 | 40 | 50) {
                options.push((2, a + b));
            }
        }
        if let Some(a) = value(i).filter(|a| (10..=59).contains(a)) {
            options.push((1, a));
        }
        options.push((0, 0));
        options
    }

    fn rewrite_word_times(&self, text: &str) -> String {
        static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+").unwrap());
        let tokens: Vec<(usize, usize, &str)> = TOKEN
            .find_iter(text)
            .map(|m| (m.start(), m.end(), m.as_str()))
            .collect();
        let mut out = String::with_capacity(text.len());
        let mut copied = 0;
        let mut i = 0;
        while i < tokens.len() {
            let hour = self.word_value(tokens[i].2).filter(|h| (1..=12).contains(h));
            let found = hour.and_then(|hour| {
                self.minutes_at(&tokens, i + 1).into_iter().find_map(|(used, minute)| {
                    let mer_index = i + 1 + used;
                    let (start, _, word) = *tokens.get(mer_index)?;
                    let (meridiem, len) = meridiem_token(word)?;
                    Some((mer_index, start + len, clock_from_meridiem(hour, minute, meridiem)?))
                })
            });
            match found {
                Some((last, end, clock)) => {
                    out.push_str(&text[copied..tokens[i].0]);
                    out.push_str(&clock.format(self.time_format));
                    copied = end;
                    i = last + 1;
                }
                None => i += 1,
            }
        }
        out.push_str(&text[copied..]);
        out
    }
}

static DOTTED_MERIDIEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([ap])\.m\b\.?").unwrap());

const MERIDIEMS: [&str; 6] = ["a.m.", "p.m.", "a.m", "p.m", "am", "pm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Meridiem {
    Am,
    Pm,
}

/// Meridiem form at the start of `s` (case-insensitive) that is not
/// followed by an alphanumeric. Returns its byte length.
fn meridiem_prefix(s: &str) -> Option<(Meridiem, usize)> {
    MERIDIEMS.iter().find_map(|form| {
        let head = s.get(..form.len())?;
        if !head.eq_ignore_ascii_case(form) || s[form.len()..].chars().next().is_some_and(char::is_alphanumeric) {
            return None;
        }
        let meridiem = if head.starts_with(['a', 'A']) { Meridiem::Am } else { Meridiem::Pm };
        Some((meridiem, form.len()))
    })
}

/// A whole whitespace token that is a meridiem, optionally followed by
/// sentence punctuation.
fn meridiem_token(token: &str) -> Option<(Meridiem, usize)> {
    let (meridiem, len) = meridiem_prefix(token)?;
    token[len..]
        .chars()
        .all(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':'))
        .then_some((meridiem, len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Clock {
    hour: u32,
    minute: u32,
}

impl Clock {
    fn format(self, format: TimeFormat) -> String {
        match format {
            TimeFormat::TwelveHour => {
                let h = if self.hour % 12 == 0 { 12 } else { self.hour % 12 };
                let m = if self.hour < 12 { "am" } else { "pm" };
                format!("{h}:{:02} {m}", self.minute)
            }
            TimeFormat::TwentyFourHour => format!("{:02}:{:02}", self.hour, self.minute),
        }
    }
}

/// Hours 1..=12 follow the meridiem; 0 and 13..=23 are read as 24-hour
/// times whatever the meridiem says.
fn clock_from_meridiem(hour: u32, minute: u32, meridiem: Meridiem) -> Option<Clock> {
    if minute > 59 || hour > 23 {
        return None;
    }
    let hour = match (hour, meridiem) {
        (1..=11, Meridiem::Am) => hour,
        (12, Meridiem::Am) => 0,
        (1..=11, Meridiem::Pm) => hour + 12,
        _ => hour,
    };
    Some(Clock { hour, minute })
}

fn clock_24h(hour: u32, minute: u32) -> Option<Clock> {
    (hour <= 23 && minute <= 59).then_some(Clock { hour, minute })
}

/// Whether `chars[i]` (a `:`) sits inside a standalone `H:MM` / `HH:MM`
/// with a valid 24-hour reading.
fn is_clock_colon(chars: &[char], i: usize) -> bool {
    let digit = |k: usize| chars.get(k).and_then(|c| c.to_digit(10).filter(|_| c.is_ascii_digit()));
    let separator = |k: Option<usize>| match k {
        None => true,
        Some(k) => chars.get(k).is_none_or(|c| !(c.is_alphanumeric() || *c == ':')),
    };
    let mut start = i;
    while start > 0 && digit(start - 1).is_some() && i - start < 3 {
        start -= 1;
    }
    let hour_len = i - start;
    if !(1..=2).contains(&hour_len) || !separator(start.checked_sub(1)) {
        return false;
    }
    let (Some(m1), Some(m2)) = (digit(i + 1), digit(i + 2)) else {
        return false;
    };
    if !separator(Some(i + 3)) {
        return false;
    }
    let hour = (start..i).fold(0, |acc, k| acc * 10 + digit(k).unwrap());
    clock_24h(hour, m1 * 10 + m2).is_some()
}

fn rewrite_digit_times(text: &str, format: TimeFormat) -> String {
    static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]+(?:[:.][0-9]+)?").unwrap());
    let mut out = String::with_capacity(text.len());
    let mut copied = 0;
    for m in NUMBER.find_iter(text) {
        if m.start() < copied {
            continue;
        }
        let before = text[..m.start()].chars().next_back();
        if before.is_some_and(|c| c.is_alphanumeric() || c == ':' || c == '.') {
            continue;
        }
        let (hour_digits, separator, minute_digits) = match m.as_str().find([':', '.']) {
            Some(k) => (&m.as_str()[..k], m.as_str().as_bytes()[k], Some(&m.as_str()[k + 1..])),
            None => (m.as_str(), 0, None),
        };
        if hour_digits.len() > 2 || minute_digits.is_some_and(|d| d.len() != 2) {
            continue;
        }
        let hour: u32 = hour_digits.parse().expect("ascii digits");
        let minute: u32 = minute_digits.map_or(0, |d| d.parse().expect("ascii digits"));

        let rest = &text[m.end()..];
        let gap = rest.len() - rest.trim_start().len();
        let meridiem = meridiem_prefix(&rest[gap..]);
        let clock = match meridiem {
            Some((meridiem, _)) => clock_from_meridiem(hour, minute, meridiem),
            None => {
                let mut after = rest.chars();
                let blocked = match after.next() {
                    Some(c) if c.is_alphanumeric() || c == ':' => true,
                    Some('.') => after.next().is_some_and(|c| c.is_ascii_digit()),
                    _ => false,
                };
                if blocked || separator != b':' {
                    continue;
                }
                clock_24h(hour, minute)
            }
        };
        let Some(clock) = clock else { continue };
        out.push_str(&text[copied..m.start()]);
        out.push_str(&clock.format(format));
        copied = m.end() + meridiem.map_or(0, |(_, len)| gap + len);
    }
    out.push_str(&text[copied..]);
    out
}

fn map_typography(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201B}' | '\u{2032}' | '`' | '\u{00B4}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
            '\u{2010}'..='\u{2015}' | '\u{2212}' => '-',
            '\u{2026}' => '.',
            '\u{00A0}' | '\u{2009}' | '\u{202F}' => ' ',
            c => c,
        })
        .collect()
}

/// Lowercase, map typographic quotes and dashes to ASCII, expand
/// contractions, strip punctuation (keeping only clock colons), collapse
/// whitespace, apply the spelling table, then canonicalize times.
pub fn normalize_text(text: &str, rules: &RuleSet) -> String {
    rules.normalize(text)
}

/// Rewrites time mentions with the bundled lexicon in 12-hour format:
/// `5pm` → `5:00 pm`, `17:30` → `5:30 pm`, `five thirty pm` → `5:30 pm`,
/// `00:15` → `12:15 am`. Everything else is left untouched.
pub fn normalize_times(text: &str) -> String {
    DEFAULT_RULESET.normalize_times(text)
}
