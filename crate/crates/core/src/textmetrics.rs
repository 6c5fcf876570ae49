//! Text statistics and the two readability formulas.
//!
//! Counting rules:
//!
//! * Words are maximal runs of letters, digits and apostrophes. A hyphen
//!   between two alphanumeric characters joins the run, so `well-known` is a
//!   single word; `.` joins the same way (`2.5`, `e.g`) and `,` joins
//!   digits (`1,000`). Leading and trailing apostrophes are trimmed.
//! * Sentences end at `.`, `!` or `?` (runs such as `?!` or `...` count once)
//!   followed by optional closing quotes/brackets and then whitespace or end of
//!   text. A single `.` after a known abbreviation does not split. Only
//!   sentence units that contain a word are counted.
//! * Syllables are contiguous vowel groups (`a e i o u y`), minus one for a
//!   terminal silent `e` after a consonant (except `-le`), floored at one.
//! * Complex words have three or more syllables, unless they are capitalized
//!   and not sentence-initial, or the third syllable only comes from an
//!   `-es`/`-ed`/`-ing` suffix on a stem of at most two syllables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReadabilityError {
    #[error("readability undefined: text has {words} words and {sentences} sentences")]
    Undefined { words: usize, sentences: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    #[serde(rename = "w")]
    pub words: usize,
    #[serde(rename = "s")]
    pub sentences: usize,
    #[serde(rename = "sy")]
    pub syllables: usize,
    #[serde(rename = "c")]
    pub complex_words: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScores {
    pub fkgl: f64,
    pub gfi: f64,
}

const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "cf", "approx",
    "fig", "al",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{2019}', '\u{201d}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{2018}', '\u{201c}'];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// A word token and whether it opens its sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub sentence_initial: bool,
}

/// Splits `text` into sentence units (byte ranges), including units without
/// words.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let single_period = j == i + 1 && c == '.';
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        if at_boundary && !(single_period && follows_abbreviation(text, pos)) {
            let end = chars.get(j).map_or(text.len(), |(p, _)| *p);
            spans.push((start, end));
            start = end;
        }
        i = j.max(i + 1);
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

fn follows_abbreviation(text: &str, period_pos: usize) -> bool {
    let before = &text[..period_pos];
    let chunk_start = before
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(p, c)| p + c.len_utf8());
    let chunk = before[chunk_start..]
        .trim_start_matches(OPENERS)
        .to_lowercase();
    ABBREVIATIONS.contains(&chunk.as_str())
}

/// Word tokens of a single span, in order.
fn words_in(span: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = span.char_indices().collect();
    let is_word_char = |c: char| c.is_alphanumeric() || is_apostrophe(c);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i].1) {
            i += 1;
            continue;
        }
        let begin = i;
        while i < chars.len() {
            let c = chars[i].1;
            let next = chars.get(i + 1).map(|(_, n)| *n);
            let prev = if i > begin { chars[i - 1].1 } else { ' ' };
            let joins = match c {
                '-' | '.' => prev.is_alphanumeric() && next.is_some_and(char::is_alphanumeric),
                ',' => prev.is_ascii_digit() && next.is_some_and(|n| n.is_ascii_digit()),
                _ => false,
            };
            if is_word_char(c) || joins {
                i += 1;
            } else {
                break;
            }
        }
        let from = chars[begin].0;
        let to = chars.get(i).map_or(span.len(), |(p, _)| *p);
        let token = span[from..to].trim_matches(is_apostrophe);
        if !token.is_empty() {
            out.push(token);
        }
    }
    out
}

/// Word tokens of `text`, each flagged with whether it starts its sentence.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    for (from, to) in sentence_spans(text) {
        for (k, w) in words_in(&text[from..to]).into_iter().enumerate() {
            tokens.push(Token {
                text: w,
                sentence_initial: k == 0,
            });
        }
    }
    tokens
}

/// Lowercased word tokens, for vocabulary building.
pub fn word_tokens(text: &str) -> Vec<String> {
    words_in(text).into_iter().map(str::to_lowercase).collect()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Syllable estimate for one token; always at least one.
pub fn count_syllables(word: &str) -> usize {
    let lower: Vec<char> = word.to_lowercase().chars().collect();
    if !lower.iter().any(|c| c.is_alphabetic()) {
        return 1;
    }
    let mut groups = 0;
    let mut in_group = false;
    for &c in &lower {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = lower.len();
    if n >= 2 && lower[n - 1] == 'e' {
        let prev = lower[n - 2];
        if prev.is_alphabetic() && !is_vowel(prev) && prev != 'l' {
            groups -= 1;
        }
    }
    groups.max(1)
}

fn suffix_stem(lower: &str) -> Option<&str> {
    ["ing", "es", "ed"]
        .iter()
        .find_map(|s| lower.strip_suffix(s))
        .filter(|stem| !stem.is_empty())
}

/// Complex-word test used for the GFI `C` count.
pub fn is_complex(token: &Token<'_>) -> bool {
    if count_syllables(token.text) < 3 {
        return false;
    }
    let capitalized = token.text.chars().next().is_some_and(char::is_uppercase);
    if capitalized && !token.sentence_initial {
        return false;
    }
    let lower = token.text.to_lowercase();
    !suffix_stem(&lower).is_some_and(|stem| count_syllables(stem) <= 2)
}

pub fn analyze_text(text: &str) -> TextStats {
    let mut stats = TextStats::default();
    for (from, to) in sentence_spans(text) {
        let words = words_in(&text[from..to]);
        if words.is_empty() {
            continue;
        }
        stats.sentences += 1;
        for (k, w) in words.into_iter().enumerate() {
            let token = Token {
                text: w,
                sentence_initial: k == 0,
            };
            stats.words += 1;
            stats.syllables += count_syllables(w);
            if is_complex(&token) {
                stats.complex_words += 1;
            }
        }
    }
    stats
}

fn check_defined(stats: &TextStats) -> Result<(), ReadabilityError> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(ReadabilityError::Undefined {
            words: stats.words,
            sentences: stats.sentences,
        });
    }
    Ok(())
}

/// Flesch–Kincaid Grade Level: `0.39·W/S + 11.8·Sy/W − 15.59`.
pub fn fkgl(stats: &TextStats) -> Result<f64, ReadabilityError> {
    check_defined(stats)?;
    let w = stats.words as f64;
    Ok(0.39 * (w / stats.sentences as f64) + 11.8 * (stats.syllables as f64 / w) - 15.59)
}

/// Gunning Fog Index: `0.4·(W/S + 100·C/W)`.
pub fn gfi(stats: &TextStats) -> Result<f64, ReadabilityError> {
    check_defined(stats)?;
    let w = stats.words as f64;
    Ok(0.4 * (w / stats.sentences as f64 + 100.0 * (stats.complex_words as f64 / w)))
}

pub fn readability(stats: &TextStats) -> Result<ReadabilityScores, ReadabilityError> {
    Ok(ReadabilityScores {
        fkgl: fkgl(stats)?,
        gfi: gfi(stats)?,
    })
}
