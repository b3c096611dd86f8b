//! Written-to-spoken normalization and `<EOS>` plumbing: terminal
//! punctuation disambiguation, casing/punctuation removal, sliding windows
//! and the reconciliation of overlapping window predictions.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOS: &str = "<EOS>";

pub const DEFAULT_WINDOW: usize = 40;
pub const DEFAULT_OVERLAP: usize = 10;

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "inc.", "corp.", "co.", "ltd.", "mr.", "mrs.", "ms.", "dr.", "st.", "vs.", "etc.", "e.g.",
    "i.e.", "jr.", "sr.", "no.",
];

/// Per-token label: nothing follows the token, or a segment boundary does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "eps")]
    Blank,
    #[serde(rename = "eos")]
    Eos,
}

impl Label {
    pub fn is_eos(self) -> bool {
        self == Label::Eos
    }
}

/// Spoken-form transcript: lowercase words, no punctuation, plus the set of
/// token indices that are followed by `<EOS>`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatedTranscript {
    pub tokens: Vec<String>,
    pub eos_after: BTreeSet<usize>,
}

impl AnnotatedTranscript {
    pub fn new(tokens: Vec<String>, eos_after: BTreeSet<usize>) -> Result<Self> {
        let t = AnnotatedTranscript { tokens, eos_after };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&i) = self.eos_after.iter().next_back() {
            if i >= self.tokens.len() {
                return Err(Error::invalid(
                    "eos_after",
                    format!("index {i} out of range for {} tokens", self.tokens.len()),
                ));
            }
        }
        for tok in &self.tokens {
            if tok == EOS {
                return Err(Error::invalid("tokens", "literal <EOS> token"));
            }
            if tok.is_empty() || tok.chars().any(|c| !is_word_char(c)) {
                return Err(Error::invalid(
                    "tokens",
                    format!("{tok:?} is not a spoken word"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        (0..self.tokens.len())
            .map(|i| {
                if self.eos_after.contains(&i) {
                    Label::Eos
                } else {
                    Label::Blank
                }
            })
            .collect()
    }

    /// Tokens joined by single spaces, without any `<EOS>` marks.
    pub fn spoken_text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Tokens with literal `<EOS>` strings interleaved after marked positions.
    pub fn with_eos_tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.tokens.len() + self.eos_after.len());
        for (i, t) in self.tokens.iter().enumerate() {
            out.push(t.clone());
            if self.eos_after.contains(&i) {
                out.push(EOS.to_string());
            }
        }
        out
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !c.is_uppercase()
}

/// Terminal-punctuation rules:
///
/// * `?` and `!` always end a sentence.
/// * A `.` is internal when the next character is alphanumeric (`e.g`, `3.5`).
/// * A `.` closing a token from the abbreviation list is internal.
/// * In cased text only, a `.` followed by a lowercase letter is internal.
#[derive(Debug, Clone)]
pub struct Disambiguator {
    abbreviations: HashSet<String>,
}

impl Default for Disambiguator {
    fn default() -> Self {
        Disambiguator::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Disambiguator {
    pub fn new<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let abbreviations = abbreviations
            .into_iter()
            .map(|a| {
                let a = a.as_ref().trim().to_lowercase();
                if a.ends_with('.') {
                    a
                } else {
                    format!("{a}.")
                }
            })
            .filter(|a| a.len() > 1)
            .collect();
        Disambiguator { abbreviations }
    }

    /// Byte offsets of sentence-terminal `.`, `?` and `!` marks.
    pub fn terminals(&self, paragraph: &str) -> Vec<usize> {
        let cased = paragraph.chars().any(char::is_uppercase);
        let mut out = Vec::new();
        for (i, c) in paragraph.char_indices() {
            match c {
                '?' | '!' => out.push(i),
                '.' if self.period_is_terminal(paragraph, i, cased) => out.push(i),
                _ => {}
            }
        }
        out
    }

    fn period_is_terminal(&self, text: &str, at: usize, cased: bool) -> bool {
        let rest = &text[at + 1..];
        if rest.chars().next().is_some_and(char::is_alphanumeric) {
            return false;
        }
        let token_start = text[..at]
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace())
            .map_or(0, |(j, c)| j + c.len_utf8());
        let token = text[token_start..=at]
            .trim_start_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        if self.abbreviations.contains(&token) {
            return false;
        }
        if cased {
            if let Some(next) = rest.chars().find(|c| !c.is_whitespace()) {
                if next.is_lowercase() {
                    return false;
                }
            }
        }
        true
    }
}

/// [`Disambiguator::terminals`] with the default abbreviation list.
pub fn disambiguate_terminal(paragraph: &str) -> Vec<usize> {
    Disambiguator::default().terminals(paragraph)
}

/// Lowercases, strips every punctuation character and turns each terminal
/// offset into an `<EOS>` after the token that precedes it.
pub fn normalize_to_spoken(paragraph: &str, terminals: &[usize]) -> AnnotatedTranscript {
    let mut tokens = Vec::new();
    // Byte offset at which each kept token starts.
    let mut starts = Vec::new();
    let mut offset = 0;
    for raw in paragraph.split_inclusive(char::is_whitespace) {
        let word: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if !word.is_empty() {
            tokens.push(word);
            starts.push(offset);
        }
        offset += raw.len();
    }
    let mut eos_after = BTreeSet::new();
    for &t in terminals {
        // Last token starting before the mark.
        let n = starts.partition_point(|&s| s < t);
        if n > 0 {
            eos_after.insert(n - 1);
        }
    }
    AnnotatedTranscript { tokens, eos_after }
}

/// Disambiguate and normalize in one go.
pub fn annotate_paragraph(d: &Disambiguator, paragraph: &str) -> AnnotatedTranscript {
    normalize_to_spoken(paragraph, &d.terminals(paragraph))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub tokens: Vec<String>,
    pub labels: Option<Vec<Label>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Window start offsets: stride `w - overlap`, with the last window pulled
/// back so that it ends exactly on the final token.
pub fn window_starts(n: usize, w: usize, overlap: usize) -> Result<Vec<usize>> {
    if w == 0 {
        return Err(Error::invalid("window", "must be positive"));
    }
    if overlap >= w {
        return Err(Error::invalid(
            "overlap",
            format!("overlap {overlap} must be smaller than window {w}"),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= w {
        return Ok(vec![0]);
    }
    let stride = w - overlap;
    let mut starts = vec![0];
    loop {
        let next = starts[starts.len() - 1] + stride;
        if next + w >= n {
            starts.push(n - w);
            break;
        }
        starts.push(next);
    }
    Ok(starts)
}

pub fn make_windows(
    transcript: &AnnotatedTranscript,
    w: usize,
    overlap: usize,
) -> Result<Vec<Window>> {
    let labels = transcript.labels();
    let n = transcript.len();
    Ok(window_starts(n, w, overlap)?
        .into_iter()
        .map(|s| {
            let e = (s + w).min(n);
            Window {
                start: s,
                tokens: transcript.tokens[s..e].to_vec(),
                labels: Some(labels[s..e].to_vec()),
            }
        })
        .collect())
}

/// Each token takes its label from the window where it sits farthest from
/// an edge; ties go to the earlier window.
pub fn merge_window_predictions(windows: &[Window]) -> Result<Vec<Label>> {
    let n = windows.iter().map(|w| w.start + w.len()).max().unwrap_or(0);
    let mut best: Vec<Option<(usize, Label)>> = vec![None; n];
    for (wi, win) in windows.iter().enumerate() {
        let labels = win
            .labels
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("window {wi} carries no labels")))?;
        if labels.len() != win.len() {
            return Err(Error::Contract(format!(
                "window {wi} has {} labels for {} tokens",
                labels.len(),
                win.len()
            )));
        }
        for (off, &label) in labels.iter().enumerate() {
            let dist = off.min(win.len() - 1 - off);
            let slot = &mut best[win.start + off];
            if slot.is_none_or(|(d, _)| dist > d) {
                *slot = Some((dist, label));
            }
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.map(|(_, l)| l)
                .ok_or_else(|| Error::Contract(format!("token {i} not covered by any window")))
        })
        .collect()
}

pub fn inject_eos(tokens: &[String], labels: &[Label]) -> Result<AnnotatedTranscript> {
    if tokens.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: tokens.len(),
            got: labels.len(),
        });
    }
    let eos_after = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_eos())
        .map(|(i, _)| i)
        .collect();
    Ok(AnnotatedTranscript {
        tokens: tokens.to_vec(),
        eos_after,
    })
}
