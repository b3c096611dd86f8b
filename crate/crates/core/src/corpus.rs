//! Reproducible synthetic corpora: punctuated written paragraphs for the
//! text teacher and long-form spoken utterances (feature frames, word
//! alignments, pauses) for the transducer.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::punct::AnnotatedTranscript;
use crate::rng::{fnv1a, splitmix, stream};
use crate::tensor::Mat;

pub const DEFAULT_FRAME_MS: f64 = 10.0;
pub const DEFAULT_FEATURE_DIM: usize = 16;

/// Noise level below which pause frames reliably carry less energy than
/// word frames: with `D` dimensions a pause frame has expected energy
/// `D·σ²` and a word frame `1 + D·σ²`, so the gap holds for any σ, but the
/// per-frame spread stays under the gap only while `σ² · sqrt(2D) < 0.5`.
pub const ENERGY_SEPARATION_MAX_NOISE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarSpec {
    pub vocabulary: Vec<String>,
    /// Inclusive word-count range of a sentence, final word included.
    pub sentence_length_range: (usize, usize),
    pub terminal_punct_weights: BTreeMap<String, f64>,
    pub internal_punct_prob: f64,
    pub abbreviation_tokens: Vec<String>,
    /// Chance that a mid-sentence slot holds an abbreviation token.
    pub abbreviation_prob: f64,
    /// Words that close sentences. Empty means any vocabulary word may.
    pub final_words: Vec<String>,
    /// Chance that a mid-sentence slot draws from `final_words` anyway.
    pub final_word_mid_prob: f64,
    pub sentences_per_paragraph: (usize, usize),
    pub seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        let words = [
            "alpha", "bravo", "delta", "echo", "golf", "hotel", "india", "kilo", "lima", "mike",
            "oscar", "papa",
        ];
        GrammarSpec {
            vocabulary: words.iter().map(|s| s.to_string()).collect(),
            sentence_length_range: (3, 8),
            terminal_punct_weights: BTreeMap::from([
                (".".to_string(), 0.8),
                ("?".to_string(), 0.15),
                ("!".to_string(), 0.05),
            ]),
            internal_punct_prob: 0.1,
            abbreviation_tokens: vec![],
            abbreviation_prob: 0.0,
            final_words: vec!["done".into(), "now".into(), "today".into()],
            final_word_mid_prob: 0.05,
            sentences_per_paragraph: (2, 6),
            seed: 17,
        }
    }
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::invalid("vocabulary", "must not be empty"));
        }
        for w in self.vocabulary.iter().chain(&self.final_words) {
            if w.is_empty() || !w.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase()) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("{w:?} is not a lowercase word"),
                ));
            }
        }
        for a in &self.abbreviation_tokens {
            let core: String = a.chars().filter(|c| c.is_alphanumeric()).collect();
            if core.is_empty() || !a.ends_with('.') {
                return Err(Error::invalid(
                    "abbreviation_tokens",
                    format!("{a:?} must be a word with a trailing period"),
                ));
            }
        }
        let (lo, hi) = self.sentence_length_range;
        if lo < 1 || lo > hi {
            return Err(Error::invalid(
                "sentence_length_range",
                format!("need 1 <= min <= max, got ({lo}, {hi})"),
            ));
        }
        let (plo, phi) = self.sentences_per_paragraph;
        if plo < 1 || plo > phi {
            return Err(Error::invalid(
                "sentences_per_paragraph",
                format!("need 1 <= min <= max, got ({plo}, {phi})"),
            ));
        }
        if self.terminal_punct_weights.is_empty() {
            return Err(Error::invalid(
                "terminal_punct_weights",
                "must not be empty",
            ));
        }
        for (k, w) in &self.terminal_punct_weights {
            if !matches!(k.as_str(), "." | "?" | "!") {
                return Err(Error::invalid(
                    "terminal_punct_weights",
                    format!("unknown mark {k:?}"),
                ));
            }
            if !(0.0..=1.0).contains(w) {
                return Err(Error::invalid(
                    "terminal_punct_weights",
                    format!("weight {w} for {k:?}"),
                ));
            }
        }
        let total: f64 = self.terminal_punct_weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "terminal_punct_weights",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        check_prob("internal_punct_prob", self.internal_punct_prob)?;
        check_prob("abbreviation_prob", self.abbreviation_prob)?;
        check_prob("final_word_mid_prob", self.final_word_mid_prob)?;
        Ok(())
    }

    /// Every spoken word the grammar can produce, in a fixed order.
    pub fn spoken_vocabulary(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let abbrevs = self.abbreviation_tokens.iter().map(|a| spoken_form(a));
        for w in self
            .vocabulary
            .iter()
            .cloned()
            .chain(self.final_words.iter().cloned())
            .chain(abbrevs)
        {
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    }

    fn sample_sentence(&self, rng: &mut ChaCha8Rng) -> Sentence {
        let (lo, hi) = self.sentence_length_range;
        let n = rng.random_range(lo..=hi);
        let mut words = Vec::with_capacity(n);
        for i in 0..n {
            let last = i + 1 == n;
            let w = if last {
                let pool = if self.final_words.is_empty() {
                    &self.vocabulary
                } else {
                    &self.final_words
                };
                pool.choose(rng).unwrap().clone()
            } else if i > 0
                && !self.abbreviation_tokens.is_empty()
                && rng.random_bool(self.abbreviation_prob)
            {
                self.abbreviation_tokens.choose(rng).unwrap().clone()
            } else if !self.final_words.is_empty() && rng.random_bool(self.final_word_mid_prob) {
                self.final_words.choose(rng).unwrap().clone()
            } else {
                self.vocabulary.choose(rng).unwrap().clone()
            };
            let comma = !last && rng.random_bool(self.internal_punct_prob);
            words.push((w, comma));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut terminal = '.';
        for (k, w) in &self.terminal_punct_weights {
            acc += w;
            terminal = k.chars().next().unwrap();
            if u < acc {
                break;
            }
        }
        Sentence { words, terminal }
    }
}

fn check_prob(field: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(field, format!("{p} is not a probability")));
    }
    Ok(())
}

/// Surface word → spoken token (`"inc."` → `"inc"`).
pub fn spoken_form(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Sentence {
    /// Surface word and whether a comma follows it.
    words: Vec<(String, bool)>,
    terminal: char,
}

impl Sentence {
    fn render(&self) -> String {
        let mut out = String::new();
        for (i, (w, comma)) in self.words.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if i == 0 {
                let mut cs = w.chars();
                if let Some(c) = cs.next() {
                    out.extend(c.to_uppercase());
                    out.push_str(cs.as_str());
                }
            } else {
                out.push_str(w);
            }
            if *comma {
                out.push(',');
            }
        }
        out.push(self.terminal);
        out
    }
}

/// A written paragraph together with the spoken transcript it should
/// normalize to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrittenParagraph {
    pub text: String,
    pub truth: AnnotatedTranscript,
}

fn sentences_to_truth(sentences: &[Sentence]) -> AnnotatedTranscript {
    let mut t = AnnotatedTranscript::default();
    for s in sentences {
        for (w, _) in &s.words {
            t.tokens.push(spoken_form(w));
        }
        t.eos_after.insert(t.tokens.len() - 1);
    }
    t
}

pub fn gen_written_paragraphs(
    spec: &GrammarSpec,
    n_paragraphs: usize,
) -> Result<Vec<WrittenParagraph>> {
    spec.validate()?;
    let mut rng = stream(spec.seed, "written");
    let (lo, hi) = spec.sentences_per_paragraph;
    Ok((0..n_paragraphs)
        .map(|_| {
            let n = rng.random_range(lo..=hi);
            let sentences: Vec<Sentence> = (0..n).map(|_| spec.sample_sentence(&mut rng)).collect();
            let text = sentences
                .iter()
                .map(Sentence::render)
                .collect::<Vec<_>>()
                .join(" ");
            WrittenParagraph {
                text,
                truth: sentences_to_truth(&sentences),
            }
        })
        .collect())
}

pub fn gen_written_corpus(spec: &GrammarSpec, n_paragraphs: usize) -> Result<Vec<String>> {
    Ok(gen_written_paragraphs(spec, n_paragraphs)?
        .into_iter()
        .map(|p| p.text)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UtteranceSpec {
    pub n_sentences: usize,
    pub hesitation_prob: f64,
    pub hesitation_ms_range: (f64, f64),
    pub inter_sentence_pause_ms_range: (f64, f64),
    pub intra_word_gap_ms: f64,
    pub word_duration_ms_range: (f64, f64),
    pub noise_std: f64,
    pub frame_ms: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for UtteranceSpec {
    fn default() -> Self {
        UtteranceSpec {
            n_sentences: 2,
            hesitation_prob: 0.0,
            hesitation_ms_range: (600.0, 600.0),
            inter_sentence_pause_ms_range: (300.0, 900.0),
            intra_word_gap_ms: 50.0,
            word_duration_ms_range: (150.0, 300.0),
            noise_std: 0.1,
            frame_ms: DEFAULT_FRAME_MS,
            feature_dim: DEFAULT_FEATURE_DIM,
            seed: 1,
        }
    }
}

fn check_range(field: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
        return Err(Error::invalid(
            field,
            format!("need 0 <= min <= max, got ({lo}, {hi})"),
        ));
    }
    Ok(())
}

impl UtteranceSpec {
    pub fn validate(&self) -> Result<()> {
        check_prob("hesitation_prob", self.hesitation_prob)?;
        check_range("hesitation_ms_range", self.hesitation_ms_range)?;
        check_range(
            "inter_sentence_pause_ms_range",
            self.inter_sentence_pause_ms_range,
        )?;
        check_range("word_duration_ms_range", self.word_duration_ms_range)?;
        if !(self.frame_ms > 0.0 && self.frame_ms.is_finite()) {
            return Err(Error::invalid("frame_ms", "must be positive"));
        }
        if !(self.intra_word_gap_ms >= 0.0) {
            return Err(Error::invalid("intra_word_gap_ms", "must be non-negative"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std", "must be non-negative"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        Ok(())
    }

    /// Frames covering `ms` milliseconds.
    pub fn frames_for(&self, ms: f64) -> usize {
        // Guard against 600/10 landing a hair above 60 in floating point.
        let f = ms / self.frame_ms;
        let r = f.round();
        if (f - r).abs() < 1e-9 {
            r as usize
        } else {
            f.ceil() as usize
        }
    }
}

/// T×D feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Mat,
    pub frame_ms: f64,
}

impl FrameSequence {
    pub fn new(frames: Mat, frame_ms: f64) -> Self {
        FrameSequence { frames, frame_ms }
    }

    pub fn empty(dim: usize, frame_ms: f64) -> Self {
        FrameSequence::new(Mat::zeros(0, dim), frame_ms)
    }

    pub fn len(&self) -> usize {
        self.frames.rows
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn duration_ms(&self) -> f64 {
        self.len() as f64 * self.frame_ms
    }

    /// Sum of squares of one frame.
    pub fn energy(&self, t: usize) -> f64 {
        self.frame(t).iter().map(|x| x * x).sum()
    }

    pub fn slice(&self, from: usize, to: usize) -> FrameSequence {
        FrameSequence::new(self.frames.slice_rows(from, to), self.frame_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignEntry {
    pub token_index: usize,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub entries: Vec<AlignEntry>,
    pub sentence_boundaries: BTreeSet<usize>,
}

impl Alignment {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.end_frame < e.start_frame {
                return Err(Error::invalid(
                    "alignment",
                    format!("entry {i} ends before it starts"),
                ));
            }
            if i > 0 {
                let prev = &self.entries[i - 1];
                if prev.end_frame > e.start_frame || prev.token_index >= e.token_index {
                    return Err(Error::invalid(
                        "alignment",
                        format!("entry {i} overlaps or is out of order"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Millisecond layout of an utterance: the gap before each token, each
/// token's duration and the silence after the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PausePlan {
    pub gaps_ms: Vec<f64>,
    pub durations_ms: Vec<f64>,
    pub trailing_ms: f64,
}

impl PausePlan {
    pub fn alignment(&self, utt: &UtteranceSpec) -> Alignment {
        let mut t = 0;
        let entries = self
            .gaps_ms
            .iter()
            .zip(&self.durations_ms)
            .enumerate()
            .map(|(i, (&gap, &dur))| {
                t += utt.frames_for(gap);
                let start = t;
                t += utt.frames_for(dur);
                AlignEntry {
                    token_index: i,
                    start_frame: start,
                    end_frame: t,
                }
            })
            .collect();
        Alignment {
            entries,
            sentence_boundaries: BTreeSet::new(),
        }
    }

    pub fn total_frames(&self, utt: &UtteranceSpec) -> usize {
        self.gaps_ms
            .iter()
            .chain(&self.durations_ms)
            .map(|&ms| utt.frames_for(ms))
            .sum::<usize>()
            + utt.frames_for(self.trailing_ms)
    }
}

/// Fixed unit-norm feature direction for a token.
pub fn token_direction(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = stream(fnv1a(token.as_bytes()), "token-direction");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn render_frames(
    tokens: &[String],
    plan: &PausePlan,
    utt: &UtteranceSpec,
) -> Result<FrameSequence> {
    utt.validate()?;
    if plan.gaps_ms.len() != tokens.len() || plan.durations_ms.len() != tokens.len() {
        return Err(Error::Dimension {
            what: "pause plan",
            expected: tokens.len(),
            got: plan.gaps_ms.len().min(plan.durations_ms.len()),
        });
    }
    let d = utt.feature_dim;
    let total = plan.total_frames(utt);
    let mut frames = Mat::zeros(total, d);
    let mut t = 0;
    for (i, tok) in tokens.iter().enumerate() {
        t += utt.frames_for(plan.gaps_ms[i]);
        let dir = token_direction(tok, d);
        for _ in 0..utt.frames_for(plan.durations_ms[i]) {
            frames.row_mut(t).copy_from_slice(&dir);
            t += 1;
        }
    }
    if utt.noise_std > 0.0 {
        let mut rng = stream(utt.seed, "frame-noise");
        let normal = Normal::new(0.0, utt.noise_std).expect("validated std");
        for x in frames.data.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok(FrameSequence::new(frames, utt.frame_ms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpokenUtterance {
    pub truth: AnnotatedTranscript,
    pub frames: FrameSequence,
    pub alignment: Alignment,
    pub plan: PausePlan,
}

impl SpokenUtterance {
    pub fn tokens(&self) -> &[String] {
        &self.truth.tokens
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    // Whole milliseconds keep layouts exact in frame arithmetic.
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo.round() as i64..=hi.round() as i64) as f64
    }
}

pub fn gen_spoken_utterance(grammar: &GrammarSpec, utt: &UtteranceSpec) -> Result<SpokenUtterance> {
    grammar.validate()?;
    utt.validate()?;
    let mut rng = stream(splitmix(grammar.seed) ^ utt.seed, "spoken");
    let sentences: Vec<Sentence> = (0..utt.n_sentences)
        .map(|_| grammar.sample_sentence(&mut rng))
        .collect();
    let truth = sentences_to_truth(&sentences);
    let n = truth.tokens.len();
    let mut gaps = Vec::with_capacity(n);
    let mut durations = Vec::with_capacity(n);
    for i in 0..n {
        let sentence_start = i == 0 || truth.eos_after.contains(&(i - 1));
        let gap = if sentence_start {
            draw(&mut rng, utt.inter_sentence_pause_ms_range)
        } else if rng.random_bool(utt.hesitation_prob) {
            draw(&mut rng, utt.hesitation_ms_range)
        } else {
            utt.intra_word_gap_ms
        };
        gaps.push(gap);
        durations.push(draw(&mut rng, utt.word_duration_ms_range));
    }
    let trailing = if n == 0 {
        0.0
    } else {
        draw(&mut rng, utt.inter_sentence_pause_ms_range)
    };
    let plan = PausePlan {
        gaps_ms: gaps,
        durations_ms: durations,
        trailing_ms: trailing,
    };
    let frames = render_frames(&truth.tokens, &plan, utt)?;
    let mut alignment = plan.alignment(utt);
    alignment.sentence_boundaries = truth.eos_after.clone();
    Ok(SpokenUtterance {
        truth,
        frames,
        alignment,
        plan,
    })
}

/// `count` utterances with seeds `utt.seed, utt.seed + 1, ...`.
pub fn gen_spoken_corpus(
    grammar: &GrammarSpec,
    utt: &UtteranceSpec,
    count: usize,
) -> Result<Vec<SpokenUtterance>> {
    (0..count)
        .map(|i| {
            let spec = UtteranceSpec {
                seed: utt.seed.wrapping_add(i as u64),
                ..utt.clone()
            };
            gen_spoken_utterance(grammar, &spec)
        })
        .collect()
}

/// One line of the utterance JSON Lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub tokens: Vec<String>,
    pub eos_positions: Vec<usize>,
    pub frames: Vec<f64>,
    pub feature_dim: usize,
    pub frame_ms: f64,
    /// `[token_index, start_frame, end_frame)` triples.
    pub alignment: Vec<(usize, usize, usize)>,
}

impl From<&SpokenUtterance> for UtteranceRecord {
    fn from(u: &SpokenUtterance) -> Self {
        UtteranceRecord {
            tokens: u.truth.tokens.clone(),
            eos_positions: u.truth.eos_after.iter().copied().collect(),
            frames: u.frames.frames.data.clone(),
            feature_dim: u.frames.dim(),
            frame_ms: u.frames.frame_ms,
            alignment: u
                .alignment
                .entries
                .iter()
                .map(|e| (e.token_index, e.start_frame, e.end_frame))
                .collect(),
        }
    }
}

impl UtteranceRecord {
    pub fn into_utterance(self) -> Result<SpokenUtterance> {
        if self.feature_dim == 0 || !self.frames.len().is_multiple_of(self.feature_dim) {
            return Err(Error::invalid(
                "frames",
                "length is not a multiple of feature_dim",
            ));
        }
        let truth =
            AnnotatedTranscript::new(self.tokens, self.eos_positions.into_iter().collect())?;
        let rows = self.frames.len() / self.feature_dim;
        let alignment = Alignment {
            entries: self
                .alignment
                .into_iter()
                .map(|(token_index, start_frame, end_frame)| AlignEntry {
                    token_index,
                    start_frame,
                    end_frame,
                })
                .collect(),
            sentence_boundaries: truth.eos_after.clone(),
        };
        alignment.validate()?;
        let frame_ms = self.frame_ms;
        // Plan is not serialized; rebuild an equivalent one from frames.
        let mut gaps = Vec::new();
        let mut durations = Vec::new();
        let mut prev_end = 0;
        for e in &alignment.entries {
            gaps.push((e.start_frame - prev_end) as f64 * frame_ms);
            durations.push((e.end_frame - e.start_frame) as f64 * frame_ms);
            prev_end = e.end_frame;
        }
        let plan = PausePlan {
            gaps_ms: gaps,
            durations_ms: durations,
            trailing_ms: (rows.saturating_sub(prev_end)) as f64 * frame_ms,
        };
        Ok(SpokenUtterance {
            truth,
            frames: FrameSequence::new(
                Mat {
                    rows,
                    cols: self.feature_dim,
                    data: self.frames,
                },
                frame_ms,
            ),
            alignment,
            plan,
        })
    }
}

pub fn write_utterances<W: Write>(mut w: W, utts: &[SpokenUtterance]) -> Result<()> {
    for u in utts {
        serde_json::to_writer(&mut w, &UtteranceRecord::from(u))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_utterances<R: BufRead>(r: R) -> Result<Vec<SpokenUtterance>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line)?;
        out.push(rec.into_utterance()?);
    }
    Ok(out)
}
