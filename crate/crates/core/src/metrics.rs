//! WER with an error breakdown, nearest-rank percentiles, segment lengths,
//! EOS latencies and boundary F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Alignment;
use crate::decoder::{Cause, SegmentationOutput};
use crate::punct::EOS;

/// Confusion counts over boundary decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrecisionRecall {
    pub true_pos: usize,
    pub predicted: usize,
    pub reference: usize,
}

impl PrecisionRecall {
    pub fn add(&mut self, predicted: bool, reference: bool) {
        self.predicted += usize::from(predicted);
        self.reference += usize::from(reference);
        self.true_pos += usize::from(predicted && reference);
    }

    pub fn merge(&mut self, other: PrecisionRecall) {
        self.true_pos += other.true_pos;
        self.predicted += other.predicted;
        self.reference += other.reference;
    }

    /// `(precision, recall, f1)`. No predictions and no references scores
    /// 1 across the board; an empty side against a non-empty one scores 0.
    pub fn scores(&self) -> (f64, f64, f64) {
        if self.predicted == 0 && self.reference == 0 {
            return (1.0, 1.0, 1.0);
        }
        let p = if self.predicted == 0 {
            0.0
        } else {
            self.true_pos as f64 / self.predicted as f64
        };
        let r = if self.reference == 0 {
            0.0
        } else {
            self.true_pos as f64 / self.reference as f64
        };
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        (p, r, f1)
    }
}

pub fn seg_f1_counts(predicted: &BTreeSet<usize>, reference: &BTreeSet<usize>) -> PrecisionRecall {
    PrecisionRecall {
        true_pos: predicted.intersection(reference).count(),
        predicted: predicted.len(),
        reference: reference.len(),
    }
}

/// Exact-position boundary matching.
pub fn seg_f1(predicted: &BTreeSet<usize>, reference: &BTreeSet<usize>) -> (f64, f64, f64) {
    seg_f1_counts(predicted, reference).scores()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    /// Set when the reference was empty and the rate is `I / 1`.
    pub empty_reference: bool,
}

impl WerResult {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Word error counts pooled over several utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WerTotals {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl WerTotals {
    pub fn add(&mut self, r: &WerResult) {
        self.substitutions += r.substitutions;
        self.deletions += r.deletions;
        self.insertions += r.insertions;
        self.reference_len += r.reference_len;
    }

    pub fn wer(&self) -> f64 {
        (self.substitutions + self.deletions + self.insertions) as f64
            / self.reference_len.max(1) as f64
    }
}

/// Unit-cost Levenshtein alignment over words, `<EOS>` stripped first.
/// On equal cost the backtrace prefers a substitution over an
/// insertion/deletion pair.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> WerResult {
    let r: Vec<&str> = reference
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| *w != EOS)
        .collect();
    let h: Vec<&str> = hypothesis
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| *w != EOS)
        .collect();
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            s += usize::from(r[i - 1] != h[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    WerResult {
        wer: (s + del + ins) as f64 / n.max(1) as f64,
        substitutions: s,
        deletions: del,
        insertions: ins,
        reference_len: n,
        empty_reference: n == 0 && m > 0,
    }
}

/// Nearest-rank percentile: the element at `ceil(p/100 · n) − 1` of the
/// sorted values. `None` for empty input or `p` outside `(0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    // p·n is exact for integral p, so dividing last keeps whole ranks whole.
    let rank = (p * v.len() as f64 / 100.0).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

/// Segment durations in seconds on the original (unfiltered) timeline.
pub fn segment_lengths(output: &SegmentationOutput) -> Vec<f64> {
    output
        .segments
        .iter()
        .map(|s| (s.boundary_frame - s.start_frame) as f64 * output.frame_ms / 1000.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub segment: usize,
    /// Clamped at zero.
    pub ms: f64,
    pub raw_ms: f64,
}

/// Index of the last word that started before `frame`.
fn last_started_word(alignment: &Alignment, frame: usize) -> Option<usize> {
    let n = alignment.entries.partition_point(|e| e.start_frame < frame);
    n.checked_sub(1)
}

/// Latency of every `eos`/`vad` boundary: emission time minus the end of
/// the last word spoken before the emission. An emission that lands inside
/// that word yields a negative raw value, reported as 0.
pub fn eos_latency_samples(
    output: &SegmentationOutput,
    alignment: &Alignment,
) -> Vec<LatencySample> {
    output
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.cause, Cause::Eos | Cause::Vad))
        .filter_map(|(i, s)| {
            let w = last_started_word(alignment, s.eos_emission_frame)?;
            let end = alignment.entries[w].end_frame;
            let raw_ms = (s.eos_emission_frame as f64 - end as f64) * output.frame_ms;
            Some(LatencySample {
                segment: i,
                ms: raw_ms.max(0.0),
                raw_ms,
            })
        })
        .collect()
}

pub fn eos_latencies(output: &SegmentationOutput, alignment: &Alignment) -> Vec<f64> {
    eos_latency_samples(output, alignment)
        .into_iter()
        .map(|s| s.ms)
        .collect()
}

/// Token positions (boundary after token `i`) of every `eos`/`vad` boundary,
/// placed after the last word that started before the boundary frame.
pub fn predicted_boundaries(output: &SegmentationOutput, alignment: &Alignment) -> BTreeSet<usize> {
    output
        .segments
        .iter()
        .filter(|s| matches!(s.cause, Cause::Eos | Cause::Vad))
        .filter_map(|s| last_started_word(alignment, s.boundary_frame))
        .collect()
}

/// Boundary counts against reference sentence ends. The utterance-final
/// token is excluded on both sides: every segmenter closes it at end of audio.
pub fn boundary_counts(output: &SegmentationOutput, alignment: &Alignment) -> PrecisionRecall {
    let last = alignment.entries.len().checked_sub(1);
    let mut pred = predicted_boundaries(output, alignment);
    let mut reference = alignment.sentence_boundaries.clone();
    if let Some(last) = last {
        pred.remove(&last);
        reference.remove(&last);
    }
    seg_f1_counts(&pred, &reference)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub sl50: Option<f64>,
    pub sl90: Option<f64>,
    pub eos50: Option<f64>,
    pub eos90: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_segments: usize,
}

/// Pools WER counts, segment lengths, latencies and boundary counts over
/// `(output, reference tokens, alignment)` triples.
pub fn report<'a, I>(runs: I) -> MetricsReport
where
    I: IntoIterator<Item = (&'a SegmentationOutput, &'a [String], &'a Alignment)>,
{
    let mut totals = WerTotals::default();
    let mut lengths = Vec::new();
    let mut lat = Vec::new();
    let mut pr = PrecisionRecall::default();
    for (out, reference, alignment) in runs {
        totals.add(&wer(reference, &out.tokens()));
        lengths.extend(segment_lengths(out));
        lat.extend(eos_latencies(out, alignment));
        pr.merge(boundary_counts(out, alignment));
    }
    let (precision, recall, f1) = pr.scores();
    MetricsReport {
        wer: totals.wer(),
        substitutions: totals.substitutions,
        insertions: totals.insertions,
        deletions: totals.deletions,
        sl50: percentile(&lengths, 50.0),
        sl90: percentile(&lengths, 90.0),
        eos50: percentile(&lat, 50.0),
        eos90: percentile(&lat, 90.0),
        precision,
        recall,
        f1,
        n_segments: lengths.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AlignEntry;
    use crate::decoder::Segment;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn wer_identity_and_substitution() {
        let r = wer(&w("a b c"), &w("a b c"));
        assert_eq!(
            (r.wer, r.substitutions, r.deletions, r.insertions),
            (0.0, 0, 0, 0)
        );
        let r = wer(&w("a b c"), &w("a x c"));
        assert_eq!(r.substitutions, 1);
        assert!((r.wer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wer_ignores_eos_marks() {
        let r = wer(&w("a b <EOS> c"), &w("a <EOS> b c <EOS>"));
        assert_eq!(r.errors(), 0);
        assert_eq!(r.reference_len, 3);
    }

    #[test]
    fn wer_prefers_substitution_on_ties() {
        let r = wer(&w("a"), &w("b"));
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 0, 0));
    }

    #[test]
    fn wer_empty_reference_is_flagged() {
        let r = wer(&[] as &[String], &w("a b"));
        assert!(r.empty_reference);
        assert_eq!(r.insertions, 2);
        assert_eq!(r.wer, 2.0);
        assert!(!wer(&[] as &[String], &[] as &[String]).empty_reference);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 50.0), Some(5.0));
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0), Some(3.0));
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 90.0), Some(9.0));
        assert_eq!(percentile(&v, 100.0), Some(10.0));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&v, 0.0), None);
        // 0.07 · 100 rounds above 7 in floating point.
        let w: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&w, 7.0), Some(7.0));
    }

    #[test]
    fn f1_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(seg_f1(&s(&[3, 9]), &s(&[3, 9])), (1.0, 1.0, 1.0));
        let (p, r, f) = seg_f1(&s(&[3]), &s(&[3, 9]));
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(seg_f1(&s(&[]), &s(&[])), (1.0, 1.0, 1.0));
        assert_eq!(seg_f1(&s(&[]), &s(&[1])).2, 0.0);
        assert_eq!(seg_f1(&s(&[2]), &s(&[1])).2, 0.0);
    }

    fn output(segments: Vec<Segment>, total: usize) -> SegmentationOutput {
        SegmentationOutput {
            segments,
            events: vec![],
            total_frames: total,
            frame_ms: 10.0,
        }
    }

    fn seg(start: usize, end: usize, emit: usize, cause: Cause) -> Segment {
        Segment {
            tokens: vec![],
            start_frame: start,
            boundary_frame: end,
            eos_emission_frame: emit,
            cause,
        }
    }

    #[test]
    fn segment_length_examples() {
        let o = output(vec![seg(0, 6500, 6500, Cause::Forced)], 6500);
        assert_eq!(segment_lengths(&o), vec![65.0]);
        let o = output(
            vec![
                seg(0, 300, 300, Cause::Fixed),
                seg(300, 600, 600, Cause::Fixed),
                seg(600, 900, 900, Cause::EndOfAudio),
            ],
            900,
        );
        assert_eq!(segment_lengths(&o), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn latency_examples() {
        let al = Alignment {
            entries: vec![AlignEntry {
                token_index: 0,
                start_frame: 40,
                end_frame: 100,
            }],
            ..Default::default()
        };
        let o = output(
            vec![
                seg(0, 118, 118, Cause::Eos),
                seg(118, 200, 200, Cause::Forced),
                seg(200, 300, 300, Cause::EndOfAudio),
            ],
            300,
        );
        assert_eq!(eos_latencies(&o, &al), vec![180.0]);

        let o = output(
            vec![
                seg(0, 100, 100, Cause::Eos),
                seg(100, 150, 150, Cause::EndOfAudio),
            ],
            150,
        );
        assert_eq!(eos_latencies(&o, &al), vec![0.0]);

        // emitted inside the word: raw negative, clamped
        let o = output(
            vec![
                seg(0, 70, 70, Cause::Eos),
                seg(70, 150, 150, Cause::EndOfAudio),
            ],
            150,
        );
        let s = eos_latency_samples(&o, &al);
        assert_eq!(s[0].ms, 0.0);
        assert_eq!(s[0].raw_ms, -300.0);
    }
}
