//! Segmenting decode of one utterance in the three operating modes.
//!
//! Decoding is simulated over precomputed encoder outputs. This is exact:
//! the causal encoder carries its state across boundaries, and every
//! decision at content frame `t` depends only on features that exist in a
//! live stream by the reported emission frame.

use serde::{Deserialize, Serialize};

use crate::corpus::FrameSequence;
use crate::error::{Error, Result};
use crate::segmenters::{SegmenterKind, SegmenterStrategy};
use crate::tensor::Mat;
use crate::transducer::{
    cascaded_at, encode_cascaded, encode_causal, Head, RnntParams, START_CONTEXT,
};

use super::beam::{eos_neg_log_posterior, step_beam, BeamConfig, Hypothesis, Scorer};
use super::vad::{silence_flags, vad_filter, VAD_INITIAL_KEEP_MS};
use super::{Cause, Event, Segment, SegmentationOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mode {
    /// Decoder 1 supplies words and EOS.
    One,
    /// Decoder 2 supplies words and EOS.
    Two,
    /// Decoder 1 supplies EOS, decoder 2 supplies words.
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn number(self) -> u8 {
        u8::from(self)
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        match m {
            Mode::One => 1,
            Mode::Two => 2,
            Mode::Three => 3,
        }
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(v: u8) -> Result<Mode> {
        match v {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::invalid(
                "mode",
                format!("expected 1, 2 or 3, got {v}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size_pass1: usize,
    pub beam_size_pass2: usize,
    pub pruning_threshold: f64,
    pub max_expansion_depth: usize,
    pub max_segment_s: f64,
    pub mode: Mode,
    pub segmenter: SegmenterKind,
    /// Frames with energy below this are silence, for both the frame
    /// filter and the vad segmenter.
    pub vad_energy_threshold: f64,
    /// Drop silence beyond the first `vad_initial_keep_ms` of each run.
    pub vad_filter: bool,
    pub vad_initial_keep_ms: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size_pass1: 4,
            beam_size_pass2: 8,
            pruning_threshold: 5.0,
            max_expansion_depth: 10,
            max_segment_s: 65.0,
            mode: Mode::One,
            segmenter: SegmenterKind::None,
            vad_energy_threshold: 0.5,
            vad_filter: true,
            vad_initial_keep_ms: VAD_INITIAL_KEEP_MS,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size_pass1 == 0 || self.beam_size_pass2 == 0 {
            return Err(Error::invalid("beam_size", "beam sizes must be >= 1"));
        }
        if !(self.pruning_threshold >= 0.0) {
            return Err(Error::invalid("pruning_threshold", "must be >= 0"));
        }
        if !(self.max_segment_s > 0.0) {
            return Err(Error::invalid("max_segment_s", "must be > 0"));
        }
        if !(self.vad_initial_keep_ms >= 0.0) {
            return Err(Error::invalid("vad_initial_keep_ms", "must be >= 0"));
        }
        self.segmenter.validate()
    }

    fn beam(&self, pass2: bool) -> BeamConfig {
        BeamConfig {
            beam_size: if pass2 {
                self.beam_size_pass2
            } else {
                self.beam_size_pass1
            },
            pruning_threshold: self.pruning_threshold,
            max_expansion_depth: self.max_expansion_depth,
        }
    }
}

/// True once a segment of `elapsed_frames` reaches the duration cap.
pub fn force_finalize_check(elapsed_frames: usize, frame_ms: f64, max_segment_s: f64) -> bool {
    elapsed_frames as f64 * frame_ms >= max_segment_s * 1000.0
}

/// Appends `r` copies of the last row so the cascaded encoder can emit
/// outputs through that row without future frames.
pub fn inject_dummy_frames(causal: &Mat, r: usize) -> Mat {
    let mut out = causal.clone();
    if causal.rows > 0 {
        let last = causal.row(causal.rows - 1).to_vec();
        for _ in 0..r {
            out.push_row(&last);
        }
    }
    out
}

/// Where boundary decisions come from in one decoding pass.
enum Decisions<'a> {
    /// Segmenter and duration cap, with an optional EOS head.
    Live { eos: Option<Head> },
    /// Replays the boundaries of an earlier pass.
    Replay(&'a [Segment]),
}

struct Timeline<'a> {
    n: usize,
    frame_ms: f64,
    silence: &'a [bool],
    /// Filtered index of each original frame, if kept.
    pos: Vec<Option<usize>>,
    index_map: &'a [usize],
}

impl Timeline<'_> {
    /// Emission frame when the deciding decoder lags `lag` kept frames.
    fn emission(&self, boundary: usize, lag: usize) -> usize {
        if lag == 0 {
            return boundary;
        }
        let kept_before = self.index_map.partition_point(|&i| i < boundary);
        if kept_before == 0 {
            return boundary;
        }
        let m = kept_before - 1 + lag;
        match self.index_map.get(m) {
            Some(&orig) => (orig + 1).max(boundary),
            None => self.n,
        }
    }

    fn kept_before(&self, frame: usize) -> usize {
        self.index_map.partition_point(|&i| i < frame)
    }
}

struct PassOutput {
    segments: Vec<Segment>,
    events: Vec<Event>,
}

fn tokens_of(params: &RnntParams, hyp: &Hypothesis) -> Vec<String> {
    hyp.tokens
        .iter()
        .filter_map(|&k| params.label_token(k))
        .map(str::to_string)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_pass(
    params: &RnntParams,
    feats: &Mat,
    wp: Head,
    decisions: Decisions<'_>,
    beam_cfg: &BeamConfig,
    cfg: &DecodeConfig,
    tl: &Timeline<'_>,
    lag: usize,
) -> Result<PassOutput> {
    let mut scorer = Scorer::new(params, wp);
    let mut strategy = SegmenterStrategy::new(cfg.segmenter, tl.frame_ms)?;
    let mut beam = vec![Hypothesis::start(START_CONTEXT)];
    let mut seg_start = 0;
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut replay = match &decisions {
        Decisions::Replay(segs) => segs.iter().peekable(),
        Decisions::Live { .. } => [].iter().peekable(),
    };
    for t in 0..tl.n {
        let mut nlp = None;
        if let Some(m) = tl.pos[t] {
            beam = step_beam(&beam, feats.row(m), &mut scorer, beam_cfg);
            if let Decisions::Live { eos: Some(head) } = decisions {
                if cfg.segmenter.needs_eos() {
                    nlp = Some(eos_neg_log_posterior(
                        params,
                        feats.row(m),
                        beam[0].pred_context,
                        head,
                    ));
                }
            }
        }
        let cause = match &decisions {
            Decisions::Live { eos } => {
                if cfg.segmenter.needs_eos() && eos.is_none() {
                    return Err(Error::Contract("eos segmenter requires an EOS head".into()));
                }
                let has_tokens = !beam[0].tokens.is_empty();
                let fired = if cfg.segmenter.needs_eos() && nlp.is_none() {
                    strategy.should_segment(tl.silence[t], Some(f64::INFINITY), has_tokens)?
                } else {
                    strategy.should_segment(tl.silence[t], nlp, has_tokens)?
                };
                if fired {
                    cfg.segmenter.cause()
                } else if force_finalize_check(t + 1 - seg_start, tl.frame_ms, cfg.max_segment_s) {
                    Some(Cause::Forced)
                } else {
                    None
                }
            }
            Decisions::Replay(_) => match replay.peek() {
                Some(s) if s.boundary_frame == t + 1 && s.cause != Cause::EndOfAudio => {
                    let c = s.cause;
                    replay.next();
                    Some(c)
                }
                _ => None,
            },
        };
        if let Some(cause) = cause {
            let top = &beam[0];
            let emission = match &decisions {
                Decisions::Replay(segs) => segs[segments.len()].eos_emission_frame,
                Decisions::Live { .. } => tl.emission(t + 1, lag),
            };
            events.push(Event {
                segment: segments.len(),
                cause,
                filtered_frame: tl.kept_before(emission),
                emission_frame: emission,
                eos_nlp: if cause == Cause::Eos { nlp } else { None },
            });
            segments.push(Segment {
                tokens: tokens_of(params, top),
                start_frame: seg_start,
                boundary_frame: t + 1,
                eos_emission_frame: emission,
                cause,
            });
            beam = vec![Hypothesis::start(top.pred_context)];
            strategy.reset();
            seg_start = t + 1;
        }
    }
    if seg_start < tl.n {
        events.push(Event {
            segment: segments.len(),
            cause: Cause::EndOfAudio,
            filtered_frame: tl.kept_before(tl.n),
            emission_frame: tl.n,
            eos_nlp: None,
        });
        segments.push(Segment {
            tokens: tokens_of(params, &beam[0]),
            start_frame: seg_start,
            boundary_frame: tl.n,
            eos_emission_frame: tl.n,
            cause: Cause::EndOfAudio,
        });
    }
    Ok(PassOutput { segments, events })
}

/// Decoder-2 inputs when every boundary is finalized by dummy injection.
fn dummy_injected_features(
    params: &RnntParams,
    causal: &Mat,
    segments: &[Segment],
    tl: &Timeline<'_>,
) -> Mat {
    let r = params.right_context;
    let mut out = Mat::zeros(causal.rows, params.casc_bias.cols);
    for s in segments {
        let (a, e) = (
            tl.kept_before(s.start_frame),
            tl.kept_before(s.boundary_frame),
        );
        if a == e {
            continue;
        }
        let padded = inject_dummy_frames(&causal.slice_rows(a, e), r);
        for j in a..e {
            out.row_mut(j)
                .copy_from_slice(&cascaded_at(params, &padded, j - a));
        }
    }
    out
}

/// Decodes one utterance with VAD filtering, beam search and segmentation.
pub fn decode_stream(
    params: &RnntParams,
    frames: &FrameSequence,
    cfg: &DecodeConfig,
) -> Result<SegmentationOutput> {
    cfg.validate()?;
    let n = frames.len();
    if n == 0 {
        return Ok(SegmentationOutput::empty(frames.frame_ms));
    }
    let (kept, index_map, silence) = if cfg.vad_filter {
        let v = vad_filter(frames, cfg.vad_energy_threshold, cfg.vad_initial_keep_ms);
        (v.frames, v.index_map, v.silence)
    } else {
        (
            frames.frames.clone(),
            (0..n).collect(),
            silence_flags(frames, cfg.vad_energy_threshold),
        )
    };
    let mut pos = vec![None; n];
    for (m, &i) in index_map.iter().enumerate() {
        pos[i] = Some(m);
    }
    let tl = Timeline {
        n,
        frame_ms: frames.frame_ms,
        silence: &silence,
        pos,
        index_map: &index_map,
    };
    let (causal, _) = encode_causal(params, &kept, &vec![0.0; params.causal_rec.rows])?;
    let out = match cfg.mode {
        Mode::One => run_pass(
            params,
            &causal,
            Head::WP1,
            Decisions::Live {
                eos: Some(Head::EOS1),
            },
            &cfg.beam(false),
            cfg,
            &tl,
            0,
        )?,
        Mode::Two => {
            let casc = encode_cascaded(params, &causal);
            let lag = params.right_context;
            run_pass(
                params,
                &casc,
                Head::WP2,
                Decisions::Live {
                    eos: Some(Head::EOS2),
                },
                &cfg.beam(true),
                cfg,
                &tl,
                lag,
            )?
        }
        Mode::Three => {
            let first = run_pass(
                params,
                &causal,
                Head::WP1,
                Decisions::Live {
                    eos: Some(Head::EOS1),
                },
                &cfg.beam(false),
                cfg,
                &tl,
                0,
            )?;
            let feats = dummy_injected_features(params, &causal, &first.segments, &tl);
            let second = run_pass(
                params,
                &feats,
                Head::WP2,
                Decisions::Replay(&first.segments),
                &cfg.beam(true),
                cfg,
                &tl,
                0,
            )?;
            debug_assert_eq!(second.segments.len(), first.segments.len());
            PassOutput {
                segments: second.segments,
                events: first.events,
            }
        }
    };
    Ok(SegmentationOutput {
        segments: out.segments,
        events: out.events,
        total_frames: n,
        frame_ms: frames.frame_ms,
    })
}
