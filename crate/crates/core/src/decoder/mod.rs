//! Streaming beam search with joint end-of-segment emission.
//!
//! All frame indices in [`SegmentationOutput`] refer to the original
//! (pre-VAD) timeline. Frame positions that mark a boundary are exclusive
//! counts: a decision taken after processing frame index `e` is reported
//! as frame `e + 1`.

mod beam;
mod session;
mod vad;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use beam::{eos_neg_log_posterior, rank, step_beam, BeamConfig, Hypothesis, Scorer};
pub use session::{decode_stream, force_finalize_check, inject_dummy_frames, DecodeConfig, Mode};
pub use vad::{frames_ceil, silence_flags, vad_filter, VadFiltered, VAD_INITIAL_KEEP_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cause {
    Eos,
    Vad,
    Fixed,
    Forced,
    EndOfAudio,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Eos => "eos",
            Cause::Vad => "vad",
            Cause::Fixed => "fixed",
            Cause::Forced => "forced",
            Cause::EndOfAudio => "end-of-audio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub tokens: Vec<String>,
    /// First original frame covered by this segment.
    pub start_frame: usize,
    /// One past the last original frame covered by this segment.
    pub boundary_frame: usize,
    /// Original frame count at which the boundary became known to the user.
    pub eos_emission_frame: usize,
    pub cause: Cause,
}

/// One boundary decision, kept for latency audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub segment: usize,
    pub cause: Cause,
    /// Frames seen by the decoder (post-VAD) when the decision fired.
    pub filtered_frame: usize,
    /// Same instant on the original timeline.
    pub emission_frame: usize,
    /// Negative log EOS posterior that fired the decision, if any.
    pub eos_nlp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOutput {
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    pub total_frames: usize,
    pub frame_ms: f64,
}

impl SegmentationOutput {
    pub fn empty(frame_ms: f64) -> Self {
        SegmentationOutput {
            segments: Vec::new(),
            events: Vec::new(),
            total_frames: 0,
            frame_ms,
        }
    }

    /// Concatenated tokens of every segment.
    pub fn tokens(&self) -> Vec<String> {
        self.segments
            .iter()
            .flat_map(|s| s.tokens.iter().cloned())
            .collect()
    }

    pub fn eos_emission_frames(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.cause == Cause::Eos)
            .map(|s| s.eos_emission_frame)
            .collect()
    }

    /// Checks contiguity, coverage and ordering of segment ranges.
    pub fn check_partition(&self) -> std::result::Result<(), String> {
        let mut next = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start_frame != next {
                return Err(format!(
                    "segment {i} starts at {} but previous ended at {next}",
                    s.start_frame
                ));
            }
            if s.boundary_frame <= s.start_frame {
                return Err(format!("segment {i} is empty"));
            }
            next = s.boundary_frame;
        }
        if !self.segments.is_empty() && next != self.total_frames {
            return Err(format!(
                "segments cover {next} of {} frames",
                self.total_frames
            ));
        }
        Ok(())
    }

    /// One JSON object per segment: `{tokens, boundary_ms, eos_emission_ms, cause}`.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        self.write_lines(w, None)
    }

    /// As [`Self::write_jsonl`], with an `utterance` index on every line.
    pub fn write_jsonl_for<W: Write>(&self, w: W, utterance: usize) -> Result<()> {
        self.write_lines(w, Some(utterance))
    }

    fn write_lines<W: Write>(&self, mut w: W, utterance: Option<usize>) -> Result<()> {
        for s in &self.segments {
            let line = SegmentLine {
                utterance,
                tokens: s.tokens.clone(),
                boundary_ms: s.boundary_frame as f64 * self.frame_ms,
                eos_emission_ms: s.eos_emission_frame as f64 * self.frame_ms,
                cause: s.cause,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds one utterance's segments from its decoded lines. Per-frame
    /// events are not stored in the lines and come back empty.
    pub fn from_lines(lines: &[SegmentLine], frame_ms: f64, total_frames: usize) -> Result<Self> {
        if !(frame_ms > 0.0) {
            return Err(Error::invalid("frame_ms", "must be > 0"));
        }
        let frame = |ms: f64| (ms / frame_ms).round() as usize;
        let mut start = 0;
        let mut segments = Vec::with_capacity(lines.len());
        for l in lines {
            let boundary_frame = frame(l.boundary_ms);
            segments.push(Segment {
                tokens: l.tokens.clone(),
                start_frame: start,
                boundary_frame,
                eos_emission_frame: frame(l.eos_emission_ms),
                cause: l.cause,
            });
            start = boundary_frame;
        }
        let out = SegmentationOutput {
            segments,
            events: Vec::new(),
            total_frames,
            frame_ms,
        };
        out.check_partition().map_err(Error::Contract)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentLine {
    /// Index of the utterance in a multi-utterance decode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<usize>,
    pub tokens: Vec<String>,
    pub boundary_ms: f64,
    pub eos_emission_ms: f64,
    pub cause: Cause,
}

pub fn read_segment_lines<R: BufRead>(r: R) -> Result<Vec<SegmentLine>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
