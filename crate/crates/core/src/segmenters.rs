//! Boundary-decision strategies evaluated once per original frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::Cause;
use crate::error::{Error, Result};

pub const DEFAULT_VAD_MIN_SILENCE_MS: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SegmenterKind {
    None,
    Fixed {
        length_s: f64,
    },
    Vad {
        min_silence_ms: f64,
    },
    /// Threshold on the EOS head's negative log posterior.
    Eos {
        threshold: f64,
    },
}

impl SegmenterKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SegmenterKind::Fixed { length_s } if !(length_s > 0.0) => {
                Err(Error::invalid("segmenter", "fixed length must be > 0"))
            }
            SegmenterKind::Vad { min_silence_ms } if !(min_silence_ms > 0.0) => Err(
                Error::invalid("segmenter", "vad min_silence_ms must be > 0"),
            ),
            SegmenterKind::Eos { threshold } if !(threshold >= 0.0) => {
                Err(Error::invalid("segmenter", "eos threshold must be >= 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn cause(&self) -> Option<Cause> {
        match self {
            SegmenterKind::None => None,
            SegmenterKind::Fixed { .. } => Some(Cause::Fixed),
            SegmenterKind::Vad { .. } => Some(Cause::Vad),
            SegmenterKind::Eos { .. } => Some(Cause::Eos),
        }
    }

    pub fn needs_eos(&self) -> bool {
        matches!(self, SegmenterKind::Eos { .. })
    }
}

impl fmt::Display for SegmenterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmenterKind::None => write!(f, "none"),
            SegmenterKind::Fixed { length_s } => write!(f, "fixed:{length_s}"),
            SegmenterKind::Vad { min_silence_ms } => write!(f, "vad:{min_silence_ms}"),
            SegmenterKind::Eos { threshold } => write!(f, "eos:{threshold}"),
        }
    }
}

/// Parses `none`, `fixed:SECONDS`, `vad`, `vad:MS`, `eos` (threshold 0
/// placeholder, filled from the decode config) or `eos:THRESHOLD`.
impl FromStr for SegmenterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<Option<f64>> {
            a.map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid("segmenter", format!("bad number in `{s}`")))
            })
            .transpose()
        };
        let kind = match name.trim() {
            "none" if arg.is_none() => SegmenterKind::None,
            "fixed" => SegmenterKind::Fixed {
                length_s: num(arg)?.ok_or_else(|| {
                    Error::invalid("segmenter", "fixed needs a length, e.g. fixed:3")
                })?,
            },
            "vad" => SegmenterKind::Vad {
                min_silence_ms: num(arg)?.unwrap_or(DEFAULT_VAD_MIN_SILENCE_MS),
            },
            "eos" => SegmenterKind::Eos {
                threshold: num(arg)?.unwrap_or(0.0),
            },
            _ => {
                return Err(Error::invalid(
                    "segmenter",
                    format!("unknown segmenter `{s}`"),
                ))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// A strategy with its per-segment counters.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterStrategy {
    pub kind: SegmenterKind,
    pub frame_ms: f64,
    pub frames_since_boundary: usize,
    pub silence_run: usize,
}

impl SegmenterStrategy {
    pub fn new(kind: SegmenterKind, frame_ms: f64) -> Result<Self> {
        kind.validate()?;
        if !(frame_ms > 0.0) {
            return Err(Error::invalid("frame_ms", "must be > 0"));
        }
        Ok(SegmenterStrategy {
            kind,
            frame_ms,
            frames_since_boundary: 0,
            silence_run: 0,
        })
    }

    pub fn reset(&mut self) {
        self.frames_since_boundary = 0;
        self.silence_run = 0;
    }

    fn frames_for(&self, ms: f64) -> usize {
        let exact = ms / self.frame_ms;
        if (exact - exact.round()).abs() < 1e-9 {
            exact.round() as usize
        } else {
            exact.floor() as usize
        }
    }

    /// Consumes one frame and reports whether a boundary falls after it.
    /// `has_tokens` tells whether the open segment has decoded any word;
    /// the vad and eos kinds never close an empty segment.
    pub fn should_segment(
        &mut self,
        silence: bool,
        eos_nlp: Option<f64>,
        has_tokens: bool,
    ) -> Result<bool> {
        self.frames_since_boundary += 1;
        self.silence_run = if silence { self.silence_run + 1 } else { 0 };
        match self.kind {
            SegmenterKind::None => Ok(false),
            SegmenterKind::Fixed { length_s } => {
                let every = self.frames_for(length_s * 1000.0).max(1);
                Ok(self.frames_since_boundary.is_multiple_of(every))
            }
            SegmenterKind::Vad { min_silence_ms } => {
                let need = self.frames_for(min_silence_ms).max(1);
                Ok(has_tokens && self.silence_run == need)
            }
            SegmenterKind::Eos { threshold } => {
                let v = eos_nlp.ok_or_else(|| {
                    Error::Contract("eos segmenter needs an EOS posterior".into())
                })?;
                Ok(has_tokens && v < threshold)
            }
        }
    }
}
