//! Energy-based silence detection and frame filtering.

use crate::corpus::FrameSequence;
use crate::tensor::Mat;

pub const VAD_INITIAL_KEEP_MS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VadFiltered {
    pub frames: Mat,
    /// Original index of every kept frame.
    pub index_map: Vec<usize>,
    /// Silence flag for every original frame.
    pub silence: Vec<bool>,
}

/// Number of frames covering `ms`, rounding up.
pub fn frames_ceil(ms: f64, frame_ms: f64) -> usize {
    let exact = ms / frame_ms;
    let r = exact.round();
    if (exact - r).abs() < 1e-9 {
        r as usize
    } else {
        exact.ceil() as usize
    }
}

pub fn silence_flags(frames: &FrameSequence, energy_threshold: f64) -> Vec<bool> {
    (0..frames.len())
        .map(|t| frames.energy(t) < energy_threshold)
        .collect()
}

/// Keeps the first `initial_keep_ms` of every silence run and drops the
/// rest; speech frames are always kept.
pub fn vad_filter(
    frames: &FrameSequence,
    energy_threshold: f64,
    initial_keep_ms: f64,
) -> VadFiltered {
    let silence = silence_flags(frames, energy_threshold);
    let keep = frames_ceil(initial_keep_ms, frames.frame_ms);
    let mut out = Mat::zeros(0, frames.dim());
    let mut index_map = Vec::new();
    let mut run = 0;
    for (t, &s) in silence.iter().enumerate() {
        run = if s { run + 1 } else { 0 };
        if run <= keep {
            out.push_row(frames.frame(t));
            index_map.push(t);
        }
    }
    VadFiltered {
        frames: out,
        index_map,
        silence,
    }
}
