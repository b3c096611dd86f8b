use crate::corpus::Alignment;
use crate::error::{Error, Result};
use crate::punct::Label;

pub const DEFAULT_SILENCE_THRESHOLD_MS: f64 = 500.0;

/// `<EOS>` after every token followed by at least `threshold_ms` of
/// silence. Only the alignment is consulted, never the words themselves.
pub fn pause_teacher_annotate(
    tokens: &[String],
    alignment: &Alignment,
    frame_ms: f64,
    total_frames: usize,
    threshold_ms: f64,
) -> Result<Vec<Label>> {
    if alignment.entries.len() != tokens.len() {
        return Err(Error::Dimension {
            what: "alignment",
            expected: tokens.len(),
            got: alignment.entries.len(),
        });
    }
    let entries = &alignment.entries;
    Ok(entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let next_start = entries.get(i + 1).map_or(total_frames, |n| n.start_frame);
            let gap_ms = next_start.saturating_sub(e.end_frame) as f64 * frame_ms;
            if gap_ms > 0.0 && gap_ms >= threshold_ms {
                Label::Eos
            } else {
                Label::Blank
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AlignEntry;

    /// Four 10-frame words at 10 ms with the given gaps (ms) after each.
    fn layout(gaps_after: &[usize]) -> (Vec<String>, Alignment, usize) {
        let mut entries = Vec::new();
        let mut t = 0;
        for (i, g) in gaps_after.iter().enumerate() {
            entries.push(AlignEntry {
                token_index: i,
                start_frame: t,
                end_frame: t + 10,
            });
            t += 10 + g / 10;
        }
        let tokens = (0..gaps_after.len()).map(|i| format!("w{i}")).collect();
        (
            tokens,
            Alignment {
                entries,
                ..Default::default()
            },
            t,
        )
    }

    fn eos_positions(l: &[Label]) -> Vec<usize> {
        l.iter()
            .enumerate()
            .filter(|(_, l)| l.is_eos())
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn short_gaps_never_fire() {
        let (tok, al, total) = layout(&[100, 100, 100, 100]);
        let l = pause_teacher_annotate(&tok, &al, 10.0, total, 500.0).unwrap();
        assert!(eos_positions(&l).is_empty());
    }

    #[test]
    fn zero_threshold_fires_on_any_gap() {
        let (tok, al, total) = layout(&[10, 0, 30, 0]);
        let l = pause_teacher_annotate(&tok, &al, 10.0, total, 0.0).unwrap();
        assert_eq!(eos_positions(&l), vec![0, 2]);
    }

    #[test]
    fn mixed_gaps() {
        let (tok, al, total) = layout(&[600, 100, 700]);
        let l = pause_teacher_annotate(&tok, &al, 10.0, total, 500.0).unwrap();
        assert_eq!(eos_positions(&l), vec![0, 2]);
    }

    #[test]
    fn ignores_word_identity() {
        let (tok, al, total) = layout(&[600, 100, 700, 0]);
        let other: Vec<String> = tok.iter().map(|t| format!("{t}x")).collect();
        assert_eq!(
            pause_teacher_annotate(&tok, &al, 10.0, total, 500.0).unwrap(),
            pause_teacher_annotate(&other, &al, 10.0, total, 500.0).unwrap()
        );
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (tok, al, total) = layout(&[100, 100]);
        assert!(pause_teacher_annotate(&tok[..1], &al, 10.0, total, 500.0).is_err());
    }
}
