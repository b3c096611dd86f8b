use proptest::prelude::*;
use segstream::corpus::{
    gen_spoken_corpus, FrameSequence, GrammarSpec, SpokenUtterance, UtteranceSpec,
};
use segstream::decoder::{decode_stream, silence_flags, vad_filter, Cause, DecodeConfig, Mode};
use segstream::metrics::{percentile, segment_lengths};
use segstream::segmenters::SegmenterKind;
use segstream::tensor::Mat;
use segstream::transducer::{RnntDims, RnntParams};

const FRAME_MS: f64 = 40.0;

fn model(seed: u64) -> RnntParams {
    let vocab = GrammarSpec::default().spoken_vocabulary();
    let dims = RnntDims {
        right_context: 3,
        ..RnntDims::default()
    };
    RnntParams::init(vocab, dims, seed).unwrap()
}

fn corpus(n: usize, sentences: usize, hesitation: f64, seed: u64) -> Vec<SpokenUtterance> {
    let utt = UtteranceSpec {
        n_sentences: sentences,
        hesitation_prob: hesitation,
        frame_ms: FRAME_MS,
        seed,
        ..UtteranceSpec::default()
    };
    gen_spoken_corpus(&GrammarSpec::default(), &utt, n).unwrap()
}

/// Longest silence run, in frames, under the decoder's energy threshold.
fn longest_silence(frames: &FrameSequence, threshold: f64) -> usize {
    let (mut best, mut run) = (0, 0);
    for s in silence_flags(frames, threshold) {
        run = if s { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

#[test]
fn segments_partition_respect_the_cap_and_are_deterministic() {
    let utts = corpus(10, 3, 0.3, 5);
    let params = model(2);
    let segmenters = [
        SegmenterKind::None,
        SegmenterKind::Fixed { length_s: 1.0 },
        SegmenterKind::Vad {
            min_silence_ms: 200.0,
        },
        SegmenterKind::Eos { threshold: 2.6 },
        SegmenterKind::Eos { threshold: 3.0 },
    ];
    let max_segment_s = 1.5;
    let cap_frames = (max_segment_s * 1000.0 / FRAME_MS).ceil() as usize;
    for i in 0..50 {
        let u = &utts[i % utts.len()];
        let cfg = DecodeConfig {
            mode: Mode::ALL[i % 3],
            segmenter: segmenters[i % segmenters.len()],
            max_segment_s,
            vad_filter: i % 2 == 0,
            ..DecodeConfig::default()
        };
        let out = decode_stream(&params, &u.frames, &cfg).unwrap();
        out.check_partition().unwrap();
        assert_eq!(out.total_frames, u.frames.len());
        for s in &out.segments {
            assert!(
                s.boundary_frame - s.start_frame <= cap_frames + 1,
                "decode {i}: {s:?}"
            );
            assert!(s.eos_emission_frame >= s.boundary_frame);
        }
        assert_eq!(
            out,
            decode_stream(&params, &u.frames, &cfg).unwrap(),
            "decode {i}"
        );
    }
}

#[test]
fn fixed_segments_have_the_requested_length() {
    let utts = corpus(3, 20, 0.0, 9);
    let params = model(3);
    for len in [1.0, 2.0] {
        let cfg = DecodeConfig {
            segmenter: SegmenterKind::Fixed { length_s: len },
            ..DecodeConfig::default()
        };
        let mut lengths = Vec::new();
        for u in &utts {
            let out = decode_stream(&params, &u.frames, &cfg).unwrap();
            let l = segment_lengths(&out);
            assert!(
                l[..l.len() - 1].iter().all(|&x| (x - len).abs() < 1e-9),
                "{l:?}"
            );
            lengths.extend(l);
        }
        assert!((percentile(&lengths, 50.0).unwrap() - len).abs() < 1e-9);
        assert!((percentile(&lengths, 90.0).unwrap() - len).abs() < 1e-9);
    }
}

#[test]
fn mode_three_takes_its_boundaries_from_decoder_one() {
    let utts = corpus(8, 3, 0.3, 11);
    let params = model(4);
    let mut fired = 0;
    for th in [2.6, 2.8, 3.0] {
        for u in &utts {
            let cfg = |mode| DecodeConfig {
                mode,
                segmenter: SegmenterKind::Eos { threshold: th },
                ..DecodeConfig::default()
            };
            let one = decode_stream(&params, &u.frames, &cfg(Mode::One)).unwrap();
            let three = decode_stream(&params, &u.frames, &cfg(Mode::Three)).unwrap();
            assert_eq!(one.eos_emission_frames(), three.eos_emission_frames());
            let bounds = |o: &segstream::decoder::SegmentationOutput| {
                o.segments
                    .iter()
                    .map(|s| (s.boundary_frame, s.cause))
                    .collect::<Vec<_>>()
            };
            assert_eq!(bounds(&one), bounds(&three));
            fired += one.eos_emission_frames().len();
        }
    }
    assert!(fired > 0, "no EOS fired; the comparison would be vacuous");
}

#[test]
fn vad_filter_is_a_no_op_without_long_silences() {
    let utt = UtteranceSpec {
        n_sentences: 3,
        inter_sentence_pause_ms_range: (40.0, 160.0),
        frame_ms: FRAME_MS,
        seed: 21,
        ..UtteranceSpec::default()
    };
    let utts = gen_spoken_corpus(&GrammarSpec::default(), &utt, 6).unwrap();
    let params = model(6);
    let threshold = DecodeConfig::default().vad_energy_threshold;
    let keep = (200.0 / FRAME_MS) as usize;
    for u in &utts {
        assert!(longest_silence(&u.frames, threshold) <= keep);
        for mode in Mode::ALL {
            for segmenter in [SegmenterKind::None, SegmenterKind::Eos { threshold: 2.8 }] {
                let on = DecodeConfig {
                    mode,
                    segmenter,
                    ..DecodeConfig::default()
                };
                let off = DecodeConfig {
                    vad_filter: false,
                    ..on.clone()
                };
                assert_eq!(
                    decode_stream(&params, &u.frames, &on).unwrap(),
                    decode_stream(&params, &u.frames, &off).unwrap()
                );
            }
        }
    }
}

#[test]
fn unreachable_eos_threshold_matches_no_segmenter() {
    let utts = corpus(4, 3, 0.3, 13);
    let params = model(7);
    for mode in Mode::ALL {
        for u in &utts {
            let none = DecodeConfig {
                mode,
                ..DecodeConfig::default()
            };
            let eos = DecodeConfig {
                segmenter: SegmenterKind::Eos { threshold: 0.0 },
                ..none.clone()
            };
            let a = decode_stream(&params, &u.frames, &none).unwrap();
            let b = decode_stream(&params, &u.frames, &eos).unwrap();
            assert_eq!(a.segments, b.segments);
            assert_eq!(a.segments.len(), 1);
            assert_eq!(a.segments[0].cause, Cause::EndOfAudio);
        }
    }
}

proptest! {
    #[test]
    fn vad_keeps_speech_and_the_head_of_each_silence_run(
        loud in prop::collection::vec(any::<bool>(), 0..120),
        frame_ms in prop::sample::select(vec![10.0, 25.0, 40.0]),
    ) {
        let mut m = Mat::zeros(loud.len(), 2);
        for (t, &l) in loud.iter().enumerate() {
            m.row_mut(t)[0] = if l { 1.0 } else { 0.1 };
        }
        let frames = FrameSequence::new(m, frame_ms);
        let v = vad_filter(&frames, 0.5, 200.0);
        let keep = (200.0 / frame_ms).ceil() as usize;
        let mut expected = Vec::new();
        let mut run = 0;
        for (t, &l) in loud.iter().enumerate() {
            run = if l { 0 } else { run + 1 };
            if l || run <= keep {
                expected.push(t);
            }
        }
        prop_assert_eq!(&v.index_map, &expected);
        prop_assert_eq!(v.frames.rows, expected.len());
        for (row, &t) in expected.iter().enumerate() {
            prop_assert_eq!(v.frames.row(row), frames.frame(t));
        }
    }
}
