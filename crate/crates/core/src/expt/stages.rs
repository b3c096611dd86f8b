//! The individual pipeline stages, shared by the CLI and the e2e runner.

use crate::corpus::{
    gen_spoken_corpus, gen_written_paragraphs, GrammarSpec, SpokenUtterance, WrittenParagraph,
};
use crate::decoder::{decode_stream, DecodeConfig, SegmentationOutput};
use crate::error::Result;
use crate::metrics::{report, MetricsReport};
use crate::punct::{
    annotate_paragraph, AnnotatedTranscript, Disambiguator, Label, DEFAULT_ABBREVIATIONS,
};
use crate::rng::{fnv1a, splitmix};
use crate::teacher::semantic::labeled_windows;
use crate::teacher::{pause_teacher_annotate, teacher_predict, teacher_train, TeacherParams};
use crate::transducer::{build_examples, finetune_eos, train_base, RnntParams, TrainLog};

use super::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpora {
    pub written: Vec<WrittenParagraph>,
    /// Held-out written paragraphs for scoring the semantic teacher.
    pub heldout: Vec<WrittenParagraph>,
    pub train: Vec<SpokenUtterance>,
    pub eval: Vec<SpokenUtterance>,
}

/// Written teacher text, a held-out fifth as large, and the spoken train
/// and eval corpora.
pub fn gen_corpora(cfg: &ExperimentConfig) -> Result<Corpora> {
    let c = cfg.resolved();
    let heldout_grammar = GrammarSpec {
        seed: splitmix(c.grammar.seed ^ fnv1a(b"heldout")),
        ..c.grammar.clone()
    };
    Ok(Corpora {
        written: gen_written_paragraphs(&c.grammar, c.written_paragraphs)?,
        heldout: gen_written_paragraphs(&heldout_grammar, c.written_paragraphs.div_ceil(5))?,
        train: gen_spoken_corpus(&c.grammar, &c.train_corpus.utterance, c.train_corpus.count)?,
        eval: gen_spoken_corpus(&c.grammar, &c.eval_corpus.utterance, c.eval_corpus.count)?,
    })
}

/// Punctuation-derived `<EOS>` annotations of the written paragraphs.
pub fn annotate_written(
    cfg: &ExperimentConfig,
    written: &[WrittenParagraph],
) -> Vec<AnnotatedTranscript> {
    let abbreviations = DEFAULT_ABBREVIATIONS
        .iter()
        .map(|s| s.to_string())
        .chain(cfg.grammar.abbreviation_tokens.iter().cloned());
    let d = Disambiguator::new(abbreviations);
    written
        .iter()
        .map(|p| annotate_paragraph(&d, &p.text))
        .collect()
}

pub fn train_teacher(
    cfg: &ExperimentConfig,
    annotated: &[AnnotatedTranscript],
) -> Result<TeacherParams> {
    let hyper = cfg.resolved().teacher;
    let windows = labeled_windows(annotated, hyper.window, hyper.overlap)?;
    teacher_train(&windows, &hyper)
}

pub fn annotate_semantic(
    teacher: &TeacherParams,
    utts: &[SpokenUtterance],
    bias: f64,
) -> Vec<Vec<Label>> {
    utts.iter()
        .map(|u| teacher_predict(teacher, u.tokens(), bias))
        .collect()
}

pub fn annotate_pause(utts: &[SpokenUtterance], threshold_ms: f64) -> Result<Vec<Vec<Label>>> {
    utts.iter()
        .map(|u| {
            pause_teacher_annotate(
                u.tokens(),
                &u.alignment,
                u.frames.frame_ms,
                u.frames.len(),
                threshold_ms,
            )
        })
        .collect()
}

pub fn train_base_model(
    cfg: &ExperimentConfig,
    train: &[SpokenUtterance],
) -> Result<(RnntParams, TrainLog)> {
    let c = cfg.resolved();
    let vocab = c.grammar.spoken_vocabulary();
    let init = RnntParams::init(vocab.clone(), c.base.dims, c.base.seed)?;
    let examples = build_examples(&init, train, None)?;
    train_base(vocab, &examples, &c.base)
}

pub fn finetune_on(
    cfg: &ExperimentConfig,
    base: &RnntParams,
    train: &[SpokenUtterance],
    labels: &[Vec<Label>],
) -> Result<(RnntParams, TrainLog)> {
    let examples = build_examples(base, train, Some(labels))?;
    finetune_eos(base, &examples, &cfg.resolved().finetune)
}

/// Decodes every utterance, spreading utterances over the available cores.
/// Output order follows input order.
pub fn decode_corpus(
    params: &RnntParams,
    utts: &[SpokenUtterance],
    cfg: &DecodeConfig,
) -> Result<Vec<SegmentationOutput>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(utts.len())
        .max(1);
    if threads == 1 {
        return utts
            .iter()
            .map(|u| decode_stream(params, &u.frames, cfg))
            .collect();
    }
    let chunk = utts.len().div_ceil(threads);
    let parts: Vec<Result<Vec<SegmentationOutput>>> = std::thread::scope(|s| {
        let handles: Vec<_> = utts
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|u| decode_stream(params, &u.frames, cfg))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decode worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(utts.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate(
    params: &RnntParams,
    utts: &[SpokenUtterance],
    cfg: &DecodeConfig,
) -> Result<MetricsReport> {
    let outs = decode_corpus(params, utts, cfg)?;
    Ok(report(
        outs.iter()
            .zip(utts)
            .map(|(o, u)| (o, u.tokens(), &u.alignment)),
    ))
}
