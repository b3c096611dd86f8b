//! Bidirectional recurrent tagger with an autoregressive label decoder.
//!
//! For a window `x_1..x_w` the encoder runs a forward and a backward tanh
//! RNN over token embeddings. The decoder is a tanh RNN over the previous
//! label only. At step `t` the output layer reads
//! `[fwd_t; bwd_t; dec_t]` and produces two logits, `[ε, <EOS>]`, so
//! `p(y_t | y_<t, x) = softmax(W [fwd_t; bwd_t; dec_t] + b)`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PrecisionRecall;
use crate::punct::{make_windows, merge_window_predictions, AnnotatedTranscript, Label, Window};
use crate::rng::stream;
use crate::tensor::{matvec_acc, outer_acc, vecmat_acc, Mat, ParamSet};

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub gradient_clip_norm: f64,
    pub window: usize,
    pub overlap: usize,
    pub seed: u64,
}

impl Default for TeacherHyper {
    fn default() -> Self {
        TeacherHyper {
            learning_rate: 0.5,
            epochs: 8,
            batch_size: 8,
            embed_dim: 16,
            hidden: 32,
            decoder_hidden: 16,
            gradient_clip_norm: 5.0,
            window: crate::punct::DEFAULT_WINDOW,
            overlap: crate::punct::DEFAULT_OVERLAP,
            seed: 7,
        }
    }
}

impl TeacherHyper {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("window", self.window),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate", "must be non-negative"));
        }
        if !(self.gradient_clip_norm > 0.0) {
            return Err(Error::invalid("gradient_clip_norm", "must be positive"));
        }
        if self.overlap >= self.window {
            return Err(Error::invalid("overlap", "must be smaller than window"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    /// Index 0 is the unknown-word slot.
    pub vocab: Vec<String>,
    pub embed: Mat,
    pub fwd_in: Mat,
    pub fwd_rec: Mat,
    pub fwd_bias: Mat,
    pub bwd_in: Mat,
    pub bwd_rec: Mat,
    pub bwd_bias: Mat,
    pub dec_embed: Mat,
    pub dec_rec: Mat,
    pub dec_bias: Mat,
    pub out_w: Mat,
    pub out_bias: Mat,
    pub window: usize,
    pub overlap: usize,
    pub final_loss: Option<f64>,
}

impl ParamSet for TeacherParams {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("embed", &self.embed),
            ("fwd_in", &self.fwd_in),
            ("fwd_rec", &self.fwd_rec),
            ("fwd_bias", &self.fwd_bias),
            ("bwd_in", &self.bwd_in),
            ("bwd_rec", &self.bwd_rec),
            ("bwd_bias", &self.bwd_bias),
            ("dec_embed", &self.dec_embed),
            ("dec_rec", &self.dec_rec),
            ("dec_bias", &self.dec_bias),
            ("out_w", &self.out_w),
            ("out_bias", &self.out_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("embed", &mut self.embed),
            ("fwd_in", &mut self.fwd_in),
            ("fwd_rec", &mut self.fwd_rec),
            ("fwd_bias", &mut self.fwd_bias),
            ("bwd_in", &mut self.bwd_in),
            ("bwd_rec", &mut self.bwd_rec),
            ("bwd_bias", &mut self.bwd_bias),
            ("dec_embed", &mut self.dec_embed),
            ("dec_rec", &mut self.dec_rec),
            ("dec_bias", &mut self.dec_bias),
            ("out_w", &mut self.out_w),
            ("out_bias", &mut self.out_bias),
        ]
    }
}

fn label_index(l: Label) -> usize {
    match l {
        Label::Blank => 0,
        Label::Eos => 1,
    }
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `da = dy ⊙ (1 − y²)` for `y = tanh(a)`.
fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

impl TeacherParams {
    pub fn init(vocab: Vec<String>, hyper: &TeacherHyper) -> Self {
        let mut vocab = vocab;
        if vocab.first().map(String::as_str) != Some(UNK) {
            vocab.insert(0, UNK.to_string());
        }
        let mut rng = stream(hyper.seed, "teacher-init");
        let (e, h, hd) = (hyper.embed_dim, hyper.hidden, hyper.decoder_hidden);
        let s = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let out_in = 2 * h + hd;
        TeacherParams {
            embed: Mat::uniform(vocab.len(), e, 0.5, &mut rng),
            fwd_in: Mat::uniform(e, h, s(e), &mut rng),
            fwd_rec: Mat::uniform(h, h, s(h), &mut rng),
            fwd_bias: Mat::zeros(1, h),
            bwd_in: Mat::uniform(e, h, s(e), &mut rng),
            bwd_rec: Mat::uniform(h, h, s(h), &mut rng),
            bwd_bias: Mat::zeros(1, h),
            dec_embed: Mat::uniform(2, hd, 0.5, &mut rng),
            dec_rec: Mat::uniform(hd, hd, s(hd), &mut rng),
            dec_bias: Mat::zeros(1, hd),
            out_w: Mat::uniform(out_in, 2, s(out_in), &mut rng),
            out_bias: Mat::zeros(1, 2),
            vocab,
            window: hyper.window,
            overlap: hyper.overlap,
            final_loss: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd_rec.rows
    }

    pub fn decoder_hidden(&self) -> usize {
        self.dec_rec.rows
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        let index: HashMap<&str, usize> = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        tokens
            .iter()
            .map(|t| index.get(t.as_str()).copied().unwrap_or(0))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.scale_all(0.0);
        g.final_loss = None;
        g
    }
}

/// Label history fed to the decoder.
#[derive(Debug, Clone, Copy)]
pub enum History<'a> {
    /// Teacher forcing with the given reference labels.
    Forced(&'a [Label]),
    /// Greedy decoding; `bias` is added to the `<EOS>` logit at every step.
    Greedy { bias: f64 },
}

struct Trace {
    ids: Vec<usize>,
    fwd: Vec<Vec<f64>>,
    bwd: Vec<Vec<f64>>,
    dec: Vec<Vec<f64>>,
    /// Label fed into the decoder at each step.
    prev: Vec<usize>,
    logits: Vec<[f64; 2]>,
    chosen: Vec<Label>,
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let a = (z[0] - m).exp();
    let b = (z[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

fn run(params: &TeacherParams, ids: &[usize], history: History<'_>) -> Trace {
    let w = ids.len();
    let h = params.hidden();
    let hd = params.decoder_hidden();

    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(w);
    for t in 0..w {
        let mut a = params.fwd_bias.data.clone();
        vecmat_acc(params.embed.row(ids[t]), &params.fwd_in, &mut a);
        if t > 0 {
            vecmat_acc(&fwd[t - 1], &params.fwd_rec, &mut a);
        }
        tanh_in_place(&mut a);
        fwd.push(a);
    }
    let mut bwd = vec![vec![0.0; h]; w];
    for t in (0..w).rev() {
        let mut a = params.bwd_bias.data.clone();
        vecmat_acc(params.embed.row(ids[t]), &params.bwd_in, &mut a);
        if t + 1 < w {
            let next = bwd[t + 1].clone();
            vecmat_acc(&next, &params.bwd_rec, &mut a);
        }
        tanh_in_place(&mut a);
        bwd[t] = a;
    }

    let mut dec: Vec<Vec<f64>> = Vec::with_capacity(w);
    let mut prev = Vec::with_capacity(w);
    let mut logits = Vec::with_capacity(w);
    let mut chosen = Vec::with_capacity(w);
    let mut last = 0usize;
    for t in 0..w {
        let mut a = params.dec_bias.data.clone();
        for (x, e) in a.iter_mut().zip(params.dec_embed.row(last)) {
            *x += e;
        }
        if t > 0 {
            vecmat_acc(&dec[t - 1], &params.dec_rec, &mut a);
        }
        tanh_in_place(&mut a);
        let mut z = params.out_bias.data.clone();
        let mut feat = Vec::with_capacity(2 * h + hd);
        feat.extend_from_slice(&fwd[t]);
        feat.extend_from_slice(&bwd[t]);
        feat.extend_from_slice(&a);
        vecmat_acc(&feat, &params.out_w, &mut z);
        let z = [z[0], z[1]];
        let label = match history {
            History::Forced(labels) => labels[t],
            History::Greedy { bias } => {
                if z[1] + bias > z[0] {
                    Label::Eos
                } else {
                    Label::Blank
                }
            }
        };
        prev.push(last);
        dec.push(a);
        logits.push(z);
        chosen.push(label);
        last = label_index(label);
    }
    Trace {
        ids: ids.to_vec(),
        fwd,
        bwd,
        dec,
        prev,
        logits,
        chosen,
    }
}

/// Per-token `p(y_t = <EOS>)`. Under greedy history the bias steers which
/// labels feed the decoder but the returned probabilities are unbiased.
pub fn teacher_forward(
    params: &TeacherParams,
    tokens: &[String],
    history: History<'_>,
) -> Vec<f64> {
    if let History::Forced(l) = history {
        assert_eq!(
            l.len(),
            tokens.len(),
            "forced history must cover every token"
        );
    }
    let ids = params.token_ids(tokens);
    run(params, &ids, history)
        .logits
        .into_iter()
        .map(|z| softmax2(z)[1])
        .collect()
}

/// Teacher-forced decision at each position when `bias` is added to the
/// `<EOS>` logit. Ties resolve to ε.
pub fn forced_decisions(
    params: &TeacherParams,
    tokens: &[String],
    history: &[Label],
    bias: f64,
) -> Vec<Label> {
    let ids = params.token_ids(tokens);
    run(params, &ids, History::Forced(history))
        .logits
        .into_iter()
        .map(|z| {
            if z[1] + bias > z[0] {
                Label::Eos
            } else {
                Label::Blank
            }
        })
        .collect()
}

/// Summed cross-entropy of one window, accumulating `scale`-weighted
/// gradients into `grads`.
pub fn window_loss_grad(
    params: &TeacherParams,
    ids: &[usize],
    labels: &[Label],
    scale: f64,
    grads: &mut TeacherParams,
) -> f64 {
    let tr = run(params, ids, History::Forced(labels));
    let w = ids.len();
    let h = params.hidden();
    let hd = params.decoder_hidden();
    let mut loss = 0.0;
    let mut dfwd = vec![vec![0.0; h]; w];
    let mut dbwd = vec![vec![0.0; h]; w];
    let mut ddec = vec![vec![0.0; hd]; w];
    for t in 0..w {
        let p = softmax2(tr.logits[t]);
        let y = label_index(labels[t]);
        loss -= p[y].ln();
        let mut dz = [p[0] * scale, p[1] * scale];
        dz[y] -= scale;
        let mut feat = Vec::with_capacity(2 * h + hd);
        feat.extend_from_slice(&tr.fwd[t]);
        feat.extend_from_slice(&tr.bwd[t]);
        feat.extend_from_slice(&tr.dec[t]);
        outer_acc(&mut grads.out_w, &feat, &dz);
        grads.out_bias.data[0] += dz[0];
        grads.out_bias.data[1] += dz[1];
        let mut dfeat = vec![0.0; 2 * h + hd];
        matvec_acc(&params.out_w, &dz, &mut dfeat);
        crate::tensor::add_assign(&mut dfwd[t], &dfeat[..h]);
        crate::tensor::add_assign(&mut dbwd[t], &dfeat[h..2 * h]);
        crate::tensor::add_assign(&mut ddec[t], &dfeat[2 * h..]);
    }

    for t in (0..w).rev() {
        let da = tanh_backward(&tr.dec[t], &ddec[t]);
        crate::tensor::add_assign(grads.dec_embed.row_mut(tr.prev[t]), &da);
        crate::tensor::add_assign(&mut grads.dec_bias.data, &da);
        if t > 0 {
            outer_acc(&mut grads.dec_rec, &tr.dec[t - 1], &da);
            let mut back = vec![0.0; hd];
            matvec_acc(&params.dec_rec, &da, &mut back);
            crate::tensor::add_assign(&mut ddec[t - 1], &back);
        }
    }

    let e = params.embed.cols;
    for t in (0..w).rev() {
        let da = tanh_backward(&tr.fwd[t], &dfwd[t]);
        let x = params.embed.row(tr.ids[t]);
        outer_acc(&mut grads.fwd_in, x, &da);
        crate::tensor::add_assign(&mut grads.fwd_bias.data, &da);
        let mut dx = vec![0.0; e];
        matvec_acc(&params.fwd_in, &da, &mut dx);
        crate::tensor::add_assign(grads.embed.row_mut(tr.ids[t]), &dx);
        if t > 0 {
            outer_acc(&mut grads.fwd_rec, &tr.fwd[t - 1], &da);
            let mut back = vec![0.0; h];
            matvec_acc(&params.fwd_rec, &da, &mut back);
            crate::tensor::add_assign(&mut dfwd[t - 1], &back);
        }
    }
    for t in 0..w {
        let da = tanh_backward(&tr.bwd[t], &dbwd[t]);
        let x = params.embed.row(tr.ids[t]);
        outer_acc(&mut grads.bwd_in, x, &da);
        crate::tensor::add_assign(&mut grads.bwd_bias.data, &da);
        let mut dx = vec![0.0; e];
        matvec_acc(&params.bwd_in, &da, &mut dx);
        crate::tensor::add_assign(grads.embed.row_mut(tr.ids[t]), &dx);
        if t + 1 < w {
            outer_acc(&mut grads.bwd_rec, &tr.bwd[t + 1], &da);
            let mut back = vec![0.0; h];
            matvec_acc(&params.bwd_rec, &da, &mut back);
            crate::tensor::add_assign(&mut dbwd[t + 1], &back);
        }
    }
    loss
}

/// Labeled windows from annotated paragraphs.
pub fn labeled_windows(
    transcripts: &[AnnotatedTranscript],
    window: usize,
    overlap: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for t in transcripts {
        out.extend(make_windows(t, window, overlap)?);
    }
    Ok(out)
}

/// Words in first-seen order.
pub fn collect_vocab(windows: &[Window]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for w in windows {
        for t in &w.tokens {
            if seen.insert(t.as_str()) {
                out.push(t.clone());
            }
        }
    }
    out
}

/// Minibatch SGD with global-norm clipping on mean per-token cross-entropy.
pub fn teacher_train(corpus: &[Window], hyper: &TeacherHyper) -> Result<TeacherParams> {
    hyper.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("corpus", "no training windows"));
    }
    for (i, w) in corpus.iter().enumerate() {
        if w.labels.as_ref().is_none_or(|l| l.len() != w.len()) {
            return Err(Error::invalid(
                "corpus",
                format!("window {i} lacks a full label set"),
            ));
        }
    }
    let mut params = TeacherParams::init(collect_vocab(corpus), hyper);
    train_epochs(&mut params, corpus, hyper)?;
    Ok(params)
}

/// Continues training existing parameters in place.
pub fn train_epochs(
    params: &mut TeacherParams,
    corpus: &[Window],
    hyper: &TeacherHyper,
) -> Result<()> {
    let ids: Vec<Vec<usize>> = corpus.iter().map(|w| params.token_ids(&w.tokens)).collect();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = stream(hyper.seed, "teacher-shuffle");
    let mut step = 0;
    let mut grads = params.zeros_like();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            let n_tok: usize = batch.iter().map(|&i| corpus[i].len()).sum();
            if n_tok == 0 {
                continue;
            }
            grads.scale_all(0.0);
            let scale = 1.0 / n_tok as f64;
            let mut loss = 0.0;
            for &i in batch {
                let labels = corpus[i].labels.as_ref().expect("validated");
                loss += window_loss_grad(params, &ids[i], labels, scale, &mut grads);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            crate::tensor::sgd_step(
                params,
                &grads,
                hyper.learning_rate,
                hyper.gradient_clip_norm,
            );
            if !params.all_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                });
            }
            epoch_loss += loss;
            epoch_tokens += n_tok;
            step += 1;
        }
        params.final_loss = Some(epoch_loss / epoch_tokens.max(1) as f64);
    }
    Ok(())
}

/// Greedy labels for an arbitrarily long transcript, windowed and merged.
pub fn teacher_predict(params: &TeacherParams, tokens: &[String], bias: f64) -> Vec<Label> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let predict = |toks: &[String]| {
        let ids = params.token_ids(toks);
        run(params, &ids, History::Greedy { bias }).chosen
    };
    if tokens.len() <= params.window {
        return predict(tokens);
    }
    let t = AnnotatedTranscript {
        tokens: tokens.to_vec(),
        eos_after: Default::default(),
    };
    let mut windows =
        make_windows(&t, params.window, params.overlap).expect("params carry a valid window");
    for w in &mut windows {
        w.labels = Some(predict(&w.tokens));
    }
    merge_window_predictions(&windows).expect("make_windows covers every token")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherEval {
    pub label_accuracy: f64,
    pub full_sequence_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores greedy predictions against labeled windows. F1 pools `<EOS>`
/// positions across all windows.
pub fn teacher_eval_predictions(
    predicted: &[Vec<Label>],
    reference: &[Vec<Label>],
) -> Result<TeacherEval> {
    if reference.is_empty() {
        return Err(Error::invalid("data", "no labeled windows"));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut full = 0usize;
    let mut pr = PrecisionRecall::default();
    for (p, r) in predicted.iter().zip(reference) {
        if p.len() != r.len() {
            return Err(Error::Dimension {
                what: "predicted labels",
                expected: r.len(),
                got: p.len(),
            });
        }
        let ok = p.iter().zip(r).filter(|(a, b)| a == b).count();
        correct += ok;
        total += r.len();
        if ok == r.len() {
            full += 1;
        }
        for (a, b) in p.iter().zip(r) {
            pr.add(a.is_eos(), b.is_eos());
        }
    }
    let (precision, recall, f1) = pr.scores();
    Ok(TeacherEval {
        label_accuracy: if total == 0 {
            1.0
        } else {
            correct as f64 / total as f64
        },
        full_sequence_accuracy: full as f64 / reference.len() as f64,
        precision,
        recall,
        f1,
    })
}

pub fn teacher_eval(params: &TeacherParams, data: &[Window]) -> Result<TeacherEval> {
    let mut predicted = Vec::with_capacity(data.len());
    let mut reference = Vec::with_capacity(data.len());
    for (i, w) in data.iter().enumerate() {
        let labels = w
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("data", format!("window {i} has no labels")))?;
        let ids = params.token_ids(&w.tokens);
        predicted.push(run(params, &ids, History::Greedy { bias: 0.0 }).chosen);
        reference.push(labels.clone());
    }
    teacher_eval_predictions(&predicted, &reference)
}
