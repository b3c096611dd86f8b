//! Model-level transducer loss with manual backpropagation, plus SGD
//! training of the base network and of the EOS heads.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::SpokenUtterance;
use crate::error::{Error, Result};
use crate::punct::{inject_eos, Label};
use crate::rng::stream;
use crate::tensor::{add_assign, log_softmax, matvec_acc, outer_acc, Mat, ParamSet};

use super::lattice::{apply_fastemit, lattice, logit_grads, node_grads, LatticeQuantities};
use super::{
    cascaded_window, encode_cascaded, encode_causal, joint_enc, joint_pred, prednet,
    prednet_backward, push_context, Context, Head, HeadKind, Pass, RnntDims, RnntParams, BLANK,
    START_CONTEXT,
};

/// Tensors that EOS fine-tuning may change.
pub const EOS_TENSORS: [&str; 4] = ["eos1_w", "eos1_bias", "eos2_w", "eos2_bias"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// SGD with classical momentum `momentum`.
    Sgd,
    /// Adam with `beta1 = momentum`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnntHyper {
    pub dims: RnntDims,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gradient_clip_norm: f64,
    /// SGD momentum coefficient, or Adam's first-moment decay.
    pub momentum: f64,
    pub fastemit_lambda: f64,
    pub seed: u64,
    /// Worker threads for gradient evaluation; 0 picks the machine's count.
    pub threads: usize,
}

impl Default for RnntHyper {
    fn default() -> Self {
        RnntHyper {
            dims: RnntDims::default(),
            optimizer: Optimizer::Adam,
            learning_rate: 0.02,
            epochs: 40,
            batch_size: 8,
            gradient_clip_norm: 1.0,
            momentum: 0.9,
            fastemit_lambda: 0.0,
            seed: 11,
            threads: 0,
        }
    }
}

impl RnntHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "learning_rate",
                "must be a finite value >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.gradient_clip_norm >= 0.0) {
            return Err(Error::invalid("gradient_clip_norm", "must be >= 0"));
        }
        if !(self.fastemit_lambda >= 0.0) || !self.fastemit_lambda.is_finite() {
            return Err(Error::invalid(
                "fastemit_lambda",
                "must be a finite value >= 0",
            ));
        }
        Ok(())
    }

    fn workers(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossOptions {
    pub fastemit_lambda: f64,
}

/// Loss of one utterance through one head, with gradients for every tensor.
#[derive(Debug, Clone)]
pub struct RnntLoss {
    pub nll: f64,
    /// No alignment exists (labels but no frames); `nll` is `+inf`.
    pub impossible: bool,
    pub grads: RnntParams,
    pub lattice: Option<LatticeQuantities>,
}

struct HeadResult {
    nll: f64,
    impossible: bool,
    lattice: Option<LatticeQuantities>,
    dfeats: Mat,
}

fn contexts(params: &RnntParams, labels: &[usize], start: Context) -> Vec<Context> {
    let eos = params.eos_index();
    let mut out = Vec::with_capacity(labels.len() + 1);
    let mut ctx = start;
    out.push(ctx);
    for &l in labels {
        if l != eos {
            ctx = push_context(ctx, l - 1);
        }
        out.push(ctx);
    }
    out
}

fn check_labels(params: &RnntParams, labels: &[usize], head: Head) -> Result<()> {
    let k = params.output_dim(head);
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= k) {
        return Err(Error::invalid(
            "labels",
            format!("label {bad} is outside the head's alphabet 1..{k}"),
        ));
    }
    Ok(())
}

/// Loss of one head over fixed encoder features. Accumulates joint
/// gradients (and prediction-network gradients when `pred_grads`) into
/// `grads`, scaled by `scale`, and returns the feature gradients.
#[allow(clippy::too_many_arguments)]
fn head_loss(
    params: &RnntParams,
    feats: &Mat,
    labels: &[usize],
    head: Head,
    lambda: f64,
    scale: f64,
    pred_grads: bool,
    grads: &mut RnntParams,
) -> Result<HeadResult> {
    check_labels(params, labels, head)?;
    let (t_max, u_max) = (feats.rows, labels.len());
    let h_dim = params.causal_rec.rows;
    let mut dfeats = Mat::zeros(t_max, h_dim);
    if t_max == 0 {
        let impossible = u_max > 0;
        return Ok(HeadResult {
            nll: if impossible { f64::INFINITY } else { 0.0 },
            impossible,
            lattice: None,
            dfeats,
        });
    }
    let ctxs = contexts(params, labels, START_CONTEXT);
    let gs: Vec<Vec<f64>> = ctxs.iter().map(|&c| prednet(params, c)).collect();
    let a: Vec<Vec<f64>> = (0..t_max)
        .map(|t| joint_enc(params, feats.row(t), head))
        .collect();
    let b: Vec<Vec<f64>> = gs.iter().map(|g| joint_pred(params, g, head)).collect();
    let k = params.output_dim(head);

    // Node (t, u) reads frame min(t, T-1); row T repeats row T-1.
    let mut lp = vec![vec![Vec::new(); u_max + 1]; t_max];
    for t in 0..t_max {
        for u in 0..=u_max {
            let mut z: Vec<f64> = a[t].iter().zip(&b[u]).map(|(x, y)| x + y).collect();
            log_softmax(&mut z);
            lp[t][u] = z;
        }
    }
    let node = |t: usize, u: usize| &lp[t.min(t_max - 1)][u];
    let mut log_blank = Mat::zeros(t_max + 1, u_max + 1);
    let mut log_label = Mat::zeros(t_max + 1, u_max + 1);
    for t in 0..=t_max {
        for u in 0..=u_max {
            log_blank.row_mut(t)[u] = if t < t_max {
                node(t, u)[BLANK]
            } else {
                f64::NEG_INFINITY
            };
            log_label.row_mut(t)[u] = if u < u_max {
                node(t, u)[labels[u]]
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    let lat = lattice(log_blank, log_label);
    let ng = apply_fastemit(&node_grads(&lat), lambda)?;

    let mut da = Mat::zeros(t_max, k);
    let mut db = Mat::zeros(u_max + 1, k);
    for t in 0..=t_max {
        let f = t.min(t_max - 1);
        for u in 0..=u_max {
            let label = (u < u_max).then(|| (labels[u], ng.label.get(t, u) * scale));
            let dz = logit_grads(node(t, u), ng.blank.get(t, u) * scale, label);
            add_assign(da.row_mut(f), &dz);
            add_assign(db.row_mut(u), &dz);
        }
    }

    let (w, _) = params.head(head);
    let w = w.clone();
    let (gw, gb) = grads.head_mut(head);
    for t in 0..t_max {
        let dat = da.row(t);
        for (i, &x) in feats.row(t).iter().enumerate() {
            for (g, d) in gw.row_mut(i).iter_mut().zip(dat) {
                *g += x * d;
            }
        }
        let out = dfeats.row_mut(t);
        for (i, o) in out.iter_mut().enumerate() {
            *o += w.row(i).iter().zip(dat).map(|(wi, d)| wi * d).sum::<f64>();
        }
    }
    for u in 0..=u_max {
        let dbu = db.row(u);
        add_assign(&mut gb.data, dbu);
        for (i, &x) in gs[u].iter().enumerate() {
            for (g, d) in gw.row_mut(h_dim + i).iter_mut().zip(dbu) {
                *g += x * d;
            }
        }
    }
    if pred_grads {
        for u in 0..=u_max {
            let dbu = db.row(u);
            let dg: Vec<f64> = (0..gs[u].len())
                .map(|i| w.row(h_dim + i).iter().zip(dbu).map(|(wi, d)| wi * d).sum())
                .collect();
            prednet_backward(params, ctxs[u], &gs[u], &dg, grads);
        }
    }
    Ok(HeadResult {
        nll: -lat.log_prob,
        impossible: false,
        lattice: Some(lat),
        dfeats,
    })
}

/// Adds the cascaded layer's gradients and returns its input gradients.
fn cascaded_backward(
    params: &RnntParams,
    causal: &Mat,
    casc: &Mat,
    dcasc: &Mat,
    dcausal: &mut Mat,
    grads: &mut RnntParams,
) {
    let r = params.right_context;
    let h = causal.cols;
    let last = causal.rows - 1;
    for t in 0..causal.rows {
        let da: Vec<f64> = casc
            .row(t)
            .iter()
            .zip(causal.row(t))
            .zip(dcasc.row(t))
            .map(|((c, x), d)| {
                let y = c - x;
                d * (1.0 - y * y)
            })
            .collect();
        add_assign(dcausal.row_mut(t), dcasc.row(t));
        let win = cascaded_window(causal, t, r);
        outer_acc(&mut grads.casc_w, &win, &da);
        add_assign(&mut grads.casc_bias.data, &da);
        let mut dw = vec![0.0; win.len()];
        matvec_acc(&params.casc_w, &da, &mut dw);
        for j in 0..=r {
            add_assign(dcausal.row_mut((t + j).min(last)), &dw[j * h..(j + 1) * h]);
        }
    }
}

/// Backpropagation through time for the causal encoder from a zero state.
fn causal_backward(
    params: &RnntParams,
    frames: &Mat,
    causal: &Mat,
    mut dh: Mat,
    grads: &mut RnntParams,
) {
    let h = causal.cols;
    let zero = vec![0.0; h];
    for t in (0..causal.rows).rev() {
        let da: Vec<f64> = causal
            .row(t)
            .iter()
            .zip(dh.row(t))
            .map(|(y, d)| d * (1.0 - y * y))
            .collect();
        let prev = if t == 0 { &zero[..] } else { causal.row(t - 1) };
        outer_acc(&mut grads.causal_in, frames.row(t), &da);
        outer_acc(&mut grads.causal_rec, prev, &da);
        add_assign(&mut grads.causal_bias.data, &da);
        if t > 0 {
            let mut dprev = vec![0.0; h];
            matvec_acc(&params.causal_rec, &da, &mut dprev);
            add_assign(dh.row_mut(t - 1), &dprev);
        }
    }
}

pub fn rnnt_loss(
    params: &RnntParams,
    frames: &Mat,
    labels: &[usize],
    head: Head,
) -> Result<RnntLoss> {
    rnnt_loss_with(params, frames, labels, head, &LossOptions::default())
}

/// Loss of one head with gradients for every tensor, backpropagated
/// through the joint, prediction network and encoders.
pub fn rnnt_loss_with(
    params: &RnntParams,
    frames: &Mat,
    labels: &[usize],
    head: Head,
    opts: &LossOptions,
) -> Result<RnntLoss> {
    let mut grads = params.zeros_like();
    let h = params.causal_rec.rows;
    let (causal, _) = encode_causal(params, frames, &vec![0.0; h])?;
    let res = match head.pass {
        Pass::First => {
            let r = head_loss(
                params,
                &causal,
                labels,
                head,
                opts.fastemit_lambda,
                1.0,
                true,
                &mut grads,
            )?;
            if !r.impossible && causal.rows > 0 {
                causal_backward(params, frames, &causal, r.dfeats.clone(), &mut grads);
            }
            r
        }
        Pass::Second => {
            let casc = encode_cascaded(params, &causal);
            let r = head_loss(
                params,
                &casc,
                labels,
                head,
                opts.fastemit_lambda,
                1.0,
                true,
                &mut grads,
            )?;
            if !r.impossible && causal.rows > 0 {
                let mut dcausal = Mat::zeros(causal.rows, h);
                cascaded_backward(params, &causal, &casc, &r.dfeats, &mut dcausal, &mut grads);
                causal_backward(params, frames, &causal, dcausal, &mut grads);
            }
            r
        }
    };
    Ok(RnntLoss {
        nll: res.nll,
        impossible: res.impossible,
        grads,
        lattice: res.lattice,
    })
}

/// One utterance prepared for training: frames and head output labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub frames: Mat,
    pub labels: Vec<usize>,
}

/// Builds training examples. With `annotations`, `<EOS>` labels are
/// interleaved after every token labelled EOS.
pub fn build_examples(
    params: &RnntParams,
    utts: &[SpokenUtterance],
    annotations: Option<&[Vec<Label>]>,
) -> Result<Vec<TrainExample>> {
    if let Some(a) = annotations {
        if a.len() != utts.len() {
            return Err(Error::Dimension {
                what: "annotation count",
                expected: utts.len(),
                got: a.len(),
            });
        }
    }
    utts.iter()
        .enumerate()
        .map(|(i, u)| {
            let tokens = match annotations {
                Some(a) => inject_eos(u.tokens(), &a[i])?.with_eos_tokens(),
                None => u.tokens().to_vec(),
            };
            Ok(TrainExample {
                frames: u.frames.frames.clone(),
                labels: params.encode_labels(&tokens)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean per-frame loss of the minibatch.
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Mean per-frame loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Base,
    Eos,
}

/// Precomputed encoder outputs; valid while the encoders are frozen.
struct Cached {
    causal: Mat,
    casc: Mat,
}

fn example_grad(
    params: &RnntParams,
    ex: &TrainExample,
    cached: Option<&Cached>,
    stage: Stage,
    lambda: f64,
    scale: f64,
) -> Result<(f64, RnntParams)> {
    let mut grads = params.zeros_like();
    let h = params.causal_rec.rows;
    let mut nll = 0.0;
    match stage {
        Stage::Base => {
            let (causal, _) = encode_causal(params, &ex.frames, &vec![0.0; h])?;
            let casc = encode_cascaded(params, &causal);
            let r1 = head_loss(
                params,
                &causal,
                &ex.labels,
                Head::WP1,
                lambda,
                scale,
                true,
                &mut grads,
            )?;
            let r2 = head_loss(
                params,
                &casc,
                &ex.labels,
                Head::WP2,
                lambda,
                scale,
                true,
                &mut grads,
            )?;
            nll += r1.nll + r2.nll;
            if causal.rows > 0 {
                let mut dcausal = r1.dfeats;
                cascaded_backward(params, &causal, &casc, &r2.dfeats, &mut dcausal, &mut grads);
                causal_backward(params, &ex.frames, &causal, dcausal, &mut grads);
            }
        }
        Stage::Eos => {
            let c = cached.expect("features are cached for EOS fine-tuning");
            nll += head_loss(
                params,
                &c.causal,
                &ex.labels,
                Head::EOS1,
                lambda,
                scale,
                false,
                &mut grads,
            )?
            .nll;
            nll += head_loss(
                params,
                &c.casc,
                &ex.labels,
                Head::EOS2,
                lambda,
                scale,
                false,
                &mut grads,
            )?
            .nll;
        }
    }
    Ok((nll, grads))
}

/// Per-example gradients in parallel, reduced in index order.
fn batch_grad(
    params: &RnntParams,
    batch: &[usize],
    examples: &[TrainExample],
    cache: &[Cached],
    stage: Stage,
    lambda: f64,
    workers: usize,
) -> Result<(f64, RnntParams)> {
    let frames: usize = batch.iter().map(|&i| examples[i].frames.rows.max(1)).sum();
    let scale = 1.0 / frames as f64;
    let run = |i: usize| example_grad(params, &examples[i], cache.get(i), stage, lambda, scale);
    let results: Vec<Result<(f64, RnntParams)>> = if workers <= 1 || batch.len() == 1 {
        batch.iter().map(|&i| run(i)).collect()
    } else {
        let chunk = batch.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|&i| run(i)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut total = params.zeros_like();
    let mut nll = 0.0;
    for r in results {
        let (l, g) = r?;
        nll += l;
        for ((_, t), (_, gi)) in total.tensors_mut().into_iter().zip(g.tensors()) {
            t.axpy(1.0, gi);
        }
    }
    Ok((nll * scale, total))
}

fn train_loop(
    params: &mut RnntParams,
    examples: &[TrainExample],
    hyper: &RnntHyper,
    stage: Stage,
    log: &mut TrainLog,
) -> Result<()> {
    let cache: Vec<Cached> = match stage {
        Stage::Base => Vec::new(),
        Stage::Eos => {
            let h = params.causal_rec.rows;
            examples
                .iter()
                .map(|ex| {
                    let (causal, _) = encode_causal(params, &ex.frames, &vec![0.0; h])?;
                    let casc = encode_cascaded(params, &causal);
                    Ok(Cached { causal, casc })
                })
                .collect::<Result<_>>()?
        }
    };
    let tag = match stage {
        Stage::Base => "rnnt-base-shuffle",
        Stage::Eos => "rnnt-eos-shuffle",
    };
    let mut rng = stream(hyper.seed, tag);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let workers = hyper.workers();
    let mut velocity = params.zeros_like();
    let mut second = params.zeros_like();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in order.chunks(hyper.batch_size) {
            let (loss, mut grads) = batch_grad(
                params,
                batch,
                examples,
                &cache,
                stage,
                hyper.fastemit_lambda,
                workers,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            if let Stage::Eos = stage {
                for (name, g) in grads.tensors_mut() {
                    if !EOS_TENSORS.contains(&name) {
                        g.fill(0.0);
                    }
                }
            }
            let norm = grads.sq_norm().sqrt();
            let clip = if hyper.gradient_clip_norm > 0.0 && norm > hyper.gradient_clip_norm {
                hyper.gradient_clip_norm / norm
            } else {
                1.0
            };
            let t = (step + 1) as i32;
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .zip(second.tensors_mut())
                .zip(grads.tensors());
            for ((((name, p), (_, v)), (_, m2)), (_, g)) in tensors {
                if !(matches!(stage, Stage::Base) || EOS_TENSORS.contains(&name)) {
                    continue;
                }
                match hyper.optimizer {
                    Optimizer::Sgd => {
                        v.scale(hyper.momentum);
                        v.axpy(clip, g);
                        p.axpy(-hyper.learning_rate, v);
                    }
                    Optimizer::Adam => {
                        let b1 = hyper.momentum;
                        let c1 = 1.0 - b1.powi(t);
                        let c2 = 1.0 - ADAM_BETA2.powi(t);
                        for (((pi, vi), si), gi) in p
                            .data
                            .iter_mut()
                            .zip(&mut v.data)
                            .zip(&mut m2.data)
                            .zip(&g.data)
                        {
                            let gi = clip * gi;
                            *vi = b1 * *vi + (1.0 - b1) * gi;
                            *si = ADAM_BETA2 * *si + (1.0 - ADAM_BETA2) * gi * gi;
                            *pi -=
                                hyper.learning_rate * (*vi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
            if !params.all_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: f64::NAN,
                });
            }
            log.rows.push(LogRow {
                step,
                epoch,
                loss,
                grad_norm: norm,
            });
            sum += loss;
            n += 1;
            step += 1;
        }
        log.epoch_loss.push(sum / n.max(1) as f64);
    }
    params.final_loss = log.epoch_loss.last().copied().or(params.final_loss);
    Ok(())
}

/// Trains the encoders, prediction network and both wordpiece heads.
/// The EOS heads stay at their initial values.
pub fn train_base(
    vocab: Vec<String>,
    examples: &[TrainExample],
    hyper: &RnntHyper,
) -> Result<(RnntParams, TrainLog)> {
    hyper.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("corpus", "no training utterances"));
    }
    let mut params = RnntParams::init(vocab, hyper.dims, hyper.seed)?;
    let eos = params.eos_index();
    if examples.iter().any(|e| e.labels.contains(&eos)) {
        return Err(Error::invalid(
            "corpus",
            "base training data must not contain <EOS>",
        ));
    }
    let mut log = TrainLog::default();
    train_loop(&mut params, examples, hyper, Stage::Base, &mut log)?;
    Ok((params, log))
}

/// Fine-tunes both EOS heads on `<EOS>`-interleaved label sequences with
/// every other tensor frozen. The heads are warm-started from the
/// wordpiece heads, with a zero `<EOS>` column.
pub fn finetune_eos(
    base: &RnntParams,
    examples: &[TrainExample],
    hyper: &RnntHyper,
) -> Result<(RnntParams, TrainLog)> {
    hyper.validate()?;
    base.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("corpus", "no fine-tuning utterances"));
    }
    let mut params = base.clone();
    let k = params.vocab_size() + 1;
    for (wp, eos) in [(Head::WP1, Head::EOS1), (Head::WP2, Head::EOS2)] {
        debug_assert_eq!(eos.kind, HeadKind::Eos);
        let (ww, wb) = {
            let (w, b) = params.head(wp);
            (w.clone(), b.clone())
        };
        let (ew, eb) = params.head_mut(eos);
        for i in 0..ww.rows {
            ew.row_mut(i)[..k].copy_from_slice(ww.row(i));
            ew.row_mut(i)[k] = 0.0;
        }
        eb.data[..k].copy_from_slice(&wb.data);
        eb.data[k] = 0.0;
    }
    let mut log = TrainLog::default();
    let eos = params.eos_index();
    if !examples.iter().any(|e| e.labels.contains(&eos)) {
        log.warnings
            .push("fine-tuning corpus contains no <EOS> labels".into());
    }
    train_loop(&mut params, examples, hyper, Stage::Eos, &mut log)?;
    Ok((params, log))
}
