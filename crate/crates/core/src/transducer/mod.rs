//! Toy streaming transducer.
//!
//! A causal tanh RNN encodes frames; a residual cascaded layer re-encodes
//! each causal output together with its `R` right neighbours. A stateless
//! prediction network embeds the last two words. Four linear joints read
//! `[h; g]`: a wordpiece head and an EOS head for each encoder pass.
//!
//! Output index layout for every head: `0` is blank, `1..=V` are words in
//! vocabulary order, and the EOS heads add `V + 1` for `<EOS>`.

mod lattice;
mod train;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::punct::EOS;
use crate::rng::stream;
use crate::tensor::{add_assign, matvec_acc, outer_acc, vecmat_acc, Mat, ParamSet};

pub use lattice::{
    apply_fastemit, lattice, logit_grads, node_grads, rnnt_loss_bruteforce, rnnt_loss_table,
    LatticeQuantities, NodeGrads, TableLoss, BRUTEFORCE_MAX_CELLS,
};
pub use train::{
    build_examples, finetune_eos, rnnt_loss, rnnt_loss_with, train_base, LogRow, LossOptions,
    Optimizer, RnntHyper, RnntLoss, TrainExample, TrainLog, EOS_TENSORS,
};

pub const BLANK: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pass {
    /// Decoder 1, reading causal encoder outputs.
    First,
    /// Decoder 2, reading cascaded encoder outputs.
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    Wp,
    Eos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Head {
    pub pass: Pass,
    pub kind: HeadKind,
}

impl Head {
    pub const WP1: Head = Head {
        pass: Pass::First,
        kind: HeadKind::Wp,
    };
    pub const EOS1: Head = Head {
        pass: Pass::First,
        kind: HeadKind::Eos,
    };
    pub const WP2: Head = Head {
        pass: Pass::Second,
        kind: HeadKind::Wp,
    };
    pub const EOS2: Head = Head {
        pass: Pass::Second,
        kind: HeadKind::Eos,
    };
    pub const ALL: [Head; 4] = [Head::WP1, Head::EOS1, Head::WP2, Head::EOS2];
}

/// Last two words seen, older first; `None` is the start-of-stream slot.
pub type Context = [Option<usize>; 2];

pub const START_CONTEXT: Context = [None, None];

pub fn push_context(ctx: Context, word: usize) -> Context {
    [ctx[1], Some(word)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnntDims {
    pub feature_dim: usize,
    pub hidden: usize,
    pub pred_dim: usize,
    pub right_context: usize,
}

impl Default for RnntDims {
    fn default() -> Self {
        RnntDims {
            feature_dim: 16,
            hidden: 32,
            pred_dim: 16,
            right_context: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnntParams {
    pub vocab: Vec<String>,
    pub right_context: usize,
    pub causal_in: Mat,
    pub causal_rec: Mat,
    pub causal_bias: Mat,
    pub casc_w: Mat,
    pub casc_bias: Mat,
    /// Rows `0..V` embed words; row `V` is the start slot.
    pub pred_embed: Mat,
    pub pred_w: Mat,
    pub pred_bias: Mat,
    pub wp1_w: Mat,
    pub wp1_bias: Mat,
    pub eos1_w: Mat,
    pub eos1_bias: Mat,
    pub wp2_w: Mat,
    pub wp2_bias: Mat,
    pub eos2_w: Mat,
    pub eos2_bias: Mat,
    pub final_loss: Option<f64>,
}

impl ParamSet for RnntParams {
    fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("causal_in", &self.causal_in),
            ("causal_rec", &self.causal_rec),
            ("causal_bias", &self.causal_bias),
            ("casc_w", &self.casc_w),
            ("casc_bias", &self.casc_bias),
            ("pred_embed", &self.pred_embed),
            ("pred_w", &self.pred_w),
            ("pred_bias", &self.pred_bias),
            ("wp1_w", &self.wp1_w),
            ("wp1_bias", &self.wp1_bias),
            ("eos1_w", &self.eos1_w),
            ("eos1_bias", &self.eos1_bias),
            ("wp2_w", &self.wp2_w),
            ("wp2_bias", &self.wp2_bias),
            ("eos2_w", &self.eos2_w),
            ("eos2_bias", &self.eos2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("causal_in", &mut self.causal_in),
            ("causal_rec", &mut self.causal_rec),
            ("causal_bias", &mut self.causal_bias),
            ("casc_w", &mut self.casc_w),
            ("casc_bias", &mut self.casc_bias),
            ("pred_embed", &mut self.pred_embed),
            ("pred_w", &mut self.pred_w),
            ("pred_bias", &mut self.pred_bias),
            ("wp1_w", &mut self.wp1_w),
            ("wp1_bias", &mut self.wp1_bias),
            ("eos1_w", &mut self.eos1_w),
            ("eos1_bias", &mut self.eos1_bias),
            ("wp2_w", &mut self.wp2_w),
            ("wp2_bias", &mut self.wp2_bias),
            ("eos2_w", &mut self.eos2_w),
            ("eos2_bias", &mut self.eos2_bias),
        ]
    }
}

impl RnntParams {
    pub fn init(vocab: Vec<String>, dims: RnntDims, seed: u64) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::invalid("vocab", "must contain at least one word"));
        }
        if vocab.iter().any(|w| w == EOS) {
            return Err(Error::invalid("vocab", "must not contain the EOS marker"));
        }
        for (field, v) in [
            ("feature_dim", dims.feature_dim),
            ("hidden", dims.hidden),
            ("pred_dim", dims.pred_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        let (d, h, p, r) = (
            dims.feature_dim,
            dims.hidden,
            dims.pred_dim,
            dims.right_context,
        );
        let v = vocab.len();
        let mut rng = stream(seed, "rnnt-init");
        let s = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let mut head = |k: usize| (Mat::uniform(h + p, k, s(h + p), &mut rng), Mat::zeros(1, k));
        let (wp1_w, wp1_bias) = head(v + 1);
        let (eos1_w, eos1_bias) = head(v + 2);
        let (wp2_w, wp2_bias) = head(v + 1);
        let (eos2_w, eos2_bias) = head(v + 2);
        let casc_w = Mat::uniform((r + 1) * h, h, s((r + 1) * h), &mut rng);
        Ok(RnntParams {
            right_context: r,
            causal_in: Mat::uniform(d, h, INPUT_INIT_BOUND, &mut rng),
            causal_rec: Mat::uniform(h, h, s(h), &mut rng),
            causal_bias: Mat::zeros(1, h),
            casc_w,
            casc_bias: Mat::zeros(1, h),
            pred_embed: Mat::uniform(v + 1, p, 0.5, &mut rng),
            pred_w: Mat::uniform(2 * p, p, s(2 * p), &mut rng),
            pred_bias: Mat::zeros(1, p),
            wp1_w,
            wp1_bias,
            eos1_w,
            eos1_bias,
            wp2_w,
            wp2_bias,
            eos2_w,
            eos2_bias,
            vocab,
            final_loss: None,
        })
    }

    pub fn dims(&self) -> RnntDims {
        RnntDims {
            feature_dim: self.causal_in.rows,
            hidden: self.causal_rec.rows,
            pred_dim: self.pred_w.cols,
            right_context: self.right_context,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos_index(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn output_dim(&self, head: Head) -> usize {
        match head.kind {
            HeadKind::Wp => self.vocab.len() + 1,
            HeadKind::Eos => self.vocab.len() + 2,
        }
    }

    /// Shape check across all tensors.
    pub fn validate(&self) -> Result<()> {
        let RnntDims {
            feature_dim: d,
            hidden: h,
            pred_dim: p,
            right_context: r,
        } = self.dims();
        let v = self.vocab.len();
        let expect = [
            ("causal_in", d, h),
            ("causal_rec", h, h),
            ("causal_bias", 1, h),
            ("casc_w", (r + 1) * h, h),
            ("casc_bias", 1, h),
            ("pred_embed", v + 1, p),
            ("pred_w", 2 * p, p),
            ("pred_bias", 1, p),
            ("wp1_w", h + p, v + 1),
            ("wp1_bias", 1, v + 1),
            ("eos1_w", h + p, v + 2),
            ("eos1_bias", 1, v + 2),
            ("wp2_w", h + p, v + 1),
            ("wp2_bias", 1, v + 1),
            ("eos2_w", h + p, v + 2),
            ("eos2_bias", 1, v + 2),
        ];
        for ((name, m), (ename, rows, cols)) in self.tensors().into_iter().zip(expect) {
            debug_assert_eq!(name, ename);
            if m.rows != rows || m.cols != cols || m.data.len() != rows * cols {
                return Err(Error::Dimension {
                    what: name,
                    expected: rows * cols,
                    got: m.data.len(),
                });
            }
        }
        if !self.all_finite() {
            return Err(Error::Contract(
                "parameters contain non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.scale_all(0.0);
        g.final_loss = None;
        g
    }

    pub fn head(&self, head: Head) -> (&Mat, &Mat) {
        match (head.pass, head.kind) {
            (Pass::First, HeadKind::Wp) => (&self.wp1_w, &self.wp1_bias),
            (Pass::First, HeadKind::Eos) => (&self.eos1_w, &self.eos1_bias),
            (Pass::Second, HeadKind::Wp) => (&self.wp2_w, &self.wp2_bias),
            (Pass::Second, HeadKind::Eos) => (&self.eos2_w, &self.eos2_bias),
        }
    }

    pub fn head_mut(&mut self, head: Head) -> (&mut Mat, &mut Mat) {
        match (head.pass, head.kind) {
            (Pass::First, HeadKind::Wp) => (&mut self.wp1_w, &mut self.wp1_bias),
            (Pass::First, HeadKind::Eos) => (&mut self.eos1_w, &mut self.eos1_bias),
            (Pass::Second, HeadKind::Wp) => (&mut self.wp2_w, &mut self.wp2_bias),
            (Pass::Second, HeadKind::Eos) => (&mut self.eos2_w, &mut self.eos2_bias),
        }
    }

    fn word_index(&self) -> HashMap<&str, usize> {
        self.vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect()
    }

    /// Maps tokens (words or `<EOS>`) to head output indices.
    pub fn encode_labels(&self, tokens: &[String]) -> Result<Vec<usize>> {
        let index = self.word_index();
        tokens
            .iter()
            .map(|t| {
                if t == EOS {
                    Ok(self.eos_index())
                } else {
                    index.get(t.as_str()).map(|&i| i + 1).ok_or_else(|| {
                        Error::invalid("tokens", format!("`{t}` is not in the model vocabulary"))
                    })
                }
            })
            .collect()
    }

    pub fn label_token(&self, label: usize) -> Option<&str> {
        match label {
            BLANK => None,
            l if l <= self.vocab.len() => Some(self.vocab[l - 1].as_str()),
            l if l == self.eos_index() => Some(EOS),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let p: RnntParams = serde_json::from_reader(f)?;
        p.validate()?;
        Ok(p)
    }
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// One step of the causal recurrence.
/// Input weight bound giving unit-variance pre-activations for unit-norm
/// frames; fan-in scaling leaves the acoustic path too weak to train.
pub const INPUT_INIT_BOUND: f64 = 1.732_050_807_568_877_2;

pub fn causal_step(params: &RnntParams, x: &[f64], state: &[f64]) -> Vec<f64> {
    let mut a = params.causal_bias.data.clone();
    vecmat_acc(x, &params.causal_in, &mut a);
    vecmat_acc(state, &params.causal_rec, &mut a);
    tanh_in_place(&mut a);
    a
}

/// Runs the causal encoder from `initial_state`; returns all outputs and
/// the final state.
pub fn encode_causal(
    params: &RnntParams,
    frames: &Mat,
    initial_state: &[f64],
) -> Result<(Mat, Vec<f64>)> {
    let h = params.causal_rec.rows;
    if frames.rows > 0 && frames.cols != params.causal_in.rows {
        return Err(Error::Dimension {
            what: "frame feature dimension",
            expected: params.causal_in.rows,
            got: frames.cols,
        });
    }
    if initial_state.len() != h {
        return Err(Error::Dimension {
            what: "encoder state",
            expected: h,
            got: initial_state.len(),
        });
    }
    let mut out = Mat::zeros(frames.rows, h);
    let mut state = initial_state.to_vec();
    for t in 0..frames.rows {
        state = causal_step(params, frames.row(t), &state);
        out.row_mut(t).copy_from_slice(&state);
    }
    Ok((out, state))
}

/// Concatenation of causal rows `t..=t+R`, clamped to the last row.
pub fn cascaded_window(causal: &Mat, t: usize, r: usize) -> Vec<f64> {
    let last = causal.rows - 1;
    let mut w = Vec::with_capacity((r + 1) * causal.cols);
    for j in 0..=r {
        w.extend_from_slice(causal.row((t + j).min(last)));
    }
    w
}

/// Cascaded output at `t`: `causal[t] + tanh(W [causal[t..=t+R]] + b)`.
pub fn cascaded_at(params: &RnntParams, causal: &Mat, t: usize) -> Vec<f64> {
    let w = cascaded_window(causal, t, params.right_context);
    let mut a = params.casc_bias.data.clone();
    vecmat_acc(&w, &params.casc_w, &mut a);
    tanh_in_place(&mut a);
    add_assign(&mut a, causal.row(t.min(causal.rows - 1)));
    a
}

pub fn encode_cascaded(params: &RnntParams, causal: &Mat) -> Mat {
    let mut out = Mat::zeros(causal.rows, params.casc_bias.cols);
    for t in 0..causal.rows {
        let c = cascaded_at(params, causal, t);
        out.row_mut(t).copy_from_slice(&c);
    }
    out
}

fn embed_row(params: &RnntParams, slot: Option<usize>) -> &[f64] {
    params.pred_embed.row(slot.unwrap_or(params.vocab.len()))
}

/// Concatenated embeddings of a context, the prediction network's input.
pub fn prednet_input(params: &RnntParams, ctx: Context) -> Vec<f64> {
    let mut e = embed_row(params, ctx[0]).to_vec();
    e.extend_from_slice(embed_row(params, ctx[1]));
    e
}

pub fn prednet(params: &RnntParams, ctx: Context) -> Vec<f64> {
    let e = prednet_input(params, ctx);
    let mut g = params.pred_bias.data.clone();
    vecmat_acc(&e, &params.pred_w, &mut g);
    tanh_in_place(&mut g);
    g
}

/// `out += x · m[offset..offset + x.len()]`.
fn vecmat_rows_acc(x: &[f64], m: &Mat, offset: usize, out: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(m.row(offset + i)) {
            *o += xi * w;
        }
    }
}

/// Encoder half of a joint: `h · W[..H]`.
pub fn joint_enc(params: &RnntParams, h: &[f64], head: Head) -> Vec<f64> {
    let (w, _) = params.head(head);
    let mut out = vec![0.0; w.cols];
    vecmat_rows_acc(h, w, 0, &mut out);
    out
}

/// Prediction half of a joint including the bias: `g · W[H..] + b`.
pub fn joint_pred(params: &RnntParams, g: &[f64], head: Head) -> Vec<f64> {
    let (w, b) = params.head(head);
    let mut out = b.data.clone();
    vecmat_rows_acc(g, w, params.causal_rec.rows, &mut out);
    out
}

/// Logits of one joint for encoder vector `h` and prediction vector `g`.
pub fn joint_logits(params: &RnntParams, h: &[f64], g: &[f64], head: Head) -> Vec<f64> {
    let mut z = joint_enc(params, h, head);
    for (zi, bi) in z.iter_mut().zip(joint_pred(params, g, head)) {
        *zi += bi;
    }
    z
}

/// Prediction-network backward pass for one context.
pub(crate) fn prednet_backward(
    params: &RnntParams,
    ctx: Context,
    g: &[f64],
    dg: &[f64],
    grads: &mut RnntParams,
) {
    let da: Vec<f64> = g.iter().zip(dg).map(|(y, d)| d * (1.0 - y * y)).collect();
    let e = prednet_input(params, ctx);
    outer_acc(&mut grads.pred_w, &e, &da);
    add_assign(&mut grads.pred_bias.data, &da);
    let mut de = vec![0.0; e.len()];
    matvec_acc(&params.pred_w, &da, &mut de);
    let p = params.pred_w.cols;
    let v = params.vocab.len();
    for (k, slot) in ctx.iter().enumerate() {
        let row = slot.unwrap_or(v);
        add_assign(grads.pred_embed.row_mut(row), &de[k * p..(k + 1) * p]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> RnntParams {
        let vocab = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        RnntParams::init(
            vocab,
            RnntDims {
                feature_dim: 3,
                hidden: 4,
                pred_dim: 3,
                right_context: 2,
            },
            5,
        )
        .unwrap()
    }

    fn random_frames(t: usize, d: usize, seed: u64) -> Mat {
        let mut rng = stream(seed, "frames");
        let mut m = Mat::zeros(t, d);
        m.data
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        m
    }

    #[test]
    fn empty_input_keeps_state() {
        let p = small();
        let s0 = vec![0.1, -0.2, 0.3, 0.0];
        let (out, s) = encode_causal(&p, &Mat::zeros(0, 3), &s0).unwrap();
        assert_eq!(out.rows, 0);
        assert_eq!(s, s0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = small();
        assert!(matches!(
            encode_causal(&p, &Mat::zeros(2, 5), &[0.0; 4]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn causal_outputs_ignore_future_frames() {
        let p = small();
        let x = random_frames(8, 3, 1);
        let (a, _) = encode_causal(&p, &x, &[0.0; 4]).unwrap();
        let mut y = x.clone();
        y.row_mut(5)[1] += 0.7;
        let (b, _) = encode_causal(&p, &y, &[0.0; 4]).unwrap();
        for t in 0..5 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn split_encoding_matches_whole() {
        let p = small();
        let x = random_frames(9, 3, 2);
        let (whole, s_whole) = encode_causal(&p, &x, &[0.0; 4]).unwrap();
        let (a, s_mid) = encode_causal(&p, &x.slice_rows(0, 4), &[0.0; 4]).unwrap();
        let (b, s_end) = encode_causal(&p, &x.slice_rows(4, 9), &s_mid).unwrap();
        assert_eq!(s_whole, s_end);
        for t in 0..4 {
            assert_eq!(whole.row(t), a.row(t));
        }
        for t in 4..9 {
            assert_eq!(whole.row(t), b.row(t - 4));
        }
    }

    #[test]
    fn cascaded_reads_right_context_only() {
        let p = small();
        let (c, _) = encode_causal(&p, &random_frames(10, 3, 3), &[0.0; 4]).unwrap();
        let base = encode_cascaded(&p, &c);
        let k = 7;
        let mut c2 = c.clone();
        c2.row_mut(k)[0] += 0.5;
        let pert = encode_cascaded(&p, &c2);
        for t in 0..10 {
            let changed = base.row(t) != pert.row(t);
            assert_eq!(changed, t + p.right_context >= k && t <= k, "t={t}");
        }
    }

    #[test]
    fn cascaded_pads_with_last_frame() {
        let vocab = vec!["a".to_string()];
        let p = RnntParams::init(
            vocab,
            RnntDims {
                feature_dim: 2,
                hidden: 3,
                pred_dim: 2,
                right_context: 3,
            },
            1,
        )
        .unwrap();
        let (c, _) = encode_causal(&p, &random_frames(5, 2, 4), &[0.0; 3]).unwrap();
        let w = cascaded_window(&c, 3, 3);
        assert_eq!(&w[0..3], c.row(3));
        for j in 1..4 {
            assert_eq!(&w[j * 3..(j + 1) * 3], c.row(4));
        }
    }

    #[test]
    fn zero_right_context_is_pointwise() {
        let vocab = vec!["a".to_string()];
        let p = RnntParams::init(
            vocab,
            RnntDims {
                feature_dim: 2,
                hidden: 3,
                pred_dim: 2,
                right_context: 0,
            },
            1,
        )
        .unwrap();
        let (c, _) = encode_causal(&p, &random_frames(6, 2, 5), &[0.0; 3]).unwrap();
        let mut c2 = c.clone();
        c2.row_mut(3)[2] -= 0.4;
        let (a, b) = (encode_cascaded(&p, &c), encode_cascaded(&p, &c2));
        for t in 0..6 {
            assert_eq!(a.row(t) == b.row(t), t != 3);
        }
    }

    #[test]
    fn prednet_sees_two_words() {
        let p = small();
        let abc = push_context(push_context(push_context(START_CONTEXT, 0), 1), 2);
        let xbc = push_context(push_context(push_context(START_CONTEXT, 2), 1), 2);
        assert_eq!(prednet(&p, abc), prednet(&p, xbc));
        let bc = push_context(push_context(START_CONTEXT, 1), 2);
        let cb = push_context(push_context(START_CONTEXT, 2), 1);
        assert_ne!(prednet(&p, bc), prednet(&p, cb));
        assert_eq!(prednet(&p, START_CONTEXT), prednet(&p, [None, None]));
    }

    #[test]
    fn joint_shapes_and_linearity() {
        let mut p = small();
        let g = prednet(&p, START_CONTEXT);
        let h: Vec<f64> = vec![0.3, -0.1, 0.2, 0.5];
        for head in [Head::WP1, Head::WP2] {
            let eos = Head {
                kind: HeadKind::Eos,
                ..head
            };
            assert_eq!(
                joint_logits(&p, &h, &g, eos).len(),
                joint_logits(&p, &h, &g, head).len() + 1
            );
        }
        let h2: Vec<f64> = h.iter().map(|x| 2.0 * x).collect();
        let z0 = joint_logits(&p, &[0.0; 4], &g, Head::EOS2);
        let z1 = joint_logits(&p, &h, &g, Head::EOS2);
        let z2 = joint_logits(&p, &h2, &g, Head::EOS2);
        for k in 0..z0.len() {
            assert!(((z2[k] - z1[k]) - (z1[k] - z0[k])).abs() < 1e-12);
        }
        p.wp1_w.fill(0.0);
        assert!(joint_logits(&p, &h, &g, Head::WP1)
            .iter()
            .all(|&z| z == 0.0));
    }

    #[test]
    fn labels_round_trip() {
        let p = small();
        let toks: Vec<String> = ["b", EOS, "a"].iter().map(|s| s.to_string()).collect();
        let ids = p.encode_labels(&toks).unwrap();
        assert_eq!(ids, vec![2, 4, 1]);
        let back: Vec<&str> = ids.iter().map(|&l| p.label_token(l).unwrap()).collect();
        assert_eq!(back, vec!["b", EOS, "a"]);
        assert!(p.encode_labels(&["zzz".to_string()]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        p.save(&path).unwrap();
        assert_eq!(RnntParams::load(&path).unwrap(), p);
    }
}
