//! Frame-synchronous breadth-first beam search.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::tensor::{log_add_exp, log_softmax};
use crate::transducer::{
    joint_enc, joint_pred, prednet, push_context, Context, Head, RnntParams, BLANK,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted word labels (head output indices `1..=V`).
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub pred_context: Context,
}

impl Hypothesis {
    pub fn start(pred_context: Context) -> Self {
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            pred_context,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Natural-log band below the best hypothesis.
    pub pruning_threshold: f64,
    pub max_expansion_depth: usize,
}

/// Higher score first, then lexicographically smaller token sequence.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Caches the prediction half of a joint per context.
pub struct Scorer<'a> {
    pub params: &'a RnntParams,
    pub head: Head,
    pred: HashMap<Context, Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(params: &'a RnntParams, head: Head) -> Self {
        Scorer {
            params,
            head,
            pred: HashMap::new(),
        }
    }

    /// Log-softmax of the joint for an encoder half `enc` and a context.
    pub fn log_probs(&mut self, enc: &[f64], ctx: Context) -> Vec<f64> {
        let (params, head) = (self.params, self.head);
        let pred = self
            .pred
            .entry(ctx)
            .or_insert_with(|| joint_pred(params, &prednet(params, ctx), head));
        let mut z = enc.to_vec();
        for (zi, b) in z.iter_mut().zip(pred.iter()) {
            *zi += b;
        }
        log_softmax(&mut z);
        z
    }

    pub fn encode(&self, h: &[f64]) -> Vec<f64> {
        joint_enc(self.params, h, self.head)
    }
}

fn merge(finished: &mut Vec<Hypothesis>, hyp: Hypothesis) {
    match finished.iter_mut().find(|f| f.tokens == hyp.tokens) {
        Some(f) => f.log_prob = log_add_exp(f.log_prob, hyp.log_prob),
        None => finished.push(hyp),
    }
}

/// Keeps the top `beam_size` entries that lie within the pruning band.
fn prune(pool: &mut Vec<(Hypothesis, bool)>, cfg: &BeamConfig) {
    pool.sort_by(|a, b| rank(&a.0, &b.0).then_with(|| a.1.cmp(&b.1)));
    pool.truncate(cfg.beam_size.max(1));
    if let Some(best) = pool.first().map(|p| p.0.log_prob) {
        pool.retain(|p| p.0.log_prob >= best - cfg.pruning_threshold);
    }
}

/// Advances the beam by one frame. Each hypothesis may emit up to
/// `max_expansion_depth` words before the blank that ends the frame.
/// Finished and still-open candidates compete in one pool at every depth.
pub fn step_beam(
    beam: &[Hypothesis],
    h_t: &[f64],
    scorer: &mut Scorer<'_>,
    cfg: &BeamConfig,
) -> Vec<Hypothesis> {
    let enc = scorer.encode(h_t);
    let labels = scorer.params.vocab_size();
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut open: Vec<Hypothesis> = beam.to_vec();
    for depth in 0..=cfg.max_expansion_depth {
        let mut expansions = Vec::new();
        for hyp in &open {
            let lp = scorer.log_probs(&enc, hyp.pred_context);
            merge(
                &mut finished,
                Hypothesis {
                    log_prob: hyp.log_prob + lp[BLANK],
                    ..hyp.clone()
                },
            );
            if depth < cfg.max_expansion_depth {
                for k in 1..=labels {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(k);
                    expansions.push(Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + lp[k],
                        pred_context: push_context(hyp.pred_context, k - 1),
                    });
                }
            }
        }
        let mut pool: Vec<(Hypothesis, bool)> = finished
            .drain(..)
            .map(|h| (h, false))
            .chain(expansions.into_iter().map(|h| (h, true)))
            .collect();
        prune(&mut pool, cfg);
        open.clear();
        for (h, is_open) in pool {
            if is_open {
                open.push(h);
            } else {
                finished.push(h);
            }
        }
        if open.is_empty() {
            break;
        }
    }
    finished.sort_by(rank);
    finished
}

/// `-ln p(<EOS>)` from an EOS head given encoder vector `h_t` and context.
pub fn eos_neg_log_posterior(params: &RnntParams, h_t: &[f64], ctx: Context, head: Head) -> f64 {
    let mut scorer = Scorer::new(params, head);
    let enc = scorer.encode(h_t);
    -scorer.log_probs(&enc, ctx)[params.eos_index()]
}
