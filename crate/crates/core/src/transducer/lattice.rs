//! Transducer lattice over nodes `(t, u)`, `t ∈ 0..=T`, `u ∈ 0..=U`.
//!
//! A blank arc `(t,u) → (t+1,u)` consumes frame `t`; a label arc
//! `(t,u) → (t,u+1)` emits `y_{u+1}` while reading frame `min(t, T-1)`.
//! Paths start at `(0,0)` and end at `(T,U)`, so every interleaving of `T`
//! blanks and `U` labels is one alignment.

use crate::error::{Error, Result};
use crate::tensor::{log_add_exp, Mat};

use super::BLANK;

/// Largest `T·U` the enumeration oracle accepts.
pub const BRUTEFORCE_MAX_CELLS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeQuantities {
    pub alpha: Mat,
    pub beta: Mat,
    /// Log-probability of the blank arc leaving each node; `-inf` on row `T`.
    pub log_blank: Mat,
    /// Log-probability of the label arc leaving each node; `-inf` on column `U`.
    pub log_label: Mat,
    pub log_prob: f64,
}

impl LatticeQuantities {
    pub fn frames(&self) -> usize {
        self.alpha.rows - 1
    }

    pub fn labels(&self) -> usize {
        self.alpha.cols - 1
    }

    /// `log Σ_{t+u=n} α(t,u)·β(t,u)`; equals the total for every `n`.
    pub fn diagonal_log_prob(&self, n: usize) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for t in 0..=self.frames() {
            if n >= t && n - t <= self.labels() {
                let u = n - t;
                acc = log_add_exp(acc, self.alpha.get(t, u) + self.beta.get(t, u));
            }
        }
        acc
    }
}

/// Forward-backward over precomputed arc log-probabilities.
pub fn lattice(log_blank: Mat, log_label: Mat) -> LatticeQuantities {
    let (rows, cols) = (log_blank.rows, log_blank.cols);
    let (t_max, u_max) = (rows - 1, cols - 1);
    let mut alpha = Mat::zeros(rows, cols);
    alpha.fill(f64::NEG_INFINITY);
    alpha.row_mut(0)[0] = 0.0;
    for t in 0..rows {
        for u in 0..cols {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = f64::NEG_INFINITY;
            if t > 0 {
                a = alpha.get(t - 1, u) + log_blank.get(t - 1, u);
            }
            if u > 0 {
                a = log_add_exp(a, alpha.get(t, u - 1) + log_label.get(t, u - 1));
            }
            alpha.row_mut(t)[u] = a;
        }
    }
    let mut beta = Mat::zeros(rows, cols);
    beta.fill(f64::NEG_INFINITY);
    beta.row_mut(t_max)[u_max] = 0.0;
    for t in (0..rows).rev() {
        for u in (0..cols).rev() {
            if t == t_max && u == u_max {
                continue;
            }
            let mut b = f64::NEG_INFINITY;
            if t < t_max {
                b = log_blank.get(t, u) + beta.get(t + 1, u);
            }
            if u < u_max {
                b = log_add_exp(b, log_label.get(t, u) + beta.get(t, u + 1));
            }
            beta.row_mut(t)[u] = b;
        }
    }
    let log_prob = alpha.get(t_max, u_max);
    LatticeQuantities {
        alpha,
        beta,
        log_blank,
        log_label,
        log_prob,
    }
}

/// Gradients of the loss `-log P` with respect to each arc's log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGrads {
    pub blank: Mat,
    pub label: Mat,
}

pub fn node_grads(lat: &LatticeQuantities) -> NodeGrads {
    let (rows, cols) = (lat.alpha.rows, lat.alpha.cols);
    let mut blank = Mat::zeros(rows, cols);
    let mut label = Mat::zeros(rows, cols);
    for t in 0..rows {
        for u in 0..cols {
            let a = lat.alpha.get(t, u);
            if t + 1 < rows {
                let w = a + lat.log_blank.get(t, u) + lat.beta.get(t + 1, u) - lat.log_prob;
                blank.row_mut(t)[u] = -w.exp();
            }
            if u + 1 < cols {
                let w = a + lat.log_label.get(t, u) + lat.beta.get(t, u + 1) - lat.log_prob;
                label.row_mut(t)[u] = -w.exp();
            }
        }
    }
    NodeGrads { blank, label }
}

/// FastEmit: label-arc gradients scaled by `1 + λ`, blank arcs untouched.
pub fn apply_fastemit(grads: &NodeGrads, lambda: f64) -> Result<NodeGrads> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(
            "fastemit_lambda",
            format!("must be a finite value >= 0, got {lambda}"),
        ));
    }
    let mut out = grads.clone();
    if lambda != 0.0 {
        out.label.scale(1.0 + lambda);
    }
    Ok(out)
}

/// Backpropagates arc gradients through one node's log-softmax:
/// `dz_j = g_j − p_j Σ_k g_k`.
pub fn logit_grads(log_probs: &[f64], blank_grad: f64, label: Option<(usize, f64)>) -> Vec<f64> {
    let total = blank_grad + label.map_or(0.0, |(_, g)| g);
    let mut dz: Vec<f64> = log_probs.iter().map(|lp| -lp.exp() * total).collect();
    dz[BLANK] += blank_grad;
    if let Some((k, g)) = label {
        dz[k] += g;
    }
    dz
}

fn log_softmax_vec(z: &[f64]) -> Vec<f64> {
    let mut v = z.to_vec();
    crate::tensor::log_softmax(&mut v);
    v
}

fn check_table(logits: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<(usize, usize)> {
    if logits.is_empty() {
        return Err(Error::invalid("logits", "table needs at least one row"));
    }
    let t = logits.len() - 1;
    let u = labels.len();
    for row in logits {
        if row.len() != u + 1 {
            return Err(Error::Dimension {
                what: "logit table row",
                expected: u + 1,
                got: row.len(),
            });
        }
        for z in row {
            if z.is_empty() || z.len() != row[0].len() {
                return Err(Error::invalid("logits", "inconsistent output dimension"));
            }
        }
    }
    let k = logits[0][0].len();
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= k) {
        return Err(Error::invalid(
            "labels",
            format!("label {bad} outside 1..{k}"),
        ));
    }
    Ok((t, u))
}

/// Loss and per-node logit gradients for an explicit logit table.
#[derive(Debug, Clone)]
pub struct TableLoss {
    pub nll: f64,
    /// No alignment exists (`U > 0` with no frames).
    pub impossible: bool,
    pub lattice: Option<LatticeQuantities>,
    /// `d nll / d logits[t][u][k]`.
    pub grads: Vec<Vec<Vec<f64>>>,
}

/// Transducer loss over `logits[t][u]`, `t ∈ 0..=T`, `u ∈ 0..=U`.
pub fn rnnt_loss_table(
    logits: &[Vec<Vec<f64>>],
    labels: &[usize],
    fastemit_lambda: f64,
) -> Result<TableLoss> {
    let (t_max, u_max) = check_table(logits, labels)?;
    let zero_grads = || {
        logits
            .iter()
            .map(|r| r.iter().map(|z| vec![0.0; z.len()]).collect())
            .collect()
    };
    if t_max == 0 {
        let impossible = u_max > 0;
        return Ok(TableLoss {
            nll: if impossible { f64::INFINITY } else { 0.0 },
            impossible,
            lattice: None,
            grads: zero_grads(),
        });
    }
    let lp: Vec<Vec<Vec<f64>>> = logits
        .iter()
        .map(|r| r.iter().map(|z| log_softmax_vec(z)).collect())
        .collect();
    let mut log_blank = Mat::zeros(t_max + 1, u_max + 1);
    let mut log_label = Mat::zeros(t_max + 1, u_max + 1);
    for t in 0..=t_max {
        for u in 0..=u_max {
            log_blank.row_mut(t)[u] = if t < t_max {
                lp[t][u][BLANK]
            } else {
                f64::NEG_INFINITY
            };
            log_label.row_mut(t)[u] = if u < u_max {
                lp[t][u][labels[u]]
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    let lat = lattice(log_blank, log_label);
    let ng = apply_fastemit(&node_grads(&lat), fastemit_lambda)?;
    let mut grads = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let mut row = Vec::with_capacity(u_max + 1);
        for u in 0..=u_max {
            let label = (u < u_max).then(|| (labels[u], ng.label.get(t, u)));
            row.push(logit_grads(&lp[t][u], ng.blank.get(t, u), label));
        }
        grads.push(row);
    }
    Ok(TableLoss {
        nll: -lat.log_prob,
        impossible: false,
        lattice: Some(lat),
        grads,
    })
}

/// Number of alignments of `U` labels over `T` frames: `C(T+U, U)`.
pub fn alignment_count(t: usize, u: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..u as u128 {
        c = c * (t as u128 + i + 1) / (i + 1);
    }
    c
}

/// Enumeration oracle: sums every alignment's probability explicitly.
pub fn rnnt_loss_bruteforce(logits: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<f64> {
    let (t_max, u_max) = check_table(logits, labels)?;
    if t_max * u_max > BRUTEFORCE_MAX_CELLS {
        return Err(Error::TooLarge {
            paths: alignment_count(t_max, u_max),
        });
    }
    if t_max == 0 {
        return Ok(if u_max == 0 { 0.0 } else { f64::INFINITY });
    }
    let logp = |t: usize, u: usize, k: usize| {
        let z = &logits[t][u];
        let total: f64 = z.iter().map(|x| x.exp()).sum();
        z[k] - total.ln()
    };
    let mut sum = 0.0;
    let mut stack = vec![(0usize, 0usize, 0.0f64)];
    while let Some((t, u, acc)) = stack.pop() {
        if t == t_max && u == u_max {
            sum += acc.exp();
            continue;
        }
        if t < t_max {
            stack.push((t + 1, u, acc + logp(t, u, BLANK)));
        }
        if u < u_max {
            stack.push((t, u + 1, acc + logp(t, u, labels[u])));
        }
    }
    Ok(-sum.ln())
}
