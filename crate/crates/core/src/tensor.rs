//! Dense row-major matrices and the handful of kernels the hand-written
//! models need. Everything is `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn zeros_like(&self) -> Self {
        Mat::zeros(self.rows, self.cols)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Copy of rows `from..to`.
    pub fn slice_rows(&self, from: usize, to: usize) -> Mat {
        Mat {
            rows: to - from,
            cols: self.cols,
            data: self.data[from * self.cols..to * self.cols].to_vec(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        if self.rows == 0 {
            self.cols = row.len();
        }
        assert_eq!(row.len(), self.cols, "row length");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }
}

/// `out += x · m` where `x` has `m.rows` entries and `out` has `m.cols`.
#[inline]
pub fn vecmat_acc(x: &[f64], m: &Mat, out: &mut [f64]) {
    debug_assert_eq!(x.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(m.row(i)) {
            *o += xi * w;
        }
    }
}

/// `out += m · dy`, the input-side gradient of [`vecmat_acc`].
#[inline]
pub fn matvec_acc(m: &Mat, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(dy.len(), m.cols);
    debug_assert_eq!(out.len(), m.rows);
    for (i, o) in out.iter_mut().enumerate() {
        *o += m.row(i).iter().zip(dy).map(|(w, d)| w * d).sum::<f64>();
    }
}

/// `g += x ⊗ dy`, the weight-side gradient of [`vecmat_acc`].
#[inline]
pub fn outer_acc(g: &mut Mat, x: &[f64], dy: &[f64]) {
    debug_assert_eq!(x.len(), g.rows);
    debug_assert_eq!(dy.len(), g.cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (gv, d) in g.row_mut(i).iter_mut().zip(dy) {
            *gv += xi * d;
        }
    }
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub fn log_softmax(xs: &mut [f64]) {
    let z = log_sum_exp(xs);
    xs.iter_mut().for_each(|x| *x -= z);
}

/// Named view over every trainable tensor of a model, in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &Mat)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)>;

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sq_norm()).sum()
    }

    fn scale_all(&mut self, alpha: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(alpha);
        }
    }

    /// SHA-256 over the raw bit patterns of one tensor.
    fn tensor_digest(&self, name: &str) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| digest_mat(m))
    }
}

pub fn digest_mat(m: &Mat) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((m.rows as u64).to_le_bytes());
    h.update((m.cols as u64).to_le_bytes());
    for v in &m.data {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One plain SGD step with global-norm clipping. Returns the pre-clip norm.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64, clip_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    let scale = if clip_norm > 0.0 && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        p.axpy(-lr * scale, g);
    }
    norm
}
