//! Contrastive loss over one positive and N_s negative scores, plus exact
//! analytic gradients with respect to the user, positive-item, and
//! negative-item embeddings.
//!
//! All computation here is f64; the trainer widens f32 rows before calling in.
//! Softmax and log terms subtract the maximum score first, since raw exp
//! overflows f32 past scores of ~88.

use crate::error::{Error, Result};

/// Loss value and per-embedding gradients for one (user, positive, negatives)
/// sample.
#[derive(Debug, Clone)]
pub struct ContrastiveSampleGrad {
    pub loss: f64,
    pub grad_user: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// Sampled-softmax cross entropy of the positive score against the negatives:
/// `-log(exp(r_pos) / (exp(r_pos) + sum_k exp(r_negs[k])))`, stabilized via
/// log-sum-exp. Always >= 0.
pub fn infonce_loss(r_pos: f64, r_negs: &[f64]) -> Result<f64> {
    if r_negs.is_empty() {
        return Err(Error::InvalidConfig("negative score list is empty".into()));
    }
    let max = r_negs.iter().fold(r_pos, |m, &v| m.max(v));
    let z: f64 = (r_pos - max).exp() + r_negs.iter().map(|&v| (v - max).exp()).sum::<f64>();
    Ok(z.ln() + max - r_pos)
}

/// Loss and gradients for dot-product scores. With softmax weights p over
/// {u.v_pos} union {u.v_k}:
///
///   grad_positive     = -(1 - p_pos) * u
///   grad_negatives[k] =  p_k * u
///   grad_user         = -(1 - p_pos) * v_pos + sum_k p_k * v_k
pub fn infonce_grads(
    u: &[f64],
    v_pos: &[f64],
    v_negs: &[Vec<f64>],
) -> Result<ContrastiveSampleGrad> {
    if v_negs.is_empty() {
        return Err(Error::InvalidConfig(
            "negative embedding list is empty".into(),
        ));
    }
    let d = u.len();
    if v_pos.len() != d || v_negs.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "user dim {d} vs positive {} / negatives",
            v_pos.len()
        )));
    }

    let mut scratch = GradScratch::new(d, v_negs.len());
    let mut negs_flat = Vec::with_capacity(d * v_negs.len());
    for v in v_negs {
        negs_flat.extend_from_slice(v);
    }
    let loss = grads_into(&mut scratch, u, v_pos, &negs_flat, true);

    Ok(ContrastiveSampleGrad {
        loss,
        grad_user: scratch.grad_user,
        grad_positive: scratch.grad_positive,
        grad_negatives: scratch
            .grad_negatives
            .chunks_exact(d)
            .map(|c| c.to_vec())
            .collect(),
    })
}

/// Reusable buffers for the in-place gradient path used by the trainer.
#[derive(Debug)]
pub(crate) struct GradScratch {
    dim: usize,
    pub weights: Vec<f64>,
    pub grad_user: Vec<f64>,
    pub grad_positive: Vec<f64>,
    /// n_negs gradients packed row-major.
    pub grad_negatives: Vec<f64>,
}

impl GradScratch {
    pub fn new(dim: usize, n_negs: usize) -> Self {
        Self {
            dim,
            weights: vec![0.0; n_negs],
            grad_user: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negatives: vec![0.0; dim * n_negs],
        }
    }

    fn resize(&mut self, n_negs: usize) {
        self.weights.resize(n_negs, 0.0);
        self.grad_negatives.resize(self.dim * n_negs, 0.0);
    }
}

/// Computes loss and gradients into `scratch`, skipping the user gradient when
/// `want_user_grad` is false (it is never applied when only the item tower
/// backpropagates). `v_negs` is packed row-major, length a multiple of dim.
pub(crate) fn grads_into(
    scratch: &mut GradScratch,
    u: &[f64],
    v_pos: &[f64],
    v_negs: &[f64],
    want_user_grad: bool,
) -> f64 {
    let d = u.len();
    let n_negs = v_negs.len() / d;
    scratch.resize(n_negs);

    let s_pos = dot(u, v_pos);
    let mut max = s_pos;
    for k in 0..n_negs {
        let s = dot(u, &v_negs[k * d..(k + 1) * d]);
        scratch.weights[k] = s;
        max = max.max(s);
    }

    let w_pos = (s_pos - max).exp();
    let mut z = w_pos;
    for w in scratch.weights.iter_mut() {
        *w = (*w - max).exp();
        z += *w;
    }
    let loss = z.ln() + max - s_pos;

    // d(loss)/d(s_pos) = p_pos - 1, d(loss)/d(s_k) = p_k
    let coeff_pos = w_pos / z - 1.0;
    for w in scratch.weights.iter_mut() {
        *w /= z;
    }

    for (g, &ui) in scratch.grad_positive.iter_mut().zip(u) {
        *g = coeff_pos * ui;
    }
    for k in 0..n_negs {
        let p_k = scratch.weights[k];
        for (g, &ui) in scratch.grad_negatives[k * d..(k + 1) * d].iter_mut().zip(u) {
            *g = p_k * ui;
        }
    }
    if want_user_grad {
        for (g, &vp) in scratch.grad_user.iter_mut().zip(v_pos) {
            *g = coeff_pos * vp;
        }
        for k in 0..n_negs {
            let p_k = scratch.weights[k];
            for (g, &vn) in scratch
                .grad_user
                .iter_mut()
                .zip(&v_negs[k * d..(k + 1) * d])
            {
                *g += p_k * vn;
            }
        }
    }
    loss
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
