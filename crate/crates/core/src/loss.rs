//! Contrastive losses with exact gradients.
//!
//! `weighted_infonce` mixes, per query, the usual InfoNCE target (all mass on
//! the paired reference) with a uniform target over the batch. The mixing
//! weight `alpha` is a sigmoid of the pair's footprint IOU. Both terms are
//! cross-entropies against the same softmax, so the whole loss is a single
//! cross-entropy with target `alpha * onehot + (1 - alpha) / N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Temperatures below this are clamped.
pub const MIN_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaConvention {
    /// `1 - sigmoid(k * iou)`: decreases with overlap.
    AsPrinted,
    /// `sigmoid(k * iou)`: increases with overlap, tends to 1 as `k` grows.
    #[default]
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub k: f64,
    pub tau: f64,
    pub symmetric: bool,
    pub alpha_convention: AlphaConvention,
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { k: 5.0, tau: 1.0, symmetric: true, alpha_convention: AlphaConvention::Increasing, margin: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("sigmoid sharpness k={} must be positive", self.k)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad_queries: Matrix,
    pub grad_refs: Matrix,
    pub grad_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletResult {
    pub loss: f64,
    pub grad_anchor: Matrix,
    pub grad_positive: Matrix,
    pub grad_negative: Matrix,
}

/// IOU-derived weight of the InfoNCE term.
pub fn weight_alpha(k: f64, iou: f64, convention: AlphaConvention) -> f64 {
    let s = 1.0 / (1.0 + (-k * iou).exp());
    match convention {
        AlphaConvention::AsPrinted => 1.0 - s,
        AlphaConvention::Increasing => s,
    }
}

/// Standard InfoNCE; `positives[i]` is the reference paired with query `i`.
/// The symmetric form requires `positives` to be a permutation.
pub fn infonce(queries: &Matrix, refs: &Matrix, positives: &[usize], tau: f64, symmetric: bool) -> Result<LossResult> {
    let alphas = vec![1.0; queries.rows()];
    soft_target_loss(queries, refs, positives, &alphas, tau, symmetric)
}

/// IOU-weighted InfoNCE; query `i` is paired with reference `i`.
pub fn weighted_infonce(queries: &Matrix, refs: &Matrix, ious: &[f64], cfg: &LossConfig) -> Result<LossResult> {
    if ious.len() != queries.rows() {
        return Err(Error::Shape(format!("{} ious for {} queries", ious.len(), queries.rows())));
    }
    if let Some(bad) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("iou {bad} outside [0, 1]")));
    }
    let alphas: Vec<f64> = ious.iter().map(|&v| weight_alpha(cfg.k, v, cfg.alpha_convention)).collect();
    let positives: Vec<usize> = (0..queries.rows()).collect();
    soft_target_loss(queries, refs, &positives, &alphas, cfg.tau, cfg.symmetric)
}

fn check_shapes(queries: &Matrix, refs: &Matrix, positives: &[usize]) -> Result<()> {
    if queries.rows() != refs.rows() {
        return Err(Error::Shape(format!("{} queries vs {} references", queries.rows(), refs.rows())));
    }
    if queries.cols() != refs.cols() {
        return Err(Error::Shape(format!(
            "query dim {} vs reference dim {}",
            queries.cols(),
            refs.cols()
        )));
    }
    if positives.len() != queries.rows() {
        return Err(Error::Shape(format!("{} positives for {} queries", positives.len(), queries.rows())));
    }
    if queries.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(&p) = positives.iter().find(|&&p| p >= refs.rows()) {
        return Err(Error::Shape(format!("positive index {p} out of {} references", refs.rows())));
    }
    Ok(())
}

/// Accumulates `(softmax(row) - target) * scale` into `grad` for one
/// direction and returns the summed cross-entropy of the rows.
fn cross_entropy_rows(
    logits: &[f64],
    n: usize,
    transposed: bool,
    targets: &[usize],
    alphas: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let at = |i: usize, j: usize| if transposed { j * n + i } else { i * n + j };
    let uniform = 1.0 / n as f64;
    let mut total = 0.0;
    let mut probs = vec![0.0; n];
    for i in 0..n {
        let max = (0..n).map(|j| logits[at(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, p) in probs.iter_mut().enumerate() {
            *p = (logits[at(i, j)] - max).exp();
            z += *p;
        }
        let lse = max + z.ln();
        let alpha = alphas[i];
        let smooth = (1.0 - alpha) * uniform;
        let mut target_dot = 0.0;
        for j in 0..n {
            let t = smooth + if j == targets[i] { alpha } else { 0.0 };
            target_dot += t * logits[at(i, j)];
            grad[at(i, j)] += scale * (probs[j] / z - t);
        }
        total += lse - target_dot;
    }
    total
}

fn soft_target_loss(
    queries: &Matrix,
    refs: &Matrix,
    positives: &[usize],
    alphas: &[f64],
    tau: f64,
    symmetric: bool,
) -> Result<LossResult> {
    check_shapes(queries, refs, positives)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature {tau} must be positive and finite")));
    }
    let n = queries.rows();
    let d = queries.cols();
    let clamped = tau < MIN_TAU;
    let t = tau.max(MIN_TAU);

    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            logits[i * n + j] = dot(queries.row(i), refs.row(j)) / t;
        }
    }

    // dL/dlogits
    let mut g = vec![0.0; n * n];
    let directions = if symmetric { 2.0 } else { 1.0 };
    let scale = 1.0 / (n as f64 * directions);
    let mut loss = cross_entropy_rows(&logits, n, false, positives, alphas, scale, &mut g) * scale;
    if symmetric {
        let mut inverse = vec![usize::MAX; n];
        for (q, &r) in positives.iter().enumerate() {
            if inverse[r] != usize::MAX {
                return Err(Error::Shape("symmetric loss needs a one-to-one pairing".into()));
            }
            inverse[r] = q;
        }
        let ref_alphas: Vec<f64> = inverse.iter().map(|&q| alphas[q]).collect();
        loss += cross_entropy_rows(&logits, n, true, &inverse, &ref_alphas, scale, &mut g) * scale;
    }

    let mut grad_queries = Matrix::zeros(n, d);
    let mut grad_refs = Matrix::zeros(n, d);
    let mut grad_tau = 0.0;
    for i in 0..n {
        for j in 0..n {
            let gij = g[i * n + j];
            if gij == 0.0 {
                continue;
            }
            let c = gij / t;
            let (qi, rj) = (queries.row(i), refs.row(j));
            for (acc, &v) in grad_queries.row_mut(i).iter_mut().zip(rj) {
                *acc += c * v;
            }
            for (acc, &v) in grad_refs.row_mut(j).iter_mut().zip(qi) {
                *acc += c * v;
            }
            grad_tau -= gij * logits[i * n + j] / t;
        }
    }
    if clamped {
        grad_tau = 0.0;
    }
    Ok(LossResult { loss, grad_queries, grad_refs, grad_tau })
}

/// Mean hinge triplet loss over rows, `max(0, margin + |a-p| - |a-n|)`.
pub fn triplet(anchor: &Matrix, positive: &Matrix, negative: &Matrix, margin: f64) -> Result<TripletResult> {
    let (n, d) = (anchor.rows(), anchor.cols());
    for (name, m) in [("positive", positive), ("negative", negative)] {
        if m.rows() != n || m.cols() != d {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, anchor is {n}x{d}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut res = TripletResult {
        loss: 0.0,
        grad_anchor: Matrix::zeros(n, d),
        grad_positive: Matrix::zeros(n, d),
        grad_negative: Matrix::zeros(n, d),
    };
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let (a, p, q) = (anchor.row(i), positive.row(i), negative.row(i));
        let dp: Vec<f64> = a.iter().zip(p).map(|(x, y)| x - y).collect();
        let dn: Vec<f64> = a.iter().zip(q).map(|(x, y)| x - y).collect();
        let lp = dot(&dp, &dp).sqrt();
        let ln = dot(&dn, &dn).sqrt();
        let h = margin + lp - ln;
        if h <= 0.0 {
            continue;
        }
        res.loss += h * inv_n;
        for k in 0..d {
            let gp = if lp > 0.0 { dp[k] / lp } else { 0.0 };
            let gn = if ln > 0.0 { dn[k] / ln } else { 0.0 };
            res.grad_anchor.row_mut(i)[k] += (gp - gn) * inv_n;
            res.grad_positive.row_mut(i)[k] -= gp * inv_n;
            res.grad_negative.row_mut(i)[k] += gn * inv_n;
        }
    }
    Ok(res)
}
