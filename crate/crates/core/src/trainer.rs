//! Toy trainer: an affine encoder per view (shared by default), L2-normalized,
//! trained with exclusive batches, the contrastive loss and Adam under a
//! cosine learning-rate schedule.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{infonce, weighted_infonce, LossConfig, LossResult, MIN_TAU};
use crate::matrix::Matrix;
use crate::pairing::{PairLabel, PairRecord};
use crate::sampling::{sample, Batch, PairGraph, SamplingMode};
use crate::synthgen::{QueryFeatures, TileFeatures};
use crate::tilemap::TileId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataMode {
    PositiveOnly,
    #[default]
    PositiveSemi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[serde(rename = "infonce")]
    InfoNce,
    #[default]
    #[serde(rename = "weighted-infonce")]
    WeightedInfoNce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub shared_weights: bool,
    pub learn_tau: bool,
    pub objective: Objective,
    pub data_mode: DataMode,
    pub sampling: SamplingMode,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            embed_dim: 16,
            shared_weights: true,
            learn_tau: true,
            objective: Objective::WeightedInfoNce,
            data_mode: DataMode::PositiveSemi,
            sampling: SamplingMode::Faithful,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Cosine decay from `base` at step 0 to zero at the last step.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return base;
    }
    let progress = step as f64 / (total_steps - 1) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_out x d_in`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineLayer {
    fn random(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (d_in as f64).sqrt();
        let weight = (0..d_in * d_out).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { d_in, d_out, weight, bias: vec![0.0; d_out] }
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d_out)
            .map(|o| {
                let w = &self.weight[o * self.d_in..(o + 1) * self.d_in];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Query,
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedModel {
    pub query: AffineLayer,
    /// `None` when the reference view shares the query encoder.
    pub reference: Option<AffineLayer>,
    pub tau: f64,
}

impl EmbedModel {
    pub fn init(d_in: usize, d_out: usize, shared: bool, tau: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = AffineLayer::random(d_in, d_out, &mut rng);
        let reference = (!shared).then(|| AffineLayer::random(d_in, d_out, &mut rng));
        Self { query, reference, tau }
    }

    pub fn d_in(&self) -> usize {
        self.query.d_in
    }
    pub fn d_out(&self) -> usize {
        self.query.d_out
    }
    pub fn is_shared(&self) -> bool {
        self.reference.is_none()
    }

    pub fn layer(&self, view: View) -> &AffineLayer {
        match (view, &self.reference) {
            (View::Reference, Some(r)) => r,
            _ => &self.query,
        }
    }

    /// Unit-norm embedding plus the pre-normalization norm.
    fn forward(&self, view: View, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut y = self.layer(view).forward(x);
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NonFinite(format!("embedding norm {n}")));
        }
        y.iter_mut().for_each(|v| *v /= n);
        Ok((y, n))
    }

    pub fn embed(&self, view: View, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape(format!("feature dim {} vs model input {}", x.len(), self.d_in())));
        }
        let xf: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let (e, _) = self.forward(view, &xf)?;
        let mut out: Vec<f32> = e.into_iter().map(|v| v as f32).collect();
        // renormalize after rounding to f32
        let n = out.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt() as f32;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }

    pub fn embed_queries(&self, feats: &QueryFeatures) -> Result<QueryFeatures> {
        let mut values = Vec::with_capacity(feats.len() * self.d_out());
        for i in 0..feats.len() {
            values.extend(self.embed(View::Query, feats.row(i))?);
        }
        Ok(QueryFeatures { ids: feats.ids.clone(), dim: self.d_out(), values })
    }

    pub fn embed_tiles(&self, feats: &TileFeatures) -> Result<TileFeatures> {
        let mut values = Vec::with_capacity(feats.len() * self.d_out());
        for i in 0..feats.len() {
            values.extend(self.embed(View::Reference, feats.row(i))?);
        }
        Ok(TileFeatures { ids: feats.ids.clone(), dim: self.d_out(), values })
    }

    /// Flattened parameters: query layer, reference layer if any, then tau.
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for l in std::iter::once(&self.query).chain(self.reference.as_ref()) {
            p.extend_from_slice(&l.weight);
            p.extend_from_slice(&l.bias);
        }
        p.push(self.tau);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in std::iter::once(&mut self.query).chain(self.reference.as_mut()) {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&p[off..off + w]);
            l.bias.copy_from_slice(&p[off + w..off + w + b]);
            off += w + b;
        }
        self.tau = p[off];
    }

    fn num_params(&self) -> usize {
        self.query.num_params() + self.reference.as_ref().map_or(0, AffineLayer::num_params) + 1
    }

    /// Backpropagates embedding gradients of one view into `grad`.
    fn backward(&self, view: View, inputs: &Matrix, grad_embed: &Matrix, grad: &mut [f64]) -> Result<()> {
        let layer = self.layer(view);
        let offset = match view {
            View::Reference if self.reference.is_some() => self.query.num_params(),
            _ => 0,
        };
        let (d_in, d_out) = (layer.d_in, layer.d_out);
        for i in 0..inputs.rows() {
            let x = inputs.row(i);
            let (e, n) = self.forward(view, x)?;
            let g = grad_embed.row(i);
            // d e / d y = (I - e e^T) / |y|
            let eg: f64 = e.iter().zip(g).map(|(a, b)| a * b).sum();
            for o in 0..d_out {
                let gy = (g[o] - e[o] * eg) / n;
                let row = &mut grad[offset + o * d_in..offset + (o + 1) * d_in];
                for (acc, &xv) in row.iter_mut().zip(x) {
                    *acc += gy * xv;
                }
                grad[offset + d_out * d_in + o] += gy;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: EmbedModel,
    pub trace: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

/// Seed of the sampler for one epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Training pairs after applying the data mode.
pub fn select_pairs(pairs: &[PairRecord], mode: DataMode) -> Vec<PairRecord> {
    pairs
        .iter()
        .filter(|p| mode == DataMode::PositiveSemi || p.label == PairLabel::Positive)
        .cloned()
        .collect()
}

/// Batches for every epoch, in order.
pub fn schedule(cfg: &TrainConfig, graph: &PairGraph) -> Result<Vec<Vec<Batch>>> {
    (0..cfg.epochs).map(|e| sample(graph, cfg.batch_size, epoch_seed(cfg.seed, e), cfg.sampling)).collect()
}

fn batch_loss(cfg: &TrainConfig, eq: &Matrix, er: &Matrix, ious: &[f64], tau: f64) -> Result<LossResult> {
    match cfg.objective {
        Objective::InfoNce => {
            let positives: Vec<usize> = (0..eq.rows()).collect();
            infonce(eq, er, &positives, tau, cfg.loss.symmetric)
        }
        Objective::WeightedInfoNce => {
            let loss_cfg = LossConfig { tau, ..cfg.loss };
            weighted_infonce(eq, er, ious, &loss_cfg)
        }
    }
}

/// Trains from scratch with a model initialized from `cfg.seed`.
pub fn train(
    cfg: &TrainConfig,
    pairs: &[PairRecord],
    query_features: &QueryFeatures,
    tile_features: &TileFeatures,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let model = EmbedModel::init(query_features.dim, cfg.embed_dim, cfg.shared_weights, cfg.loss.tau, cfg.seed);
    train_from(cfg, model, pairs, query_features, tile_features)
}

pub fn train_from(
    cfg: &TrainConfig,
    mut model: EmbedModel,
    pairs: &[PairRecord],
    query_features: &QueryFeatures,
    tile_features: &TileFeatures,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if query_features.dim != tile_features.dim || query_features.dim != model.d_in() {
        return Err(Error::Shape(format!(
            "query features {}, tile features {}, model input {}",
            query_features.dim,
            tile_features.dim,
            model.d_in()
        )));
    }
    let selected = select_pairs(pairs, cfg.data_mode);
    let graph = PairGraph::from_pairs(&selected)?;
    let qindex: HashMap<&str, usize> = query_features.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let tindex: HashMap<TileId, usize> = tile_features.ids.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    for p in &selected {
        if !qindex.contains_key(p.query_id.as_str()) {
            return Err(Error::Domain(format!("no features for query {:?}", p.query_id)));
        }
        if !tindex.contains_key(&p.tile) {
            return Err(Error::Domain(format!("no features for tile {}", p.tile)));
        }
    }
    let epochs = schedule(cfg, &graph)?;
    let total_steps: usize = epochs.iter().map(Vec::len).sum();
    let d_in = model.d_in();
    let mut adam = Adam::new(model.num_params());
    let mut params = model.params();
    let tau_slot = params.len() - 1;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for (epoch, batches) in epochs.iter().enumerate() {
        let mut loss_sum = 0.0f64;
        for batch in batches {
            let b = batch.len();
            let mut xq = Matrix::zeros(b, d_in);
            let mut xr = Matrix::zeros(b, d_in);
            let mut ious = Vec::with_capacity(b);
            for (row, &e) in batch.edges.iter().enumerate() {
                let edge = graph.edges()[e];
                let qi = qindex[graph.query_id(edge.query)];
                let ti = tindex[&graph.tile(edge.tile)];
                for (dst, &v) in xq.row_mut(row).iter_mut().zip(query_features.row(qi)) {
                    *dst = f64::from(v);
                }
                for (dst, &v) in xr.row_mut(row).iter_mut().zip(tile_features.row(ti)) {
                    *dst = f64::from(v);
                }
                ious.push(edge.iou);
            }
            let mut eq = Matrix::zeros(b, model.d_out());
            let mut er = Matrix::zeros(b, model.d_out());
            for i in 0..b {
                eq.row_mut(i).copy_from_slice(&model.forward(View::Query, xq.row(i))?.0);
                er.row_mut(i).copy_from_slice(&model.forward(View::Reference, xr.row(i))?.0);
            }
            let res = batch_loss(cfg, &eq, &er, &ious, model.tau)?;
            if !res.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, step {step}")));
            }
            let mut grad = vec![0.0; params.len()];
            model.backward(View::Query, &xq, &res.grad_queries, &mut grad)?;
            model.backward(View::Reference, &xr, &res.grad_refs, &mut grad)?;
            grad[tau_slot] = if cfg.learn_tau { res.grad_tau } else { 0.0 };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, step {step}")));
            }
            let lr = cosine_lr(cfg.learning_rate, step, total_steps);
            if lr > 0.0 {
                adam.step(&mut params, &grad, lr, cfg);
                params[tau_slot] = params[tau_slot].max(MIN_TAU);
                model.set_params(&params);
            }
            loss_sum += res.loss;
            step += 1;
        }
        trace.push(EpochStats {
            epoch,
            batches: batches.len(),
            mean_loss: loss_sum / batches.len() as f64,
            tau: model.tau,
        });
    }
    Ok(TrainOutput { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
        assert!(cosine_lr(1e-3, 99, 100) <= 1e-5);
        assert_eq!(cosine_lr(1e-3, 0, 1), 1e-3);
        let mid = cosine_lr(1.0, 50, 101);
        assert!((mid - 0.5).abs() < 1e-12);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = EmbedModel::init(12, 5, false, 1.0, 4);
        let x: Vec<f32> = (0..12).map(|i| (i as f32 * 0.37).sin()).collect();
        for view in [View::Query, View::Reference] {
            let e = m.embed(view, &x).unwrap();
            let n: f64 = e.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_ne!(m.embed(View::Query, &x).unwrap(), m.embed(View::Reference, &x).unwrap());
        let shared = EmbedModel::init(12, 5, true, 1.0, 4);
        assert_eq!(shared.embed(View::Query, &x).unwrap(), shared.embed(View::Reference, &x).unwrap());
    }

    #[test]
    fn params_round_trip() {
        let mut m = EmbedModel::init(3, 2, false, 0.7, 1);
        let p = m.params();
        assert_eq!(p.len(), m.num_params());
        let before = m.clone();
        m.set_params(&p);
        assert_eq!(m, before);
    }

    /// Finite-difference check of the encoder backward pass through a
    /// weighted loss.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = TrainConfig { embed_dim: 3, shared_weights: false, ..Default::default() };
        let model = EmbedModel::init(4, 3, false, 0.8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = |rng: &mut ChaCha8Rng| {
            Matrix::from_vec(3, 4, (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
        };
        let xq = rows(&mut rng);
        let xr = rows(&mut rng);
        let ious = [0.2, 0.5, 0.9];
        let loss_of = |m: &EmbedModel| -> f64 {
            let mut eq = Matrix::zeros(3, 3);
            let mut er = Matrix::zeros(3, 3);
            for i in 0..3 {
                eq.row_mut(i).copy_from_slice(&m.forward(View::Query, xq.row(i)).unwrap().0);
                er.row_mut(i).copy_from_slice(&m.forward(View::Reference, xr.row(i)).unwrap().0);
            }
            batch_loss(&cfg, &eq, &er, &ious, m.tau).unwrap().loss
        };
        let mut eq = Matrix::zeros(3, 3);
        let mut er = Matrix::zeros(3, 3);
        for i in 0..3 {
            eq.row_mut(i).copy_from_slice(&model.forward(View::Query, xq.row(i)).unwrap().0);
            er.row_mut(i).copy_from_slice(&model.forward(View::Reference, xr.row(i)).unwrap().0);
        }
        let res = batch_loss(&cfg, &eq, &er, &ious, model.tau).unwrap();
        let mut grad = vec![0.0; model.num_params()];
        model.backward(View::Query, &xq, &res.grad_queries, &mut grad).unwrap();
        model.backward(View::Reference, &xr, &res.grad_refs, &mut grad).unwrap();
        let n = grad.len();
        grad[n - 1] = res.grad_tau;
        let base = model.params();
        let h = 1e-5;
        for i in 0..n {
            let mut plus = model.clone();
            let mut p = base.clone();
            p[i] += h;
            plus.set_params(&p);
            let mut minus = model.clone();
            p[i] -= 2.0 * h;
            minus.set_params(&p);
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
