use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{head, ModelSpec, PredictorError, PredictorModel, Result, TrainingPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Mini-batch gradients longer than this are rescaled to it; `0` disables.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs: 200,
            clip_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    /// Mean per-sample loss of each epoch, accumulated during the epoch.
    pub losses: Vec<f64>,
}

/// Mean NLL over `pairs` and its gradient in [`crate::predictor::Mlp::params_flat`] order.
pub fn loss_and_gradient(model: &PredictorModel, pairs: &[TrainingPair]) -> (f64, Vec<f64>) {
    let idx: Vec<usize> = (0..pairs.len()).collect();
    batch_loss_and_gradient(model, pairs, &idx)
}

fn batch_loss_and_gradient(
    model: &PredictorModel,
    pairs: &[TrainingPair],
    idx: &[usize],
) -> (f64, Vec<f64>) {
    let spec = model.spec();
    let d = 2 * spec.p;
    let b = idx.len();
    let mut input = DMatrix::zeros(d, b);
    let mut col = vec![0.0; d];
    for (j, &i) in idx.iter().enumerate() {
        model.encode_input(&pairs[i].window, &mut col);
        input.column_mut(j).copy_from_slice(&col);
    }
    let trace = model.network().forward(input);
    let out = trace.output();
    let raw_len = out.nrows();
    let mut out_grad = DMatrix::zeros(raw_len, b);
    let mut raw = vec![0.0; raw_len];
    let mut g = vec![0.0; raw_len];
    let mut total = 0.0;
    let scale = 1.0 / b as f64;
    for (j, &i) in idx.iter().enumerate() {
        raw.copy_from_slice(out.column(j).as_slice());
        model.scale_mean(&mut raw);
        total += head::nll_and_grad(&raw, pairs[i].target.as_matrix(), spec.m, &mut g);
        model.scale_mean(&mut g);
        for (dst, src) in out_grad.column_mut(j).iter_mut().zip(&g) {
            *dst = src * scale;
        }
    }
    let grad = model.network().backward(&trace, out_grad);
    (total * scale, grad)
}

/// Initialises a model from `rng` and fits it by mini-batch gradient descent
/// with momentum. Windows in `pairs` must already be in the relative frame.
pub fn train<R: Rng + ?Sized>(
    pairs: &[TrainingPair],
    spec: ModelSpec,
    cfg: TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    if let Some(bad) = pairs
        .iter()
        .find(|p| p.window.points.len() != spec.p || p.target.rows() != spec.m)
    {
        return Err(PredictorError::InvalidSpec(format!(
            "pair with {} window points and {} weight rows does not match p = {}, m = {}",
            bad.window.points.len(),
            bad.target.rows(),
            spec.p,
            spec.m
        )));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(PredictorError::InvalidSpec(
            "need batch_size > 0, learning_rate > 0, 0 ≤ momentum < 1".into(),
        ));
    }
    let mut model = PredictorModel::init(spec, cfg, rng)?;
    let mut params = model.network().params_flat();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = batch_loss_and_gradient(&model, pairs, batch);
            if !loss.is_finite() {
                return Err(PredictorError::Diverged { epoch, loss });
            }
            sum += loss * batch.len() as f64;
            if cfg.clip_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    let s = cfg.clip_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
            model.network_mut().set_params_flat(&params);
        }
        let mean = sum / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(PredictorError::Diverged { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok(TrainOutcome { model, losses })
}
