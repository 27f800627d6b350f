//! Neural predictor from a short observation window to a trajectory
//! distribution over the next few seconds.
//!
//! Windows and targets live in a relative frame whose origin is the most
//! recent observation, so the network never sees absolute map coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::collision::{CollisionError, PedestrianPrediction};
use crate::trajectory::{BasisSpec, MatrixNormalParams, TrajectoryError, WeightMatrix};
use crate::Vec2;

mod dataset;
pub mod head;
pub mod mlp;
mod persist;
mod train;

pub use dataset::{build_dataset, resample_track, split_tracks, Dataset};
pub use mlp::{Activation, Mlp};
pub use train::{loss_and_gradient, train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("window has {found} points, model expects {expected}")]
    WrongWindow { expected: usize, found: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("track {index} has non-increasing or non-finite timestamps")]
    InvalidTrack { index: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

/// The last `p` positions of a pedestrian at spacing `Δt`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub points: Vec<Vec2>,
}

impl ObservationWindow {
    pub fn new(points: Vec<Vec2>) -> Self {
        Self { points }
    }

    pub fn last(&self) -> Option<Vec2> {
        self.points.last().copied()
    }

    /// The window translated so its last point is the origin.
    pub fn relative(&self) -> ObservationWindow {
        let anchor = self.last().unwrap_or_else(Vec2::zeros);
        ObservationWindow {
            points: self.points.iter().map(|p| p - anchor).collect(),
        }
    }
}

/// Relative-frame window and the weights fitted to what followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub window: ObservationWindow,
    pub target: WeightMatrix,
}

/// Architecture and representation choices fixed at model creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Observations per window.
    pub p: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Basis functions.
    pub m: usize,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Multiplier applied to relative window coordinates before the first layer.
    pub input_scale: f64,
    /// Multiplier applied to the mean block of the network output. Larger
    /// values speed up learning of the mean relative to the covariance heads.
    pub mean_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            p: 5,
            dt: 0.1,
            horizon: 4.0,
            m: 8,
            gamma: 0.01,
            hidden: vec![100, 100, 100],
            activation: Activation::Tanh,
            input_scale: 2.0,
            mean_scale: 10.0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.m == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(PredictorError::InvalidSpec(
                "p, m and hidden widths must be positive".into(),
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.dt > 0.0
            && self.horizon >= self.dt
            && positive(self.input_scale)
            && positive(self.mean_scale))
        {
            return Err(PredictorError::InvalidSpec(
                "need dt > 0, horizon ≥ dt and positive scales".into(),
            ));
        }
        self.basis()?;
        Ok(())
    }

    pub fn basis(&self) -> Result<BasisSpec> {
        Ok(BasisSpec::new(self.m, self.horizon, self.gamma)?)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![2 * self.p];
        s.extend(&self.hidden);
        s.push(head::raw_len(self.m));
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    spec: ModelSpec,
    basis: BasisSpec,
    net: Mlp,
    train: TrainConfig,
}

impl PredictorModel {
    pub fn init<R: rand::Rng + ?Sized>(
        spec: ModelSpec,
        train: TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let basis = spec.basis()?;
        let net = Mlp::init(&spec.layer_sizes(), spec.activation, rng);
        Ok(Self {
            spec,
            basis,
            net,
            train,
        })
    }

    pub(crate) fn from_parts(spec: ModelSpec, net: Mlp, train: TrainConfig) -> Result<Self> {
        spec.validate()?;
        if net.sizes() != spec.layer_sizes() {
            return Err(PredictorError::InvalidSpec(
                "network shape does not match spec".into(),
            ));
        }
        let basis = spec.basis()?;
        Ok(Self {
            spec,
            basis,
            net,
            train,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    /// Network input for a window already in the relative frame.
    pub(crate) fn encode_input(&self, relative: &ObservationWindow, out: &mut [f64]) {
        for (i, p) in relative.points.iter().enumerate() {
            out[2 * i] = p.x * self.spec.input_scale;
            out[2 * i + 1] = p.y * self.spec.input_scale;
        }
    }

    /// Rescales the mean block of a raw network output in place.
    pub(crate) fn scale_mean(&self, raw: &mut [f64]) {
        raw[..2 * self.spec.m]
            .iter_mut()
            .for_each(|v| *v *= self.spec.mean_scale);
    }

    fn decode_output(&self, mut raw: Vec<f64>) -> MatrixNormalParams {
        self.scale_mean(&mut raw);
        head::decode(&raw, self.spec.m)
    }

    fn check(&self, window: &ObservationWindow) -> Result<()> {
        if window.points.len() != self.spec.p {
            return Err(PredictorError::WrongWindow {
                expected: self.spec.p,
                found: window.points.len(),
            });
        }
        Ok(())
    }

    /// Distribution in the window's relative frame.
    pub fn predict_params(&self, window: &ObservationWindow) -> Result<MatrixNormalParams> {
        self.check(window)?;
        let mut input = vec![0.0; 2 * self.spec.p];
        self.encode_input(&window.relative(), &mut input);
        Ok(self.decode_output(self.net.predict_one(&input)))
    }

    /// World-frame prediction anchored at the window's last point.
    pub fn predict(&self, window: &ObservationWindow) -> Result<PedestrianPrediction> {
        let params = self.predict_params(window)?;
        let anchor = window.last().expect("checked non-empty");
        Ok(PedestrianPrediction::new(
            params,
            self.basis.clone(),
            anchor,
        )?)
    }

    /// Predictions for many windows with one batched forward pass.
    pub fn predict_many(&self, windows: &[ObservationWindow]) -> Result<Vec<PedestrianPrediction>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let d = 2 * self.spec.p;
        let mut input = DMatrix::zeros(d, windows.len());
        let mut col = vec![0.0; d];
        for (j, w) in windows.iter().enumerate() {
            self.check(w)?;
            self.encode_input(&w.relative(), &mut col);
            input.column_mut(j).copy_from_slice(&col);
        }
        let trace = self.net.forward(input);
        let out = trace.output();
        windows
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let raw: Vec<f64> = out.column(j).iter().copied().collect();
                let params = self.decode_output(raw);
                Ok(PedestrianPrediction::new(
                    params,
                    self.basis.clone(),
                    w.last().expect("checked"),
                )?)
            })
            .collect()
    }
}
