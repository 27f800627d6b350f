//! Fully connected network with hand-written backpropagation.
//!
//! Samples are columns: a batch is an `inputs × batch` matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Activations of every layer for one batch, input first.
pub struct Trace {
    outputs: Vec<DMatrix<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("at least the input")
    }
}

impl Mlp {
    /// `sizes` lists every layer width, input and output included. Weights and
    /// biases are uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound));
                let bias = DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound));
                Layer { weights, bias }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Self {
        for w in layers.windows(2) {
            assert_eq!(
                w[0].weights.nrows(),
                w[1].weights.ncols(),
                "layer widths must chain"
            );
        }
        for l in &layers {
            assert_eq!(l.weights.nrows(), l.bias.len());
        }
        Self { layers, activation }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.ncols()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, input: DMatrix<f64>) -> Trace {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * outputs.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if i < last {
                z.apply(|v| *v = self.activation.apply(*v));
            }
            outputs.push(z);
        }
        Trace { outputs }
    }

    pub fn predict_one(&self, input: &[f64]) -> Vec<f64> {
        let trace = self.forward(DMatrix::from_column_slice(input.len(), 1, input));
        trace.output().column(0).iter().copied().collect()
    }

    /// Parameter gradients given `∂loss/∂output` for the traced batch, in
    /// [`Mlp::params_flat`] order.
    pub fn backward(&self, trace: &Trace, output_grad: DMatrix<f64>) -> Vec<f64> {
        let n = self.layers.len();
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n);
        let mut delta = output_grad;
        for i in (0..n).rev() {
            let input = &trace.outputs[i];
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let mut next = self.layers[i].weights.transpose() * &delta;
                next.zip_apply(input, |d, a| {
                    *d *= self.activation.derivative_from_output(a)
                });
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            push_row_major(&mut flat, &gw);
            flat.extend(gb.iter());
        }
        flat
    }

    /// Per layer: weights row-major, then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            push_row_major(&mut flat, &l.weights);
            flat.extend(l.bias.iter());
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut k = 0;
        for l in &mut self.layers {
            let (r, c) = l.weights.shape();
            for i in 0..r {
                for j in 0..c {
                    l.weights[(i, j)] = flat[k];
                    k += 1;
                }
            }
            for i in 0..r {
                l.bias[i] = flat[k];
                k += 1;
            }
        }
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
}
