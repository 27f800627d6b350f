//! Binary model file, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SPANMDL\0"
//! version    u32      1
//! p, m       u32 u32
//! activation u32      0 = tanh, 1 = relu
//! n_sizes    u32      followed by n_sizes × u32 layer widths (input .. output)
//! gamma, horizon, dt, input_scale, mean_scale          f64 × 5
//! learning_rate, momentum, clip_norm                   f64 × 3
//! epochs, batch_size                                   u32 × 2
//! parameters f64 ×N   per layer: weights row-major (out × in), then bias
//! ```

use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use super::{ModelSpec, PredictorError, PredictorModel, Result, TrainConfig};

const MAGIC: &[u8; 8] = b"SPANMDL\0";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PredictorError::Format(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

impl PredictorModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let train = self.train_config();
        let sizes = self.network().sizes();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            spec.p as u32,
            spec.m as u32,
            spec.activation.code(),
            sizes.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for v in [
            spec.gamma,
            spec.horizon,
            spec.dt,
            spec.input_scale,
            spec.mean_scale,
            train.learning_rate,
            train.momentum,
            train.clip_norm,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [train.epochs as u32, train.batch_size as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.network().params_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(PredictorError::Format(
                "not a model file (bad magic)".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(PredictorError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let p = r.u32("p")? as usize;
        let m = r.u32("m")? as usize;
        let code = r.u32("activation")?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| PredictorError::Format(format!("unknown activation code {code}")))?;
        let n_sizes = r.u32("layer count")? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(PredictorError::Format(format!(
                "implausible layer count {n_sizes}"
            )));
        }
        let sizes: Vec<usize> = (0..n_sizes)
            .map(|_| r.u32("layer width").map(|v| v as usize))
            .collect::<Result<_>>()?;
        let gamma = r.f64("gamma")?;
        let horizon = r.f64("horizon")?;
        let dt = r.f64("dt")?;
        let input_scale = r.f64("input_scale")?;
        let mean_scale = r.f64("mean_scale")?;
        let learning_rate = r.f64("learning_rate")?;
        let momentum = r.f64("momentum")?;
        let clip_norm = r.f64("clip_norm")?;
        let epochs = r.u32("epochs")? as usize;
        let batch_size = r.u32("batch_size")? as usize;
        let spec = ModelSpec {
            p,
            dt,
            horizon,
            m,
            gamma,
            hidden: sizes[1..sizes.len() - 1].to_vec(),
            activation,
            input_scale,
            mean_scale,
        };
        if spec.layer_sizes() != sizes {
            return Err(PredictorError::Format(
                "layer widths inconsistent with p and m".into(),
            ));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (inp, outp) = (w[0], w[1]);
            let mut weights = nalgebra::DMatrix::zeros(outp, inp);
            for i in 0..outp {
                for j in 0..inp {
                    weights[(i, j)] = r.f64("weights")?;
                }
            }
            let mut bias = nalgebra::DVector::zeros(outp);
            for i in 0..outp {
                bias[i] = r.f64("bias")?;
            }
            layers.push(Layer { weights, bias });
        }
        if r.pos != bytes.len() {
            return Err(PredictorError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let net = Mlp::from_layers(layers, activation);
        if net.params_flat().iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::Format("non-finite parameter".into()));
        }
        let train = TrainConfig {
            learning_rate,
            momentum,
            batch_size,
            epochs,
            clip_norm,
        };
        PredictorModel::from_parts(spec, net, train)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
