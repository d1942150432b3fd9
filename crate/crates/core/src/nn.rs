//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A [`Mlp`] is a stack of affine layers with ReLU between them and an
//! identity output. Batches are row-major: one sample per row.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_FORMAT: &str = "semadapt-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
}

/// Activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
}

/// Parameter-shaped buffer: gradients, or optimiser moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// Uniform fan-in initialisation: every parameter of a layer with `k`
    /// inputs is drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..=bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Mlp { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Checkpoint("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weight.ncols() != l.bias.len() {
                return Err(Error::Checkpoint(format!("layer {k}: bias length mismatch")));
            }
            if k > 0 && layers[k - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::Checkpoint(format!("layer {k}: input width mismatch")));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// Multiplies the output layer's parameters; small values start a policy near uniform.
    pub fn scale_output(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("nonempty");
        last.weight *= factor;
        last.bias *= factor;
        self.version += 1;
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.nrows()];
        w.extend(self.layers.iter().map(|l| l.weight.ncols()));
        w
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("nonempty").weight.ncols()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.input_len() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_len(),
                found: input.ncols(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(x);
            x = z;
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                inputs,
            },
        ))
    }

    /// Single-sample convenience wrapper around [`Mlp::forward`].
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
        let (out, _) = self.forward(view)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Gradients of `sum(output * output_grad)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        let batch = cache.inputs[0].nrows();
        if output_grad.dim() != (batch, self.output_len()) {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: batch * self.output_len(),
                found: output_grad.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[k];
            grads.push(Dense {
                weight: x.t().dot(&g),
                bias: g.sum_axis(Axis(0)),
            });
            if k > 0 {
                let mut gx = g.dot(&layer.weight.t());
                // x is the ReLU output of the previous layer: its derivative is 1 where x > 0.
                Zip::from(&mut gx).and(x).for_each(|gv, &xv| {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                });
                g = gx;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Flat parameter vector, layer by layer (weights row-major, then bias).
    pub fn params_to_vec(&self) -> Vec<f64> {
        Gradients {
            layers: self.layers.clone(),
        }
        .to_vec()
    }

    pub fn set_params_from_slice(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().expect("length checked"));
        }
        self.version += 1;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            widths: self.widths(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weight: l.weight.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, checking it has exactly `expected_widths`.
    pub fn load(path: &Path, expected_widths: &[usize]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        if file.widths != expected_widths {
            return Err(Error::Checkpoint(format!(
                "{}: widths {:?} do not match configured {:?}",
                path.display(),
                file.widths,
                expected_widths
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let rows = l.weight.len();
                let cols = l.weight.first().map_or(0, Vec::len);
                let flat: Vec<f64> = l.weight.into_iter().flatten().collect();
                let weight = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::Checkpoint(format!("ragged weight matrix: {e}")))?;
                Ok(Dense {
                    weight,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Mlp::from_layers(layers)?;
        if net.widths() != expected_widths {
            return Err(Error::Checkpoint("layer shapes disagree with declared widths".into()));
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    widths: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, p)| g.weight.dim() != p.weight.dim() || g.bias.dim() != p.bias.dim())
        {
            return Err(Error::Dimension {
                context: "optimizer gradients",
                expected: net.num_params(),
                found: grads.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum(),
            });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((p, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
        net.version += 1;
        Ok(())
    }
}
