//! Dense feed-forward classifier with manual backpropagation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Backend;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `weights` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn zeros_like(&self) -> Layer {
        Layer {
            weights: Array2::zeros(self.weights.raw_dim()),
            biases: Array1::zeros(self.biases.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Inputs of every layer from a forward pass (the last entry is the logits).
pub struct ForwardCache {
    outputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }
}

/// Glorot-uniform weights from xoshiro256++ streams derived from `seed`
/// (one stream per layer), zero biases.
pub fn init_mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 3 {
        return Err(Error::BadArchitecture(format!("need input, at least one hidden and an output layer, got {layer_sizes:?}")));
    }
    if let Some(i) = layer_sizes.iter().position(|&w| w == 0) {
        return Err(Error::BadArchitecture(format!("layer {i} has zero width")));
    }
    let layers = layer_sizes
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut gen = rng::stream(seed, Stream::Init, l as u64);
            let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || gen.random_range(-bound..bound));
            Layer {
                weights,
                biases: Array1::zeros(fan_out),
            }
        })
        .collect();
    Ok(MlpModel { layers, activation })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = outputs[l].dot(&layer.weights);
            z += &layer.biases;
            if l < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            outputs.push(z);
        }
        Ok(ForwardCache { outputs })
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.outputs.pop().expect("logits"))
    }

    /// Logits for a whole dataset, evaluated in fixed 256-row chunks.
    pub fn logits(&self, x: ArrayView2<f64>, backend: Backend) -> Result<Array2<f64>> {
        const CHUNK: usize = 256;
        let n = x.nrows();
        let chunks = backend.map_range(n.div_ceil(CHUNK), |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            self.forward(x.slice(s![lo..hi, ..]))
        });
        let mut out = Array2::zeros((n, self.output_dim()));
        for (c, block) in chunks.into_iter().enumerate() {
            let block = block?;
            let lo = c * CHUNK;
            out.slice_mut(s![lo..lo + block.nrows(), ..]).assign(&block);
        }
        Ok(out)
    }

    /// Parameter gradients given `dL/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Vec<Layer> {
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut delta = grad_logits.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.outputs[l];
            grads[l].weights = input.t().dot(&delta);
            grads[l].biases = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights.t());
                upstream.zip_mut_with(input, |d, &y| *d *= self.activation.deriv_from_output(y));
                delta = upstream;
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = init_mlp(&[2, 8, 8, 3], Activation::Relu, 42).unwrap();
        let b = init_mlp(&[2, 8, 8, 3], Activation::Relu, 42).unwrap();
        let c = init_mlp(&[2, 8, 8, 3], Activation::Relu, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_distribution() {
        // Uniform(-a, a): mean 0, variance a^2 / 3
        let m = init_mlp(&[1000, 1000, 2], Activation::Relu, 7).unwrap();
        let w = &m.layers[0].weights;
        let a = (6.0f64 / 2000.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= a));
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let sigma_of_mean = (a * a / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma_of_mean, "mean {mean}");
        let var = w.mapv(|v| v * v).sum() / n;
        assert!((var - a * a / 3.0).abs() / (a * a / 3.0) < 0.01);
    }

    #[test]
    fn bad_architecture() {
        assert!(matches!(init_mlp(&[2, 3], Activation::Relu, 0), Err(Error::BadArchitecture(_))));
        assert!(matches!(init_mlp(&[2, 0, 3], Activation::Relu, 0), Err(Error::BadArchitecture(_))));
    }

    #[test]
    fn chunked_logits_match_single_pass() {
        let m = init_mlp(&[3, 16, 16, 4], Activation::Tanh, 1).unwrap();
        let x = Array2::from_shape_fn((700, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64 / 5.0 - 1.5);
        let whole = m.forward(x.view()).unwrap();
        assert_eq!(m.logits(x.view(), Backend::Sequential).unwrap(), whole);
        assert_eq!(m.logits(x.view(), Backend::Parallel).unwrap(), whole);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Relu, Activation::Tanh] {
            let m = init_mlp(&[3, 5, 4, 3], act, 9).unwrap();
            let x = array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]];
            // L = sum(c ⊙ logits) with fixed weights c
            let c = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
            let loss = |m: &MlpModel| (&m.forward(x.view()).unwrap() * &c).sum();
            let cache = m.forward_cached(x.view()).unwrap();
            let grads = m.backward(&cache, &c);
            let h = 1e-6;
            for (l, grad) in grads.iter().enumerate() {
                for idx in [(0, 0), (1, 2), (2, 1)] {
                    if idx.0 >= m.layers[l].weights.nrows() || idx.1 >= m.layers[l].weights.ncols() {
                        continue;
                    }
                    let mut plus = m.clone();
                    plus.layers[l].weights[idx] += h;
                    let mut minus = m.clone();
                    minus.layers[l].weights[idx] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    assert!((fd - grad.weights[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "layer {l} {idx:?}: {fd} vs {}", grad.weights[idx]);
                }
                let mut plus = m.clone();
                plus.layers[l].biases[0] += h;
                let mut minus = m.clone();
                minus.layers[l].biases[0] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - grad.biases[0]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
