//! Shared per-sample kernel for two-term log losses.
//!
//! Per sample the loss is
//!
//! ```text
//! loss = -( w_gt(p_gt) * t * ln p_gt  +  w_idk(p_gt) * beta * (1 - t) * ln p_idk )
//! ```
//!
//! where `w_*` is either the focal factor `(1 - p_gt)^gamma` or the constant 1.
//! CE, Focal, FLSD, SAT and every Socrates variant are parameterisations of it.

use ndarray::{Array2, ArrayView2};

use super::{clamped_ln, PROB_EPS};
use crate::error::{Error, Result};
use crate::par::Backend;

/// A modulating factor of `p_gt` and its derivative.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Modulation {
    pub value: f64,
    pub deriv: f64,
}

impl Modulation {
    pub const ONE: Modulation = Modulation { value: 1.0, deriv: 0.0 };

    /// `(1 - p)^gamma` and `d/dp (1 - p)^gamma`.
    pub fn focal(p: f64, gamma: f64) -> Modulation {
        let om = (1.0 - p).max(0.0);
        let value = om.powf(gamma);
        let deriv = if gamma == 0.0 {
            0.0
        } else if gamma == 1.0 {
            -1.0
        } else if om > 0.0 {
            -gamma * om.powf(gamma - 1.0)
        } else {
            // saturated p = 1; the limit is 0 for gamma > 1 and unbounded for gamma < 1
            0.0
        };
        Modulation { value, deriv }
    }

    pub fn focal_if(enabled: bool, p: f64, gamma: f64) -> Modulation {
        if enabled {
            Self::focal(p, gamma)
        } else {
            Self::ONE
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TwoTerm {
    pub gt: usize,
    pub idk: Option<usize>,
    pub w_gt: Modulation,
    pub w_idk: Modulation,
    pub target: f64,
    pub beta: f64,
}

impl TwoTerm {
    /// Per-sample loss; writes `p_j * dloss/dp_j` into `h`, which must be zeroed.
    pub fn eval(&self, p: &[f64], h: &mut [f64]) -> f64 {
        let t = self.target;
        let pg = p[self.gt];
        let lg = clamped_ln(pg);
        let c_gt = self.w_gt.value * t;
        let (c_idk, l_idk) = match self.idk {
            Some(k) => (self.w_idk.value * self.beta * (1.0 - t), clamped_ln(p[k])),
            None => (0.0, 0.0),
        };
        let s = c_gt * lg + c_idk * l_idk;

        let ds_dpg_weights = self.w_gt.deriv * t * lg + self.w_idk.deriv * self.beta * (1.0 - t) * l_idk;
        let log_gt = if pg >= PROB_EPS { c_gt } else { 0.0 };
        h[self.gt] = -(ds_dpg_weights * pg + log_gt);
        if let Some(k) = self.idk {
            h[k] = -(if p[k] >= PROB_EPS { c_idk } else { 0.0 });
        }
        -s
    }

    /// `d loss / d beta`, used when the penalty is not detached.
    pub fn dloss_dbeta(&self, p: &[f64]) -> f64 {
        match self.idk {
            Some(k) => -(self.w_idk.value * (1.0 - self.target) * clamped_ln(p[k])),
            None => 0.0,
        }
    }
}

/// Turns `h = p ⊙ dloss/dp` into `dloss/dz` through the softmax Jacobian and
/// applies the batch-mean factor.
pub(crate) fn finish_row(p: &[f64], h: &mut [f64], n: f64) {
    let s: f64 = h.iter().sum();
    for (hj, &pj) in h.iter_mut().zip(p) {
        *hj = (*hj - pj * s) / n;
    }
}

/// Evaluates `per_sample` on every row of `probs` and assembles the batch
/// mean loss and logit gradient. `per_sample(i, p_row, h_row)` returns the
/// sample loss and fills `h_row` with `p ⊙ dloss/dp`.
pub(crate) fn run_batch<F>(probs: ArrayView2<f64>, backend: Backend, per_sample: F) -> Result<(f64, Array2<f64>)>
where
    F: Fn(usize, &[f64], &mut [f64]) -> f64 + Sync + Send,
{
    let (n, k) = probs.dim();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let probs = probs.as_standard_layout();
    let flat = probs.as_slice().expect("standard layout");
    let rows: Vec<&[f64]> = flat.chunks(k).collect();
    let mut grad = Array2::<f64>::zeros((n, k));
    let mut losses = vec![0.0; n];
    let nf = n as f64;
    {
        let g = grad.as_slice_mut().expect("standard layout");
        let mut joined: Vec<(&mut f64, &mut [f64])> = losses.iter_mut().zip(g.chunks_mut(k)).collect();
        let idx: Vec<usize> = (0..n).collect();
        backend.for_each_chunk_mut(&idx, &mut joined, 1, 32, |_, ids, outs| {
            for (&i, (loss, h)) in ids.iter().zip(outs.iter_mut()) {
                let p = rows[i];
                **loss = per_sample(i, p, h);
                finish_row(p, h, nf);
            }
        });
    }
    let loss = losses.iter().sum::<f64>() / nf;
    Ok((loss, grad))
}
