//! Post-hoc recalibration of logits: temperature, vector and matrix scaling.
//!
//! Temperature is fitted by golden-section search on `ln T` followed by
//! Newton refinement on the inverse temperature (the NLL is convex in it).
//! Vector and matrix scaling minimise the validation NLL by full-batch
//! gradient descent with an Armijo backtracking line search; the trial step
//! is the Barzilai-Borwein step length.

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{clamped_ln, softmax_into, softmax_rows};
use crate::par::Backend;

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const GOLDEN_TOL: f64 = 1e-6;
const NEWTON_STEPS: usize = 5;
pub const GD_GRAD_TOL: f64 = 1e-6;
pub const GD_MAX_ITERS: usize = 5000;

/// A fitted logit transform. Serialises as `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Scaler {
    Temperature { temperature: f64 },
    Vector { scale: Vec<f64>, bias: Vec<f64> },
    Matrix { weights: Vec<Vec<f64>>, bias: Vec<f64> },
}

impl Scaler {
    pub fn identity_vector(k: usize) -> Self {
        Scaler::Vector {
            scale: vec![1.0; k],
            bias: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Scaler::Temperature { .. } => None,
            Scaler::Vector { scale, .. } => Some(scale.len()),
            Scaler::Matrix { bias, .. } => Some(bias.len()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scaler::Temperature { .. } => "ts",
            Scaler::Vector { .. } => "vs",
            Scaler::Matrix { .. } => "ms",
        }
    }

    /// Transformed logits.
    pub fn transform(&self, logits: ArrayView2<f64>) -> Result<Array2<f64>> {
        let k = logits.ncols();
        if let Some(d) = self.dim() {
            if d != k {
                return Err(Error::DimensionMismatch { expected: d, got: k });
            }
        }
        let mut out = logits.to_owned();
        match self {
            Scaler::Temperature { temperature } => {
                if temperature.is_nan() || *temperature <= 0.0 {
                    return Err(Error::bad_config("temperature", "must be > 0"));
                }
                out.mapv_inplace(|z| z / temperature);
            }
            Scaler::Vector { scale, bias } => {
                for mut row in out.rows_mut() {
                    for (k, z) in row.iter_mut().enumerate() {
                        *z = scale[k] * *z + bias[k];
                    }
                }
            }
            Scaler::Matrix { weights, bias } => {
                for (mut row, src) in out.rows_mut().into_iter().zip(logits.rows()) {
                    for (k, z) in row.iter_mut().enumerate() {
                        *z = bias[k] + weights[k].iter().zip(src.iter()).map(|(w, x)| w * x).sum::<f64>();
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Probabilities after applying `scaler`.
pub fn apply_scaler(scaler: &Scaler, logits: ArrayView2<f64>) -> Result<Array2<f64>> {
    softmax_rows(scaler.transform(logits)?.view(), Backend::Sequential)
}

fn check(logits: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyLog);
    }
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            got: labels.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::DimensionMismatch { expected: logits.ncols(), got: y });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under softmax of `logits`.
pub fn nll(logits: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let mut p = vec![0.0; logits.ncols()];
    let mut sum = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let z = row.to_vec();
        if softmax_into(&z, &mut p).is_err() {
            return f64::NAN;
        }
        sum -= clamped_ln(p[y]);
    }
    sum / labels.len() as f64
}

/// NLL at inverse temperature `u`, with its first and second derivative.
fn inverse_temperature_nll(logits: ArrayView2<f64>, labels: &[usize], u: f64) -> (f64, f64, f64) {
    let mut p = vec![0.0; logits.ncols()];
    let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let z: Vec<f64> = row.iter().map(|v| v * u).collect();
        softmax_into(&z, &mut p).expect("finite logits");
        let mean: f64 = p.iter().zip(row.iter()).map(|(pk, zk)| pk * zk).sum();
        let second: f64 = p.iter().zip(row.iter()).map(|(pk, zk)| pk * zk * zk).sum();
        f -= clamped_ln(p[y]);
        d1 += mean - row[y];
        d2 += second - mean * mean;
    }
    let n = labels.len() as f64;
    (f / n, d1 / n, d2 / n)
}

/// Temperature minimising validation NLL, searched over `[T_MIN, T_MAX]`.
pub fn fit_temperature(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Scaler> {
    check(logits, labels)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged("non-finite logits".into()));
    }
    let f = |ln_t: f64| inverse_temperature_nll(logits, labels, (-ln_t).exp()).0;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN.ln(), T_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut u = (-(a + b) / 2.0).exp();
    let (mut best, _, _) = inverse_temperature_nll(logits, labels, u);
    for _ in 0..NEWTON_STEPS {
        let (_, g, h) = inverse_temperature_nll(logits, labels, u);
        if h.is_nan() || h <= 0.0 || g == 0.0 {
            break;
        }
        let cand = u - g / h;
        if !(1.0 / T_MAX..=1.0 / T_MIN).contains(&cand) {
            break;
        }
        let (fc, _, _) = inverse_temperature_nll(logits, labels, cand);
        if fc <= best {
            best = fc;
            u = cand;
        } else {
            break;
        }
    }
    if !best.is_finite() {
        return Err(Error::FitDiverged(format!("temperature fit reached NLL {best}")));
    }
    Ok(Scaler::Temperature { temperature: 1.0 / u })
}

/// Gradient descent with Armijo backtracking; BB step as the trial length.
fn minimise<F>(mut x: Vec<f64>, objective: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (mut f, mut g) = objective(&x);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for _ in 0..GD_MAX_ITERS {
        if !f.is_finite() {
            return Err(Error::FitDiverged(format!("objective became {f}")));
        }
        let gnorm_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm_inf < GD_GRAD_TOL {
            break;
        }
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|a| a * a).sum();
            if sy > 0.0 {
                step = (ss / sy).clamp(1e-8, 1e4);
            }
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let (fc, gc) = objective(&cand);
            if fc.is_finite() && fc <= f - 1e-4 * step * g2 {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no decrease at machine precision: stationary for practical purposes
            break;
        };
        prev = Some((std::mem::replace(&mut x, cand), std::mem::replace(&mut g, gc)));
        f = fc;
    }
    Ok(x)
}

/// NLL and `dNLL/dz'` for transformed logits `z'`.
fn nll_and_residual(transformed: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let k = transformed.ncols();
    let mut resid = Array2::zeros(transformed.raw_dim());
    let mut p = vec![0.0; k];
    let mut f = 0.0;
    for ((row, mut r), &y) in transformed.rows().into_iter().zip(resid.rows_mut()).zip(labels) {
        let z = row.to_vec();
        if softmax_into(&z, &mut p).is_err() {
            return (f64::NAN, resid);
        }
        f -= clamped_ln(p[y]);
        for j in 0..k {
            r[j] = (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (f / n, resid)
}

/// Per-class scale and bias minimising validation NLL.
pub fn fit_vector_scaling(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Scaler> {
    check(logits, labels)?;
    let k = logits.ncols();
    if labels.len() < k {
        return Err(Error::TooFewSamples { n: labels.len(), bins: k });
    }
    let unpack = |x: &[f64]| Scaler::Vector {
        scale: x[..k].to_vec(),
        bias: x[k..].to_vec(),
    };
    let objective = |x: &[f64]| {
        let t = unpack(x).transform(logits).expect("dimension checked");
        let (f, r) = nll_and_residual(&t, labels);
        let mut g = vec![0.0; 2 * k];
        for (rr, zr) in r.rows().into_iter().zip(logits.rows()) {
            for j in 0..k {
                g[j] += rr[j] * zr[j];
                g[k + j] += rr[j];
            }
        }
        (f, g)
    };
    let mut x0 = vec![1.0; k];
    x0.extend(vec![0.0; k]);
    Ok(unpack(&minimise(x0, objective)?))
}

/// Full affine map `W z + b` minimising validation NLL plus
/// `l2 * ||W - I||^2`.
pub fn fit_matrix_scaling(logits: ArrayView2<f64>, labels: &[usize], l2: f64) -> Result<Scaler> {
    check(logits, labels)?;
    let k = logits.ncols();
    if labels.len() < k {
        return Err(Error::TooFewSamples { n: labels.len(), bins: k });
    }
    if labels.len() < k * k {
        warn!("matrix scaling with {} samples for {} parameters", labels.len(), k * k + k);
    }
    let unpack = |x: &[f64]| Scaler::Matrix {
        weights: x[..k * k].chunks(k).map(<[f64]>::to_vec).collect(),
        bias: x[k * k..].to_vec(),
    };
    let objective = |x: &[f64]| {
        let t = unpack(x).transform(logits).expect("dimension checked");
        let (mut f, r) = nll_and_residual(&t, labels);
        let mut g = vec![0.0; k * k + k];
        for (rr, zr) in r.rows().into_iter().zip(logits.rows()) {
            for a in 0..k {
                for b in 0..k {
                    g[a * k + b] += rr[a] * zr[b];
                }
                g[k * k + a] += rr[a];
            }
        }
        if l2 > 0.0 {
            for a in 0..k {
                for b in 0..k {
                    let d = x[a * k + b] - if a == b { 1.0 } else { 0.0 };
                    f += l2 * d * d;
                    g[a * k + b] += 2.0 * l2 * d;
                }
            }
        }
        (f, g)
    };
    let mut x0 = vec![0.0; k * k + k];
    for a in 0..k {
        x0[a * k + a] = 1.0;
    }
    Ok(unpack(&minimise(x0, objective)?))
}

/// Fits the named method (`ts`, `vs` or `ms`).
pub fn fit(method: &str, logits: ArrayView2<f64>, labels: &[usize]) -> Result<Scaler> {
    match method {
        "ts" => fit_temperature(logits, labels),
        "vs" => fit_vector_scaling(logits, labels),
        "ms" => fit_matrix_scaling(logits, labels, 0.0),
        other => Err(Error::bad_config("method", format!("unknown calibration method `{other}` (expected ts, vs or ms)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_transforms() {
        let logits = array![[0.3, -1.0, 2.0], [1.5, 0.2, 0.0]];
        let base = softmax_rows(logits.view(), Backend::Sequential).unwrap();
        assert_eq!(apply_scaler(&Scaler::Temperature { temperature: 1.0 }, logits.view()).unwrap(), base);
        assert_eq!(apply_scaler(&Scaler::identity_vector(3), logits.view()).unwrap(), base);
    }

    #[test]
    fn huge_temperature_is_near_uniform() {
        let logits = array![[5.0, -3.0, 0.5]];
        let p = apply_scaler(&Scaler::Temperature { temperature: 1e6 }, logits.view()).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-5));
    }

    #[test]
    fn dimension_mismatch() {
        let logits = array![[0.0, 1.0]];
        assert!(matches!(apply_scaler(&Scaler::identity_vector(3), logits.view()), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn json_shape() {
        let s = Scaler::Temperature { temperature: 1.5 };
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"kind":"temperature","params":{"temperature":1.5}}"#);
        let v: Scaler = serde_json::from_str(r#"{"kind":"vector","params":{"scale":[1.0,2.0],"bias":[0.0,0.5]}}"#).unwrap();
        assert_eq!(v, Scaler::Vector { scale: vec![1.0, 2.0], bias: vec![0.0, 0.5] });
    }

    #[test]
    fn separable_data_stays_bounded() {
        let logits = array![[3.0, -3.0], [4.0, -1.0], [2.0, 0.0]];
        let Scaler::Temperature { temperature } = fit_temperature(logits.view(), &[0, 0, 0]).unwrap() else { unreachable!() };
        assert!((T_MIN..=T_MAX).contains(&temperature));
        assert!(temperature < 0.06);
    }

    #[test]
    fn unknown_method() {
        let logits = array![[0.0, 1.0]];
        assert!(matches!(fit("xx", logits.view(), &[0]), Err(Error::BadConfig { .. })));
    }
}
