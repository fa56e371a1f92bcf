use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{build_cov_matrix, calls, Covariance, Features, KernelParams};
use crate::error::{arg, Error, Result};

/// How targets are transformed before the zero-mean GP sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Targets {
    /// Use `y` as given.
    Raw,
    /// Subtract the mean and divide by the standard deviation; predictions
    /// are mapped back to the original units.
    Standardized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Jitter schedule: start at `1e-10 · signal`, double until `1e-4 · signal`.
pub(crate) fn jitter_schedule(signal: f64) -> impl Iterator<Item = f64> {
    let scale = if signal > 0.0 { signal } else { 1.0 };
    let max = 1e-4 * scale;
    std::iter::successors(Some(1e-10 * scale), move |j| Some(j * 2.0)).take_while(move |&j| j <= max)
}

/// Lower Cholesky factor of `k + jitter·I`, trying the jitter schedule in
/// order. `k` must already include the noise term.
pub(crate) fn factorize(k: &DMatrix<f64>, signal: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut last = 0.0;
    for jitter in jitter_schedule(signal) {
        last = jitter;
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = kj.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::Conditioning { jitter: last })
}

pub(crate) fn standardize(y: &[f64], targets: Targets) -> (Vec<f64>, f64, f64) {
    match targets {
        Targets::Raw => (y.to_vec(), 0.0, 1.0),
        Targets::Standardized => {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
            (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
        }
    }
}

/// A Gaussian-process posterior over the unit cube.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_std: Vec<f64>,
    y_offset: f64,
    y_scale: f64,
    params: KernelParams,
    anchor: Option<Vec<f64>>,
    feats: Vec<Features>,
    factor: DMatrix<f64>,
    weights: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Condition a GP with fixed hyperparameters on `(x, y)`.
    pub fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        params: KernelParams,
        anchor: Option<Vec<f64>>,
        targets: Targets,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(arg("GP needs at least one training point"));
        }
        if x.len() != y.len() {
            return Err(arg(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite target {v}")));
        }
        if x.iter().flatten().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::Data("training inputs must lie in the unit cube".into()));
        }
        let mut k = build_cov_matrix(&x, &params, anchor.as_deref())?;
        let noise = params.theta_c * params.theta_c;
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let (factor, jitter) = factorize(&k, params.signal_variance())?;
        let (y_std, y_offset, y_scale) = standardize(&y, targets);
        let weights = cholesky_solve(&factor, &DVector::from_column_slice(&y_std));
        let cov = Covariance::new(&params, anchor.as_deref())?;
        let feats = x.iter().map(|r| cov.features(r)).collect();
        Ok(GpModel {
            x,
            y,
            y_std,
            y_offset,
            y_scale,
            params,
            anchor,
            feats,
            factor,
            weights,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn anchor(&self) -> Option<&[f64]> {
        self.anchor.as_deref()
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.y
    }

    /// Lower-triangular `L` with `L·Lᵀ = K + (θ_c² + jitter)·I`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(K + θ_c²I)⁻¹ y` for the (possibly standardized) targets.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `(offset, scale)` mapping model units back to objective units.
    pub fn target_transform(&self) -> (f64, f64) {
        (self.y_offset, self.y_scale)
    }

    pub(crate) fn train_features(&self) -> &[Features] {
        &self.feats
    }

    pub fn covariance(&self) -> Covariance<'_> {
        Covariance::new(&self.params, self.anchor.as_deref()).expect("validated at construction")
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(arg(format!("point has {} coordinates, model has {}", x.len(), self.dim())));
        }
        Ok(())
    }

    fn cross_cov(&self, cov: &Covariance<'_>, x: &[f64]) -> Vec<f64> {
        let fx = cov.features(x);
        calls::record(self.params.kind, self.len() as u64);
        self.feats.iter().map(|fi| cov.eval_features(&fx, fi)).collect()
    }

    /// Predictive mean in objective units.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let ks = self.cross_cov(&self.covariance(), x);
        let m: f64 = ks.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum();
        Ok(self.y_offset + self.y_scale * m)
    }

    /// Predictive mean and variance in objective units. Variance is clamped
    /// at zero.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_point(x)?;
        let cov = self.covariance();
        let ks = self.cross_cov(&cov, x);
        let m: f64 = ks.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum();
        let v = forward_substitute(&self.factor, &ks);
        let prior = self.params.signal_variance();
        let var = (prior - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        Ok(Prediction {
            mean: self.y_offset + self.y_scale * m,
            variance: self.y_scale * self.y_scale * var,
        })
    }

    /// Log marginal likelihood of the model-unit targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        lml_from_factor(&self.factor, &self.y_std, &self.weights)
    }

    /// Same hyperparameters, new anchor and/or data; used between refits.
    pub fn refactor(
        &self,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        anchor: Option<Vec<f64>>,
        targets: Targets,
    ) -> Result<Self> {
        GpModel::new(x, y, self.params.clone(), anchor, targets)
    }
}

pub(crate) fn lml_from_factor(factor: &DMatrix<f64>, y: &[f64], weights: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let fit: f64 = y.iter().zip(weights.iter()).map(|(a, b)| a * b).sum();
    let logdet: f64 = factor.diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * fit - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * out[j];
        }
        out[i] = s / l[(i, i)];
    }
    out
}

pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = forward_substitute(l, b.as_slice());
    let n = z.len();
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for j in i + 1..n {
            s -= l[(j, i)] * out[j];
        }
        out[i] = s / l[(i, i)];
    }
    DVector::from_vec(out)
}
