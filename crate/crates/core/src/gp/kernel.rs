//! Covariance functions on the unit cube.
//!
//! All three kernels share a Gaussian term over transformed coordinates
//! `ψ(x)`:
//!
//! * ARD squared exponential: `ψ(x) = x`
//! * relative distance: `ψ(x) = |x − s|`, with `s` the anchor (incumbent best)
//! * houses: `ψ_d(x) = w_d(|x_d − s_d|)`, with `w_d` a Kumaraswamy CDF,
//!   plus a second warped stationary term `θ_k·exp(−Σ (w_d(x_d) − w_d(z_d))² / 2γ_d²)`.
//!
//! Composing a kernel with any feature map keeps it positive semidefinite,
//! as does adding two kernels, so all Gram matrices built here are PSD up
//! to rounding. The second term warps each coordinate before differencing:
//! warping the difference itself (`w_d(|x_d − z_d|)`) is not a kernel for
//! `α_d > 1` (see `warped_difference_is_not_a_kernel` below).

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg, domain, Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    ArdSe,
    RelativeDistance,
    Houses,
}

impl KernelKind {
    pub fn needs_anchor(self) -> bool {
        !matches!(self, KernelKind::ArdSe)
    }
}

/// Kernel hyperparameters. Vectors are per dimension; `theta_k`, `gamma`,
/// `alpha` and `beta` only matter for [`KernelKind::Houses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub kind: KernelKind,
    pub theta_f: f64,
    pub theta_k: f64,
    pub theta_d: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Noise standard deviation.
    pub theta_c: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl KernelParams {
    pub fn ard(theta_f: f64, theta_d: Vec<f64>, theta_c: f64) -> Self {
        KernelParams {
            kind: KernelKind::ArdSe,
            theta_f,
            theta_k: 0.0,
            gamma: vec![1.0; theta_d.len()],
            alpha: vec![1.0; theta_d.len()],
            beta: vec![1.0; theta_d.len()],
            theta_d,
            theta_c,
        }
    }

    pub fn relative_distance(theta_f: f64, theta_d: Vec<f64>, theta_c: f64) -> Self {
        KernelParams {
            kind: KernelKind::RelativeDistance,
            ..Self::ard(theta_f, theta_d, theta_c)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn houses(
        theta_f: f64,
        theta_k: f64,
        theta_d: Vec<f64>,
        gamma: Vec<f64>,
        theta_c: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    ) -> Self {
        KernelParams {
            kind: KernelKind::Houses,
            theta_f,
            theta_k,
            theta_d,
            gamma,
            theta_c,
            alpha,
            beta,
        }
    }

    /// Starting point used for `n = 1` fits and as the first fit start.
    pub fn default_for(kind: KernelKind, dim: usize) -> Self {
        match kind {
            KernelKind::ArdSe => Self::ard(1.0, vec![0.5; dim], 0.05),
            KernelKind::RelativeDistance => Self::relative_distance(1.0, vec![0.5; dim], 0.05),
            KernelKind::Houses => Self::houses(
                1.0,
                0.5,
                vec![0.5; dim],
                vec![0.5; dim],
                0.05,
                vec![1.0; dim],
                vec![1.0; dim],
            ),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_d.len()
    }

    /// Prior variance `k(x, x)`.
    pub fn signal_variance(&self) -> f64 {
        match self.kind {
            KernelKind::Houses => self.theta_f + self.theta_k,
            _ => self.theta_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(arg("kernel needs at least one length scale"));
        }
        let nonneg = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(domain(format!("{what} must be finite and ≥ 0, got {v}")))
            }
        };
        let positive = |vs: &[f64], what: &str| {
            if vs.len() != d {
                return Err(arg(format!("{what} has {} entries, expected {d}", vs.len())));
            }
            match vs.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                Some(v) => Err(domain(format!("{what} entries must be > 0, got {v}"))),
                None => Ok(()),
            }
        };
        nonneg(self.theta_f, "theta_f")?;
        nonneg(self.theta_c, "theta_c")?;
        positive(&self.theta_d, "theta_d")?;
        if self.kind == KernelKind::Houses {
            nonneg(self.theta_k, "theta_k")?;
            positive(&self.gamma, "gamma")?;
            positive(&self.alpha, "alpha")?;
            positive(&self.beta, "beta")?;
        }
        Ok(())
    }
}

/// Kernel evaluation counters, split by stationarity. Incremented in bulk
/// by the matrix builders and predictors.
pub mod calls {
    use super::*;

    static STATIONARY: AtomicU64 = AtomicU64::new(0);
    static NONSTATIONARY: AtomicU64 = AtomicU64::new(0);

    pub(crate) fn record(kind: KernelKind, n: u64) {
        match kind {
            KernelKind::ArdSe => STATIONARY.fetch_add(n, Ordering::Relaxed),
            _ => NONSTATIONARY.fetch_add(n, Ordering::Relaxed),
        };
    }

    pub fn stationary() -> u64 {
        STATIONARY.load(Ordering::Relaxed)
    }

    pub fn nonstationary() -> u64 {
        NONSTATIONARY.load(Ordering::Relaxed)
    }
}

/// Kumaraswamy CDF `1 − (1 − u^α)^β` on `[0, 1]`.
pub fn warp_kumaraswamy(u: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(domain(format!("warp input {u} outside [0, 1]")));
    }
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(domain(format!("warp shapes must be > 0, got ({alpha}, {beta})")));
    }
    Ok(warp(u, alpha, beta))
}

#[inline]
pub(crate) fn warp(u: f64, alpha: f64, beta: f64) -> f64 {
    if alpha == 1.0 && beta == 1.0 {
        return u;
    }
    // 1 − (1 − u^α)^β, written to stay accurate for small u^α
    let ua = u.powf(alpha);
    (-(beta * (-ua).ln_1p()).exp_m1()).clamp(0.0, 1.0)
}

fn check_pair(a: &[f64], b: &[f64], params: &KernelParams) -> Result<()> {
    if a.len() != b.len() || a.len() != params.dim() {
        return Err(arg(format!(
            "dimension mismatch: {} vs {} (kernel has {})",
            a.len(),
            b.len(),
            params.dim()
        )));
    }
    Ok(())
}

fn check_anchor(anchor: Option<&[f64]>, params: &KernelParams) -> Result<()> {
    match anchor {
        Some(s) if s.len() == params.dim() => Ok(()),
        Some(s) => Err(arg(format!("anchor has {} entries, expected {}", s.len(), params.dim()))),
        None => Err(arg("kernel requires an anchor point")),
    }
}

/// Stationary ARD squared exponential kernel.
pub fn kernel_ard_se(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    check_pair(a, b, params)?;
    if params.kind != KernelKind::ArdSe {
        return Err(arg("kernel_ard_se called with non-ARD params"));
    }
    calls::record(KernelKind::ArdSe, 1);
    Ok(Covariance::new(params, None)?.eval(a, b))
}

/// Relative-distance kernel: Gaussian over `|x − s|`.
pub fn kernel_relative_distance(
    a: &[f64],
    b: &[f64],
    params: &KernelParams,
    anchor: &[f64],
) -> Result<f64> {
    check_pair(a, b, params)?;
    let p = KernelParams {
        kind: KernelKind::RelativeDistance,
        ..params.clone()
    };
    calls::record(KernelKind::RelativeDistance, 1);
    Ok(Covariance::new(&p, Some(anchor))?.eval(a, b))
}

/// Warped relative-distance kernel plus warped stationary term.
pub fn kernel_houses(a: &[f64], b: &[f64], params: &KernelParams, anchor: &[f64]) -> Result<f64> {
    check_pair(a, b, params)?;
    if params.kind != KernelKind::Houses {
        return Err(arg("kernel_houses called with non-houses params"));
    }
    calls::record(KernelKind::Houses, 1);
    Ok(Covariance::new(params, Some(anchor))?.eval(a, b))
}

/// Transformed coordinates of one point: `ψ(x)` for the anchored term and
/// `ω(x) = w(x)` for the houses second term (empty for other kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
}

/// A validated kernel bound to its anchor, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Covariance<'a> {
    params: &'a KernelParams,
    anchor: Option<&'a [f64]>,
}

impl<'a> Covariance<'a> {
    pub fn new(params: &'a KernelParams, anchor: Option<&'a [f64]>) -> Result<Self> {
        params.validate()?;
        if params.kind.needs_anchor() {
            check_anchor(anchor, params)?;
        }
        Ok(Covariance { params, anchor })
    }

    pub fn params(&self) -> &KernelParams {
        self.params
    }

    /// `ψ_d(t)` for a single coordinate.
    #[inline]
    pub fn transform_coord(&self, d: usize, t: f64) -> f64 {
        let p = self.params;
        match p.kind {
            KernelKind::ArdSe => t,
            KernelKind::RelativeDistance => (t - self.anchor.unwrap()[d]).abs(),
            KernelKind::Houses => warp((t - self.anchor.unwrap()[d]).abs(), p.alpha[d], p.beta[d]),
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|d| self.transform_coord(d, x[d])).collect()
    }

    /// `exp(−(ψ_a − ψ_b)²/2θ_d²)` in dimension `d` for pre-transformed coordinates.
    #[inline]
    pub fn first_factor(&self, d: usize, psi_a: f64, psi_b: f64) -> f64 {
        let t = self.params.theta_d[d];
        let diff = psi_a - psi_b;
        (-diff * diff / (2.0 * t * t)).exp()
    }

    /// `w_d(t)`: the coordinate warp of the houses second term.
    #[inline]
    pub fn warp_coord(&self, d: usize, t: f64) -> f64 {
        warp(t, self.params.alpha[d], self.params.beta[d])
    }

    /// `exp(−(ω_a − ω_b)²/2γ_d²)` for warped coordinates (houses only).
    #[inline]
    pub fn second_factor(&self, d: usize, omega_a: f64, omega_b: f64) -> f64 {
        let g = self.params.gamma[d];
        let diff = omega_a - omega_b;
        (-diff * diff / (2.0 * g * g)).exp()
    }

    /// Both feature vectors of a point.
    pub fn features(&self, x: &[f64]) -> Features {
        let omega = if self.params.kind == KernelKind::Houses {
            (0..x.len()).map(|d| self.warp_coord(d, x[d])).collect()
        } else {
            Vec::new()
        };
        Features {
            psi: self.transform(x),
            omega,
        }
    }

    /// Kernel value from precomputed features.
    #[inline]
    pub fn eval_features(&self, a: &Features, b: &Features) -> f64 {
        let p = self.params;
        let mut e1 = 0.0;
        for d in 0..a.psi.len() {
            let diff = a.psi[d] - b.psi[d];
            e1 += diff * diff / (2.0 * p.theta_d[d] * p.theta_d[d]);
        }
        let mut k = p.theta_f * (-e1).exp();
        if p.kind == KernelKind::Houses {
            let mut e2 = 0.0;
            for d in 0..a.omega.len() {
                let diff = a.omega[d] - b.omega[d];
                e2 += diff * diff / (2.0 * p.gamma[d] * p.gamma[d]);
            }
            k += p.theta_k * (-e2).exp();
        }
        k
    }

    /// Kernel value `k(a, b)`. Dimensions are assumed to match.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_features(&self.features(a), &self.features(b))
    }
}

/// Gram matrix `K[i][j] = k(x_i, x_j)` under the selected kernel.
pub fn build_cov_matrix(
    x: &[Vec<f64>],
    params: &KernelParams,
    anchor: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    build_cov_matrix_with(x, params, anchor, Exec::default())
}

pub fn build_cov_matrix_with(
    x: &[Vec<f64>],
    params: &KernelParams,
    anchor: Option<&[f64]>,
    exec: Exec,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(arg("covariance matrix needs at least one point"));
    }
    let cov = Covariance::new(params, anchor)?;
    if let Some(row) = x.iter().find(|r| r.len() != params.dim()) {
        return Err(Error::Argument(format!(
            "point has {} coordinates, kernel has {}",
            row.len(),
            params.dim()
        )));
    }
    let feats: Vec<Features> = x.iter().map(|r| cov.features(r)).collect();
    let rows = exec.map_range(n, |i| {
        (0..=i)
            .map(|j| cov.eval_features(&feats[i], &feats[j]))
            .collect::<Vec<f64>>()
    });
    calls::record(params.kind, (n * (n + 1) / 2) as u64);
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}
