//! First-order functional ANOVA over the unit cube.
//!
//! For each dimension `d` the marginal `â(g)` averages the predictor over all
//! other coordinates with `x_d = g`, centred by the grand mean. The variance
//! of that curve over a uniform grid is `V_d`; importances are
//! `I_d = V_d / Σ V_j`. Interactions (|U| > 1) are not computed, so the
//! importances sum to one by construction.
//!
//! Two integration routes are provided:
//!
//! * [`marginal_curve`] / [`importance`]: generic, for any predictor, using
//!   a randomly shifted Halton point set for the other coordinates.
//! * [`gp_importance`]: for a [`GpModel`] mean. Every kernel here is a sum of
//!   products of one-dimensional factors, so the integral over the other
//!   coordinates factorizes into 1-D quadratures.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::exec::Exec;
use crate::gp::{GpModel, KernelKind};
use crate::rng::{self, Purpose};

pub const DEFAULT_GRID_SIZE: usize = 20;
pub const DEFAULT_MC_SAMPLES: usize = 512;
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub dimension: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl MarginalCurve {
    /// Discrete variance `(1/G)·Σ â(g)²` of the centred curve.
    pub fn variance(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub total_variance: f64,
    pub variances: Vec<f64>,
    pub importances: Vec<f64>,
    pub curves: Vec<MarginalCurve>,
}

impl ImportanceReport {
    pub fn from_curves(curves: Vec<MarginalCurve>) -> Self {
        let variances: Vec<f64> = curves.iter().map(MarginalCurve::variance).collect();
        let total: f64 = variances.iter().sum();
        let dim = variances.len();
        let importances = if total < DEGENERATE_VARIANCE {
            vec![1.0 / dim as f64; dim]
        } else {
            variances.iter().map(|v| v / total).collect()
        };
        ImportanceReport {
            total_variance: total,
            variances,
            importances,
            curves,
        }
    }

    /// Uniform importances, used before a surrogate is available.
    pub fn uniform(dim: usize) -> Self {
        ImportanceReport {
            total_variance: 0.0,
            variances: vec![0.0; dim],
            importances: vec![1.0 / dim as f64; dim],
            curves: Vec::new(),
        }
    }
}

/// Grid midpoints `(k + ½)/G`.
pub fn grid(grid_size: usize) -> Vec<f64> {
    (0..grid_size)
        .map(|k| (k as f64 + 0.5) / grid_size as f64)
        .collect()
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `n` Halton points in `[0,1)^dim` with a Cranley–Patterson random shift.
pub fn shifted_halton(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let bases = primes(dim);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
    (1..=n as u64)
        .map(|i| {
            bases
                .iter()
                .zip(&shift)
                .map(|(&b, &s)| (radical_inverse(i, b) + s).fract())
                .collect()
        })
        .collect()
}

fn check(dim: usize, d: usize, grid_size: usize, mc_samples: usize) -> Result<()> {
    if dim == 0 {
        return Err(arg("dimension must be ≥ 1"));
    }
    if d >= dim {
        return Err(arg(format!("dimension index {d} out of range for D = {dim}")));
    }
    if grid_size < 2 {
        return Err(arg("grid size must be ≥ 2"));
    }
    if mc_samples == 0 {
        return Err(arg("need at least one integration sample"));
    }
    Ok(())
}

/// Centred marginal curve of `predictor` along dimension `d`.
pub fn marginal_curve<F>(
    predictor: &F,
    dim: usize,
    d: usize,
    grid_size: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<MarginalCurve>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    marginal_curve_with(predictor, dim, d, grid_size, mc_samples, seed, Exec::default())
}

pub fn marginal_curve_with<F>(
    predictor: &F,
    dim: usize,
    d: usize,
    grid_size: usize,
    mc_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<MarginalCurve>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(dim, d, grid_size, mc_samples)?;
    let mut rng = rng::stream(seed, Purpose::Importance, d as u64);
    let others = shifted_halton(dim - 1, mc_samples, &mut rng);
    let g = grid(grid_size);
    let raw = exec.map_slice(&g, |&gv| {
        let mut x = vec![0.0; dim];
        let mut acc = 0.0;
        for z in &others {
            x[..d].copy_from_slice(&z[..d]);
            x[d] = gv;
            x[d + 1..].copy_from_slice(&z[d..]);
            acc += predictor(&x);
        }
        acc / mc_samples as f64
    });
    Ok(centred(d, g, raw))
}

fn centred(dimension: usize, grid: Vec<f64>, raw: Vec<f64>) -> MarginalCurve {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    MarginalCurve {
        dimension,
        grid,
        values: raw.into_iter().map(|v| v - mean).collect(),
    }
}

/// Per-dimension importance of `predictor` by quasi-Monte-Carlo integration.
pub fn importance<F>(
    predictor: &F,
    dim: usize,
    grid_size: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<ImportanceReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    importance_with(predictor, dim, grid_size, mc_samples, seed, Exec::default())
}

pub fn importance_with<F>(
    predictor: &F,
    dim: usize,
    grid_size: usize,
    mc_samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<ImportanceReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(dim, 0, grid_size, mc_samples)?;
    let curves = (0..dim)
        .map(|d| marginal_curve_with(predictor, dim, d, grid_size, mc_samples, seed, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceReport::from_curves(curves))
}

const GL_ORDER: usize = 8;
const SUBINTERVALS: usize = 4;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        (0..n)
            .map(|k| {
                let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for j in 2..=n {
                        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// Composite Gauss–Legendre nodes on `[0,1]`, split at `kink`.
fn quadrature_nodes(kink: f64) -> Vec<(f64, f64)> {
    let rule = gauss_legendre();
    let mut segments = vec![(0.0, 1.0)];
    if kink > 0.0 && kink < 1.0 {
        segments = vec![(0.0, kink), (kink, 1.0)];
    }
    let mut nodes = Vec::new();
    for (a, b) in segments {
        let h = (b - a) / SUBINTERVALS as f64;
        for s in 0..SUBINTERVALS {
            let lo = a + s as f64 * h;
            for &(x, w) in rule {
                nodes.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
    }
    nodes
}

/// Centred marginal curves of a GP's predictive mean via separable
/// quadrature.
pub fn gp_marginal_curves(model: &GpModel, grid_size: usize) -> Result<Vec<MarginalCurve>> {
    let dim = model.dim();
    check(dim, 0, grid_size, 1)?;
    let cov = model.covariance();
    let params = model.params();
    let houses = params.kind == KernelKind::Houses;
    let feats = model.train_features();
    let n = feats.len();
    let weights = model.weights();
    let (_, scale) = model.target_transform();

    // integrals[i][d] of each training point's 1-D factors over [0,1]
    let mut first_int = vec![vec![0.0; dim]; n];
    let mut second_int = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let kink = model.anchor().map_or(-1.0, |s| s[d]);
        let nodes = quadrature_nodes(kink);
        let psi: Vec<f64> = nodes.iter().map(|&(t, _)| cov.transform_coord(d, t)).collect();
        let omega: Vec<f64> = if houses {
            nodes.iter().map(|&(t, _)| cov.warp_coord(d, t)).collect()
        } else {
            Vec::new()
        };
        for i in 0..n {
            first_int[i][d] = nodes
                .iter()
                .zip(&psi)
                .map(|(&(_, w), &p)| w * cov.first_factor(d, p, feats[i].psi[d]))
                .sum();
            if houses {
                second_int[i][d] = nodes
                    .iter()
                    .zip(&omega)
                    .map(|(&(_, w), &o)| w * cov.second_factor(d, o, feats[i].omega[d]))
                    .sum();
            }
        }
    }

    let g = grid(grid_size);
    let curves = (0..dim)
        .map(|d| {
            let raw: Vec<f64> = g
                .iter()
                .map(|&t| {
                    let psi_t = cov.transform_coord(d, t);
                    let omega_t = if houses { cov.warp_coord(d, t) } else { 0.0 };
                    let mut acc = 0.0;
                    for i in 0..n {
                        let rest1: f64 = (0..dim).filter(|&e| e != d).map(|e| first_int[i][e]).product();
                        let mut k = params.theta_f * cov.first_factor(d, psi_t, feats[i].psi[d]) * rest1;
                        if houses {
                            let rest2: f64 =
                                (0..dim).filter(|&e| e != d).map(|e| second_int[i][e]).product();
                            k += params.theta_k
                                * cov.second_factor(d, omega_t, feats[i].omega[d])
                                * rest2;
                        }
                        acc += weights[i] * k;
                    }
                    scale * acc
                })
                .collect();
            centred(d, g.clone(), raw)
        })
        .collect();
    Ok(curves)
}

/// Importance of each dimension for a GP's predictive mean.
pub fn gp_importance(model: &GpModel, grid_size: usize) -> Result<ImportanceReport> {
    Ok(ImportanceReport::from_curves(gp_marginal_curves(model, grid_size)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, KernelParams, Targets};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_predictor() {
        let f = |_: &[f64]| 3.0;
        let c = marginal_curve(&f, 3, 1, 10, 64, 0).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        let r = importance(&f, 2, 10, 64, 0).unwrap();
        assert_eq!(r.importances, vec![0.5, 0.5]);
    }

    #[test]
    fn additive_marginal() {
        let n = 256;
        let c = marginal_curve(&|x: &[f64]| x[0], 2, 0, 20, n, 1).unwrap();
        let err = c
            .grid
            .iter()
            .zip(&c.values)
            .map(|(g, v)| (v - (g - 0.5)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn product_marginal_matches_closed_form() {
        // ∫ g·z dz over z ~ U(0,1) = g/2; centred over the midpoint grid: g/2 − 1/4
        let c = marginal_curve(&|x: &[f64]| x[0] * x[1], 2, 0, 20, 512, 2).unwrap();
        for (g, v) in c.grid.iter().zip(&c.values) {
            assert!((v - (0.5 * g - 0.25)).abs() < 5e-3, "g={g} v={v}");
        }
    }

    #[test]
    fn argument_errors() {
        let f = |x: &[f64]| x[0];
        assert!(marginal_curve(&f, 2, 2, 10, 10, 0).is_err());
        assert!(marginal_curve(&f, 2, 0, 1, 10, 0).is_err());
        assert!(marginal_curve(&f, 2, 0, 10, 0, 0).is_err());
        assert!(importance(&f, 0, 10, 10, 0).is_err());
    }

    #[test]
    fn importance_examples() {
        let r = importance(&|x: &[f64]| x[0], 2, 20, 512, 3).unwrap();
        assert!((r.importances[0] - 1.0).abs() <= 0.02 && r.importances[1] <= 0.02);
        let r = importance(&|x: &[f64]| x[0] * x[0] + 2.0 * x[1] * x[1], 2, 20, 512, 3).unwrap();
        assert!((r.importances[0] - 0.2).abs() <= 0.02);
        assert!((r.importances[1] - 0.8).abs() <= 0.02);
    }

    #[test]
    fn sum_to_one_and_scale_invariant() {
        let f = |x: &[f64]| (3.0 * x[0]).sin() + x[1] * x[2] + 0.1 * x[2];
        let r = importance(&f, 3, 12, 128, 4).unwrap();
        assert!((r.importances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.importances.iter().all(|i| (0.0..=1.0).contains(i)));
        let g = |x: &[f64]| -7.5 * f(x);
        let r2 = importance(&g, 3, 12, 128, 4).unwrap();
        for (a, b) in r.importances.iter().zip(&r2.importances) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_equivariant() {
        let f = |x: &[f64]| x[0] * x[0] + 0.5 * x[1] + 2.0 * (x[2] - 0.3).abs();
        let g = |x: &[f64]| f(&[x[2], x[0], x[1]]);
        let a = importance(&f, 3, 20, 512, 5).unwrap().importances;
        let b = importance(&g, 3, 20, 512, 5).unwrap().importances;
        // f's dimension i is g's dimension j
        for (i, j) in [(0, 2), (1, 0), (2, 1)] {
            assert!((a[i] - b[j]).abs() < 0.02);
        }
    }

    #[test]
    fn sample_doubling_converges() {
        let f = |x: &[f64]| x[0] * x[0] + 2.0 * x[1] * x[1];
        let a = importance(&f, 2, 20, 256, 6).unwrap().importances;
        let b = importance(&f, 2, 20, 512, 6).unwrap().importances;
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 0.05));
    }

    #[test]
    fn halton_is_in_unit_cube_and_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let a = shifted_halton(5, 100, &mut r1);
        assert_eq!(a, shifted_halton(5, 100, &mut r2));
        assert!(a.iter().flatten().all(|u| (0.0..1.0).contains(u)));
        assert_eq!(primes(5), vec![2, 3, 5, 7, 11]);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let nodes = quadrature_nodes(0.37);
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-13);
        let cubic: f64 = nodes.iter().map(|(t, w)| w * t.powi(7)).sum();
        assert!((cubic - 0.125).abs() < 1e-13);
    }

    fn toy_model(kind: KernelKind) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| rng.gen()).collect()).collect();
        let y = x.iter().map(|p| (4.0 * p[0]).sin() + 0.3 * p[1] * p[1]).collect();
        let anchor = kind.needs_anchor().then(|| vec![0.4, 0.6, 0.5]);
        let mut params = KernelParams::default_for(kind, 3);
        params.alpha = vec![0.7, 1.6, 1.0];
        params.beta = vec![1.4, 0.8, 1.0];
        GpModel::new(x, y, params, anchor, Targets::Standardized).unwrap()
    }

    #[test]
    fn separable_route_matches_monte_carlo() {
        for kind in [KernelKind::ArdSe, KernelKind::RelativeDistance, KernelKind::Houses] {
            let m = toy_model(kind);
            let quad = gp_importance(&m, 20).unwrap();
            let mc = importance(&|x: &[f64]| m.predict_mean(x).unwrap(), 3, 20, 2048, 9).unwrap();
            for (cq, cm) in quad.curves.iter().zip(&mc.curves) {
                let scale = cm.values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
                for (a, b) in cq.values.iter().zip(&cm.values) {
                    assert!((a - b).abs() < 0.02 * scale, "{kind:?}: {a} vs {b}");
                }
            }
            for (a, b) in quad.importances.iter().zip(&mc.importances) {
                assert!((a - b).abs() < 0.02, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fitted_surrogate_finds_dominant_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..2).map(|_| rng.gen()).collect()).collect();
        let y = x.iter().map(|p| p[0]).collect();
        let m = fit(x, y, KernelKind::ArdSe, None, 0).unwrap();
        assert!(gp_importance(&m, 20).unwrap().importances[0] > 0.95);
    }
}
