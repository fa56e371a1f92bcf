//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! Derivative-free: coordinate-wise pattern search in log-parameter space
//! from several starts. The absolute values inside the relative-distance
//! kernels make the likelihood non-smooth, which rules out plain gradient
//! steps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::kernel::{calls, warp, KernelKind, KernelParams};
use super::model::{cholesky_solve, factorize, lml_from_factor, standardize, GpModel, Targets};
use crate::error::{arg, Error, Result};
use crate::rng::{self, Purpose};

const LENGTH_BOUNDS: (f64, f64) = (1e-3, 10.0);
const AMPLITUDE_BOUNDS: (f64, f64) = (1e-4, 10.0);
const NOISE_BOUNDS: (f64, f64) = (1e-6, 1.0);
const SHAPE_BOUNDS: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub starts: usize,
    /// Likelihood evaluations per start; `None` picks `max(40, 4·P)` for
    /// `P` free parameters.
    pub evals_per_start: Option<usize>,
    /// Previous optimum, used as the second start when present.
    pub warm_start: Option<KernelParams>,
    pub targets: Targets,
    pub seed: u64,
    pub stream: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 8,
            evals_per_start: None,
            warm_start: None,
            targets: Targets::Standardized,
            seed: 0,
            stream: 0,
        }
    }
}

/// Fit hyperparameters for `kind` on `(x, y)` and return the conditioned model.
pub fn fit(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kind: KernelKind,
    anchor: Option<Vec<f64>>,
    seed: u64,
) -> Result<GpModel> {
    fit_with(
        x,
        y,
        kind,
        anchor,
        &FitOptions {
            seed,
            ..FitOptions::default()
        },
    )
}

pub fn fit_with(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kind: KernelKind,
    anchor: Option<Vec<f64>>,
    opts: &FitOptions,
) -> Result<GpModel> {
    if x.is_empty() {
        return Err(arg("cannot fit a GP to zero points"));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite target {v}")));
    }
    let dim = x[0].len();
    let default = KernelParams::default_for(kind, dim);
    if x.len() < 2 {
        return GpModel::new(x, y, default, anchor, opts.targets);
    }
    let layout = Layout { kind, dim };
    let best = {
        let mut ws = Workspace::new(&x, &y, anchor.as_deref(), kind, opts.targets)?;
        let mut rng = rng::stream(opts.seed, Purpose::Fit, opts.stream);
        let budget = opts
            .evals_per_start
            .unwrap_or_else(|| (4 * layout.len()).max(40));

        let mut starts = vec![layout.encode(&default)];
        if let Some(w) = &opts.warm_start {
            if w.kind == kind && w.dim() == dim {
                starts.push(layout.encode(w));
            }
        }
        while starts.len() < opts.starts.max(1) {
            starts.push(layout.random_start(&mut rng));
        }

        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let (p, v) = local_search(&layout, &mut ws, start, budget);
            if best.as_ref().map_or(true, |(_, b)| v > *b) {
                best = Some((p, v));
            }
        }
        best.expect("at least one start")
    };
    if !best.1.is_finite() {
        return Err(Error::Conditioning { jitter: 1e-4 });
    }
    GpModel::new(x, y, layout.decode(&best.0), anchor, opts.targets)
}

/// Coordinate pattern search with per-coordinate adaptive steps.
fn local_search(layout: &Layout, ws: &mut Workspace<'_>, start: Vec<f64>, budget: usize) -> (Vec<f64>, f64) {
    let mut x = layout.clamp(start);
    let mut fx = ws.lml(&layout.decode(&x));
    let mut evals = 1;
    let mut steps = vec![0.5; x.len()];
    const MIN_STEP: f64 = 0.02;
    const MAX_STEP: f64 = 2.0;

    'outer: while evals < budget && steps.iter().any(|&s| s >= MIN_STEP) {
        for i in 0..x.len() {
            if steps[i] < MIN_STEP {
                continue;
            }
            let (lo, hi) = layout.bounds(i);
            let mut improved = false;
            for dir in [1.0, -1.0] {
                let cand_i = (x[i] + dir * steps[i]).clamp(lo, hi);
                if cand_i == x[i] {
                    continue;
                }
                let mut cand = x.clone();
                cand[i] = cand_i;
                let fc = ws.lml(&layout.decode(&cand));
                evals += 1;
                if fc > fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break;
                }
                if evals >= budget {
                    break 'outer;
                }
            }
            steps[i] = if improved { (steps[i] * 2.0).min(MAX_STEP) } else { steps[i] * 0.5 };
        }
    }
    (x, fx)
}

/// Mapping between [`KernelParams`] and the log-space search vector.
struct Layout {
    kind: KernelKind,
    dim: usize,
}

#[derive(Clone, Copy)]
enum Slot {
    Amplitude,
    Noise,
    Length,
    Shape,
}

impl Layout {
    fn len(&self) -> usize {
        match self.kind {
            KernelKind::Houses => 3 + 4 * self.dim,
            _ => 2 + self.dim,
        }
    }

    fn slot(&self, i: usize) -> Slot {
        let d = self.dim;
        match self.kind {
            KernelKind::Houses => match i {
                0 | 1 => Slot::Amplitude,
                2 => Slot::Noise,
                i if i < 3 + 2 * d => Slot::Length,
                _ => Slot::Shape,
            },
            _ => match i {
                0 => Slot::Amplitude,
                1 => Slot::Noise,
                _ => Slot::Length,
            },
        }
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        let (lo, hi) = match self.slot(i) {
            Slot::Amplitude => AMPLITUDE_BOUNDS,
            Slot::Noise => NOISE_BOUNDS,
            Slot::Length => LENGTH_BOUNDS,
            Slot::Shape => SHAPE_BOUNDS,
        };
        (lo.ln(), hi.ln())
    }

    fn clamp(&self, mut v: Vec<f64>) -> Vec<f64> {
        for (i, x) in v.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(i);
            *x = x.clamp(lo, hi);
        }
        v
    }

    fn encode(&self, p: &KernelParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(p.theta_f);
        if self.kind == KernelKind::Houses {
            v.push(p.theta_k);
        }
        v.push(p.theta_c);
        v.extend(&p.theta_d);
        if self.kind == KernelKind::Houses {
            v.extend(&p.gamma);
            v.extend(&p.alpha);
            v.extend(&p.beta);
        }
        // amplitudes may be exactly zero; the lower bound takes over
        self.clamp(v.into_iter().map(|x| x.max(1e-300).ln()).collect())
    }

    fn decode(&self, v: &[f64]) -> KernelParams {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let d = self.dim;
        match self.kind {
            KernelKind::Houses => KernelParams::houses(
                e[0],
                e[1],
                e[3..3 + d].to_vec(),
                e[3 + d..3 + 2 * d].to_vec(),
                e[2],
                e[3 + 2 * d..3 + 3 * d].to_vec(),
                e[3 + 3 * d..3 + 4 * d].to_vec(),
            ),
            KernelKind::ArdSe => KernelParams::ard(e[0], e[2..].to_vec(), e[1]),
            KernelKind::RelativeDistance => KernelParams::relative_distance(e[0], e[2..].to_vec(), e[1]),
        }
    }

    /// Random start inside a box narrower than the bounds: far corners of
    /// the box (e.g. shape 10, length 1e-3) are poor places to begin.
    fn random_start(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (lo, hi): (f64, f64) = match self.slot(i) {
                    Slot::Amplitude => (0.1, 3.0),
                    Slot::Noise => (1e-4, 0.3),
                    Slot::Length => (0.05, 2.0),
                    Slot::Shape => (0.5, 2.0),
                };
                rng.gen_range(lo.ln()..hi.ln())
            })
            .collect()
    }
}

/// Per-dimension squared distances for the strictly lower triangle,
/// rebuilt only when that dimension's warp shape changes.
struct DimCache {
    shape: Option<(f64, f64)>,
    first: Vec<f64>,
    second: Vec<f64>,
}

struct Workspace<'a> {
    x: &'a [Vec<f64>],
    anchor: Option<&'a [f64]>,
    kind: KernelKind,
    y: Vec<f64>,
    dims: Vec<DimCache>,
    e1: Vec<f64>,
    e2: Vec<f64>,
    k: DMatrix<f64>,
}

impl<'a> Workspace<'a> {
    fn new(
        x: &'a [Vec<f64>],
        y: &[f64],
        anchor: Option<&'a [f64]>,
        kind: KernelKind,
        targets: Targets,
    ) -> Result<Self> {
        let n = x.len();
        let dim = x[0].len();
        if kind.needs_anchor() && anchor.map(<[f64]>::len) != Some(dim) {
            return Err(arg("kernel requires an anchor with one entry per dimension"));
        }
        let pairs = n * (n - 1) / 2;
        Ok(Workspace {
            x,
            anchor,
            kind,
            y: standardize(y, targets).0,
            dims: (0..dim)
                .map(|_| DimCache {
                    shape: None,
                    first: vec![0.0; pairs],
                    second: Vec::new(),
                })
                .collect(),
            e1: vec![0.0; pairs],
            e2: vec![0.0; pairs],
            k: DMatrix::zeros(n, n),
        })
    }

    fn refresh_dim(&mut self, d: usize, alpha: f64, beta: f64) {
        let cache = &mut self.dims[d];
        if cache.shape == Some((alpha, beta)) {
            return;
        }
        let x = self.x;
        let psi: Vec<f64> = x
            .iter()
            .map(|r| match self.kind {
                KernelKind::ArdSe => r[d],
                KernelKind::RelativeDistance => (r[d] - self.anchor.unwrap()[d]).abs(),
                KernelKind::Houses => warp((r[d] - self.anchor.unwrap()[d]).abs(), alpha, beta),
            })
            .collect();
        let mut p = 0;
        for i in 1..x.len() {
            for j in 0..i {
                let diff = psi[i] - psi[j];
                cache.first[p] = diff * diff;
                p += 1;
            }
        }
        if self.kind == KernelKind::Houses {
            let omega: Vec<f64> = x.iter().map(|r| warp(r[d], alpha, beta)).collect();
            cache.second.clear();
            for i in 1..x.len() {
                for j in 0..i {
                    let diff = omega[i] - omega[j];
                    cache.second.push(diff * diff);
                }
            }
        }
        cache.shape = Some((alpha, beta));
    }

    /// Log marginal likelihood, or `-inf` if the matrix cannot be factorized.
    fn lml(&mut self, params: &KernelParams) -> f64 {
        let n = self.x.len();
        let houses = self.kind == KernelKind::Houses;
        for d in 0..params.dim() {
            let (a, b) = if houses { (params.alpha[d], params.beta[d]) } else { (1.0, 1.0) };
            self.refresh_dim(d, a, b);
        }
        self.e1.iter_mut().for_each(|v| *v = 0.0);
        self.e2.iter_mut().for_each(|v| *v = 0.0);
        for (d, cache) in self.dims.iter().enumerate() {
            let inv = 1.0 / (2.0 * params.theta_d[d] * params.theta_d[d]);
            for (e, s) in self.e1.iter_mut().zip(&cache.first) {
                *e += s * inv;
            }
            if houses {
                let inv = 1.0 / (2.0 * params.gamma[d] * params.gamma[d]);
                for (e, s) in self.e2.iter_mut().zip(&cache.second) {
                    *e += s * inv;
                }
            }
        }
        let diag = params.signal_variance() + params.theta_c * params.theta_c;
        let mut p = 0;
        for i in 0..n {
            self.k[(i, i)] = diag;
            for j in 0..i {
                let mut v = params.theta_f * (-self.e1[p]).exp();
                if houses {
                    v += params.theta_k * (-self.e2[p]).exp();
                }
                self.k[(i, j)] = v;
                self.k[(j, i)] = v;
                p += 1;
            }
        }
        calls::record(self.kind, (n * (n + 1) / 2) as u64);
        match factorize(&self.k, params.signal_variance()) {
            Ok((l, _)) => {
                let w = cholesky_solve(&l, &DVector::from_column_slice(&self.y));
                lml_from_factor(&l, &self.y, &w)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_1d(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let y = x.iter().map(|v| (5.0 * v[0]).sin() + v[0]).collect();
        (x, y)
    }

    #[test]
    fn layout_round_trips() {
        for kind in [KernelKind::ArdSe, KernelKind::RelativeDistance, KernelKind::Houses] {
            let layout = Layout { kind, dim: 3 };
            let p = KernelParams::default_for(kind, 3);
            let back = layout.decode(&layout.encode(&p));
            assert_eq!(back.kind, kind);
            assert!((back.theta_f - p.theta_f).abs() < 1e-12);
            assert!(back.theta_d.iter().zip(&p.theta_d).all(|(a, b)| (a - b).abs() < 1e-12));
            assert_eq!(layout.len(), layout.encode(&p).len());
        }
    }

    #[test]
    fn workspace_matches_model_lml() {
        let (x, y) = smooth_1d(6);
        let anchor = vec![0.4];
        for kind in [KernelKind::ArdSe, KernelKind::RelativeDistance, KernelKind::Houses] {
            let mut p = KernelParams::default_for(kind, 1);
            p.alpha = vec![0.7];
            p.beta = vec![1.9];
            let a = kind.needs_anchor().then(|| anchor.clone());
            let m = GpModel::new(x.clone(), y.clone(), p.clone(), a.clone(), Targets::Standardized).unwrap();
            let mut ws = Workspace::new(&x, &y, a.as_deref(), kind, Targets::Standardized).unwrap();
            assert!((ws.lml(&p) - m.log_marginal_likelihood()).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_improves_on_defaults() {
        let (x, y) = smooth_1d(5);
        for kind in [KernelKind::ArdSe, KernelKind::Houses] {
            let anchor = kind.needs_anchor().then(|| vec![0.3]);
            let fitted = fit(x.clone(), y.clone(), kind, anchor.clone(), 9).unwrap();
            let default = GpModel::new(
                x.clone(),
                y.clone(),
                KernelParams::default_for(kind, 1),
                anchor,
                Targets::Standardized,
            )
            .unwrap();
            assert!(fitted.log_marginal_likelihood() >= default.log_marginal_likelihood());
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = smooth_1d(7);
        let a = fit(x.clone(), y.clone(), KernelKind::Houses, Some(vec![0.6]), 3).unwrap();
        let b = fit(x, y, KernelKind::Houses, Some(vec![0.6]), 3).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn constant_targets() {
        let (x, _) = smooth_1d(5);
        let m = fit(x, vec![-2.0; 5], KernelKind::Houses, Some(vec![0.5]), 1).unwrap();
        for t in [0.0, 0.33, 0.9] {
            assert!((m.predict(&[t]).unwrap().mean + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_point_uses_defaults() {
        let m = fit(vec![vec![0.2, 0.4]], vec![1.0], KernelKind::ArdSe, None, 0).unwrap();
        assert_eq!(m.params(), &KernelParams::default_for(KernelKind::ArdSe, 2));
    }

    #[test]
    fn non_finite_targets_rejected() {
        let (x, mut y) = smooth_1d(4);
        y[1] = f64::INFINITY;
        assert!(matches!(fit(x, y, KernelKind::ArdSe, None, 0), Err(Error::Data(_))));
    }
}
