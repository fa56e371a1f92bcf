//! Surrogate-assisted evolutionary proposal step.
//!
//! Each generation: split every dimension into `M` equal grids and take the
//! best evaluated point in each (dimension, grid) cell as a parent; mutate
//! every parent `n_d` times with per-gene probabilities that grow with the
//! gene's importance; score all offspring on the surrogate and return the
//! acquisition-optimal one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, AcquisitionSpec, Candidate};
use crate::error::{arg, Result};
use crate::exec::Exec;
use crate::gp::GpModel;
use crate::rng::{self, Purpose};

/// Additive smoothing applied to importances before they become mutation
/// probabilities, so unimportant genes still mutate occasionally.
pub const IMPORTANCE_SMOOTHING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    /// Grids per dimension (`M`).
    pub grids: usize,
    /// Offspring per parent (`n_d`).
    pub offspring: usize,
    /// Base mutation rate `p_m`; `None` means `1/D`.
    pub mutation_rate: Option<f64>,
    /// Polynomial mutation distribution index `η`.
    pub eta: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            grids: 5,
            offspring: 10,
            mutation_rate: None,
            eta: 20.0,
            p_min: 0.05,
            p_max: 0.95,
        }
    }
}

impl EsConfig {
    pub fn base_rate(&self, dim: usize) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / dim as f64)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let pm = self.base_rate(dim);
        if self.grids == 0 || self.offspring == 0 {
            return Err(arg("ES grids and offspring must be ≥ 1"));
        }
        if !(pm > 0.0 && pm <= 1.0) {
            return Err(arg(format!("mutation rate must be in (0, 1], got {pm}")));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(arg(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max <= 1.0) {
            return Err(arg(format!(
                "need 0 < p_min ≤ p_max ≤ 1, got ({}, {})",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

/// An evaluated point eligible to become a parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Parent {
    pub unit: Vec<f64>,
    pub value: f64,
}

fn bin(u: f64, grids: usize) -> usize {
    ((u * grids as f64).floor() as usize).min(grids - 1)
}

/// Best point of every (dimension, grid) cell, each point kept once.
/// Ties go to the earlier history entry.
pub fn grid_select(history: &[Parent], grids: usize) -> Result<Vec<Parent>> {
    if history.is_empty() {
        return Err(arg("grid selection needs a nonempty history"));
    }
    if grids == 0 {
        return Err(arg("grid count must be ≥ 1"));
    }
    let dim = history[0].unit.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(dim * grids);
    for d in 0..dim {
        let mut best: Vec<Option<usize>> = vec![None; grids];
        for (i, p) in history.iter().enumerate() {
            let cell = &mut best[bin(p.unit[d], grids)];
            if cell.map_or(true, |j| p.value < history[j].value) {
                *cell = Some(i);
            }
        }
        for i in best.into_iter().flatten() {
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
    }
    Ok(chosen.into_iter().map(|i| history[i].clone()).collect())
}

/// Per-gene mutation probabilities from importances: proportional to
/// `I_d + ε`, averaging `p_m` before clamping to `[p_min, p_max]`.
pub fn mutation_probabilities(importance: &[f64], config: &EsConfig) -> Vec<f64> {
    let dim = importance.len();
    let pm = config.base_rate(dim);
    let total: f64 = importance.iter().map(|i| i + IMPORTANCE_SMOOTHING).sum();
    importance
        .iter()
        .map(|i| (pm * dim as f64 * (i + IMPORTANCE_SMOOTHING) / total).clamp(config.p_min, config.p_max))
        .collect()
}

/// Bounded polynomial mutation on the unit cube.
///
/// Each gene mutates with its own probability. A draw `r < ½` moves toward
/// the lower bound by `δ·(x − 0)`, otherwise toward the upper bound by
/// `δ·(1 − x)`, so children never leave `[0, 1]`.
pub fn polynomial_mutation(parent: &[f64], probs: &[f64], eta: f64, rng: &mut impl Rng) -> Vec<f64> {
    let exponent = 1.0 / (eta + 1.0);
    parent
        .iter()
        .zip(probs)
        .map(|(&x, &p)| {
            if p <= 0.0 || rng.gen::<f64>() >= p {
                return x;
            }
            let r: f64 = rng.gen();
            let y = if r < 0.5 {
                let delta = (2.0 * r).powf(exponent) - 1.0;
                x + delta * x
            } else {
                let delta = 1.0 - (2.0 * (1.0 - r)).powf(exponent);
                x + delta * (1.0 - x)
            };
            y.clamp(0.0, 1.0)
        })
        .collect()
}

/// Everything `propose` generated, so callers can audit the choice.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub point: Vec<f64>,
    pub index: usize,
    pub candidates: Vec<Candidate>,
    pub scores: Vec<f64>,
}

/// Offspring of every parent, each parent using its own random stream.
pub fn offspring(
    parents: &[Parent],
    probs: &[f64],
    config: &EsConfig,
    seed: u64,
    stream: u64,
) -> Vec<Vec<f64>> {
    parents
        .iter()
        .enumerate()
        .flat_map(|(k, p)| {
            let mut rng = rng::child(seed, Purpose::Mutation, stream, k as u64);
            (0..config.offspring)
                .map(|_| polynomial_mutation(&p.unit, probs, config.eta, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Generate offspring, score them on the surrogate and return the best.
#[allow(clippy::too_many_arguments)]
pub fn propose(
    model: &GpModel,
    spec: &AcquisitionSpec,
    parents: &[Parent],
    importance: &[f64],
    config: &EsConfig,
    seed: u64,
    stream: u64,
    exec: Exec,
) -> Result<Proposal> {
    if parents.is_empty() {
        return Err(arg("propose needs at least one parent"));
    }
    config.validate(importance.len())?;
    let probs = mutation_probabilities(importance, config);
    let points = offspring(parents, &probs, config, seed, stream);
    let scored = exec.map_slice(&points, |x| -> Result<(Candidate, f64)> {
        let pr = model.predict(x)?;
        let sigma = pr.sigma();
        let s = spec.score(pr.mean, sigma)?;
        Ok((
            Candidate {
                point: x.clone(),
                mean: pr.mean,
                sigma,
            },
            s,
        ))
    });
    let (candidates, scores): (Vec<Candidate>, Vec<f64>) =
        scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let index = acquisition::select(&scores, &candidates);
    Ok(Proposal {
        point: candidates[index].point.clone(),
        index,
        candidates,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionKind;
    use crate::gp::{KernelKind, KernelParams, Targets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(u: &[f64], v: f64) -> Parent {
        Parent {
            unit: u.to_vec(),
            value: v,
        }
    }

    #[test]
    fn grid_select_examples() {
        assert_eq!(grid_select(&[p(&[0.3, 0.7], 1.0)], 4).unwrap().len(), 1);
        let h = [p(&[0.1], 3.0), p(&[0.2], 1.0), p(&[0.9], 2.0)];
        let sel = grid_select(&h, 2).unwrap();
        let us: Vec<f64> = sel.iter().map(|s| s.unit[0]).collect();
        assert_eq!(us, vec![0.2, 0.9]);
        assert!(grid_select(&[], 2).is_err());
    }

    #[test]
    fn grid_select_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h: Vec<Parent> = (0..30)
            .map(|_| p(&[rng.gen(), rng.gen()], rng.gen()))
            .collect();
        let sel = grid_select(&h, 3).unwrap();
        // oracle: for every cell scan all points independently
        let mut expect: Vec<Vec<f64>> = Vec::new();
        for d in 0..2 {
            for b in 0..3 {
                let lo = b as f64 / 3.0;
                let hi = (b + 1) as f64 / 3.0;
                let best = h
                    .iter()
                    .filter(|q| q.unit[d] >= lo && (q.unit[d] < hi || (b == 2 && q.unit[d] <= 1.0)))
                    .min_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
                if let Some(q) = best {
                    if !expect.contains(&q.unit) {
                        expect.push(q.unit.clone());
                    }
                }
            }
        }
        let got: Vec<Vec<f64>> = sel.into_iter().map(|s| s.unit).collect();
        assert_eq!(got, expect);
        assert!(got.len() <= 6);
    }

    #[test]
    fn probability_examples() {
        let cfg = EsConfig {
            mutation_rate: Some(0.3),
            ..EsConfig::default()
        };
        let uniform = mutation_probabilities(&[0.25; 4], &cfg);
        assert!(uniform.iter().all(|&q| (q - 0.3).abs() < 1e-12));
        let skewed = mutation_probabilities(&[1.0, 0.0], &cfg);
        // 0.3·2·1.01/1.02 and 0.3·2·0.01/1.02 = 0.00588 → clamped
        assert!((skewed[0] - 0.6 * 1.01 / 1.02).abs() < 1e-12);
        assert!((skewed[0] - 0.594).abs() < 1e-3);
        assert_eq!(skewed[1], 0.05);
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.1, 0.5, 1.0];
        assert_eq!(polynomial_mutation(&x, &[0.0; 3], 20.0, &mut rng), x.to_vec());
    }

    #[test]
    fn mutation_at_bounds_stays_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let c = polynomial_mutation(&[0.0, 1.0], &[1.0, 1.0], 5.0, &mut rng);
            assert!(c.iter().all(|u| (0.0..=1.0).contains(u)));
        }
    }

    #[test]
    fn mutation_is_symmetric_at_centre() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| polynomial_mutation(&[0.5], &[1.0], 20.0, &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    fn model() -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let y = x.iter().map(|v| (v[0] - 0.3).powi(2) + (v[1] - 0.6).powi(2)).collect();
        GpModel::new(
            x,
            y,
            KernelParams::default_for(KernelKind::Houses, 2),
            Some(vec![0.3, 0.6]),
            Targets::Standardized,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_proposal_returns_parent() {
        let m = model();
        let spec = AcquisitionSpec::new(AcquisitionKind::Ei, 2.0, 0.1).unwrap();
        let cfg = EsConfig {
            offspring: 1,
            p_min: 1e-12,
            p_max: 1e-12,
            ..EsConfig::default()
        };
        let parent = p(&[0.2, 0.8], 0.3);
        // p_min > 0 is required, so use a probability too small to ever fire
        let prop = propose(&m, &spec, &[parent.clone()], &[0.5, 0.5], &cfg, 0, 0, Exec::Sequential).unwrap();
        assert_eq!(prop.point, parent.unit);
    }

    #[test]
    fn proposal_is_best_scored_and_replayable() {
        let m = model();
        let spec = AcquisitionSpec::new(AcquisitionKind::Ucb, 2.0, 0.05).unwrap();
        let parents = grid_select(
            &m.train_x()
                .iter()
                .zip(m.train_y())
                .map(|(x, &y)| p(x, y))
                .collect::<Vec<_>>(),
            5,
        )
        .unwrap();
        let cfg = EsConfig::default();
        let imp = [0.7, 0.3];
        let a = propose(&m, &spec, &parents, &imp, &cfg, 11, 3, Exec::Parallel).unwrap();
        assert_eq!(a.candidates.len(), parents.len() * cfg.offspring);
        assert!(a.scores.iter().all(|&s| s <= a.scores[a.index]));
        assert!(a.point.iter().all(|u| (0.0..=1.0).contains(u)));

        // replay: regenerate the candidate set and rescore it independently
        let probs = mutation_probabilities(&imp, &cfg);
        let pts = offspring(&parents, &probs, &cfg, 11, 3);
        let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for (i, x) in pts.iter().enumerate() {
            let pr = m.predict(x).unwrap();
            let s = spec.score(pr.mean, pr.sigma()).unwrap();
            if s > best.0 || (s == best.0 && pr.mean < best.1) {
                best = (s, pr.mean, i);
            }
        }
        assert_eq!(a.index, best.2);
        assert_eq!(a.point, pts[best.2]);

        let b = propose(&m, &spec, &parents, &imp, &cfg, 11, 3, Exec::Sequential).unwrap();
        assert_eq!(a.point, b.point);
    }

    #[test]
    fn config_validation() {
        assert!(EsConfig::default().validate(3).is_ok());
        assert!(EsConfig { grids: 0, ..EsConfig::default() }.validate(3).is_err());
        assert!(EsConfig { eta: 0.0, ..EsConfig::default() }.validate(3).is_err());
        assert!(EsConfig { p_min: 0.5, p_max: 0.4, ..EsConfig::default() }.validate(3).is_err());
        assert!(EsConfig { mutation_rate: Some(1.5), ..EsConfig::default() }.validate(3).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_clamped_and_monotone(raw in prop::collection::vec(0.0f64..1.0, 1..8), pm in 0.01f64..1.0) {
            let total: f64 = raw.iter().sum::<f64>().max(1e-9);
            let imp: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let cfg = EsConfig { mutation_rate: Some(pm), ..EsConfig::default() };
            let probs = mutation_probabilities(&imp, &cfg);
            for (i, &pi) in probs.iter().enumerate() {
                prop_assert!((cfg.p_min..=cfg.p_max).contains(&pi));
                for (j, &pj) in probs.iter().enumerate() {
                    if imp[i] > imp[j] { prop_assert!(pi >= pj); }
                }
            }
        }

        #[test]
        fn children_stay_in_cube(x in prop::collection::vec(0.0f64..=1.0, 1..6), eta in 0.5f64..50.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = polynomial_mutation(&x, &vec![1.0; x.len()], eta, &mut rng);
            prop_assert!(c.iter().all(|u| (0.0..=1.0).contains(u)));
        }

        #[test]
        fn parent_set_bounded(pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..10.0), 1..60), grids in 1usize..7) {
            let h: Vec<Parent> = pts.iter().map(|&(a, b, v)| p(&[a, b], v)).collect();
            prop_assert!(grid_select(&h, grids).unwrap().len() <= 2 * grids);
        }
    }
}
