//! Acquisition functions for minimization. Higher score = more promising.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Pi,
    Ei,
    Ucb,
}

impl FromStr for AcquisitionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pi" => Ok(Self::Pi),
            "ei" => Ok(Self::Ei),
            "ucb" => Ok(Self::Ucb),
            _ => Err(format!("unknown acquisition `{s}` (expected ei, pi or ucb)")),
        }
    }
}

pub const DEFAULT_UCB_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Exploration weight, read by UCB only.
    pub w: f64,
    /// Lowest objective value observed so far.
    pub f_best: f64,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind, w: f64, f_best: f64) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(domain(format!("UCB weight must be finite and ≥ 0, got {w}")));
        }
        if !f_best.is_finite() {
            return Err(domain(format!("f_best must be finite, got {f_best}")));
        }
        Ok(AcquisitionSpec { kind, w, f_best })
    }

    pub fn score(&self, mean: f64, sigma: f64) -> Result<f64> {
        score(self, mean, sigma)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn score(spec: &AcquisitionSpec, mean: f64, sigma: f64) -> Result<f64> {
    if !mean.is_finite() || !sigma.is_finite() || !spec.f_best.is_finite() {
        return Err(domain(format!("non-finite acquisition input (mean {mean}, sigma {sigma})")));
    }
    if sigma < 0.0 {
        return Err(domain(format!("sigma must be ≥ 0, got {sigma}")));
    }
    let improvement = spec.f_best - mean;
    Ok(match spec.kind {
        AcquisitionKind::Pi if sigma == 0.0 => {
            if mean < spec.f_best {
                1.0
            } else {
                0.0
            }
        }
        AcquisitionKind::Pi => norm_cdf(improvement / sigma),
        AcquisitionKind::Ei if sigma == 0.0 => improvement.max(0.0),
        AcquisitionKind::Ei => {
            let g = improvement / sigma;
            (sigma * (g * norm_cdf(g) + norm_pdf(g))).max(0.0)
        }
        // maximizing w·σ − μ minimizes the lower confidence bound μ − w·σ
        AcquisitionKind::Ucb => spec.w * sigma - mean,
    })
}

/// A scored-to-be point with its predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Vec<f64>,
    pub mean: f64,
    pub sigma: f64,
}

/// Index of the best candidate: highest score, then lowest mean, then
/// lowest index.
pub fn argbest_index(spec: &AcquisitionSpec, candidates: &[Candidate]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(arg("argbest over an empty candidate list"));
    }
    let scores = candidates
        .iter()
        .map(|c| score(spec, c.mean, c.sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(select(&scores, candidates))
}

pub(crate) fn select(scores: &[f64], candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = match scores[i].partial_cmp(&scores[best]) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => candidates[i].mean < candidates[best].mean,
            _ => false,
        };
        if better {
            best = i;
        }
    }
    best
}

pub fn argbest<'c>(spec: &AcquisitionSpec, candidates: &'c [Candidate]) -> Result<&'c [f64]> {
    Ok(&candidates[argbest_index(spec, candidates)?].point)
}
