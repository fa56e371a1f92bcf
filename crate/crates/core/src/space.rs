//! Hyperparameter spaces, the raw ⇄ unit-cube bijection and Latin Hypercube
//! initial designs.
//!
//! All surrogate math runs on the continuous unit cube `[0,1]^D`. Integer
//! parameters are only rounded when a unit vector is mapped back to raw
//! values for evaluation.
//!
//! A space file is TOML with one `[[param]]` table per dimension:
//!
//! ```toml
//! [[param]]
//! name = "learning_rate"
//! kind = "continuous"   # or "integer"
//! lower = 1e-3
//! upper = 1.0
//! scale = "log"         # or "linear"
//! ```

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    #[default]
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    #[serde(alias = "logarithmic")]
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default)]
    pub kind: ParamKind,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl ParamSpec {
    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        ParamSpec {
            name: name.to_string(),
            kind: ParamKind::Continuous,
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn integer(name: &str, lower: f64, upper: f64) -> Self {
        ParamSpec {
            kind: ParamKind::Integer,
            ..Self::continuous(name, lower, upper)
        }
    }

    pub fn log(mut self) -> Self {
        self.scale = Scale::Log;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Space(format!("parameter `{}`: {msg}", self.name)));
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return bad("bounds must be finite");
        }
        if self.lower >= self.upper {
            return bad("lower must be < upper");
        }
        if self.scale == Scale::Log && self.lower <= 0.0 {
            return bad("log scale requires lower > 0");
        }
        if self.kind == ParamKind::Integer {
            if self.lower.fract() != 0.0 || self.upper.fract() != 0.0 {
                return bad("integer bounds must be integer-valued");
            }
            if self.upper - self.lower < 1.0 {
                return bad("integer range must span at least 1");
            }
        }
        Ok(())
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        };
        let v = match self.kind {
            ParamKind::Continuous => v,
            ParamKind::Integer => v.round(),
        };
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceFile", into = "SpaceFile")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    param: Vec<ParamSpec>,
}

impl TryFrom<SpaceFile> for SearchSpace {
    type Error = Error;
    fn try_from(f: SpaceFile) -> Result<Self> {
        SearchSpace::new(f.param)
    }
}

impl From<SearchSpace> for SpaceFile {
    fn from(s: SearchSpace) -> Self {
        SpaceFile { param: s.params }
    }
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Space("at least one parameter is required".into()));
        }
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Space(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(SearchSpace { params })
    }

    /// `D` continuous parameters on `[0, 1]` with names `x1..xD`.
    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::new(
            (1..=dim)
                .map(|i| ParamSpec::continuous(&format!("x{i}"), 0.0, 1.0))
                .collect(),
        )
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("space serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_len(raw.len())?;
        self.params
            .iter()
            .zip(raw)
            .map(|(p, &v)| {
                if !(v >= p.lower && v <= p.upper) {
                    return Err(Error::Bounds {
                        name: p.name.clone(),
                        value: v,
                        lower: p.lower,
                        upper: p.upper,
                    });
                }
                Ok(p.to_unit(v).clamp(0.0, 1.0))
            })
            .collect()
    }

    pub fn denormalize(&self, unit: &[f64]) -> Result<Vec<f64>> {
        self.check_len(unit.len())?;
        self.params
            .iter()
            .zip(unit)
            .map(|(p, &u)| {
                if !(0.0..=1.0).contains(&u) {
                    return Err(domain(format!(
                        "unit coordinate {u} for `{}` outside [0, 1]",
                        p.name
                    )));
                }
                Ok(p.from_unit(u))
            })
            .collect()
    }

    /// Build a [`Configuration`] from a unit vector.
    pub fn configuration(&self, unit: Vec<f64>) -> Result<Configuration> {
        let raw = self.denormalize(&unit)?;
        Ok(Configuration { unit, raw })
    }

    /// Latin Hypercube design of `n` points on the unit cube.
    ///
    /// Each dimension is cut into `n` equal bins; an independent random
    /// permutation assigns bins to samples and the position inside a bin is
    /// uniform.
    pub fn lhs_sample(&self, n: usize, seed: u64) -> Result<Vec<Configuration>> {
        lhs_unit(self.dim(), n, seed)?
            .into_iter()
            .map(|u| self.configuration(u))
            .collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::Argument(format!(
                "expected {} values, got {n}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Latin Hypercube sample on `[0,1]^dim`, deterministic given `seed`.
pub fn lhs_unit(dim: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Argument("LHS sample size must be ≥ 1".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Initial, 0);
    let mut points = vec![vec![0.0; dim]; n];
    let mut bins: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        bins.shuffle(&mut rng);
        for (point, &bin) in points.iter_mut().zip(&bins) {
            let offset: f64 = rng.gen();
            point[d] = (bin as f64 + offset) / n as f64;
        }
    }
    Ok(points)
}

/// A point of the search space: its unit-cube coordinates and the raw
/// parameter values handed to the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub unit: Vec<f64>,
    pub raw: Vec<f64>,
}
