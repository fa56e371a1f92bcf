//! Analytic test functions, all defined on the unit cube through affine
//! maps to their usual domains.
//!
//! | name        | D   | domain                    | minimum               |
//! |-------------|-----|---------------------------|-----------------------|
//! | `sphere`    | any | Σ (u_d − ½)²              | 0 at the centre       |
//! | `branin`    | 2   | x₁ ∈ [−5, 10], x₂ ∈ [0, 15] | 0.397887 (three minimizers) |
//! | `hartmann6` | 6   | [0, 1]⁶                   | −3.32237              |
//! | `rastrigin` | any | [−5.12, 5.12]^D           | 0 at the centre       |

use std::f64::consts::PI;

pub const BRANIN_MINIMUM: f64 = 0.397_887_357_729_738;
pub const HARTMANN6_MINIMUM: f64 = -3.322_368_011_391_339;

pub fn sphere(u: &[f64]) -> f64 {
    u.iter().map(|x| (x - 0.5) * (x - 0.5)).sum()
}

/// Branin–Hoo on the unit square.
pub fn branin(u: &[f64]) -> f64 {
    let x1 = -5.0 + 15.0 * u[0];
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let q = x2 - b * x1 * x1 + c * x1 - 6.0;
    q * q + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Raw-domain minimizers of Branin, for reference.
pub const BRANIN_MINIMIZERS: [[f64; 2]; 3] = [[-PI, 12.275], [PI, 2.275], [9.424_78, 2.475]];

const H6_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

pub const HARTMANN6_MINIMIZER: [f64; 6] = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];

pub fn hartmann6(u: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..6).map(|j| H6_A[i][j] * (u[j] - H6_P[i][j]).powi(2)).sum();
            H6_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

pub fn rastrigin(u: &[f64]) -> f64 {
    10.0 * u.len() as f64
        + u.iter()
            .map(|&v| {
                let x = -5.12 + 10.24 * v;
                x * x - 10.0 * (2.0 * PI * x).cos()
            })
            .sum::<f64>()
}
