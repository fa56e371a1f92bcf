//! Gaussian-process surrogate: kernels, conditioning and hyperparameter fitting.

mod fit;
mod kernel;
mod model;

pub use fit::{fit, fit_with, FitOptions};
pub use kernel::{
    build_cov_matrix, build_cov_matrix_with, calls, kernel_ard_se, kernel_houses,
    kernel_relative_distance, warp_kumaraswamy, Covariance, KernelKind, KernelParams,
};
pub use model::{GpModel, Prediction, Targets};
