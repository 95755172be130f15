//! Numerical kernels: weighted quantile regression, binary-choice maximum
//! likelihood, weighted least squares and the standard normal distribution.
//!
//! Everything here is a pure function of its inputs.

pub mod binary;
pub mod design;
pub mod link;
pub mod linalg;
pub mod normal;
pub mod ols;
pub mod percentile;
pub mod quantreg;

pub use binary::{binary_loglik, fit_binary_mle, BinaryFit};
pub use design::{DesignMatrix, WeightVector};
pub use link::LinkFunction;
pub use ols::{ols_fit, OlsFit};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
pub use quantreg::{check_loss, solve_wqr, solve_wqr_detailed, wqr_objective, QrFit};
