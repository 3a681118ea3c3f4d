//! Dense linear algebra, seeded randomness, least squares, smoothing and gradient checking.

mod gradcheck;
mod matrix;
mod ols;
mod rng;
mod smooth;

pub use gradcheck::gradient_check;
pub use matrix::{dot, gemm, norm, Matrix, Op};
pub use ols::{ols_fit, poly_fit, polynomial_design, FitResult};
pub use rng::RngStream;
pub use smooth::moving_average;
