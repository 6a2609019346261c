//! The covariance estimator: the finite-dimensional problem in the
//! coefficient matrix `B`, its quadratic loss, the accelerated proximal
//! gradient solver, cross-validation of the penalty level, and evaluation of
//! the fitted covariance function.

mod apg;
mod cv;
mod design;
mod estimate;

pub use apg::{apg_fit, FitOptions};
pub use cv::{cross_validate, cross_validate_data, default_cv_grid, fit_with_cv, CvResult, CvRow};
pub use design::{build_design, build_design_with_eig, lambda_max, loss_and_grad, DesignCache};
pub use estimate::{correlation, correlation_grid, evaluate, CovarianceEstimate, VARIANCE_FLOOR};
