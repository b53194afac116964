//! Built-in Gaussian joint models.

pub mod gaussian_units;
pub mod random_walk;
pub mod spline;

pub use gaussian_units::GaussianUnitsModel;
pub use random_walk::{build_rw_model, simulate_rw_data, simulate_rw_truth, RandomWalkData, RandomWalkModel};
pub use spline::{build_spline_model, cubic_bspline_basis, SplineBasis, SplineData, SplineModel};
