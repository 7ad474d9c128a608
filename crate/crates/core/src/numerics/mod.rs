//! Dense linear algebra, feedforward networks with exact gradients, Adam,
//! and seeded random streams.

pub mod adam;
pub mod fastmath;
pub mod matrix;
pub mod mlp;
pub mod params;
pub mod rng;
pub mod store;

pub use adam::{Adam, AdamConfig};
pub use matrix::{axpy, cholesky, cholesky_solve, dot, norm, spd_inverse, symmetric_eigenvalues, Matrix, Trans};
pub use mlp::{Activation, Layer, Mlp, MlpGrads, Tape};
pub use params::{soft_update, ParamVec, Params};
pub use rng::{seeded_rng, Rng, RngState};
pub use store::TensorStore;
