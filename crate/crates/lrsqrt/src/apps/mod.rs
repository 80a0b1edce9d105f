//! Applications built on the correction engine: ZCA whitening under a
//! spiked covariance, polar-decomposition row updates, Gaussian sampling
//! with a perturbed precision, inverse-fourth-root tracking for
//! accumulated gradient Grams, and spiked-noise generalized least squares.

pub mod gls;
pub mod polar;
pub mod sample;
pub mod shampoo;
pub mod zca;
