//! Linear prediction under latent factor regression models.
//!
//! The data follow `X = A Z + W`, `Y = Z^T beta + eps` with a latent
//! `K`-dimensional factor `Z`. Every predictor in this crate is linear in a
//! new observation, `Y_hat = X_new^T alpha`, and most of them have the
//! projected form
//!
//! ```text
//! alpha = B (B^T X^T X B)^+ B^T X^T Y
//! ```
//!
//! for some `p x q` matrix `B`:
//!
//! - principal component regression (`B` = top-`k` right singular vectors),
//!   with the rank picked by an elbow threshold or by a penalized
//!   least-squares criterion ([`predictors`]);
//! - the minimum-norm interpolator `X^+ Y` (`B = I_p`);
//! - Essential Regression, where `B` is a loading matrix recovered from
//!   pure variables by the LOVE procedure ([`er`], backed by the simplex
//!   solver in [`lp`]).
//!
//! [`selection`] chooses among candidates by data splitting, and [`risk`]
//! evaluates excess prediction risk exactly from the model parameters or by
//! Monte Carlo, and runs simulation grids.

pub mod er;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod predictors;
pub mod risk;
pub mod rng;
pub mod selection;
pub mod spectra;

pub use error::{Error, Result};
pub use model::{Dataset, ErDesign, FactorModelParams, FrmDesign, NoiseCovariance};
pub use predictors::{LinearPredictor, Method};
pub use spectra::SvdCache;
