//! Estimation of panel regressions with latent grouped time effects.
//!
//! The crate covers the spectral slope estimator, cross-fitted spectral
//! classification of units, post-classification pooled OLS with clustered
//! standard errors, the dynamic and L1-penalized variants, and a Monte Carlo
//! harness for the standard simulation designs.

pub mod classify;
pub mod dynamic;
pub mod eigsolve;
pub mod error;
pub mod panel;
pub mod penalized;
pub mod postspectral;
pub mod rng;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use panel::{BalancedPanel, GroupAssignment, PanelSchema};
pub use rng::RngSpec;
