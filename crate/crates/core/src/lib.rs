//! Generalized latent variable models with high-dimensional covariates:
//! alternating penalized estimation and debiased inference on covariate effects.

pub mod altfit;
pub mod cli;
pub mod debias;
pub mod error;
pub mod families;
pub mod init;
pub mod model;
pub mod simlab;
pub mod solver;

pub use error::{GlvmError, Result};
pub use families::{Family, FamilyKind};
pub use model::{DataSet, ParamSet};
