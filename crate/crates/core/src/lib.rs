//! Multivariate functional principal component analysis (MFPCA) for
//! observations whose elements live on different, possibly
//! different-dimensional domains.
//!
//! Univariate elements are expanded in a basis (univariate eigenfunctions,
//! eigenimages, or splines) and the multivariate decomposition is obtained
//! from an eigenproblem on the pooled coefficient covariance.

pub mod basis;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fundata;
pub mod io;
pub mod linalg;
pub mod mfpca;
pub mod pipeline;
pub mod simgen;
pub mod tensorfpca;
pub mod ufpca;

pub use error::{Error, Result};
pub use evaluation::{bootstrap_bands, BandSet, BootstrapOptions};
pub use fundata::{Domain, ElementSample, MultiFunData, MultiFunction, QuadratureWeights};
pub use mfpca::{mfpca, mfpca_from_scores, MfpcaResult, UnivariateBlock};
pub use pipeline::{fit, ElementMethod, FitConfig, Fitted, MfpcaConfig, WeightChoice};
pub use simgen::{simulate, SimulationSpec};
pub use ufpca::{Truncation, UfpcaResult};
