//! Factor-augmented VAR estimation: panel preparation, principal components,
//! Kalman filtering and smoothing, one-step Gibbs sampling, and impulse
//! responses with posterior bands.

pub mod chain_io;
pub mod dgp;
pub mod error;
pub mod fsutil;
pub mod gibbs;
pub mod impulse;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod pca;
pub mod state_space;

pub use error::{ErrorCategory, FavarError, Result};
pub use gibbs::{run_chain, run_gibbs, run_two_step, PosteriorChain};
pub use impulse::{IrfBands, IrfSettings, ResponseMap, Units};
pub use model::{FavarParams, ModelSpec, PriorSpec};
pub use panel::{Panel, PrepareOptions, PrepareReport, Quarter, RawSeries, Tcode, VariableMeta};
pub use state_space::{FilterOutput, StateSpaceForm};
