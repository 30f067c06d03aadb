//! Streaming identification of lifted linear (Koopman) models from
//! input/output segments.
//!
//! Each streamed segment is arranged into block-Hankel matrices, its
//! input-free output subspace is compared with the accumulated extended
//! observability subspace on the Grassmann manifold, and only segments that
//! are far enough away are folded into the recursively maintained squared
//! data matrix. The final subspace yields a state-space model `(K, B, C, D)`
//! together with lifted initial conditions, which a bank of Gaussian-process
//! regressors then learns to predict from raw states.
//!
//! Module map:
//!
//! * [`hankel`]: segments, Hankel construction, input-orthogonal projection
//! * [`rssid`]: recursive rank-one updates of the squared data matrix
//! * [`subspace`]: eigen-extraction, order selection, principal angles
//! * [`realize`]: `(K, B, C, D)` and lifted-state recovery
//! * [`gating`]: the novelty-gated streaming session
//! * [`gplift`]: ARD Gaussian-process lifting of raw states
//! * [`simulate`]: ground-truth systems and dataset streams
//! * [`bench`]: rollouts, RMSE ensembles, EDMD baseline, reports
//! * [`config`]: run configuration and presets
//! * [`pipeline`]: end-to-end identification and benchmarking runs

pub mod bench;
pub mod config;
pub mod error;
pub mod gating;
pub mod gplift;
pub mod hankel;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod realize;
pub mod rssid;
pub mod simulate;
pub mod subspace;

pub use error::{Error, Result};

pub use gating::{Decision, GateConfig, OnlineSession};
pub use gplift::GpLifter;
pub use hankel::{DataRecord, HankelPair};
pub use realize::{LiftedRealization, StateSpaceModel};
pub use rssid::SquaredDataState;
pub use subspace::{OrderRule, Subspace};
