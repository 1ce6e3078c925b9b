//! Joint training of an embedding-based recommender with a differentiable
//! meta-path random-walk model over a heterogeneous information network.
//!
//! The two models are coupled only through their output distributions: the
//! embedding model learns from both the observed clicks and the dense labels
//! propagated by the walk model, while the walk model is pulled toward the
//! embedding model so that its meta-paths and concrete walks explain the
//! recommendations.
//!
//! Module map:
//! - [`graph`], [`sparse`], [`split`]: the network, its relation matrices and
//!   the train/validation/test protocol.
//! - [`metapath`], [`path_model`]: meta-path parsing and the walk model with
//!   exact reverse-mode gradients.
//! - [`embed`]: the embedding recommender.
//! - [`loss`], [`optim`], [`train`]: objectives, imitation schedules, Adam and
//!   the four training modes.
//! - [`explain`]: meta-path contributions, beam search and reports.
//! - [`metrics`]: ranking metrics, model fidelity and the popularity baseline.
//! - [`config`], [`experiment`], [`checkpoint`], [`synth`]: orchestration.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod graph;
pub mod loss;
pub mod metapath;
pub mod metrics;
pub mod numeric;
pub mod optim;
pub mod path_model;
pub mod sparse;
pub mod split;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
