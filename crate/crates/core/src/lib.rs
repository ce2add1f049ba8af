//! Detection and characterization of positivity (covariate-overlap)
//! violations.
//!
//! A regularized decision tree is trained to tell the treatment groups apart.
//! Its leaves partition covariate space; leaves that hold (almost) only one
//! group are candidate violations. A random forest built with the same
//! settings scores how consistently each sample lands in a violating leaf,
//! a hypergeometric probability measures how surprising each leaf's
//! composition is, and every leaf is described by a pruned conjunction of
//! split rules. [`pipeline::detect`] runs the whole chain and returns a
//! [`render::PositivityReport`].

pub mod cart;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod forest;
pub mod model_selection;
pub mod pipeline;
pub mod render;
pub mod rng;

pub use cart::{Criterion, DecisionTree, Hyperparameters};
pub use dataset::Dataset;
pub use diagnostics::{Mode, ViolationPolicy};
pub use error::{Error, Result};
pub use render::PositivityReport;
