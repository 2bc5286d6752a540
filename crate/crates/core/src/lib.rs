//! Neural additive models for location, scale and shape.
//!
//! Each distribution parameter is the activated sum of per-feature
//! subnetwork outputs plus an intercept, so every parameter decomposes into
//! one shape function per feature.

// `!(a > b)` is used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod families;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod special;
pub mod train;

pub use data::{Dataset, PreprocessSpec};
pub use error::{Error, Result};
pub use families::{Family, FamilyId, ParamVector};
pub use model::{Architecture, ModelBuilder, NamlssModel};
pub use train::{train, TrainConfig, TrainHistory};
