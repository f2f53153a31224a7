//! Self-play item-side fairness alignment for distributional next-item
//! recommenders.
//!
//! The crate is `no_std` (it needs `alloc`) and carries only the numerical
//! core: catalog and dataset generation, the two-stage softmax policy, SFT
//! and teacher adaptation, calibration-based bias estimation, the geometric
//! mixture reference, the self-play (judger/corrector) loop and the
//! fairness/accuracy metrics. File formats and the command line live in the
//! `ufo` crate.
#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bias;
pub mod catalog;
pub mod data;
mod error;
pub mod math;
pub mod metrics;
pub mod mixture;
pub mod policy;
pub mod rng;
pub mod selfplay;
pub mod sft;

pub use catalog::{Catalog, GroupId, ItemId};
pub use data::{Example, GroundTruthModel, InteractionDataset, InteractionSequence};
pub use error::{Error, ErrorKind, Result};
pub use mixture::MixtureReference;
pub use policy::{Distribution, Gradient, PolicyParams};
