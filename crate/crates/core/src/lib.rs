//! Accident anticipation from per-frame image and object features:
//! object attention, residual diffusion enhancement, a recurrent state with
//! a probability head, and a history-window actor-critic warning policy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod dataset;
pub mod decision;
pub mod diffusion;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
