//! Behavior classification from persistence diagrams of trajectory signals,
//! and a multiple hypothesis tracker that scores tracks with kinematic, type,
//! and behavior log-likelihood terms.

// Negated comparisons are how NaN parameters get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assignment;
pub mod classify;
pub mod error;
pub mod features;
pub mod persistence;
pub mod pipeline;
pub mod sim;
pub mod tracker;
pub mod trajectory;

pub use error::{Error, Result};
