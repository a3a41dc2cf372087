//! Black-box vertical federated learning with block zeroth-order estimates.
//!
//! Parties each hold a vertical slice of the features and a local model whose
//! internals never leave the party. A server holds the labels and a global
//! head. Parties train through two-point function-value queries; the server
//! trains its head the same way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod engine;
pub mod fedproto;
pub mod models;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
