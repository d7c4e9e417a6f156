//! Localized and Tikhonov-regularized ensemble Kalman inversion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod localization;
pub mod models;
pub mod teki;

pub use error::{Error, Result};
