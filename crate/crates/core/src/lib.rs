//! LiDAR semi-supervised detection toolkit: pie-based point compensating
//! augmentation, multi-teacher pseudo-label fusion, category-wise EMA
//! checkpoint blending, and a synthetic harness to exercise all of it.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod classes;
pub mod cli;
pub mod ema;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod rng;

pub use error::{Error, Result};
