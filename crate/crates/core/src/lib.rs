// `Real` is f64 unless the `f32` feature is on; its casts are not no-ops there.
#![allow(clippy::unnecessary_cast)]

pub mod ablation;
pub mod bench;
pub mod bias;
pub mod data;
pub mod error;
pub mod mixer;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
