//! Causal positional and temporal attention-bias maps.
//!
//! Bucketed maps read a learnable table through data-dependent indices.
//! Functional maps evaluate a closed-form (or small MLP) function of elapsed
//! time and perform no indexed reads. All maps are zero above the diagonal.

mod curves;
mod function;
mod graph;
mod kind;
mod matrix;

pub use curves::{bias_curve, curve_csv, is_non_increasing};
pub use function::{
    eval_bias_function, param_layout, temporal_bucket_of, BiasFunctionSpec, DEFAULT_MAX_BUCKET,
    DEFAULT_TIME_SCALE, MLP_WIDTH,
};
pub use graph::{positional_on_tape, temporal_on_tape, TemporalBias};
pub use kind::BiasKind;
pub use matrix::{
    bucketed_rab_positional, bucketed_rab_temporal, elapsed_matrix, frab_matrix, BiasMatrix,
    BucketTable, MapKind,
};
