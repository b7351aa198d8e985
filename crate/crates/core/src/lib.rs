//! Dimension-wise manipulation of rotary position embeddings.
//!
//! The crate is `no_std` (with `alloc`) and covers the algorithmic side:
//!
//! - [`rope`]: frequency bases, rotation of vectors at per-pair integer
//!   position indices, and the NTK / YaRN frequency-scaling baselines.
//! - [`maps`]: relative-position maps (standard, ReRoPE, Self-Extend,
//!   detection and dimension-wise scaled maps) and the [`DimensionPlan`]
//!   that assigns a map to every (head, frequency pair).
//! - [`attention`]: an exact reference engine and a streaming two-pass
//!   tiled engine with online softmax.
//! - [`contribution`]: 2-norm contribution profiles and top-k key-pair
//!   selection.
//! - [`detection`]: effective-length sweeps, ranking, the synthetic
//!   key-value retrieval task and a hand-built induction fixture model.
//!
//! IO, file formats, parallel drivers and the command-line tool live in the
//! companion `dpe` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod contribution;
pub mod detection;
mod error;
pub mod maps;
pub mod rope;
pub mod seed;
pub mod tensor;

pub use attention::{AttentionOutput, AttentionProblem, PositionScheme};
pub use contribution::{NormProfile, NormMode};
pub use error::{Error, Result};
pub use maps::{DimensionPlan, GroupLayout, PositionMap};
pub use rope::{FrequencyBasis, RotatedVector, Scaling};
pub use tensor::HeadTensor;
