//! Desk-scale laboratory for backdoor unlearning and catastrophic-forgetting
//! analytics.
//!
//! The crate is organized around a small deterministic neural-network engine
//! ([`nn`]) plus the machinery built on top of it:
//!
//! - [`data`]: dataset loading (IDX, JSON), synthesis, stratified sampling and
//!   the random-wrong relabeling primitive,
//! - [`backdoor`]: trigger application, data poisoning and ASR evaluation sets,
//! - [`seam`]: the two-phase forget/recover unlearning pipeline with early
//!   stopping,
//! - [`ntk`]: tangent-kernel feature matrices, residuals, empirical and
//!   kernel-predicted forgetting, SVD task similarity and bound checks,
//! - [`analysis`]: ACC/ASR/Fidelity metrics and layer-wise linear CKA.
//!
//! Everything is seeded and single-threaded: the same inputs always produce
//! bitwise-identical models and reports.

pub mod analysis;
pub mod backdoor;
pub mod data;
pub mod error;
pub mod nn;
pub mod ntk;
pub mod rng;
pub mod seam;

pub use error::{Error, Result};
