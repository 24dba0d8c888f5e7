//! Conditional flow-matching generation for multi-channel EEG-like time
//! series, with a transformer vector-field model, a synthetic corpus
//! generator, a full signal-statistics evaluation suite, and a training
//! harness. Everything runs on CPU at desk scale and is deterministic under
//! a fixed seed.

pub mod config;
pub mod eval;
pub mod flow;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use signal::{EegSegment, LabeledSegment, PatchSequence};
pub use tensor::{Tensor, Var};
