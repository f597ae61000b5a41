//! Allocation-only core for training a duration-driven text-to-spectrogram
//! model whose reference recordings contain articulation errors.
//!
//! Everything here is pure computation over in-memory values: domain types,
//! the augmented reconstruction loss and its gradients, small temporal
//! convolution networks with hand-written backpropagation, a synthetic
//! "toy language" corpus generator with controllable impairment, training
//! loops and evaluation metrics. File formats, configuration and the command
//! line live in the `augrec` crate.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod acoustic;
pub mod classifier;
mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod nn;
pub mod toy;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    expand_labels, Corpus, DurationSequence, ExpandedLabels, FramePosteriors, HyperParams, LossBreakdown,
    MelSpectrogram, PhonemeInventory, SpeakerId, TokenSequence, Utterance,
};
