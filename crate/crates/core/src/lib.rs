//! Group emotion classification from faces and scene descriptors.
//!
//! A from-scratch CNN scores each cropped face; the per-face distributions
//! are averaged into one bottom-up prediction. A Bernoulli naive Bayes model
//! over scene descriptors gives the top-down view, and the CNN's prediction
//! enters it as one more evidence node whose conditional table is the CNN's
//! row-normalized confusion matrix.

pub mod bayes;
pub mod data_io;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod facepath;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use emotion::{Emotion, EmotionDistribution, NUM_CLASSES};
pub use error::{Error, Result};
pub use tensor::Tensor;
