//! Unsupervised irony style transfer: corpus cleaning, a dual transformer
//! with shared layers, denoising and back-translation pretraining,
//! reward-driven fine-tuning and automatic evaluation.

mod error;
mod style;

pub mod classifiers;
pub mod corpus;
pub mod eval;
pub mod seq2seq;
pub mod toy;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use style::{Direction, Style};
