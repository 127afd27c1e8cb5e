//! Multimodal continuous sign language recognition and translation:
//! cross-modal attention fusion of RGB and optical-flow feature streams,
//! with a scalar reverse-mode autodiff core, CTC training, and a small
//! encoder-decoder translator.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod record;
pub mod rng;
pub mod seqnet;
pub mod slr;
pub mod slt;
pub mod tape;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
