//! Multi-task attentional sequence-to-sequence learning with partially shared
//! deep encoders and decoders, an adversarial task discriminator, and the data
//! preparation and evaluation pieces around them.

pub mod adversarial;
pub mod autodiff;
pub mod dataprep;
pub mod error;
pub mod evaluation;
pub mod mtl;
pub mod recurrent;
pub mod rng;
pub mod seq2seq;

pub use error::{Error, Result};
