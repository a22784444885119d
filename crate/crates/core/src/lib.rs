//! Contrastive acoustic-linguistic style retrieval.
//!
//! A style encoder maps speech features to style embeddings and a linguistic
//! encoder maps token features to style-related text features (STFs) in the
//! same space. The two are trained jointly so that the cosine similarity
//! matrix of a contrastive batch matches a ±1 pattern. At inference, the
//! STF of an input text retrieves the top-N corpus items, whose style
//! embeddings are softmax-weighted into one final style embedding.
//!
//! The crate is `no_std` with `alloc`; IO, file formats and the CLI live in
//! the `calm` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod retrieval;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod trainer;

pub use data::{FeaturePair, SynthSpec, SyntheticCorpus};
pub use encoders::{init_params, CalmParams, EncoderConfig, Encoders, Mode};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Mat64, Vec64};
