//! Motion-to-language translation with attention-based motion segmentation.
//!
//! The crate turns skeletal motion sequences into English descriptions with
//! a small recurrent encoder–decoder, and reads the decoder's attention back
//! out as a semantic segmentation of the motion: which frame span each
//! described action occupies.
//!
//! Everything runs on plain `f64` CPU math with a self-contained
//! reverse-mode tape ([`tensor`]), so results are bitwise reproducible for
//! a fixed seed.

pub mod attention;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod segmentation;
pub mod tensor;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
