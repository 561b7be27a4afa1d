//! Tag-conditioned line-art colorization.
//!
//! A generator turns a grayscale line art plus a set of color tags into a
//! colored illustration. Training runs in two steps: first with adversarial
//! and reconstruction losses only, then with tag-classification losses
//! added. Everything here runs on the CPU through `candle`.

pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod inference;
pub mod lineart;
pub mod losses;
pub mod nets;
pub mod nn;
pub mod synthdata;
pub mod tagspace;
pub mod training;

pub use error::{Error, Result};
pub use tagspace::{ColorTag, Region, TagKind, TagVector, TagVocabulary};
