//! Dry-target speech enhancement with distilled phonetic features and
//! conditional flow matching over log-Mel spectrograms.
//!
//! See `book/` for a guided tour.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod drd;
pub mod encoder;
pub mod error;
pub mod flow;
pub mod mel;
pub mod metrics;
pub mod mixture;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod toy;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/distillation.md")]
    mod distillation {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
