//! Semantic segmentation workbench for long-form streaming transducer
//! decoding.
//!
//! The pipeline: synthetic written and spoken corpora ([`corpus`]) feed a
//! punctuation normalizer ([`punct`]) and two boundary teachers
//! ([`teacher`]). Their `<EOS>` annotations are distilled into the EOS
//! head of a toy streaming transducer ([`transducer`]), which is decoded
//! frame-synchronously under pluggable segmenters ([`decoder`],
//! [`segmenters`]) and scored ([`metrics`]). [`expt`] wires it all into
//! reproducible experiment runs.

// Validation writes `!(x >= 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Lattice and tensor loops index several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod expt;
pub mod metrics;
pub mod punct;
pub mod rng;
pub mod segmenters;
pub mod teacher;
pub mod tensor;
pub mod transducer;

pub use error::{Error, Result};
