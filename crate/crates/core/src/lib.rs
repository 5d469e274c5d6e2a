//! Sentence-level subjectivity classification with transformer sentence
//! encodings fused with character n-gram TF-IDF and part-of-speech
//! features, trained sequentially across languages.
//!
//! The pipeline runs on a data-parallel core (`parallel` feature, on by
//! default) with an order-preserving sequential fallback; both produce
//! bit-identical results.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fusion;
pub mod lexical;
pub mod model;
pub mod nn;
pub mod orchestrate;
pub mod posfeat;
pub mod synth;
pub mod tensor;
pub mod train;

pub use corpus::{ClassLabel, Dataset, LabeledSentence, Split};
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Architecture, Classifier, HeadOptions};
