//! Specialization of full word-embedding vocabularies with lexical
//! constraints: ATTRACT-REPEL fine-tuning of seen words, adversarial
//! post-specialization that generalizes it to unseen words, and zero-shot
//! transfer of the learned map to another language.

pub mod constraints;
pub mod demo;
pub mod embed_io;
pub mod error;
pub mod eval;
pub mod nn;
pub mod attract_repel;
pub mod auxgan;
pub mod postspec;
pub mod synthetic;
pub mod xling;

pub use constraints::{ConstraintSet, VocabPartition};
pub use embed_io::EmbeddingSpace;
pub use error::{Error, Result};
pub use nn::{MlpNetwork, MlpSpec, OptimizerState};
