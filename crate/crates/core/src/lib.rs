//! Semantic hashing with Bernoulli-latent variational auto-encoders.
//!
//! Documents are encoded into `K`-bit codes by an MLP whose logits
//! parameterize independent Bernoulli posteriors; a softmax decoder
//! reconstructs TF-IDF-weighted words from the code. Training is either
//! unsupervised (weighted-KL ELBO) or pairwise supervised, with gradients
//! through the binary layer from ARM, straight-through or Gumbel-Softmax.
//! Retrieval is exact Hamming top-k over bit-packed codes.

pub mod checkpoint;
pub mod code;
pub mod config;
pub mod corpus;
pub mod error;
pub mod estimators;
pub mod index;
pub mod model;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use code::BinaryCode;
pub use corpus::{compute_tfidf, Corpus, DocId, Document, Idf, LabelId, Split, TermId, TfidfVector, Vocabulary};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, EstimatorTag};
pub use index::{CodeIndex, Query, RetrievalResult};
pub use model::{Hyper, ModelConfig, PshModel};
pub use trainer::{train, train_with_hooks, EpochRecord, TrainConfig, TrainHooks, TrainMode, TrainReport};
