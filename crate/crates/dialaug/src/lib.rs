//! Dual-encoder dialogue response ranking with data augmentation.
//!
//! The crate trains a small shared-weight sequence encoder to rank candidate
//! responses for a multi-turn dialogue context. Training combines a two-view
//! in-batch ranking cross-entropy with a multi-positive contrastive loss over
//! augmented context views. The flagship augmentation, ConMix, mixes token
//! positions between contexts of the same batch; four simpler augmentations
//! (subsequence, deletion, reordering, replacement) are provided as baselines.
//! A perturbation suite (truncation, deletion, reordering, typos, synonyms)
//! generates adversarial test sets for robustness evaluation with Recall@k
//! and MRR.

pub mod augment;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod objective;
pub mod perturb;
pub mod seeding;

pub use error::{Error, Result};
