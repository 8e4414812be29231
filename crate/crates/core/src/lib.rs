//! Fine-grained mutual information maximization (FMIM) for cross-domain
//! sequence labeling.
//!
//! A tagger is trained on labeled source-domain text while the mutual
//! information between tokens and predicted tags is maximized over joint
//! source/target mini-batches. The MI term keeps the batch tag distribution
//! away from the all-`O` collapse that a source-only model shows on a new
//! domain, and sharpens each token's prediction.
//!
//! Modules:
//! - [`tagging`]: tag schemes and span conversion
//! - [`mi_loss`]: the thresholded MI loss and its gradient
//! - [`tagger`]: a window-MLP tagger with exact backward pass
//! - [`optim`]: AdamW with decoupled weight decay
//! - [`data`]: corpora, batching and the synthetic domain-shift benchmark
//! - [`eval`]: span micro-F1 and entropy diagnostics
//! - [`train`]: the joint training loop, evaluation and sweeps

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod kv;
pub mod mi_loss;
pub mod optim;
pub mod rng;
pub mod tagger;
pub mod tagging;
pub mod train;
