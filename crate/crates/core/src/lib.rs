//! Joint accent identification and multi-accent CTC acoustic modeling,
//! desk scale: a minimal f64 autodiff kernel, exact CTC loss with a
//! brute-force oracle, three model variants (accent-specific, multi-task,
//! joint with an AID auxiliary branch), the training recipe (Adam,
//! gradient clipping, new-bob annealing), a synthetic two-accent corpus,
//! and evaluation metrics.

pub mod checkpoint;
pub mod corpus;
pub mod ctc;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sweep;
pub mod tape;
pub mod tensor;
pub mod testutil;
pub mod train;

pub use error::{Error, Result};
