//! Core algorithms for the MAGDrop lab: a small dense-tensor network engine,
//! activation regularizers (momentum-adaptive dropout and baselines), AdamW
//! with cosine annealing, dataset loaders, and a PAC-Bayes bound calculator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod regularizers;
pub mod tensor;
pub mod train;

pub use bound::{BoundInputs, BoundReport, LayerTerm, RateTrace};
pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::{
    ActivationHook, Gradients, Init, LayerSpec, LayerState, Mask, Mode, Model, ModelSpec,
};
pub use regularizers::{MagDropConfig, RegularizerConfig};
pub use tensor::Tensor;
pub use train::{EpochMetrics, RunMetrics};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic random stream `stream` derived from `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
