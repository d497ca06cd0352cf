//! The byte tagger: embeddings, a residual convolution stack, a
//! bidirectional LSTM, a tanh hidden layer, and a linear-chain CRF.
//!
//! All layers have hand-written backward passes. Parameters are generic over
//! the float width so that gradient checks can run in `f64` while training
//! uses `f32`.

mod adam;
mod checkpoint;
pub mod crf;
mod layers;
mod model;
mod params;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use crf::Crf;
pub use layers::{Conv1d, Dense, Embedding, LstmCell};
pub use model::{backward, conv_representations, emissions_forward, forward, ForwardCache, Gradients};
pub use params::{init_params, ArchConfig, ModelDims, ModelParams, CONV_STRIDE, PRETRAINED_TENSORS};
pub use train::{
    build_examples, predict, sequence_loss_and_grad, train, EpochLog, Tagger, TrainConfig, TrainExample,
    TrainOutcome,
};

/// Float type the network is generic over.
pub trait Real:
    num_traits::Float
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
