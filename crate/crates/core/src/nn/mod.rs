//! Reverse-mode differentiation, the transformer encoder/decoder, losses,
//! Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod params;

pub use adam::Adam;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, Var};
pub use model::{
    classification_loss, loss, pretrain_loss, Dropout, EncoderConfig, LossNodes, ModelConfig, ModelState,
};
pub use params::{Gradients, ParamId, ParamStore};
