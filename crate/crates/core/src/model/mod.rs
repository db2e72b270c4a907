//! Model assembly: encoders, the two inter-modality towers, the unimodal
//! language tower, and decision inference with its losses.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LossKind, MagcnConfig, Modalities, Modality};
pub use forward::{
    consistency_loss, encode, expected_score, forward_encoded, inter_modality_forward, magcn_forward, predict,
    sample_objective, token_flags, total_loss, unimodal_language_forward, Encoded, ForwardTrace, Objective, Prediction,
    TowerTrace,
};
pub use params::{head_input_width, init_params, LanguageBlock, ModelBindings, TowerParams, SENTIMENT_TABLE};

#[cfg(test)]
mod tests;
