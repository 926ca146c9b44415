//! Controllable question rewriting for reading-comprehension data
//! augmentation.
//!
//! A guide reading-comprehension model and a Transformer autoencoder share
//! one embedding space. Rewriting takes gradient steps on a question's
//! embedding under the guide's loss for a target answerability label,
//! decodes the result with the autoencoder and keeps decodes the guide
//! agrees with and that stay close to the source question.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod autodiff;
pub mod autoencoder;
pub mod data;
pub mod embedding;
mod error;
pub mod eval;
pub mod guide;
pub mod label;
pub mod nn;
pub mod params;
pub mod rewriter;
mod scalar;
pub mod text;
pub mod train;

pub use autodiff::{gradient_check, Graph, Tensor, Var};
pub use autoencoder::{train_ae, AeConfig, Autoencoder, Decoded};
pub use data::{AugmentedRecord, DataTuple, Dataset, MergeMode, Paragraph};
pub use embedding::EmbeddingTables;
pub use error::{Error, Result};
pub use guide::{train_guide, GuideConfig, GuideModel, GuideOutput, LossSpec, PackedInput, Prediction};
pub use label::Label;
pub use params::ParamSet;
pub use rewriter::{accept, revise_step, step_size, RewriteConfig, RewriteMode, RewriteOutcome, Rewriter, Strategy};
pub use scalar::{DType, Scalar};
pub use train::TrainConfig;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32<'p> = Graph<'p, f32>;
pub type Graph64<'p> = Graph<'p, f64>;
pub type Guide32 = GuideModel<f32>;
pub type Guide64 = GuideModel<f64>;
pub type Autoencoder32 = Autoencoder<f32>;
pub type Autoencoder64 = Autoencoder<f64>;
pub type Embeddings32 = EmbeddingTables<f32>;
pub type Embeddings64 = EmbeddingTables<f64>;
