//! Cross-modal metric learning that keeps semantic neighborhoods intact.
//!
//! The pipeline: build a semantic space over the texts ([`semantic`]), index
//! it for nearest neighbors ([`neighbor`]), train two projection encoders with
//! a cross-modal objective plus within-modality neighbor terms ([`loss`],
//! [`train`]), then measure retrieval and neighborhood preservation
//! ([`eval`]). [`data`] handles ingestion, splitting and synthetic data.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the working precision used by the command-line tool.

pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod neighbor;
pub mod scalar;
pub mod semantic;
pub mod train;

pub use embedding::{cosine_similarity, l2_normalize, squared_euclidean, FeatureVector, JointEmbedding, Modality};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LossBundle64 = loss::LossBundle<f64>;
pub type EmbeddingTable64 = loss::EmbeddingTable<f64>;
pub type PairDataset64 = data::PairDataset<f64>;
pub type SemanticSpace64 = semantic::SemanticSpace<f64>;
pub type DocModel64 = semantic::DocModel<f64>;
pub type NeighborIndex64 = neighbor::NeighborIndex<f64>;
pub type Encoder64 = train::Encoder<f64>;
pub type Checkpoint64 = train::Checkpoint<f64>;

pub type LossBundle32 = loss::LossBundle<f32>;
pub type Encoder32 = train::Encoder<f32>;
