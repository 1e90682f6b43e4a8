//! The semantic space: paragraph vectors over the texts, or vectors loaded
//! from a file.

mod huffman;
mod pvdm;
mod space;
mod vocab;

pub use huffman::{build_huffman, Branch, HuffmanTree};
pub use pvdm::{train_pvdm, DocModel, Document, PvdmConfig};
pub use space::{load_external_space, SemanticSpace, SpaceSource, VectorRecord};
pub use vocab::{build_vocabulary, Vocabulary};

use crate::error::Result;
use crate::scalar::Scalar;

/// Trains a model on `corpus`, then infers a vector for every document with
/// the trained weights frozen.
///
/// Documents with no in-vocabulary token keep their trained vector.
pub fn embed_corpus<T: Scalar>(corpus: &[Document], config: &PvdmConfig) -> Result<(DocModel<T>, SemanticSpace<T>)> {
    let model: DocModel<T> = train_pvdm(corpus, config)?;
    let vectors = corpus
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            match model.infer_doc_vector(&doc.tokens, config.infer_steps, model.seed_for(&doc.id)) {
                Ok(v) => Ok(v),
                Err(crate::Error::AllTokensUnknown) => Ok(model.doc_vectors().row(i).to_vec()),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ids = corpus.iter().map(|d| d.id.clone()).collect();
    let space = SemanticSpace::new(ids, vectors, SpaceSource::Pvdm)?;
    Ok((model, space))
}
