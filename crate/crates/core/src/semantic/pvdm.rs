//! Distributed-memory paragraph vectors trained with hierarchical softmax.
//!
//! Each word position predicts its token from the mean of the document
//! vector and the word vectors in a window around it. Windows are truncated
//! at document edges. Unknown tokens (below `min_count`) are dropped before
//! windows are formed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::huffman::{build_huffman, neg_log_sigmoid, sigmoid, HuffmanTree};
use super::vocab::{build_vocabulary, Vocabulary};
use crate::embedding::dot;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A tokenized document: one line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PvdmConfig {
    pub dim: usize,
    pub window: usize,
    pub min_count: usize,
    pub epochs: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Passes over a document when inferring its vector.
    pub infer_steps: usize,
    pub seed: u64,
}

impl Default for PvdmConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            window: 20,
            min_count: 20,
            epochs: 20,
            alpha_start: 0.025,
            alpha_end: 0.0001,
            infer_steps: 20,
            seed: 0,
        }
    }
}

impl PvdmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dim > 0
            && self.min_count > 0
            && self.alpha_start > 0.0
            && self.alpha_end >= 0.0
            && self.alpha_end <= self.alpha_start;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("pvdm config {self:?}")))
        }
    }

    fn init_bound(&self) -> f64 {
        0.5 / self.dim as f64
    }
}

/// Trained paragraph-vector model.
#[derive(Debug, Clone, PartialEq)]
pub struct DocModel<T> {
    config: PvdmConfig,
    vocab: Vocabulary,
    tree: HuffmanTree,
    words: Matrix<T>,
    nodes: Matrix<T>,
    docs: Matrix<T>,
    doc_ids: Vec<String>,
    epoch_losses: Vec<f64>,
}

/// Word and tree-node weights as seen by one pass: trainable or frozen.
trait PassWeights<T> {
    fn words(&self) -> &Matrix<T>;
    fn nodes(&self) -> &Matrix<T>;
    fn step_node(&mut self, node: usize, g: T, context: &[T]);
    fn step_word(&mut self, word: usize, error: &[T], scale: T);
}

struct Trainable<'a, T> {
    words: &'a mut Matrix<T>,
    nodes: &'a mut Matrix<T>,
}

struct Frozen<'a, T> {
    words: &'a Matrix<T>,
    nodes: &'a Matrix<T>,
}

impl<T: Scalar> PassWeights<T> for Trainable<'_, T> {
    fn words(&self) -> &Matrix<T> {
        self.words
    }
    fn nodes(&self) -> &Matrix<T> {
        self.nodes
    }
    fn step_node(&mut self, node: usize, g: T, context: &[T]) {
        for (u, &h) in self.nodes.row_mut(node).iter_mut().zip(context) {
            *u += g * h;
        }
    }
    fn step_word(&mut self, word: usize, error: &[T], scale: T) {
        for (x, &e) in self.words.row_mut(word).iter_mut().zip(error) {
            *x += e * scale;
        }
    }
}

impl<T: Scalar> PassWeights<T> for Frozen<'_, T> {
    fn words(&self) -> &Matrix<T> {
        self.words
    }
    fn nodes(&self) -> &Matrix<T> {
        self.nodes
    }
    fn step_node(&mut self, _: usize, _: T, _: &[T]) {}
    fn step_word(&mut self, _: usize, _: &[T], _: T) {}
}

struct Scratch<T> {
    context: Vec<T>,
    error: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(dim: usize) -> Self {
        Self {
            context: vec![T::zero(); dim],
            error: vec![T::zero(); dim],
        }
    }
}

/// Runs one pass over a document and returns the summed negative log
/// probability of its words.
fn doc_pass<T: Scalar, W: PassWeights<T>>(
    tokens: &[usize],
    doc: &mut [T],
    weights: &mut W,
    tree: &HuffmanTree,
    window: usize,
    alpha: T,
    scratch: &mut Scratch<T>,
) -> f64 {
    let mut loss = 0.0;
    for (t, &target) in tokens.iter().enumerate() {
        let lo = t.saturating_sub(window);
        let hi = (t + window + 1).min(tokens.len());
        let count = hi - lo; // doc vector plus (hi - lo - 1) context words
        let inv = T::one() / T::from_usize(count).unwrap();

        scratch.context.copy_from_slice(doc);
        for (c, &w) in tokens.iter().enumerate().take(hi).skip(lo) {
            if c == t {
                continue;
            }
            for (h, &x) in scratch.context.iter_mut().zip(weights.words().row(w)) {
                *h += x;
            }
        }
        for h in scratch.context.iter_mut() {
            *h *= inv;
        }

        scratch.error.iter_mut().for_each(|e| *e = T::zero());
        for branch in tree.path(target) {
            let sign = T::c(branch.sign as f64);
            let f = dot(weights.nodes().row(branch.node), &scratch.context);
            loss += neg_log_sigmoid(sign * f).to_f64_lossy();
            // ascent on ln σ(sign·f)
            let g = alpha * sign * (T::one() - sigmoid(sign * f));
            for (e, &u) in scratch.error.iter_mut().zip(weights.nodes().row(branch.node)) {
                *e += g * u;
            }
            weights.step_node(branch.node, g, &scratch.context);
        }

        for (d, &e) in doc.iter_mut().zip(&scratch.error) {
            *d += e * inv;
        }
        for (c, &w) in tokens.iter().enumerate().take(hi).skip(lo) {
            if c != t {
                weights.step_word(w, &scratch.error, inv);
            }
        }
    }
    loss
}

fn alpha_at(cfg: &PvdmConfig, progress: f64) -> f64 {
    let a = cfg.alpha_start - (cfg.alpha_start - cfg.alpha_end) * progress;
    a.max(cfg.alpha_end)
}

/// 64-bit FNV-1a, used to derive per-document inference seeds from ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Trains word, tree-node and document vectors on `corpus`.
///
/// Deterministic for a fixed `config.seed`: documents are visited in a
/// seeded shuffled order each epoch and positions left to right.
pub fn train_pvdm<T: Scalar>(corpus: &[Document], config: &PvdmConfig) -> Result<DocModel<T>> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let token_lists: Vec<&[String]> = corpus.iter().map(|d| d.tokens.as_slice()).collect();
    let vocab = build_vocabulary(&token_lists, config.min_count)?;
    let tree = build_huffman(&vocab)?;
    let encoded: Vec<Vec<usize>> = corpus.iter().map(|d| vocab.encode(&d.tokens)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = config.init_bound();
    let mut words = Matrix::uniform(vocab.len(), config.dim, bound, &mut rng);
    let mut docs = Matrix::uniform(corpus.len(), config.dim, bound, &mut rng);
    let mut nodes = Matrix::zeros(tree.internal_nodes(), config.dim);

    let total_positions: usize = encoded.iter().map(Vec::len).sum();
    let schedule_len = (config.epochs * total_positions).max(1) as f64;
    let mut scratch = Scratch::new(config.dim);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut seen = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &i in &order {
            let alpha = T::c(alpha_at(config, seen as f64 / schedule_len));
            let mut weights = Trainable {
                words: &mut words,
                nodes: &mut nodes,
            };
            loss += doc_pass(
                &encoded[i],
                docs.row_mut(i),
                &mut weights,
                &tree,
                config.window,
                alpha,
                &mut scratch,
            );
            seen += encoded[i].len();
        }
        epoch_losses.push(loss / total_positions.max(1) as f64);
    }

    Ok(DocModel {
        config: config.clone(),
        vocab,
        tree,
        words,
        nodes,
        docs,
        doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
        epoch_losses,
    })
}

impl<T: Scalar> DocModel<T> {
    pub fn config(&self) -> &PvdmConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tree(&self) -> &HuffmanTree {
        &self.tree
    }

    pub fn word_vectors(&self) -> &Matrix<T> {
        &self.words
    }

    pub fn node_weights(&self) -> &Matrix<T> {
        &self.nodes
    }

    pub fn doc_vectors(&self) -> &Matrix<T> {
        &self.docs
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Mean negative log probability per predicted word, one entry per epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    /// Hierarchical-softmax probability of `token` given a context vector.
    pub fn hs_probability(&self, context: &[T], token: &str) -> Result<T> {
        let idx = self
            .vocab
            .index_of(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))?;
        if context.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                actual: context.len(),
            });
        }
        Ok(self.tree.probability(&self.nodes, context, idx))
    }

    /// The starting point inference uses for a given seed.
    pub fn inference_init(&self, seed: u64) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::uniform(1, self.config.dim, self.config.init_bound(), &mut rng).into_vec()
    }

    /// Fits a fresh document vector to `tokens` with every model weight frozen.
    pub fn infer_doc_vector<S: AsRef<str>>(&self, tokens: &[S], steps: usize, seed: u64) -> Result<Vec<T>> {
        let encoded = self.vocab.encode(tokens);
        if encoded.is_empty() {
            return Err(Error::AllTokensUnknown);
        }
        let mut doc = self.inference_init(seed);
        let mut weights = Frozen {
            words: &self.words,
            nodes: &self.nodes,
        };
        let mut scratch = Scratch::new(self.config.dim);
        for step in 0..steps {
            let alpha = T::c(alpha_at(&self.config, step as f64 / steps as f64));
            doc_pass(
                &encoded,
                &mut doc,
                &mut weights,
                &self.tree,
                self.config.window,
                alpha,
                &mut scratch,
            );
        }
        Ok(doc)
    }

    /// Seed used when inferring the document with this id.
    pub fn seed_for(&self, id: &str) -> u64 {
        self.config.seed ^ fnv1a(id.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::squared_euclidean;
    use rand::Rng;

    fn topic_corpus(n_per_topic: usize, len: usize, seed: u64) -> Vec<Document> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for topic in 0..2 {
            for i in 0..n_per_topic {
                let tokens = (0..len)
                    .map(|_| format!("t{topic}w{}", rng.random_range(0..12)))
                    .collect();
                out.push(Document {
                    id: format!("d{topic}_{i}"),
                    tokens,
                });
            }
        }
        out
    }

    fn small_config() -> PvdmConfig {
        PvdmConfig {
            dim: 16,
            window: 3,
            min_count: 1,
            epochs: 15,
            infer_steps: 30,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_init() {
        let corpus = topic_corpus(3, 10, 1);
        let cfg = PvdmConfig {
            epochs: 0,
            ..small_config()
        };
        let m: DocModel<f64> = train_pvdm(&corpus, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = cfg.init_bound();
        let _words = Matrix::<f64>::uniform(m.vocabulary().len(), cfg.dim, bound, &mut rng);
        let docs = Matrix::<f64>::uniform(corpus.len(), cfg.dim, bound, &mut rng);
        assert_eq!(m.doc_vectors(), &docs);
        assert!(m.epoch_losses().is_empty());
    }

    #[test]
    fn loss_decreases_and_topics_separate() {
        let corpus = topic_corpus(20, 30, 3);
        let m: DocModel<f64> = train_pvdm(&corpus, &small_config()).unwrap();
        let l = m.epoch_losses();
        assert!(l.last().unwrap() < l.first().unwrap());
        let docs = m.doc_vectors();
        let mut pure = 0;
        for i in 0..corpus.len() {
            let nn = (0..corpus.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = squared_euclidean(docs.row(i), docs.row(a)).unwrap();
                    let db = squared_euclidean(docs.row(i), docs.row(b)).unwrap();
                    da.total_cmp(&db)
                })
                .unwrap();
            if nn / 20 == i / 20 {
                pure += 1;
            }
        }
        assert!(pure as f64 >= 0.9 * corpus.len() as f64, "purity {pure}");
    }

    #[test]
    fn deterministic_and_frozen() {
        let corpus = topic_corpus(5, 12, 4);
        let a: DocModel<f64> = train_pvdm(&corpus, &small_config()).unwrap();
        let b: DocModel<f64> = train_pvdm(&corpus, &small_config()).unwrap();
        assert_eq!(a, b);
        let before = a.clone();
        let v1 = a.infer_doc_vector(&corpus[0].tokens, 10, 3).unwrap();
        let v2 = a.infer_doc_vector(&corpus[0].tokens, 10, 3).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(a, before);
        assert_eq!(a.infer_doc_vector(&corpus[0].tokens, 0, 3).unwrap(), a.inference_init(3));
    }

    #[test]
    fn inference_errors() {
        let corpus = topic_corpus(2, 5, 4);
        let m: DocModel<f64> = train_pvdm(&corpus, &small_config()).unwrap();
        assert!(matches!(
            m.infer_doc_vector(&["nope"], 5, 0),
            Err(Error::AllTokensUnknown)
        ));
        assert!(matches!(
            m.hs_probability(&vec![0.0; 16], "nope"),
            Err(Error::UnknownToken(_))
        ));
        assert!(matches!(
            train_pvdm::<f64>(&[], &small_config()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn hs_probability_sums_to_one_on_trained_model() {
        let corpus = topic_corpus(3, 10, 9);
        let m: DocModel<f64> = train_pvdm(&corpus, &small_config()).unwrap();
        let ctx = m.doc_vectors().row(0).to_vec();
        let total: f64 = m
            .vocabulary()
            .tokens()
            .iter()
            .map(|t| m.hs_probability(&ctx, t).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
