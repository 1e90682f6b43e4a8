//! Paired image–text datasets: file ingestion, deterministic splitting, and
//! a synthetic generator with latent topics and visually diffuse images.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{check_finite, dot, l2_normalize};
use crate::error::{Error, Result};
use crate::io::{read_jsonl_file, write_jsonl_file};
use crate::scalar::Scalar;
use crate::semantic::{Document, SemanticSpace};

/// One aligned image–text pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord<T> {
    pub id: String,
    pub image_feature: Vec<T>,
    pub text_tokens: Option<Vec<String>>,
    pub text_feature: Option<Vec<T>>,
    pub topic_label: Option<usize>,
}

/// One line of a features file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub image_feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_label: Option<usize>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::c).collect()
}

impl<T: Scalar> From<FeatureRecord> for PairRecord<T> {
    fn from(r: FeatureRecord) -> Self {
        PairRecord {
            id: r.id,
            image_feature: from_f64(r.image_feature),
            text_tokens: r.text_tokens,
            text_feature: r.text_feature.map(from_f64),
            topic_label: r.topic_label,
        }
    }
}

impl<T: Scalar> From<&PairRecord<T>> for FeatureRecord {
    fn from(r: &PairRecord<T>) -> Self {
        FeatureRecord {
            id: r.id.clone(),
            image_feature: to_f64(&r.image_feature),
            text_feature: r.text_feature.as_deref().map(to_f64),
            text_tokens: r.text_tokens.clone(),
            topic_label: r.topic_label,
        }
    }
}

/// Validated, immutable collection of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset<T> {
    records: Vec<PairRecord<T>>,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

impl<T: Scalar> PairDataset<T> {
    /// Checks ids, finiteness, and uniform dimensions.
    pub fn new(records: Vec<PairRecord<T>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::DatasetTooSmall("no records".into()));
        }
        let image_dim = records[0].image_feature.len();
        if image_dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        let text_dim = records.iter().find_map(|r| r.text_feature.as_ref().map(Vec::len));
        let mut positions = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.image_feature.len() != image_dim {
                return Err(Error::DimensionMismatch {
                    expected: image_dim,
                    actual: r.image_feature.len(),
                });
            }
            check_finite(&r.image_feature, &format!("image feature of {:?}", r.id))?;
            if let Some(tf) = &r.text_feature {
                let want = text_dim.unwrap_or(tf.len());
                if tf.len() != want || tf.is_empty() {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        actual: tf.len(),
                    });
                }
                check_finite(tf, &format!("text feature of {:?}", r.id))?;
            }
            if r.text_feature.is_none() && r.text_tokens.is_none() {
                return Err(Error::MissingFeatures(format!("{:?} has neither text tokens nor a text feature", r.id)));
            }
        }
        let ids = records.iter().map(|r| r.id.clone()).collect();
        Ok(Self {
            records,
            ids,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PairRecord<T>] {
        &self.records
    }

    pub fn record(&self, pos: usize) -> &PairRecord<T> {
        &self.records[pos]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn image_dim(&self) -> usize {
        self.records[0].image_feature.len()
    }

    /// Text feature dimension, when every record has one.
    pub fn text_dim(&self) -> Option<usize> {
        if self.records.iter().all(|r| r.text_feature.is_some()) {
            self.records[0].text_feature.as_ref().map(Vec::len)
        } else {
            None
        }
    }

    pub fn topic_labels(&self) -> Option<Vec<usize>> {
        self.records.iter().map(|r| r.topic_label).collect()
    }

    /// Tokenized documents of every record that carries tokens.
    pub fn corpus(&self) -> Vec<Document> {
        self.records
            .iter()
            .filter_map(|r| {
                r.text_tokens.as_ref().map(|t| Document {
                    id: r.id.clone(),
                    tokens: t.clone(),
                })
            })
            .collect()
    }

    /// Uses the semantic-space vector as the text feature of records that lack one.
    pub fn fill_text_features(mut self, space: &SemanticSpace<T>) -> Result<Self> {
        for r in &mut self.records {
            if r.text_feature.is_none() {
                let v = space
                    .get(&r.id)
                    .ok_or_else(|| Error::MissingFeatures(format!("no text feature or semantic vector for {:?}", r.id)))?;
                r.text_feature = Some(v.to_vec());
            }
        }
        Self::new(self.records)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl_file(path, self.records.iter().map(FeatureRecord::from))
    }
}

/// Reads a features file, optionally merging tokens from a corpus file.
///
/// Every corpus id must name a feature record.
pub fn load_dataset<T: Scalar>(features: impl AsRef<Path>, corpus: Option<&Path>) -> Result<PairDataset<T>> {
    let rows: Vec<FeatureRecord> = read_jsonl_file(features)?;
    let mut records: Vec<PairRecord<T>> = rows.into_iter().map(PairRecord::from).collect();
    if let Some(path) = corpus {
        let docs: Vec<Document> = read_jsonl_file(path)?;
        let pos: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let mut assigned = Vec::with_capacity(docs.len());
        for doc in docs {
            let i = *pos
                .get(doc.id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("corpus id {:?} has no feature record", doc.id)))?;
            assigned.push((i, doc.tokens));
        }
        for (i, tokens) in assigned {
            records[i].text_tokens = Some(tokens);
        }
    }
    PairDataset::new(records)
}

/// Positions of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n`.
///
/// Validation and test sizes are `floor(n·ratio)`; training gets the rest.
/// Each part is returned in ascending order.
pub fn split_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigInvalid(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let size = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let n_val = size(ratios[1]);
    let n_test = size(ratios[2]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub modes_per_topic: usize,
    pub pairs: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Per-coordinate noise on text features.
    pub text_noise: f64,
    /// Per-coordinate noise on image features.
    pub image_noise: f64,
    /// Norm of each visual-mode center; raised if needed so that centers are
    /// at least `10 · image_noise` apart.
    pub mode_scale: f64,
    /// Norm of each topic's text center.
    pub topic_scale: f64,
    /// Tokens per document; 0 emits no tokens.
    pub tokens_per_doc: usize,
    pub topic_vocab: usize,
    pub shared_vocab: usize,
    /// Chance that a token is drawn from the topic's own vocabulary.
    pub topic_word_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            modes_per_topic: 3,
            pairs: 2000,
            image_dim: 64,
            text_dim: 32,
            text_noise: 0.3,
            image_noise: 0.05,
            mode_scale: 1.0,
            topic_scale: 1.0,
            tokens_per_doc: 0,
            topic_vocab: 40,
            shared_vocab: 60,
            topic_word_prob: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if self.topics < 2 || self.modes_per_topic < 1 {
            return fail(format!("need topics ≥ 2 and modes ≥ 1, got {} and {}", self.topics, self.modes_per_topic));
        }
        let modes = self.topics * self.modes_per_topic;
        if self.pairs < modes {
            return fail(format!("{} pairs cannot cover {modes} visual modes", self.pairs));
        }
        if self.image_dim < modes {
            return fail(format!("image_dim {} < {modes} mutually orthogonal mode centers", self.image_dim));
        }
        if self.text_dim == 0 {
            return fail("text_dim must be positive".into());
        }
        let nonneg = [self.text_noise, self.image_noise, self.mode_scale, self.topic_scale];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return fail("noise and scale parameters must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.topic_word_prob) {
            return fail("topic_word_prob must lie in [0, 1]".into());
        }
        if self.tokens_per_doc > 0 && (self.topic_vocab == 0 || (self.shared_vocab == 0 && self.topic_word_prob < 1.0)) {
            return fail("token generation needs nonempty vocabularies".into());
        }
        Ok(())
    }

    /// Norm actually used for the mode centers.
    pub fn effective_mode_scale(&self) -> f64 {
        self.mode_scale.max(10.0 * self.image_noise / std::f64::consts::SQRT_2)
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| gauss(rng)).collect()
}

/// `count` orthonormal vectors by Gram–Schmidt on Gaussian draws.
fn orthonormal_set<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &basis {
            let p = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        if let Ok(u) = l2_normalize(&v) {
            if crate::embedding::norm(&v) > 1e-6 {
                basis.push(u);
            }
        }
    }
    basis
}

/// Generates pairs with latent topics.
///
/// Each pair draws a topic uniformly. Its text feature is the topic's center
/// plus Gaussian noise. Its image feature is one of the topic's visual-mode
/// centers plus Gaussian noise; mode centers of all topics are mutually
/// orthogonal, so same-topic images can be as far apart as unrelated ones.
pub fn generate_synthetic<T: Scalar>(cfg: &SyntheticConfig) -> Result<PairDataset<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let text_centers: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| {
            let u = l2_normalize(&gaussian_vec(&mut rng, cfg.text_dim)).expect("gaussian draw is nonzero");
            u.into_iter().map(|x| x * cfg.topic_scale).collect()
        })
        .collect();
    let scale = cfg.effective_mode_scale();
    let mode_centers: Vec<Vec<f64>> = orthonormal_set(&mut rng, cfg.topics * cfg.modes_per_topic, cfg.image_dim)
        .into_iter()
        .map(|u| u.into_iter().map(|x| x * scale).collect())
        .collect();

    let width = cfg.pairs.to_string().len();
    let records = (0..cfg.pairs)
        .map(|i| {
            let topic = rng.random_range(0..cfg.topics);
            let mode = rng.random_range(0..cfg.modes_per_topic);
            let text: Vec<f64> = text_centers[topic]
                .iter()
                .map(|&c| c + cfg.text_noise * gauss(&mut rng))
                .collect();
            let image: Vec<f64> = mode_centers[topic * cfg.modes_per_topic + mode]
                .iter()
                .map(|&c| c + cfg.image_noise * gauss(&mut rng))
                .collect();
            let tokens = (cfg.tokens_per_doc > 0).then(|| {
                (0..cfg.tokens_per_doc)
                    .map(|_| {
                        if rng.random_bool(cfg.topic_word_prob) {
                            format!("t{topic}_w{}", rng.random_range(0..cfg.topic_vocab))
                        } else {
                            format!("common_w{}", rng.random_range(0..cfg.shared_vocab))
                        }
                    })
                    .collect()
            });
            PairRecord {
                id: format!("p{i:0width$}"),
                image_feature: from_f64(image),
                text_tokens: tokens,
                text_feature: Some(from_f64(text)),
                topic_label: Some(topic),
            }
        })
        .collect();
    PairDataset::new(records)
}
