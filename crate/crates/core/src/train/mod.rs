//! Two-stream projection training: image and text encoders optimized with
//! Adam on the combined objective, with plateau learning-rate decay and
//! best-validation checkpointing.

mod adam;
mod checkpoint;
mod encoder;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, Moments};
pub use checkpoint::{config_hash, Checkpoint};
pub use encoder::{Architecture, Dense, Encoder, EncoderGrads, Forward};

use crate::data::{split_dataset, PairDataset, Split};
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::io::write_jsonl_file;
use crate::loss::{combined_loss, symmetric_npairs_loss, BatchLayout, EmbeddingKey, EmbeddingTable, LossConfig};
use crate::neighbor::{NeighborSource, NeighborTable};
use crate::scalar::Scalar;

/// What the trainer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Symmetric N-pairs plus the weighted neighbor terms.
    #[default]
    Combined,
    /// Symmetric N-pairs alone; no neighbor table is consulted.
    SymmetricOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Epochs without validation improvement before the rate is decayed.
    pub patience: usize,
    pub decay_factor: f64,
    pub max_epochs: usize,
    /// Training stops when the rate would be decayed this many times.
    pub max_decays: usize,
    pub embed_dim: usize,
    pub architecture: Architecture,
    pub loss: LossConfig,
    pub objective: Objective,
    pub neighbor_source: NeighborSource,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            patience: 5,
            decay_factor: 0.1,
            max_epochs: 50,
            max_decays: 3,
            embed_dim: 256,
            architecture: Architecture::Linear,
            loss: LossConfig::default(),
            objective: Objective::Combined,
            neighbor_source: NeighborSource::TextOmega,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let ok = self.batch_size >= 2
            && positive(self.learning_rate)
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && positive(self.adam_epsilon)
            && self.patience > 0
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0
            && self.max_epochs > 0
            && self.max_decays > 0
            && self.embed_dim > 0
            && !matches!(self.architecture, Architecture::Mlp { hidden: 0 });
        if !ok {
            return Err(Error::ConfigInvalid(format!("train config {self:?}")));
        }
        self.loss.validate()?;
        split_dataset(0, self.split, 0).map(|_| ())
    }

    fn adam(&self, learning_rate: f64) -> AdamHyper {
        AdamHyper {
            learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_metrics_log(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    write_jsonl_file(path, metrics)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Best-validation snapshot.
    pub checkpoint: Checkpoint<T>,
    pub metrics: Vec<EpochMetrics>,
    pub split: Split,
}

/// Candidate semantic neighbors of every dataset position, restricted to an
/// allowed set of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    /// Maps table ids onto dataset positions. Neighbors outside `allowed`
    /// or absent from the dataset are dropped.
    pub fn from_table<T: Scalar>(dataset: &PairDataset<T>, table: &NeighborTable, allowed: &[usize]) -> Self {
        let mut ok = vec![false; dataset.len()];
        for &p in allowed {
            ok[p] = true;
        }
        let lists = dataset
            .ids()
            .iter()
            .map(|id| match table.position(id) {
                None => Vec::new(),
                Some(row) => table
                    .row(row)
                    .neighbors
                    .iter()
                    .filter_map(|&j| dataset.position(&table.ids()[j]))
                    .filter(|&p| ok[p])
                    .collect(),
            })
            .collect();
        Self { lists }
    }

    pub fn get(&self, pos: usize) -> &[usize] {
        &self.lists[pos]
    }
}

/// Pairs each member with a neighbor drawn uniformly from its list.
pub fn assemble_batch<T: Scalar, R: Rng + ?Sized>(
    dataset: &PairDataset<T>,
    lists: &NeighborLists,
    members: &[usize],
    rng: &mut R,
) -> Result<BatchLayout> {
    let neighbors = members
        .iter()
        .map(|&i| {
            let list = lists.get(i);
            if list.is_empty() {
                return Err(Error::EmptyNeighborhood(dataset.ids()[i].clone()));
            }
            Ok(Some(list[rng.random_range(0..list.len())]))
        })
        .collect::<Result<_>>()?;
    Ok(BatchLayout {
        members: members.to_vec(),
        neighbors,
    })
}

fn input<T: Scalar>(dataset: &PairDataset<T>, key: EmbeddingKey) -> Result<&[T]> {
    let r = dataset.record(key.id);
    match key.modality {
        Modality::Image => Ok(&r.image_feature),
        Modality::Text => r
            .text_feature
            .as_deref()
            .ok_or_else(|| Error::MissingFeatures(format!("{:?} has no text feature", r.id))),
    }
}

struct Encoders<'a, T> {
    image: &'a Encoder<T>,
    text: &'a Encoder<T>,
}

impl<T: Scalar> Encoders<'_, T> {
    fn of(&self, m: Modality) -> &Encoder<T> {
        match m {
            Modality::Image => self.image,
            Modality::Text => self.text,
        }
    }
}

/// Loss of one batch and, optionally, the parameter gradients of both encoders.
fn batch_objective<T: Scalar>(
    enc: &Encoders<'_, T>,
    dataset: &PairDataset<T>,
    layout: &BatchLayout,
    config: &TrainConfig,
    with_grads: bool,
) -> Result<(f64, Option<[EncoderGrads<T>; 2]>)> {
    let keys = layout.keys();
    let forwards: Vec<Forward<T>> = keys
        .par_iter()
        .map(|&k| enc.of(k.modality).forward(input(dataset, k)?))
        .collect::<Result<_>>()?;
    let table: EmbeddingTable<T> = keys
        .iter()
        .zip(&forwards)
        .map(|(&k, f)| (k, f.output.clone()))
        .collect();
    let bundle = match config.objective {
        Objective::Combined => combined_loss(&table, layout, &config.loss)?,
        Objective::SymmetricOnly => symmetric_npairs_loss(&table, &layout.members, &config.loss.base())?,
    };
    let value = bundle.value.to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    if !with_grads {
        return Ok((value, None));
    }
    let mut grads = [enc.image.zero_grads(), enc.text.zero_grads()];
    for (key, g) in &bundle.gradients {
        let at = keys.binary_search(key).expect("gradient key was forwarded");
        let slot = match key.modality {
            Modality::Image => 0,
            Modality::Text => 1,
        };
        enc.of(key.modality).backward(&forwards[at], g, &mut grads[slot]);
    }
    Ok((value, Some(grads)))
}

/// Consecutive chunks; a trailing singleton joins the chunk before it.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const NEIGHBOR_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

/// Size-weighted mean loss over fixed batches of `positions`.
fn mean_loss<T: Scalar>(
    enc: &Encoders<'_, T>,
    dataset: &PairDataset<T>,
    positions: &[usize],
    lists: Option<&NeighborLists>,
    config: &TrainConfig,
) -> Result<f64> {
    let mut rng = rng_stream(config.seed, VALIDATION_STREAM);
    let (mut total, mut count) = (0.0, 0usize);
    for members in batches(positions, config.batch_size) {
        let layout = match lists {
            Some(l) => assemble_batch(dataset, l, &members, &mut rng)?,
            None => BatchLayout::without_neighbors(members.clone()),
        };
        let (v, _) = batch_objective(enc, dataset, &layout, config, false)?;
        total += v * members.len() as f64;
        count += members.len();
    }
    Ok(total / count as f64)
}

/// Trains both encoders on the training split of `dataset`.
///
/// Every record needs a text feature. The combined objective samples each
/// training pair's semantic neighbor from `neighbors`, restricted to the
/// training split. The validation loss drives learning-rate decay; when the
/// validation split has fewer than two pairs the training loss is used.
pub fn train<T: Scalar>(
    dataset: &PairDataset<T>,
    neighbors: Option<&NeighborTable>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let text_dim = dataset
        .text_dim()
        .ok_or_else(|| Error::MissingFeatures("training needs a text feature on every record".into()))?;
    let split = split_dataset(dataset.len(), config.split, config.seed)?;
    if split.train.len() < 2 {
        return Err(Error::DatasetTooSmall(format!("{} training pairs", split.train.len())));
    }
    let lists = match config.objective {
        Objective::SymmetricOnly => None,
        Objective::Combined => {
            let table = neighbors
                .ok_or_else(|| Error::ConfigInvalid("the combined objective needs a neighbor table".into()))?;
            let seen: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
            Some((
                NeighborLists::from_table(dataset, table, &split.train),
                NeighborLists::from_table(dataset, table, &seen),
            ))
        }
    };

    let mut init = rng_stream(config.seed, INIT_STREAM);
    let mut image = Encoder::new(Modality::Image, dataset.image_dim(), config.embed_dim, config.architecture, &mut init)?;
    let mut text = Encoder::new(Modality::Text, text_dim, config.embed_dim, config.architecture, &mut init)?;
    let moments = |e: &Encoder<T>| -> Vec<Moments<T>> { e.tensors().iter().map(|t| Moments::zeros(t.len())).collect() };
    let mut image_m = moments(&image);
    let mut text_m = moments(&text);

    let mut shuffle_rng = rng_stream(config.seed, SHUFFLE_STREAM);
    let mut neighbor_rng = rng_stream(config.seed, NEIGHBOR_STREAM);
    let mut lr = config.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut decays = 0;
    let mut snapshot = None;
    let mut metrics = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for members in batches(&order, config.batch_size) {
            let layout = match &lists {
                Some((train_lists, _)) => assemble_batch(dataset, train_lists, &members, &mut neighbor_rng)?,
                None => BatchLayout::without_neighbors(members.clone()),
            };
            let enc = Encoders {
                image: &image,
                text: &text,
            };
            let (value, grads) = batch_objective(&enc, dataset, &layout, config, true)?;
            let [gi, gt] = grads.expect("gradients requested");
            let hyper = config.adam(lr);
            for ((p, g), m) in image.tensors_mut().into_iter().zip(&gi).zip(&mut image_m) {
                adam_step(p, g, m, &hyper)?;
            }
            for ((p, g), m) in text.tensors_mut().into_iter().zip(&gt).zip(&mut text_m) {
                adam_step(p, g, m, &hyper)?;
            }
            total += value * members.len() as f64;
            count += members.len();
        }
        let train_loss = total / count as f64;
        let val_loss = if split.val.len() >= 2 {
            let enc = Encoders {
                image: &image,
                text: &text,
            };
            mean_loss(&enc, dataset, &split.val, lists.as_ref().map(|l| &l.1), config)?
        } else {
            train_loss
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best {
            best = val_loss;
            stale = 0;
            snapshot = Some(Checkpoint::snapshot(config, epoch, best, lr, &image, &text, &image_m, &text_m));
        } else {
            stale += 1;
            if stale >= config.patience {
                stale = 0;
                decays += 1;
                if decays >= config.max_decays {
                    break;
                }
                lr *= config.decay_factor;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot.expect("first epoch always improves on infinity"),
        metrics,
        split,
    })
}

/// Joint-space embeddings of the given dataset positions.
pub fn embed_positions<T: Scalar>(
    encoder: &Encoder<T>,
    dataset: &PairDataset<T>,
    positions: &[usize],
) -> Result<Vec<Vec<T>>> {
    let modality = encoder.modality();
    positions
        .par_iter()
        .map(|&p| {
            let x = input(
                dataset,
                EmbeddingKey {
                    id: p,
                    modality,
                },
            )?;
            Ok(encoder.forward(x)?.output)
        })
        .collect()
}
