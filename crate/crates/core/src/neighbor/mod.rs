//! k-nearest-neighbor search over a semantic (or visual) space, and the
//! randomized neighbor sampling that picks each sample's semantic partner.
//!
//! Neighbor tables are computed once, before training, and are immutable.
//! Indexed points are stored in ascending id order, so positions reported by
//! an index or table follow that order and distance ties go to the smaller id.

mod graph;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PairDataset;
use crate::embedding::{check_dims, l2_normalize, squared_euclidean_unchecked, dot};
use crate::error::{Error, Result};
use crate::io::{read_jsonl_file, write_jsonl_file};
use crate::scalar::Scalar;
use crate::semantic::{SemanticSpace, SpaceSource};
use graph::{Candidate, GraphParams, ProximityGraph};

/// Default neighborhood size for semantic-neighbor sampling.
pub const DEFAULT_K: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    #[default]
    Exact,
    Approximate,
}

/// Which space neighbors are computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSource {
    /// The semantic space over texts.
    #[default]
    TextOmega,
    /// Raw image features.
    ImageVisual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub metric: Metric,
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub max_degree: usize,
    pub ef_construction: usize,
    /// Query beam width; raised to k when smaller.
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            mode: IndexMode::Exact,
            metric: Metric::Euclidean,
            max_degree: 16,
            ef_construction: 200,
            ef_search: 400,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree == 0 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::ConfigInvalid(format!("index config {self:?}")));
        }
        Ok(())
    }
}

/// Neighbors of one point, nearest first. Entries are positions in the space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborRow {
    pub neighbors: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborRow {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

fn to_row(cands: impl IntoIterator<Item = Candidate>) -> NeighborRow {
    let (neighbors, distances) = cands.into_iter().map(|c| (c.idx, c.dist)).unzip();
    NeighborRow {
        neighbors,
        distances,
    }
}

/// Searchable point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex<T> {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    /// Unit-normalized under the cosine metric.
    vectors: Vec<Vec<T>>,
    metric: Metric,
    graph: Option<ProximityGraph>,
    ef_search: usize,
}

/// Euclidean distance, or `1 − cos` for pre-normalized vectors.
fn distance<T: Scalar>(metric: Metric, a: &[T], b: &[T]) -> f64 {
    match metric {
        Metric::Euclidean => squared_euclidean_unchecked(a, b).to_f64_lossy().sqrt(),
        Metric::Cosine => 1.0 - dot(a, b).to_f64_lossy(),
    }
}

pub fn build_index<T: Scalar>(space: &SemanticSpace<T>, cfg: &IndexConfig) -> Result<NeighborIndex<T>> {
    cfg.validate()?;
    if space.len() < 2 {
        return Err(Error::TooFewVectors(space.len()));
    }
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| space.ids()[a].cmp(&space.ids()[b]));
    let ids: Vec<String> = order.iter().map(|&i| space.ids()[i].clone()).collect();
    let vectors: Vec<Vec<T>> = order
        .iter()
        .map(|&i| {
            let v = &space.vectors()[i];
            match cfg.metric {
                Metric::Euclidean => Ok(v.clone()),
                Metric::Cosine => l2_normalize(v),
            }
        })
        .collect::<Result<_>>()?;
    let graph = match cfg.mode {
        IndexMode::Exact => None,
        IndexMode::Approximate => {
            let params = GraphParams {
                max_degree: cfg.max_degree,
                ef_construction: cfg.ef_construction,
                seed: cfg.seed,
            };
            Some(ProximityGraph::build(vectors.len(), &params, |a, b| {
                distance(cfg.metric, &vectors[a], &vectors[b])
            }))
        }
    };
    let positions = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    Ok(NeighborIndex {
        ids,
        positions,
        vectors,
        metric: cfg.metric,
        graph,
        ef_search: cfg.ef_search,
    })
}

impl<T: Scalar> NeighborIndex<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_approximate(&self) -> bool {
        self.graph.is_some()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// Up to `k` nearest indexed points to `query`, skipping `exclude`.
    pub fn query_vector(&self, query: &[T], k: usize, exclude: Option<usize>) -> Result<NeighborRow> {
        check_dims(self.vectors[0].len(), query.len())?;
        let normalized;
        let q = match self.metric {
            Metric::Euclidean => query,
            Metric::Cosine => {
                normalized = l2_normalize(query)?;
                &normalized[..]
            }
        };
        let dist = |j: usize| distance(self.metric, q, &self.vectors[j]);
        let k = k.min(self.len() - usize::from(exclude.is_some()));
        let cands = match &self.graph {
            None => {
                let mut all: Vec<Candidate> = (0..self.len())
                    .filter(|&j| Some(j) != exclude)
                    .map(|j| Candidate { dist: dist(j), idx: j })
                    .collect();
                if k < all.len() {
                    all.select_nth_unstable(k);
                    all.truncate(k);
                }
                all.sort();
                all
            }
            Some(graph) => {
                let ef = self.ef_search.max(k + 1);
                let mut found = graph.search(dist, ef);
                found.retain(|c| Some(c.idx) != exclude);
                found.truncate(k);
                found
            }
        };
        Ok(to_row(cands))
    }

    /// The `k` nearest neighbors of an indexed point, itself excluded.
    pub fn query_position(&self, pos: usize, k: usize) -> NeighborRow {
        self.query_vector(&self.vectors[pos], k, Some(pos))
            .expect("indexed vector has index dimension")
    }

    pub fn query_neighbors(&self, id: &str, k: usize) -> Result<NeighborRow> {
        let pos = self
            .position(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(self.query_position(pos, k))
    }

    /// Neighbor rows for every indexed point, computed in parallel.
    pub fn build_table(&self, k: usize, source: NeighborSource) -> NeighborTable {
        let rows = (0..self.len())
            .into_par_iter()
            .map(|i| self.query_position(i, k))
            .collect();
        NeighborTable::new(self.ids.clone(), rows, k, self.metric, source)
    }
}

/// Precomputed neighbor lists for every sample of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    rows: Vec<NeighborRow>,
    k: usize,
    metric: Metric,
    source: NeighborSource,
}

/// One line of a neighbor-table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub id: String,
    pub neighbors: Vec<String>,
    pub distances: Vec<f64>,
}

impl NeighborTable {
    pub fn new(ids: Vec<String>, rows: Vec<NeighborRow>, k: usize, metric: Metric, source: NeighborSource) -> Self {
        let positions = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            positions,
            rows,
            k,
            metric,
            source,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[NeighborRow] {
        &self.rows
    }

    pub fn row(&self, pos: usize) -> &NeighborRow {
        &self.rows[pos]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn source(&self) -> NeighborSource {
        self.source
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn records(&self) -> impl Iterator<Item = NeighborRecord> + '_ {
        self.ids.iter().zip(&self.rows).map(|(id, row)| NeighborRecord {
            id: id.clone(),
            neighbors: row.neighbors.iter().map(|&j| self.ids[j].clone()).collect(),
            distances: row.distances.clone(),
        })
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl_file(path, self.records())
    }

    pub fn from_records(records: Vec<NeighborRecord>, metric: Metric, source: NeighborSource) -> Result<Self> {
        let mut positions = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if positions.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let mut k = 0;
        let rows = records
            .iter()
            .map(|r| {
                if r.neighbors.len() != r.distances.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{:?}: {} neighbors, {} distances",
                        r.id,
                        r.neighbors.len(),
                        r.distances.len()
                    )));
                }
                k = k.max(r.neighbors.len());
                let neighbors = r
                    .neighbors
                    .iter()
                    .map(|n| {
                        let p = *positions.get(n).ok_or_else(|| Error::UnknownId(n.clone()))?;
                        if n == &r.id {
                            return Err(Error::IdMismatch(format!("{n:?} lists itself as a neighbor")));
                        }
                        Ok(p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NeighborRow {
                    neighbors,
                    distances: r.distances.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = records.into_iter().map(|r| r.id).collect();
        Ok(Self::new(ids, rows, k, metric, source))
    }

    /// Reads a table file. The file does not record metric or source space,
    /// so the caller states them.
    pub fn load_jsonl(path: impl AsRef<Path>, metric: Metric, source: NeighborSource) -> Result<Self> {
        Self::from_records(read_jsonl_file(path)?, metric, source)
    }
}

/// Draws one neighbor of `pos` uniformly from its row.
pub fn sample_neighbor_pair<R: Rng + ?Sized>(table: &NeighborTable, pos: usize, rng: &mut R) -> Result<usize> {
    let row = table.row(pos);
    if row.is_empty() {
        return Err(Error::EmptyNeighborhood(table.ids()[pos].clone()));
    }
    Ok(row.neighbors[rng.random_range(0..row.len())])
}

/// The space neighbors are computed in: the semantic space over texts, or
/// the raw image features.
pub fn neighbor_source_variant<T: Scalar>(
    dataset: &PairDataset<T>,
    variant: NeighborSource,
    omega: Option<&SemanticSpace<T>>,
) -> Result<SemanticSpace<T>> {
    match variant {
        NeighborSource::TextOmega => {
            let omega = omega.ok_or_else(|| Error::MissingFeatures("semantic space for text neighbors".into()))?;
            omega.select(dataset.ids()).map_err(|e| match e {
                Error::UnknownId(id) => Error::MissingFeatures(format!("no semantic vector for {id:?}")),
                e => e,
            })
        }
        NeighborSource::ImageVisual => {
            let vectors = dataset.records().iter().map(|r| r.image_feature.clone()).collect();
            SemanticSpace::new(dataset.ids().to_vec(), vectors, SpaceSource::VisualFeatures)
        }
    }
}
