//! Retrieval and neighborhood metrics over a trained joint space.

mod ablation;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, AblationRow, AblationVariant};

use crate::data::{split_dataset, PairDataset};
use crate::embedding::{squared_euclidean_unchecked, Modality};
use crate::error::{Error, Result};
use crate::io::write_json_file;
use crate::neighbor::{build_index, IndexConfig, Metric, NeighborTable};
use crate::scalar::Scalar;
use crate::semantic::{SemanticSpace, SpaceSource};
use crate::train::{embed_positions, Checkpoint};

/// Image and text embeddings of the same pairs, keyed by pair id.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpace<T> {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    image: Vec<Vec<T>>,
    text: Vec<Vec<T>>,
}

impl<T: Scalar> JointSpace<T> {
    pub fn new(ids: Vec<String>, image: Vec<Vec<T>>, text: Vec<Vec<T>>) -> Result<Self> {
        if image.len() != ids.len() || text.len() != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids, {} image and {} text embeddings",
                ids.len(),
                image.len(),
                text.len()
            )));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            positions,
            image,
            text,
        })
    }

    /// Embeds the given dataset positions with a checkpoint's encoders.
    pub fn from_checkpoint(checkpoint: &Checkpoint<T>, dataset: &PairDataset<T>, positions: &[usize]) -> Result<Self> {
        let ids = positions.iter().map(|&p| dataset.ids()[p].clone()).collect();
        let image = embed_positions(&checkpoint.image_encoder, dataset, positions)?;
        let text = embed_positions(&checkpoint.text_encoder, dataset, positions)?;
        Self::new(ids, image, text)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn embeddings(&self, modality: Modality) -> &[Vec<T>] {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    /// One modality as a space, for neighbor queries.
    pub fn space(&self, modality: Modality) -> Result<SemanticSpace<T>> {
        SemanticSpace::new(self.ids.clone(), self.embeddings(modality).to_vec(), SpaceSource::ExternalFile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub direction: Direction,
    pub way_count: usize,
    /// Trials per query; every pair serves as a query.
    pub trials: usize,
    pub seed: u64,
}

/// Fraction of trials in which the true partner is the nearest of itself
/// and `way_count − 1` random distractors.
///
/// Distractors are drawn uniformly without replacement from the other
/// pairs. Equal distances go to the smaller id.
pub fn nway_recall_at_1<T: Scalar>(space: &JointSpace<T>, task: &RetrievalTask) -> Result<f64> {
    if task.way_count < 2 || task.trials == 0 {
        return Err(Error::ConfigInvalid(format!("retrieval task {task:?}")));
    }
    let n = space.len();
    if n < task.way_count {
        return Err(Error::TooFewDistractors {
            needed: task.way_count - 1,
            available: n.saturating_sub(1),
        });
    }
    let queries = space.embeddings(task.direction.query_modality());
    let targets = space.embeddings(task.direction.query_modality().other());
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut hits = 0usize;
    for q in 0..n {
        for _ in 0..task.trials {
            let best = rand::seq::index::sample(&mut rng, n - 1, task.way_count - 1)
                .into_iter()
                .map(|j| if j >= q { j + 1 } else { j })
                .chain(std::iter::once(q))
                .map(|j| (squared_euclidean_unchecked(&queries[q], &targets[j]), j))
                .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then_with(|| space.ids[a.1].cmp(&space.ids[b.1])))
                .expect("at least two candidates");
            if best.1 == q {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (n * task.trials) as f64)
}

/// Mean fraction of each sample's `k` nearest neighbors in `omega` that are
/// also among its `k` nearest in `m`. `k` is capped at `n − 1`.
pub fn preservation_score<T: Scalar>(
    m: &SemanticSpace<T>,
    omega: &SemanticSpace<T>,
    k: usize,
    omega_metric: Metric,
) -> Result<f64> {
    if m.len() != omega.len() {
        return Err(Error::IdMismatch(format!("{} embeddings against {} semantic vectors", m.len(), omega.len())));
    }
    let omega = omega.select(m.ids()).map_err(|e| match e {
        Error::UnknownId(id) => Error::IdMismatch(format!("{id:?} has no semantic vector")),
        e => e,
    })?;
    if m.len() < 2 || k == 0 {
        return Err(Error::TooFewVectors(m.len()));
    }
    let k = k.min(m.len() - 1);
    let exact = |metric| IndexConfig {
        metric,
        ..Default::default()
    };
    let m_table = build_index(m, &exact(Metric::Euclidean))?.build_table(k, Default::default());
    let o_table = build_index(&omega, &exact(omega_metric))?.build_table(k, Default::default());
    // Both indexes share id order, so positions agree.
    let mut total = 0.0;
    for (mr, or) in m_table.rows().iter().zip(o_table.rows()) {
        let shared = or.neighbors.iter().filter(|j| mr.neighbors.contains(j)).count();
        total += shared as f64 / or.len() as f64;
    }
    Ok(total / m.len() as f64)
}

/// Distances of one same-modality pair under two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub modality: Modality,
    pub id_a: String,
    pub id_b: String,
    pub distance_a: f64,
    pub distance_b: f64,
    pub ratio: f64,
}

/// Draws `count` (sample, semantic neighbor) id pairs from a neighbor table.
pub fn sample_omega_pairs<R: Rng + ?Sized>(table: &NeighborTable, count: usize, rng: &mut R) -> Result<Vec<(String, String)>> {
    if table.ids().is_empty() {
        return Err(Error::TooFewVectors(0));
    }
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..table.ids().len());
            let j = crate::neighbor::sample_neighbor_pair(table, i, rng)?;
            Ok((table.ids()[i].clone(), table.ids()[j].clone()))
        })
        .collect()
}

/// Euclidean distance ratio `d_A / d_B` for each pair, smallest first.
///
/// A pair at distance zero in both models has ratio 1. Ties are ordered by
/// the pair's ids.
pub fn distance_ratio_analysis<T: Scalar>(
    model_a: &JointSpace<T>,
    model_b: &JointSpace<T>,
    pairs: &[(String, String)],
    modality: Modality,
) -> Result<Vec<RatioEntry>> {
    let dist = |space: &JointSpace<T>, a: &str, b: &str| -> Result<f64> {
        let pa = space.position(a).ok_or_else(|| Error::IdMismatch(format!("{a:?} missing from a model")))?;
        let pb = space.position(b).ok_or_else(|| Error::IdMismatch(format!("{b:?} missing from a model")))?;
        let e = space.embeddings(modality);
        Ok(squared_euclidean_unchecked(&e[pa], &e[pb]).to_f64_lossy().sqrt())
    };
    let mut out = pairs
        .iter()
        .map(|(a, b)| {
            let da = dist(model_a, a, b)?;
            let db = dist(model_b, a, b)?;
            let ratio = if da == 0.0 && db == 0.0 { 1.0 } else { da / db };
            Ok(RatioEntry {
                modality,
                id_a: a.clone(),
                id_b: b.clone(),
                distance_a: da,
                distance_b: db,
                ratio,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|x, y| {
        x.ratio
            .total_cmp(&y.ratio)
            .then_with(|| x.id_a.cmp(&y.id_a))
            .then_with(|| x.id_b.cmp(&y.id_b))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub way_count: usize,
    pub trials: usize,
    /// Neighborhood size for the preservation score.
    pub preservation_k: usize,
    pub omega_metric: Metric,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            way_count: 5,
            trials: 1,
            preservation_k: 200,
            omega_metric: Metric::Euclidean,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub way_count: usize,
    pub recall_image_to_text: f64,
    pub recall_text_to_image: f64,
    pub preservation_image: f64,
    pub preservation_text: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// One line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub direction: Direction,
    pub way_count: usize,
    pub recall_at_1: f64,
    pub preservation_image: f64,
    pub preservation_text: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl EvalReport {
    pub fn mean_recall(&self) -> f64 {
        (self.recall_image_to_text + self.recall_text_to_image) / 2.0
    }

    pub fn mean_preservation(&self) -> f64 {
        (self.preservation_image + self.preservation_text) / 2.0
    }

    pub fn records(&self) -> Vec<ReportRecord> {
        [
            (Direction::ImageToText, self.recall_image_to_text),
            (Direction::TextToImage, self.recall_text_to_image),
        ]
        .into_iter()
        .map(|(direction, recall_at_1)| ReportRecord {
            direction,
            way_count: self.way_count,
            recall_at_1,
            preservation_image: self.preservation_image,
            preservation_text: self.preservation_text,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        })
        .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_file(path, &self.records())
    }
}

/// Recall in both directions and preservation in both modalities.
pub fn evaluate_space<T: Scalar>(
    space: &JointSpace<T>,
    omega: &SemanticSpace<T>,
    config: &EvalConfig,
    config_hash: &str,
) -> Result<EvalReport> {
    let task = |direction| RetrievalTask {
        direction,
        way_count: config.way_count,
        trials: config.trials,
        seed: config.seed,
    };
    let omega = omega.select(space.ids()).map_err(|e| match e {
        Error::UnknownId(id) => Error::IdMismatch(format!("{id:?} has no semantic vector")),
        e => e,
    })?;
    let preserve = |m| preservation_score(&space.space(m)?, &omega, config.preservation_k, config.omega_metric);
    Ok(EvalReport {
        way_count: config.way_count,
        recall_image_to_text: nway_recall_at_1(space, &task(Direction::ImageToText))?,
        recall_text_to_image: nway_recall_at_1(space, &task(Direction::TextToImage))?,
        preservation_image: preserve(Modality::Image)?,
        preservation_text: preserve(Modality::Text)?,
        seed: config.seed,
        config_hash: config_hash.to_string(),
    })
}

/// Evaluates a checkpoint on the test split it was trained with.
pub fn evaluate_checkpoint<T: Scalar>(
    checkpoint: &Checkpoint<T>,
    dataset: &PairDataset<T>,
    omega: &SemanticSpace<T>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let split = split_dataset(dataset.len(), checkpoint.config.split, checkpoint.config.seed)?;
    let space = JointSpace::from_checkpoint(checkpoint, dataset, &split.test)?;
    evaluate_space(&space, omega, config, &checkpoint.config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2_normalize;
    use rand_distr::{Distribution, StandardNormal};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i:05}")).collect()
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect()
    }

    fn task(direction: Direction, way_count: usize, trials: usize) -> RetrievalTask {
        RetrievalTask {
            direction,
            way_count,
            trials,
            seed: 7,
        }
    }

    #[test]
    fn identical_pairs_recall_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = random_unit(&mut rng, 50, 8);
        let s = JointSpace::new(ids(50), e.clone(), e).unwrap();
        for d in [Direction::ImageToText, Direction::TextToImage] {
            assert_eq!(nway_recall_at_1(&s, &task(d, 20, 3)).unwrap(), 1.0);
        }
    }

    #[test]
    fn adversarial_distractor_recall_zero() {
        // Every text sits far from its image, but next to the next image.
        let n = 10;
        let image: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 10.0, 0.0]).collect();
        let text: Vec<Vec<f64>> = (0..n).map(|i| vec![((i + 1) % n) as f64 * 10.0, 5.0]).collect();
        let s = JointSpace::new(ids(n), image, text).unwrap();
        assert_eq!(nway_recall_at_1(&s, &task(Direction::TextToImage, n, 1)).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        // Partner and distractor equidistant: the smaller id wins.
        let s = JointSpace::new(vec!["a".into(), "b".into()], vec![vec![0.0], vec![0.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let r = nway_recall_at_1(&s, &task(Direction::ImageToText, 2, 1)).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let s = JointSpace::new(ids(n), random_unit(&mut rng, n, 16), random_unit(&mut rng, n, 16)).unwrap();
        let r = nway_recall_at_1(&s, &task(Direction::ImageToText, 5, 1)).unwrap();
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        assert!((r - 0.2).abs() < 3.0 * sigma, "{r}");
    }

    #[test]
    fn too_few_distractors() {
        let s = JointSpace::new(ids(4), vec![vec![1.0]; 4], vec![vec![1.0]; 4]).unwrap();
        assert!(matches!(
            nway_recall_at_1(&s, &task(Direction::ImageToText, 5, 1)),
            Err(Error::TooFewDistractors { needed: 4, available: 3 })
        ));
    }

    #[test]
    fn recall_invariant_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_unit(&mut rng, 200, 2);
        let txt = random_unit(&mut rng, 200, 2);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = |v: &Vec<f64>| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let a = JointSpace::new(ids(200), img.clone(), txt.clone()).unwrap();
        let b = JointSpace::new(ids(200), img.iter().map(rot).collect(), txt.iter().map(rot).collect()).unwrap();
        let t = task(Direction::TextToImage, 5, 4);
        assert_eq!(nway_recall_at_1(&a, &t).unwrap(), nway_recall_at_1(&b, &t).unwrap());
    }

    fn space(v: Vec<Vec<f64>>) -> SemanticSpace<f64> {
        SemanticSpace::new(ids(v.len()), v, SpaceSource::ExternalFile).unwrap()
    }

    #[test]
    fn preservation_identity_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let k = 20;
        let omega = random_unit(&mut rng, n, 8);
        assert_eq!(preservation_score(&space(omega.clone()), &space(omega.clone()), k, Metric::Euclidean).unwrap(), 1.0);

        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| omega[i].clone()).collect();
        let score = preservation_score(&space(shuffled), &space(omega), k, Metric::Euclidean).unwrap();
        let p = k as f64 / (n - 1) as f64;
        // Per-sample overlap is hypergeometric; average over n samples.
        let var = p * (1.0 - p) * ((n - 1 - k) as f64 / (n - 2) as f64) / k as f64;
        let sigma = (var / n as f64).sqrt();
        assert!((score - p).abs() < 3.0 * sigma, "{score} vs {p} ± {sigma}");
    }

    #[test]
    fn preservation_rotation_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omega = random_unit(&mut rng, 300, 3);
        let rotated: Vec<Vec<f64>> = omega.iter().map(|v| vec![v[1], -v[0], v[2]]).collect();
        assert_eq!(preservation_score(&space(rotated), &space(omega.clone()), 10, Metric::Euclidean).unwrap(), 1.0);

        // Swapping in more random vectors never helps.
        let mut last = 1.0;
        let mut m = omega.clone();
        let fresh = random_unit(&mut rng, 300, 3);
        for step in 1..=5 {
            for i in (step - 1) * 60..step * 60 {
                m[i] = fresh[i].clone();
            }
            let s = preservation_score(&space(m.clone()), &space(omega.clone()), 10, Metric::Euclidean).unwrap();
            assert!(s <= last + 0.02, "{s} > {last}");
            last = s;
        }
        assert!(last < 0.2);
    }

    #[test]
    fn preservation_truncates_k_and_checks_ids() {
        let a = space(vec![vec![0.0], vec![1.0], vec![5.0]]);
        assert_eq!(preservation_score(&a, &a, 200, Metric::Euclidean).unwrap(), 1.0);
        let b = SemanticSpace::new(vec!["x".into(), "y".into(), "z".into()], vec![vec![0.0]; 3], SpaceSource::ExternalFile).unwrap();
        assert!(matches!(
            preservation_score(&a, &b, 2, Metric::Euclidean),
            Err(Error::IdMismatch(_))
        ));
    }

    #[test]
    fn distance_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let img = random_unit(&mut rng, n, 4);
        let txt = random_unit(&mut rng, n, 4);
        let a = JointSpace::new(ids(n), img.clone(), txt.clone()).unwrap();
        let pairs: Vec<(String, String)> = (0..200)
            .map(|_| {
                let i = rng.random_range(0..n);
                let j = (i + 1 + rng.random_range(0..n - 1)) % n;
                (ids(n)[i].clone(), ids(n)[j].clone())
            })
            .collect();
        let same = distance_ratio_analysis(&a, &a, &pairs, Modality::Image).unwrap();
        assert!(same.iter().all(|e| e.ratio == 1.0));
        assert!(same.windows(2).all(|w| (&w[0].id_a, &w[0].id_b) <= (&w[1].id_a, &w[1].id_b)));

        let half = |v: &Vec<Vec<f64>>| v.iter().map(|x| x.iter().map(|y| y * 0.5).collect()).collect();
        let h = JointSpace::new(ids(n), half(&img), half(&txt)).unwrap();
        let r = distance_ratio_analysis(&h, &a, &pairs, Modality::Text).unwrap();
        assert!(r.iter().all(|e| e.ratio == 0.5));

        // Brute-force oracle for the top ten.
        let b = JointSpace::new(ids(n), random_unit(&mut rng, n, 4), txt).unwrap();
        let got = distance_ratio_analysis(&a, &b, &pairs, Modality::Image).unwrap();
        let mut oracle: Vec<(f64, String, String)> = pairs
            .iter()
            .map(|(x, y)| {
                let (i, j) = (a.position(x).unwrap(), a.position(y).unwrap());
                let d = |e: &[Vec<f64>]| e[i].iter().zip(&e[j]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                (d(&img) / d(b.embeddings(Modality::Image)), x.clone(), y.clone())
            })
            .collect();
        oracle.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (g, o) in got.iter().zip(&oracle).take(10) {
            assert_eq!((&g.id_a, &g.id_b), (&o.1, &o.2));
            assert!((g.ratio - o.0).abs() < 1e-12);
        }

        assert!(matches!(
            distance_ratio_analysis(&a, &a, &[("nope".into(), ids(n)[0].clone())], Modality::Image),
            Err(Error::IdMismatch(_))
        ));
    }

    #[test]
    fn report_records() {
        let r = EvalReport {
            way_count: 5,
            recall_image_to_text: 0.5,
            recall_text_to_image: 0.25,
            preservation_image: 0.1,
            preservation_text: 0.2,
            seed: 3,
            config_hash: "abc".into(),
        };
        let v = serde_json::to_value(r.records()).unwrap();
        assert_eq!(v[0]["direction"], "image_to_text");
        assert_eq!(v[1]["recall_at_1"], 0.25);
        assert_eq!(v[1]["config_hash"], "abc");
        assert!((r.mean_recall() - 0.375).abs() < 1e-15);
    }
}
