//! Loss values and analytic gradients.
//!
//! Single-triple losses ([`triplet_loss`], [`angular_loss`]) and their N-pairs
//! extension ([`npairs_loss`]) live here; batch-level objectives (symmetric,
//! neighbor and combined) live in [`batch`]. Every function returns a
//! [`LossBundle`]: the scalar value plus the gradient with respect to every
//! embedding that took part, keyed by sample id and modality.

mod batch;
pub mod gradcheck;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, squared_euclidean_unchecked, Modality};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use batch::{
    combined_loss, image_neighbor_loss, symmetric_npairs_loss, text_neighbor_loss, BatchLayout,
};

/// Identifies one embedding in a batch: the pair index plus which side of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbeddingKey {
    pub id: usize,
    pub modality: Modality,
}

impl EmbeddingKey {
    pub fn image(id: usize) -> Self {
        Self {
            id,
            modality: Modality::Image,
        }
    }

    pub fn text(id: usize) -> Self {
        Self {
            id,
            modality: Modality::Text,
        }
    }
}

/// Joint-space embeddings of everything a batch touches.
pub type EmbeddingTable<T> = BTreeMap<EmbeddingKey, Vec<T>>;

/// Borrowed embedding with its key.
#[derive(Debug, Clone, Copy)]
pub struct Tagged<'a, T> {
    pub key: EmbeddingKey,
    pub values: &'a [T],
}

impl<'a, T> Tagged<'a, T> {
    pub fn new(key: EmbeddingKey, values: &'a [T]) -> Self {
        Self { key, values }
    }
}

pub(crate) fn lookup<'a, T>(table: &'a EmbeddingTable<T>, key: EmbeddingKey) -> Result<Tagged<'a, T>> {
    table
        .get(&key)
        .map(|v| Tagged::new(key, v.as_slice()))
        .ok_or(Error::MissingEmbedding {
            id: key.id,
            modality: key.modality.as_str(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.2 }
    }
}

/// Angular margin, given as tan² of the angle bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AngularConfig {
    pub tan_sq_alpha: f64,
}

impl Default for AngularConfig {
    fn default() -> Self {
        Self { tan_sq_alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Triplet,
    #[default]
    Angular,
}

/// Weights of the within-modality neighbor terms, and the triple loss every
/// term is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha_text: f64,
    pub beta_img: f64,
    pub base: BaseKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::angular_default()
    }
}

impl LossWeights {
    /// α=0.2, β=0.3 on the angular base.
    pub fn angular_default() -> Self {
        Self {
            alpha_text: 0.2,
            beta_img: 0.3,
            base: BaseKind::Angular,
        }
    }

    /// α=0.3, β=0.1 on the triplet base.
    pub fn triplet_default() -> Self {
        Self {
            alpha_text: 0.3,
            beta_img: 0.1,
            base: BaseKind::Triplet,
        }
    }

    pub fn baseline(base: BaseKind) -> Self {
        Self {
            alpha_text: 0.0,
            beta_img: 0.0,
            base,
        }
    }
}

/// Everything needed to evaluate any objective in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub triplet: TripletConfig,
    pub angular: AngularConfig,
}

impl LossConfig {
    pub fn base(&self) -> BaseLoss {
        match self.weights.base {
            BaseKind::Triplet => BaseLoss::Triplet(self.triplet),
            BaseKind::Angular => BaseLoss::Angular(self.angular),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ok = w.alpha_text.is_finite()
            && w.alpha_text >= 0.0
            && w.beta_img.is_finite()
            && w.beta_img >= 0.0
            && self.triplet.margin.is_finite()
            && self.triplet.margin >= 0.0
            && self.angular.tan_sq_alpha.is_finite()
            && self.angular.tan_sq_alpha > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!("loss config {self:?}")))
        }
    }
}

/// The triple loss an N-pairs term is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseLoss {
    Triplet(TripletConfig),
    Angular(AngularConfig),
}

impl BaseLoss {
    pub fn evaluate<T: Scalar>(
        &self,
        anchor: Tagged<'_, T>,
        positive: Tagged<'_, T>,
        negative: Tagged<'_, T>,
    ) -> Result<LossBundle<T>> {
        match self {
            BaseLoss::Triplet(cfg) => triplet_loss(anchor, positive, negative, cfg),
            BaseLoss::Angular(cfg) => angular_loss(anchor, positive, negative, cfg),
        }
    }

    fn term<T: Scalar>(&self, a: &[T], p: &[T], n: &[T]) -> TripleTerm<T> {
        match self {
            BaseLoss::Triplet(cfg) => triplet_term(a, p, n, T::c(cfg.margin)),
            BaseLoss::Angular(cfg) => angular_term(a, p, n, T::c(cfg.tan_sq_alpha)),
        }
    }
}

/// Scalar loss plus gradients for every participating embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle<T> {
    pub value: T,
    pub gradients: BTreeMap<EmbeddingKey, Vec<T>>,
}

impl<T: Scalar> Default for LossBundle<T> {
    fn default() -> Self {
        Self {
            value: T::zero(),
            gradients: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> LossBundle<T> {
    pub fn gradient(&self, key: EmbeddingKey) -> Option<&[T]> {
        self.gradients.get(&key).map(Vec::as_slice)
    }

    /// Registers `key` as a participant without changing its gradient.
    fn touch(&mut self, key: EmbeddingKey, dim: usize) {
        self.gradients
            .entry(key)
            .or_insert_with(|| vec![T::zero(); dim]);
    }

    fn add_gradient(&mut self, key: EmbeddingKey, grad: &[T], scale: T) {
        let slot = self
            .gradients
            .entry(key)
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        for (s, &g) in slot.iter_mut().zip(grad) {
            *s += scale * g;
        }
    }

    /// `self += scale * other`, value and gradients.
    pub fn add_scaled(&mut self, other: &LossBundle<T>, scale: T) {
        self.value += scale * other.value;
        for (key, grad) in &other.gradients {
            self.add_gradient(*key, grad, scale);
        }
    }

    fn add_term(&mut self, keys: [EmbeddingKey; 3], term: &TripleTerm<T>, scale: T) {
        self.value += scale * term.value;
        match &term.grads {
            Some(grads) => {
                for (key, grad) in keys.iter().zip(grads) {
                    self.add_gradient(*key, grad, scale);
                }
            }
            None => {
                for key in keys {
                    self.touch(key, term.dim);
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.value *= s;
        for g in self.gradients.values_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
}

/// One evaluated hinge term; `grads` is `None` when the hinge is inactive.
struct TripleTerm<T> {
    value: T,
    dim: usize,
    grads: Option<[Vec<T>; 3]>,
}

fn triplet_term<T: Scalar>(a: &[T], p: &[T], n: &[T], margin: T) -> TripleTerm<T> {
    let pre = squared_euclidean_unchecked(a, p) - squared_euclidean_unchecked(a, n) + margin;
    if pre <= T::zero() {
        return TripleTerm {
            value: T::zero(),
            dim: a.len(),
            grads: None,
        };
    }
    let two = T::c(2.0);
    // d/da = 2(n - p), d/dp = 2(p - a), d/dn = 2(a - n)
    let ga = n.iter().zip(p).map(|(&nn, &pp)| two * (nn - pp)).collect();
    let gp = p.iter().zip(a).map(|(&pp, &aa)| two * (pp - aa)).collect();
    let gn = a.iter().zip(n).map(|(&aa, &nn)| two * (aa - nn)).collect();
    TripleTerm {
        value: pre,
        dim: a.len(),
        grads: Some([ga, gp, gn]),
    }
}

fn angular_term<T: Scalar>(a: &[T], p: &[T], n: &[T], tan_sq: T) -> TripleTerm<T> {
    let half = T::c(0.5);
    let four_t = T::c(4.0) * tan_sq;
    let mut ap = T::zero();
    let mut nc = T::zero();
    for ((&aa, &pp), &nn) in a.iter().zip(p).zip(n) {
        let d = aa - pp;
        let e = nn - half * (aa + pp);
        ap += d * d;
        nc += e * e;
    }
    let pre = ap - four_t * nc;
    if pre <= T::zero() {
        return TripleTerm {
            value: T::zero(),
            dim: a.len(),
            grads: None,
        };
    }
    let two = T::c(2.0);
    let eight_t = T::c(8.0) * tan_sq;
    let mut ga = Vec::with_capacity(a.len());
    let mut gp = Vec::with_capacity(a.len());
    let mut gn = Vec::with_capacity(a.len());
    for ((&aa, &pp), &nn) in a.iter().zip(p).zip(n) {
        let d = aa - pp;
        let e = nn - half * (aa + pp);
        // C = (a + p) / 2 contributes +4t(n - C) to both a and p.
        ga.push(two * d + four_t * e);
        gp.push(-two * d + four_t * e);
        gn.push(-eight_t * e);
    }
    TripleTerm {
        value: pre,
        dim: a.len(),
        grads: Some([ga, gp, gn]),
    }
}

fn check_triple<T>(a: &Tagged<'_, T>, p: &Tagged<'_, T>, n: &Tagged<'_, T>) -> Result<()> {
    check_dims(a.values.len(), p.values.len())?;
    check_dims(a.values.len(), n.values.len())
}

/// `[‖a−p‖² − ‖a−n‖² + m]₊`.
///
/// The hinge is inactive (zero gradient) when the bracket is exactly zero.
pub fn triplet_loss<T: Scalar>(
    anchor: Tagged<'_, T>,
    positive: Tagged<'_, T>,
    negative: Tagged<'_, T>,
    cfg: &TripletConfig,
) -> Result<LossBundle<T>> {
    check_triple(&anchor, &positive, &negative)?;
    let term = triplet_term(anchor.values, positive.values, negative.values, T::c(cfg.margin));
    let mut out = LossBundle::default();
    out.add_term([anchor.key, positive.key, negative.key], &term, T::one());
    Ok(out)
}

/// `[‖a−p‖² − 4·tan²α·‖n−C‖²]₊` with `C = (a+p)/2`.
pub fn angular_loss<T: Scalar>(
    anchor: Tagged<'_, T>,
    positive: Tagged<'_, T>,
    negative: Tagged<'_, T>,
    cfg: &AngularConfig,
) -> Result<LossBundle<T>> {
    check_triple(&anchor, &positive, &negative)?;
    let term = angular_term(
        anchor.values,
        positive.values,
        negative.values,
        T::c(cfg.tan_sq_alpha),
    );
    let mut out = LossBundle::default();
    out.add_term([anchor.key, positive.key, negative.key], &term, T::one());
    Ok(out)
}

/// Sum of `base(anchor, positive, n)` over every negative `n`.
pub fn npairs_loss<T: Scalar>(
    anchor: Tagged<'_, T>,
    positive: Tagged<'_, T>,
    negatives: &[Tagged<'_, T>],
    base: &BaseLoss,
) -> Result<LossBundle<T>> {
    let mut out = LossBundle::default();
    accumulate_npairs(&mut out, anchor, positive, negatives, base, T::one())?;
    Ok(out)
}

pub(crate) fn accumulate_npairs<T: Scalar>(
    out: &mut LossBundle<T>,
    anchor: Tagged<'_, T>,
    positive: Tagged<'_, T>,
    negatives: &[Tagged<'_, T>],
    base: &BaseLoss,
    scale: T,
) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    for neg in negatives {
        if neg.key.id == anchor.key.id {
            return Err(Error::InvalidNegative {
                negative: neg.key.id,
            });
        }
        check_triple(&anchor, &positive, neg)?;
    }
    for neg in negatives {
        let term = base.term(anchor.values, positive.values, neg.values);
        out.add_term([anchor.key, positive.key, neg.key], &term, scale);
    }
    Ok(())
}
