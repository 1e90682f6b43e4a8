use super::{accumulate_npairs, lookup, npairs_loss, BaseLoss, EmbeddingKey, EmbeddingTable, LossBundle, LossConfig, Tagged};
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which pairs form a batch, and the sampled semantic neighbor of each.
///
/// `neighbors[i]` belongs to `members[i]`. Neighbors need not be batch
/// members; their embeddings just have to be present in the table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchLayout {
    pub members: Vec<usize>,
    pub neighbors: Vec<Option<usize>>,
}

impl BatchLayout {
    pub fn without_neighbors(members: Vec<usize>) -> Self {
        let neighbors = vec![None; members.len()];
        Self { members, neighbors }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Every embedding key the combined objective reads.
    pub fn keys(&self) -> Vec<EmbeddingKey> {
        let mut keys: Vec<EmbeddingKey> = self
            .members
            .iter()
            .chain(self.neighbors.iter().flatten())
            .flat_map(|&id| [EmbeddingKey::image(id), EmbeddingKey::text(id)])
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }
}

fn in_batch_negatives<'a, T>(
    table: &'a EmbeddingTable<T>,
    members: &[usize],
    skip: usize,
    modality: Modality,
) -> Result<Vec<Tagged<'a, T>>> {
    members
        .iter()
        .filter(|&&j| j != skip)
        .map(|&j| lookup(table, EmbeddingKey { id: j, modality }))
        .collect()
}

fn batch_scale<T: Scalar>(n: usize) -> T {
    T::one() / T::from_usize(n).expect("batch size")
}

/// Image-anchored plus text-anchored N-pairs over every member, mean over anchors.
pub fn symmetric_npairs_loss<T: Scalar>(
    table: &EmbeddingTable<T>,
    members: &[usize],
    base: &BaseLoss,
) -> Result<LossBundle<T>> {
    if members.len() < 2 {
        return Err(Error::BatchTooSmall(members.len()));
    }
    let mut out = LossBundle::default();
    for &i in members {
        let negatives = in_batch_negatives(table, members, i, Modality::Text)?;
        let anchor = lookup(table, EmbeddingKey::image(i))?;
        let positive = lookup(table, EmbeddingKey::text(i))?;
        accumulate_npairs(&mut out, anchor, positive, &negatives, base, T::one())?;
    }
    for &i in members {
        let negatives = in_batch_negatives(table, members, i, Modality::Image)?;
        let anchor = lookup(table, EmbeddingKey::text(i))?;
        let positive = lookup(table, EmbeddingKey::image(i))?;
        accumulate_npairs(&mut out, anchor, positive, &negatives, base, T::one())?;
    }
    out.scale(batch_scale(members.len()));
    Ok(out)
}

fn same_modality_loss<T: Scalar>(
    modality: Modality,
    anchor: Tagged<'_, T>,
    neighbor: Tagged<'_, T>,
    negatives: &[Tagged<'_, T>],
    cfg: &LossConfig,
) -> Result<LossBundle<T>> {
    let wrong = std::iter::once(&anchor)
        .chain(std::iter::once(&neighbor))
        .chain(negatives)
        .any(|t| t.key.modality != modality);
    if wrong {
        return Err(Error::ShapeMismatch(format!(
            "{modality} neighbor loss given a non-{modality} embedding"
        )));
    }
    npairs_loss(anchor, neighbor, negatives, &cfg.base())
}

/// Pulls a text toward the text of its sampled semantic neighbor, pushing
/// away from in-batch texts.
pub fn text_neighbor_loss<T: Scalar>(
    y_anchor: Tagged<'_, T>,
    y_neighbor_positive: Tagged<'_, T>,
    y_negatives: &[Tagged<'_, T>],
    cfg: &LossConfig,
) -> Result<LossBundle<T>> {
    same_modality_loss(Modality::Text, y_anchor, y_neighbor_positive, y_negatives, cfg)
}

/// Pulls an image toward the image paired with its text's semantic neighbor.
pub fn image_neighbor_loss<T: Scalar>(
    x_anchor: Tagged<'_, T>,
    x_neighbor_positive: Tagged<'_, T>,
    x_negatives: &[Tagged<'_, T>],
    cfg: &LossConfig,
) -> Result<LossBundle<T>> {
    same_modality_loss(Modality::Image, x_anchor, x_neighbor_positive, x_negatives, cfg)
}

fn neighbor_sum<T: Scalar>(
    table: &EmbeddingTable<T>,
    layout: &BatchLayout,
    modality: Modality,
    cfg: &LossConfig,
) -> Result<LossBundle<T>> {
    let mut out = LossBundle::default();
    for (&i, nb) in layout.members.iter().zip(&layout.neighbors) {
        let nb = nb.ok_or(Error::MissingNeighborAssignment(i))?;
        let anchor = lookup(table, EmbeddingKey { id: i, modality })?;
        let positive = lookup(table, EmbeddingKey { id: nb, modality })?;
        let negatives = in_batch_negatives(table, &layout.members, i, modality)?;
        let term = same_modality_loss(modality, anchor, positive, &negatives, cfg)?;
        out.add_scaled(&term, T::one());
    }
    out.scale(batch_scale(layout.len()));
    Ok(out)
}

/// Symmetric cross-modal N-pairs plus `alpha_text`·text-neighbor and
/// `beta_img`·image-neighbor terms.
///
/// A zero weight skips its term entirely, so weights (0, 0) give exactly the
/// symmetric baseline.
pub fn combined_loss<T: Scalar>(
    table: &EmbeddingTable<T>,
    layout: &BatchLayout,
    cfg: &LossConfig,
) -> Result<LossBundle<T>> {
    if layout.neighbors.len() != layout.members.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} members but {} neighbor slots",
            layout.members.len(),
            layout.neighbors.len()
        )));
    }
    if let Some(pos) = layout.neighbors.iter().position(Option::is_none) {
        return Err(Error::MissingNeighborAssignment(layout.members[pos]));
    }
    let mut out = symmetric_npairs_loss(table, &layout.members, &cfg.base())?;
    let w = &cfg.weights;
    if w.alpha_text != 0.0 {
        let text = neighbor_sum(table, layout, Modality::Text, cfg)?;
        out.add_scaled(&text, T::c(w.alpha_text));
    }
    if w.beta_img != 0.0 {
        let img = neighbor_sum(table, layout, Modality::Image, cfg)?;
        out.add_scaled(&img, T::c(w.beta_img));
    }
    Ok(out)
}
