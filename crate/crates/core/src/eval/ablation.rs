use serde::{Deserialize, Serialize};

use super::{evaluate_checkpoint, EvalConfig, EvalReport};
use crate::data::PairDataset;
use crate::error::Result;
use crate::neighbor::NeighborTable;
use crate::scalar::Scalar;
use crate::semantic::SemanticSpace;
use crate::train::{train, EpochMetrics, Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoText,
    NoImg,
    Baseline,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::NoText, Self::NoImg, Self::Baseline];

    /// `base` with this variant's neighbor weights zeroed.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.objective = Objective::Combined;
        let w = &mut cfg.loss.weights;
        match self {
            Self::Full => {}
            Self::NoText => w.alpha_text = 0.0,
            Self::NoImg => w.beta_img = 0.0,
            Self::Baseline => {
                w.alpha_text = 0.0;
                w.beta_img = 0.0;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: EvalReport,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains and evaluates every variant with the same seed and data order.
pub fn run_ablation<T: Scalar>(
    dataset: &PairDataset<T>,
    neighbors: &NeighborTable,
    omega: &SemanticSpace<T>,
    base: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    AblationVariant::ALL
        .iter()
        .map(|&variant| {
            let outcome = train(dataset, Some(neighbors), &variant.apply(base))?;
            let report = evaluate_checkpoint(&outcome.checkpoint, dataset, omega, eval)?;
            Ok(AblationRow {
                variant,
                report,
                metrics: outcome.metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossWeights;

    #[test]
    fn variants_zero_the_right_weights() {
        let base = TrainConfig {
            loss: crate::loss::LossConfig {
                weights: LossWeights::angular_default(),
                ..Default::default()
            },
            objective: Objective::SymmetricOnly,
            ..Default::default()
        };
        let w = |v: AblationVariant| {
            let c = v.apply(&base);
            assert_eq!(c.objective, Objective::Combined);
            (c.loss.weights.alpha_text, c.loss.weights.beta_img)
        };
        assert_eq!(w(AblationVariant::Full), (0.2, 0.3));
        assert_eq!(w(AblationVariant::NoText), (0.0, 0.3));
        assert_eq!(w(AblationVariant::NoImg), (0.2, 0.0));
        assert_eq!(w(AblationVariant::Baseline), (0.0, 0.0));
    }
}
