use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, check_finite, dot, norm, FeatureVector, JointEmbedding, Modality, ZERO_NORM};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Projection head shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Linear,
    /// One ReLU hidden layer of the given width.
    Mlp { hidden: usize },
}

/// Affine layer `x ↦ xᵀW + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        check_dims(weight.cols(), bias.len())?;
        check_finite(weight.as_slice(), "layer weight")?;
        check_finite(&bias, "layer bias")?;
        Ok(Self { weight, bias })
    }

    fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Matrix::uniform(fan_in, fan_out, bound, rng),
            bias: vec![T::zero(); fan_out],
        }
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut z = self.weight.left_mul(x);
        for (o, &b) in z.iter_mut().zip(&self.bias) {
            *o += b;
        }
        z
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Hidden pre-activations, for the ReLU mask.
    hidden_pre: Option<Vec<T>>,
    pre_norm: T,
    pub output: Vec<T>,
}

/// Projection encoder for one modality, with an L2-normalized output.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    modality: Modality,
    architecture: Architecture,
    layers: Vec<Dense<T>>,
}

/// Gradients shaped like [`Encoder::tensors`].
pub type EncoderGrads<T> = Vec<Vec<T>>;

impl<T: Scalar> Encoder<T> {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng>(
        modality: Modality,
        input_dim: usize,
        output_dim: usize,
        architecture: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::ConfigInvalid(format!("encoder dims {input_dim}×{output_dim}")));
        }
        let layers = match architecture {
            Architecture::Linear => vec![Dense::xavier(input_dim, output_dim, rng)],
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::ConfigInvalid("hidden width must be positive".into()));
                }
                vec![Dense::xavier(input_dim, hidden, rng), Dense::xavier(hidden, output_dim, rng)]
            }
        };
        Ok(Self {
            modality,
            architecture,
            layers,
        })
    }

    /// A single linear layer with the given parameters.
    pub fn linear(modality: Modality, weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        Ok(Self {
            modality,
            architecture: Architecture::Linear,
            layers: vec![Dense::new(weight, bias)?],
        })
    }

    pub fn from_layers(modality: Modality, architecture: Architecture, layers: Vec<Dense<T>>) -> Result<Self> {
        let expected = match architecture {
            Architecture::Linear => 1,
            Architecture::Mlp { .. } => 2,
        };
        if layers.len() != expected {
            return Err(Error::ShapeMismatch(format!("{architecture:?} needs {expected} layers, got {}", layers.len())));
        }
        for pair in layers.windows(2) {
            check_dims(pair[0].weight.cols(), pair[1].weight.rows())?;
        }
        if let Architecture::Mlp { hidden } = architecture {
            check_dims(hidden, layers[0].weight.cols())?;
        }
        Ok(Self {
            modality,
            architecture,
            layers,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.cols()
    }

    /// Weight and bias of every layer, in order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// `(rows, cols)` of each tensor; biases are `(1, out)`.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.shape(), (1, l.bias.len())])
            .collect()
    }

    pub fn zero_grads(&self) -> EncoderGrads<T> {
        self.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect()
    }

    pub fn forward(&self, x: &[T]) -> Result<Forward<T>> {
        check_dims(self.input_dim(), x.len())?;
        let mut inputs = vec![x.to_vec()];
        let mut hidden_pre = None;
        let mut z = self.layers[0].apply(x);
        if self.layers.len() == 2 {
            let h: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
            hidden_pre = Some(z);
            z = self.layers[1].apply(&h);
            inputs.push(h);
        }
        let n = norm(&z);
        if !n.is_finite() {
            return Err(Error::NonFinite("encoder output".into()));
        }
        if n < T::c(ZERO_NORM) {
            return Err(Error::ZeroVector);
        }
        let output = z.iter().map(|&v| v / n).collect();
        Ok(Forward {
            inputs,
            hidden_pre,
            pre_norm: n,
            output,
        })
    }

    pub fn encode(&self, feature: &FeatureVector<T>) -> Result<JointEmbedding<T>> {
        let out = self.forward(feature.values())?.output;
        Ok(JointEmbedding::from_unit(out, self.modality)?)
    }

    /// Adds the parameter gradient of a loss with output gradient `grad_out`.
    pub fn backward(&self, fwd: &Forward<T>, grad_out: &[T], grads: &mut EncoderGrads<T>) {
        let y = &fwd.output;
        let proj = dot(y, grad_out);
        let mut dz: Vec<T> = grad_out
            .iter()
            .zip(y)
            .map(|(&g, &yv)| (g - yv * proj) / fwd.pre_norm)
            .collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = &fwd.inputs[li];
            let (gw, rest) = grads[2 * li..].split_at_mut(1);
            let mut gw_mat = Matrix::from_vec(layer.weight.rows(), layer.weight.cols(), std::mem::take(&mut gw[0]));
            gw_mat.add_outer(x, &dz, T::one());
            gw[0] = gw_mat.into_vec();
            for (b, &d) in rest[0].iter_mut().zip(&dz) {
                *b += d;
            }
            if li > 0 {
                let pre = fwd.hidden_pre.as_ref().expect("hidden layer cached");
                dz = layer
                    .weight
                    .right_mul(&dz)
                    .into_iter()
                    .zip(pre)
                    .map(|(g, &p)| if p > T::zero() { g } else { T::zero() })
                    .collect();
            }
        }
    }

    /// Copy with every parameter rounded to the nearest `f32`.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            round_slice_to_f32(t);
        }
        out
    }
}

pub(crate) fn round_slice_to_f32<T: Scalar>(values: &mut [T]) {
    for v in values {
        let f = v.to_f32().unwrap_or(f32::NAN);
        *v = T::from_f32(f).expect("f32 representable");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::gradcheck::{finite_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_projection() {
        let enc = Encoder::linear(Modality::Image, Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]), vec![0.0, 0.0]).unwrap();
        let f = FeatureVector::new(vec![3.0, 4.0], Modality::Image).unwrap();
        assert_eq!(enc.encode(&f).unwrap().values(), &[0.6, 0.8]);
        let g = FeatureVector::new(vec![30.0, 40.0], Modality::Image).unwrap();
        assert_eq!(enc.encode(&g).unwrap().values(), &[0.6, 0.8]);
        let z = FeatureVector::new(vec![0.0, 0.0], Modality::Image).unwrap();
        assert!(matches!(enc.encode(&z), Err(Error::ZeroVector)));
        let short = FeatureVector::new(vec![1.0], Modality::Image).unwrap();
        assert!(matches!(enc.encode(&short), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn xavier_bounds_and_unit_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc: Encoder<f64> = Encoder::new(Modality::Text, 30, 20, Architecture::Linear, &mut rng).unwrap();
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(enc.layers()[0].weight.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(enc.layers()[0].bias.iter().all(|&b| b == 0.0));
        for _ in 0..50 {
            let x: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = enc.forward(&x).unwrap().output;
            assert!((norm(&y) - 1.0).abs() < 1e-9);
        }
    }

    fn check_backward(architecture: Architecture, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc: Encoder<f64> = Encoder::new(Modality::Image, 6, 4, architecture, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // loss = Σ target·y + ‖y − target‖²
        let loss = |e: &Encoder<f64>| {
            let y = e.forward(&x).unwrap().output;
            dot(&y, &target) + y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let fwd = enc.forward(&x).unwrap();
        let g_out: Vec<f64> = fwd
            .output
            .iter()
            .zip(&target)
            .map(|(y, t)| t + 2.0 * (y - t))
            .collect();
        let mut grads = enc.zero_grads();
        enc.backward(&fwd, &g_out, &mut grads);
        for (ti, analytic) in grads.iter().enumerate() {
            let flat = enc.tensors()[ti].to_vec();
            let numeric = finite_difference(
                |w: &[f64]| {
                    let mut e = enc.clone();
                    e.tensors_mut()[ti].copy_from_slice(w);
                    loss(&e)
                },
                &flat,
                1e-6,
            );
            let err = relative_error(analytic, &numeric);
            assert!(err < 1e-5, "{architecture:?} tensor {ti}: {err}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            check_backward(Architecture::Linear, seed);
            check_backward(Architecture::Mlp { hidden: 24 }, seed);
        }
    }

    #[test]
    fn f32_rounding_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc: Encoder<f64> = Encoder::new(Modality::Text, 5, 3, Architecture::Mlp { hidden: 4 }, &mut rng).unwrap();
        let r = enc.rounded_to_f32();
        assert_ne!(r, enc);
        assert_eq!(r.rounded_to_f32(), r);
    }
}
