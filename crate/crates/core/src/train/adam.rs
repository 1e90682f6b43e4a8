use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], moments: &mut Moments<T>, hyper: &AdamHyper) -> Result<()> {
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            moments.m.len(),
            moments.v.len()
        )));
    }
    moments.step += 1;
    let t = moments.step as i32;
    let (b1, b2) = (T::c(hyper.beta1), T::c(hyper.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps, wd) = (T::c(hyper.learning_rate), T::c(hyper.epsilon), T::c(hyper.weight_decay));
    for (((w, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        let g = g + wd * *w;
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_moves_only_by_decay() {
        let mut w = vec![1.0, -2.0, 0.0];
        let mut mo = Moments::zeros(3);
        let hyper = AdamHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut w, &[0.0; 3], &mut mo, &hyper).unwrap();
        assert_eq!(w, vec![1.0, -2.0, 0.0]);

        let hyper = AdamHyper {
            weight_decay: 0.1,
            learning_rate: 1e-3,
            ..Default::default()
        };
        adam_step(&mut w, &[0.0; 3], &mut Moments::zeros(3), &hyper).unwrap();
        assert!(w[0] < 1.0 && w[1] > -2.0);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let g: [f64; 3] = [0.5, -3.0, 1e-2];
        let mut w = vec![0.0; 3];
        let hyper = AdamHyper {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut w, &g, &mut Moments::zeros(3), &hyper).unwrap();
        for (wi, gi) in w.iter().zip(g) {
            assert!((wi + 0.01 * gi.signum()).abs() < 1e-7, "{wi}");
        }
    }

    #[test]
    fn descends_quadratic() {
        let mut w = vec![1.0, -0.5, 2.0];
        let mut mo = Moments::zeros(3);
        let hyper = AdamHyper {
            learning_rate: 0.05,
            ..Default::default()
        };
        let f = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>();
        let mut last = f(&w);
        for _ in 0..10 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut w, &g, &mut mo, &hyper).unwrap();
            let now = f(&w);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut w = vec![0.0; 3];
        assert!(matches!(
            adam_step(&mut w, &[0.0; 2], &mut Moments::zeros(3), &AdamHyper::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
