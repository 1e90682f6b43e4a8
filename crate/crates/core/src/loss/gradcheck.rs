//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use std::collections::BTreeMap;

use super::{EmbeddingKey, EmbeddingTable};
use crate::scalar::Scalar;

fn check_step<T: Scalar>(h: T) {
    let h = h.to_f64_lossy();
    assert!(
        (1e-7..=1e-3).contains(&h),
        "finite-difference step {h} outside [1e-7, 1e-3]"
    );
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    check_step(h);
    let two_h = h + h;
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

/// Central-difference gradient of `f` with respect to every entry of `table`.
pub fn finite_difference_gradient<T: Scalar>(
    f: impl Fn(&EmbeddingTable<T>) -> T,
    table: &EmbeddingTable<T>,
    h: T,
) -> BTreeMap<EmbeddingKey, Vec<T>> {
    check_step(h);
    let two_h = h + h;
    let mut probe = table.clone();
    let keys: Vec<EmbeddingKey> = table.keys().copied().collect();
    let mut out = BTreeMap::new();
    for key in keys {
        let dim = probe[&key].len();
        let mut grad = Vec::with_capacity(dim);
        for i in 0..dim {
            let orig = probe[&key][i];
            probe.get_mut(&key).unwrap()[i] = orig + h;
            let up = f(&probe);
            probe.get_mut(&key).unwrap()[i] = orig - h;
            let down = f(&probe);
            probe.get_mut(&key).unwrap()[i] = orig;
            grad.push((up - down) / two_h);
        }
        out.insert(key, grad);
    }
    out
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)` for one gradient vector; zero when both vanish.
pub fn relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let (a, n) = (a.to_f64_lossy(), n.to_f64_lossy());
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst [`relative_error`] over all keys of `numeric`.
///
/// A key missing from `analytic` counts as an all-zero analytic gradient.
pub fn max_relative_error<T: Scalar>(
    analytic: &BTreeMap<EmbeddingKey, Vec<T>>,
    numeric: &BTreeMap<EmbeddingKey, Vec<T>>,
) -> f64 {
    numeric
        .iter()
        .map(|(key, num)| match analytic.get(key) {
            Some(an) => relative_error(an, num),
            None => relative_error(&vec![T::zero(); num.len()], num),
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_difference(|v: &[f64]| v.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant() {
        let g = finite_difference(|_: &[f64]| 3.5, &[1.0, -2.0, 0.0], 1e-4);
        assert_eq!(g, vec![0.0; 3]);
        let mut table = EmbeddingTable::new();
        table.insert(EmbeddingKey::image(0), vec![1.0f64, 2.0]);
        let g = finite_difference_gradient(|_| 1.0, &table, 1e-5);
        assert_eq!(g[&EmbeddingKey::image(0)], vec![0.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn step_out_of_range() {
        finite_difference(|_: &[f64]| 0.0, &[1.0], 1e-2);
    }

    #[test]
    fn relative_error_edge_cases() {
        assert_eq!(relative_error(&[0.0f64, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0f64, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-12);
    }
}
