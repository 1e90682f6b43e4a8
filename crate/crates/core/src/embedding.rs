//! Dense-vector primitives shared by every other module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw per-modality input features, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
    modality: Modality,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>, modality: Modality) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        check_finite(&values, "feature vector")?;
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A unit-norm point in the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding<T> {
    values: Vec<T>,
    modality: Modality,
}

impl<T: Scalar> JointEmbedding<T> {
    /// Normalizes `values` onto the unit sphere.
    pub fn from_raw(values: &[T], modality: Modality) -> Result<Self> {
        check_finite(values, "joint embedding")?;
        Ok(Self {
            values: l2_normalize(values)?,
            modality,
        })
    }

    /// Wraps values that are already unit length.
    pub fn from_unit(values: Vec<T>, modality: Modality) -> Result<Self> {
        check_finite(&values, "joint embedding")?;
        let n = norm(&values);
        if (n - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::ShapeMismatch(format!(
                "joint embedding norm {n} is not 1"
            )));
        }
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }
}

pub(crate) fn check_finite<T: Scalar>(values: &[T], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        })
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n >= T::c(ZERO_NORM)) {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

pub fn squared_euclidean<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    Ok(squared_euclidean_unchecked(a, b))
}

#[inline]
pub(crate) fn squared_euclidean_unchecked<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    let tiny = T::c(ZERO_NORM);
    if !(na >= tiny) || !(nb >= tiny) {
        return Err(Error::ZeroVector);
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
