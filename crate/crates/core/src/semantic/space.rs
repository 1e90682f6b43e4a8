use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::check_finite;
use crate::error::{Error, Result};
use crate::io::{read_jsonl_file, write_jsonl_file};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceSource {
    Pvdm,
    ExternalFile,
    VisualFeatures,
}

/// One line of a vectors file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Id → vector table with a uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpace<T> {
    ids: Vec<String>,
    vectors: Vec<Vec<T>>,
    index: HashMap<String, usize>,
    source: SpaceSource,
}

impl<T: Scalar> SemanticSpace<T> {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<T>>, source: SpaceSource) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        if let Some(first) = vectors.first() {
            let dim = first.len();
            if dim == 0 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    actual: 0,
                });
            }
            for (id, v) in ids.iter().zip(&vectors) {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                check_finite(v, &format!("vector {id:?}"))?;
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            vectors,
            index,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn source(&self) -> SpaceSource {
        self.source
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.position(id).map(|i| self.vectors[i].as_slice())
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<SemanticSpace<T>> {
        let vectors = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .map(<[T]>::to_vec)
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        SemanticSpace::new(ids.to_vec(), vectors, self.source)
    }

    pub fn records(&self) -> impl Iterator<Item = VectorRecord> + '_ {
        self.ids.iter().zip(&self.vectors).map(|(id, v)| VectorRecord {
            id: id.clone(),
            vector: v.iter().map(|x| x.to_f64_lossy()).collect(),
        })
    }

    pub fn from_records(records: Vec<VectorRecord>, source: SpaceSource) -> Result<Self> {
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len());
        for r in records {
            vectors.push(r.vector.into_iter().map(T::c).collect());
            ids.push(r.id);
        }
        Self::new(ids, vectors, source)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl_file(path, self.records())
    }
}

/// Reads a precomputed vectors file.
pub fn load_external_space<T: Scalar>(path: impl AsRef<Path>) -> Result<SemanticSpace<T>> {
    let records: Vec<VectorRecord> = read_jsonl_file(path)?;
    SemanticSpace::from_records(records, SpaceSource::ExternalFile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_validates() {
        let f = write("{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[3.5,-1]}\n");
        let s: SemanticSpace<f64> = load_external_space(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get("b").unwrap(), &[3.5, -1.0]);
        assert_eq!(s.source(), SpaceSource::ExternalFile);

        let f = write("{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[3]}\n");
        assert!(matches!(
            load_external_space::<f64>(f.path()),
            Err(Error::DimensionMismatch { .. })
        ));
        let f = write("{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"a\",\"vector\":[3]}\n");
        assert!(matches!(
            load_external_space::<f64>(f.path()),
            Err(Error::DuplicateId(_))
        ));
        let f = write("{\"id\":\"a\",\"vector\":[1]\n");
        assert!(matches!(
            load_external_space::<f64>(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn save_round_trip() {
        let s = SemanticSpace::new(
            vec!["x".into(), "y".into()],
            vec![vec![0.1f64, 0.2], vec![1e-300, -7.0]],
            SpaceSource::Pvdm,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        s.save_jsonl(f.path()).unwrap();
        let back: SemanticSpace<f64> = load_external_space(f.path()).unwrap();
        assert_eq!(back.vectors(), s.vectors());
        assert_eq!(back.ids(), s.ids());
    }
}
