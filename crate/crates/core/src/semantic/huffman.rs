use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::vocab::Vocabulary;
use crate::embedding::dot;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// One step on a root-to-leaf path: the internal node visited and which way
/// the path turns there (`+1` for code bit 0, `-1` for bit 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub node: usize,
    pub sign: i8,
}

/// Huffman coding tree over a vocabulary, for hierarchical softmax.
///
/// Internal nodes are numbered `0..len-1` in creation order, so the root is
/// the last one. Leaf `i` is vocabulary token `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanTree {
    paths: Vec<Vec<Branch>>,
    internal_nodes: usize,
}

impl HuffmanTree {
    pub fn internal_nodes(&self) -> usize {
        self.internal_nodes
    }

    pub fn leaves(&self) -> usize {
        self.paths.len()
    }

    pub fn path(&self, token: usize) -> &[Branch] {
        &self.paths[token]
    }

    pub fn code(&self, token: usize) -> Vec<bool> {
        self.paths[token].iter().map(|b| b.sign < 0).collect()
    }

    pub fn code_length(&self, token: usize) -> usize {
        self.paths[token].len()
    }

    /// Σ count·code_length.
    pub fn weighted_path_length(&self, counts: &[u64]) -> u64 {
        counts
            .iter()
            .zip(&self.paths)
            .map(|(&c, p)| c * p.len() as u64)
            .sum()
    }

    /// `Π σ(sign · node·context)` along the token's path.
    pub fn probability<T: Scalar>(&self, node_weights: &Matrix<T>, context: &[T], token: usize) -> T {
        self.paths[token]
            .iter()
            .map(|b| sigmoid(T::c(b.sign as f64) * dot(node_weights.row(b.node), context)))
            .fold(T::one(), |acc, p| acc * p)
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
pub(crate) fn neg_log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Builds the Huffman tree from the vocabulary's counts.
///
/// Equal weights are merged in node-creation order (leaves by vocabulary
/// index first), which makes the tree deterministic.
pub fn build_huffman(vocab: &Vocabulary) -> Result<HuffmanTree> {
    build_from_counts(vocab.counts())
}

pub(crate) fn build_from_counts(counts: &[u64]) -> Result<HuffmanTree> {
    let n = counts.len();
    if n < 2 {
        return Err(Error::VocabularyTooSmall(n));
    }
    // Heap entries are (weight, node). Nodes 0..n are leaves, n.. internal.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        counts.iter().enumerate().map(|(i, &c)| Reverse((c, i))).collect();
    // parent[node] = (internal index, bit)
    let mut parent: Vec<Option<(usize, bool)>> = vec![None; 2 * n - 1];
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((w0, a)) = heap.pop().unwrap();
        let Reverse((w1, b)) = heap.pop().unwrap();
        let internal = next - n;
        parent[a] = Some((internal, false));
        parent[b] = Some((internal, true));
        heap.push(Reverse((w0 + w1, next)));
        next += 1;
    }
    let paths = (0..n)
        .map(|leaf| {
            let mut path = Vec::new();
            let mut node = leaf;
            while let Some((internal, bit)) = parent[node] {
                path.push(Branch {
                    node: internal,
                    sign: if bit { -1 } else { 1 },
                });
                node = n + internal;
            }
            path.reverse();
            path
        })
        .collect();
    Ok(HuffmanTree {
        paths,
        internal_nodes: n - 1,
    })
}
