use std::collections::HashMap;

use crate::error::{Error, Result};

/// Retained tokens in descending-frequency order, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Vocabulary indices of the known tokens of `doc`, in order.
    pub fn encode<S: AsRef<str>>(&self, doc: &[S]) -> Vec<usize> {
        doc.iter().filter_map(|t| self.index_of(t.as_ref())).collect()
    }
}

pub fn build_vocabulary<D, S>(corpus: &[D], min_count: usize) -> Result<Vocabulary>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut tally: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for tok in doc.as_ref() {
            *tally.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = tally
        .into_iter()
        .filter(|&(_, c)| c >= min_count as u64)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
    let counts = kept.iter().map(|&(_, c)| c).collect();
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        tokens,
        counts,
        index,
        min_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn min_count_filtering() {
        let v = build_vocabulary(&[doc("a a b")], 1).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
        assert_eq!(v.counts(), &[2, 1]);
        let v = build_vocabulary(&[doc("a a b")], 2).unwrap();
        assert_eq!(v.tokens(), &["a"]);
        assert!(matches!(
            build_vocabulary(&[doc("a a b")], 3),
            Err(Error::EmptyVocabulary(3))
        ));
        assert!(matches!(
            build_vocabulary::<Vec<String>, String>(&[], 1),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn hand_counted_tally() {
        let corpus = [
            doc("the cat sat on the mat"),
            doc("the dog sat"),
            doc("a cat and a dog"),
        ];
        let v = build_vocabulary(&corpus, 1).unwrap();
        // the:3, a:2, cat:2, dog:2, sat:2, and:1, mat:1, on:1
        let expect = [
            ("the", 3),
            ("a", 2),
            ("cat", 2),
            ("dog", 2),
            ("sat", 2),
            ("and", 1),
            ("mat", 1),
            ("on", 1),
        ];
        let got: Vec<(&str, u64)> = v
            .tokens()
            .iter()
            .map(String::as_str)
            .zip(v.counts().iter().copied())
            .collect();
        assert_eq!(got, expect);
        assert_eq!(v.encode(&doc("cat zebra the")), vec![2, 0]);
    }
}
