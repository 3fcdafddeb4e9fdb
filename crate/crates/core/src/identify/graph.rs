use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PatientId, Word};
use crate::error::{Error, Result};

/// Normalized n-gram: words joined by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NGram(String);

impl NGram {
    pub fn new(words: &[&str]) -> NGram {
        NGram(words.join(" "))
    }

    pub fn parse(s: &str) -> Result<NGram> {
        let words: Vec<&str> = s.split(' ').collect();
        if words.iter().any(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!("malformed n-gram `{s}`")));
        }
        Ok(NGram(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.split(' ').count()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ')
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NGram {
    fn from(s: &str) -> Self {
        NGram(s.to_string())
    }
}

/// Word windows of order `n` in a document, as `(start word, n-gram)`.
///
/// Order 1 includes punctuation; higher orders only take runs of `n`
/// consecutive non-punctuation words.
pub fn doc_ngrams(words: &[Word], n: usize) -> impl Iterator<Item = (usize, NGram)> + '_ {
    let count = if n == 0 || words.len() < n {
        0
    } else {
        words.len() - n + 1
    };
    (0..count).filter_map(move |start| {
        let window = &words[start..start + n];
        if n > 1 && window.iter().any(Word::is_punct) {
            return None;
        }
        let joined: Vec<&str> = window.iter().map(|w| w.normal.as_str()).collect();
        Some((start, NGram::new(&joined)))
    })
}

/// Patient ↔ n-gram bipartite graph for orders `1..=n_max`, with occurrence
/// counts per edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    orders: Vec<BTreeMap<NGram, BTreeMap<PatientId, usize>>>,
}

impl BipartiteGraph {
    pub fn build(corpus: &Corpus, n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        let mut orders: Vec<BTreeMap<NGram, BTreeMap<PatientId, usize>>> =
            vec![BTreeMap::new(); n_max];
        for (doc, words) in corpus.iter() {
            for (n, map) in orders.iter_mut().enumerate() {
                for (_, gram) in doc_ngrams(words, n + 1) {
                    *map.entry(gram)
                        .or_default()
                        .entry(doc.patient.clone())
                        .or_default() += 1;
                }
            }
        }
        Ok(BipartiteGraph { orders })
    }

    pub fn n_max(&self) -> usize {
        self.orders.len()
    }

    /// Edges of order `n` (1-based).
    pub fn order(&self, n: usize) -> &BTreeMap<NGram, BTreeMap<PatientId, usize>> {
        &self.orders[n - 1]
    }

    pub fn patients_of(&self, gram: &NGram) -> Option<&BTreeMap<PatientId, usize>> {
        let n = gram.order();
        self.orders.get(n.checked_sub(1)?)?.get(gram)
    }

    pub fn degree(&self, gram: &NGram) -> usize {
        self.patients_of(gram).map_or(0, BTreeMap::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGram, &BTreeMap<PatientId, usize>)> {
        self.orders.iter().flat_map(|m| m.iter())
    }
}

/// N-grams used by fewer than `k` patients.
pub fn indirect_identifiers(graph: &BipartiteGraph, k: usize) -> Result<BTreeSet<NGram>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    Ok(graph
        .iter()
        .filter(|(_, patients)| patients.len() < k)
        .map(|(g, _)| g.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            docs.iter()
                .enumerate()
                .map(|(i, (p, t))| Document {
                    doc_id: format!("d{i}"),
                    patient: PatientId::new(*p).unwrap(),
                    text: t.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn names(set: &BTreeSet<NGram>) -> Vec<&str> {
        set.iter().map(NGram::as_str).collect()
    }

    #[test]
    fn two_patient_graph() {
        let c = corpus(&[("u1", "a b"), ("u2", "b c")]);
        let g = BipartiteGraph::build(&c, 1).unwrap();
        assert_eq!(g.degree(&"a".into()), 1);
        assert_eq!(g.degree(&"b".into()), 2);
        assert_eq!(g.degree(&"c".into()), 1);
        assert_eq!(names(&indirect_identifiers(&g, 2).unwrap()), ["a", "c"]);
        assert_eq!(names(&indirect_identifiers(&g, 3).unwrap()), ["a", "b", "c"]);
        assert!(indirect_identifiers(&g, 1).is_err());

        let g2 = BipartiteGraph::build(&c, 2).unwrap();
        let bigrams: Vec<_> = g2.order(2).keys().map(NGram::as_str).collect();
        assert_eq!(bigrams, ["a b", "b c"]);
        assert_eq!(g2.degree(&"a b".into()), 1);
    }

    #[test]
    fn patient_sets_not_document_counts() {
        let c = corpus(&[("u1", "rare word"), ("u1", "rare again"), ("u2", "word")]);
        let g = BipartiteGraph::build(&c, 1).unwrap();
        let rare = g.patients_of(&"rare".into()).unwrap();
        assert_eq!(rare.len(), 1);
        assert_eq!(rare.values().copied().collect::<Vec<_>>(), [2]);
    }

    #[test]
    fn punctuation_only_at_order_one() {
        let c = corpus(&[("u1", "Mr Smith. Fine")]);
        let g = BipartiteGraph::build(&c, 2).unwrap();
        assert_eq!(g.degree(&".".into()), 1);
        assert_eq!(g.degree(&"smith .".into()), 0);
        assert_eq!(g.degree(&"mr smith".into()), 1);
        assert_eq!(g.order(2).len(), 1);
    }

    #[test]
    fn shared_word_never_indirect() {
        let c = corpus(&[("u1", "the x"), ("u2", "the y"), ("u3", "the z")]);
        let g = BipartiteGraph::build(&c, 1).unwrap();
        for k in 2..=3 {
            assert!(!indirect_identifiers(&g, k).unwrap().contains(&"the".into()));
        }
    }

    #[test]
    fn ngram_parse() {
        assert_eq!(NGram::parse("a b").unwrap().order(), 2);
        assert!(NGram::parse("a  b").is_err());
        assert!(NGram::parse("").is_err());
    }
}
