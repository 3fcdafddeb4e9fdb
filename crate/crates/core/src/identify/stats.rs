use std::collections::{BTreeMap, BTreeSet};

use super::blacklist::Blacklist;
use super::graph::{BipartiteGraph, NGram};
use crate::corpus::{Corpus, PatientId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientStats {
    pub patient: PatientId,
    /// Distinct direct-flagged entries found in the patient's documents.
    pub direct: usize,
    /// Distinct indirect-flagged entries found in the patient's documents.
    pub indirect: usize,
    pub words: usize,
}

/// Row of the patient-sharing degree distribution (order-1 words).
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeRow {
    pub degree: usize,
    pub distinct_words: usize,
    pub occurrences: usize,
    pub cumulative_distinct: f64,
    pub cumulative_occurrences: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierStats {
    pub patients: Vec<PatientStats>,
    pub degree_cdf: Vec<DegreeRow>,
    /// (patient, order, distinct indirect entries of that order)
    pub ngram_identifiers: Vec<(PatientId, usize, usize)>,
}

pub const PATIENTS_HEADER: &str = "patient,direct_identifiers,indirect_identifiers,words";
pub const DEGREE_HEADER: &str =
    "degree,distinct_words,occurrences,cdf_distinct_words,cdf_occurrences";
pub const NGRAM_HEADER: &str = "patient,n,indirect_identifiers";

pub fn identifier_stats(corpus: &Corpus, blacklist: &Blacklist) -> IdentifierStats {
    let mut per_patient: BTreeMap<&PatientId, (BTreeSet<&NGram>, BTreeSet<&NGram>, usize)> =
        BTreeMap::new();
    for (doc, words) in corpus.iter() {
        let slot = per_patient.entry(&doc.patient).or_default();
        slot.2 += words.len();
        for occ in blacklist.occurrences(words) {
            if occ.flags.direct {
                slot.0.insert(occ.entry);
            }
            if occ.flags.indirect {
                slot.1.insert(occ.entry);
            }
        }
    }

    let mut ngram_identifiers = Vec::new();
    let patients = per_patient
        .into_iter()
        .map(|(patient, (direct, indirect, words))| {
            for n in 1..=blacklist.n_max {
                let count = indirect.iter().filter(|g| g.order() == n).count();
                ngram_identifiers.push((patient.clone(), n, count));
            }
            PatientStats {
                patient: patient.clone(),
                direct: direct.len(),
                indirect: indirect.len(),
                words,
            }
        })
        .collect();

    IdentifierStats {
        patients,
        degree_cdf: degree_cdf(corpus),
        ngram_identifiers,
    }
}

fn degree_cdf(corpus: &Corpus) -> Vec<DegreeRow> {
    let graph = BipartiteGraph::build(corpus, 1).expect("order 1 is valid");
    let mut by_degree: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (_, patients) in graph.iter() {
        let slot = by_degree.entry(patients.len()).or_default();
        slot.0 += 1;
        slot.1 += patients.values().sum::<usize>();
    }
    let total_distinct: usize = by_degree.values().map(|v| v.0).sum();
    let total_occ: usize = by_degree.values().map(|v| v.1).sum();
    let (mut cum_d, mut cum_o) = (0usize, 0usize);
    by_degree
        .into_iter()
        .map(|(degree, (distinct, occ))| {
            cum_d += distinct;
            cum_o += occ;
            DegreeRow {
                degree,
                distinct_words: distinct,
                occurrences: occ,
                cumulative_distinct: cum_d as f64 / total_distinct as f64,
                cumulative_occurrences: cum_o as f64 / total_occ as f64,
            }
        })
        .collect()
}

impl IdentifierStats {
    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patients_csv(&self) -> String {
        let mut out = format!("{PATIENTS_HEADER}\n");
        for p in &self.patients {
            out.push_str(&format!("{},{},{},{}\n", p.patient, p.direct, p.indirect, p.words));
        }
        out
    }

    pub fn degree_csv(&self) -> String {
        let mut out = format!("{DEGREE_HEADER}\n");
        for r in &self.degree_cdf {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                r.degree,
                r.distinct_words,
                r.occurrences,
                r.cumulative_distinct,
                r.cumulative_occurrences
            ));
        }
        out
    }

    pub fn ngram_csv(&self) -> String {
        let mut out = format!("{NGRAM_HEADER}\n");
        for (p, n, c) in &self.ngram_identifiers {
            out.push_str(&format!("{p},{n},{c}\n"));
        }
        out
    }

    /// Median number of indirect identifiers per patient.
    pub fn median_indirect(&self) -> Option<f64> {
        let mut v: Vec<usize> = self.patients.iter().map(|p| p.indirect).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 0 {
            (v[mid - 1] + v[mid]) as f64 / 2.0
        } else {
            v[mid] as f64
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::identify::{build_blacklist, indirect_identifiers};

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

    fn blacklist(c: &Corpus, n_max: usize) -> Blacklist {
        let g = BipartiteGraph::build(c, n_max).unwrap();
        build_blacklist(&[], &indirect_identifiers(&g, 2).unwrap(), c, 2, n_max, "none").unwrap()
    }

    #[test]
    fn toy_degree_cdf() {
        let c = corpus(&[("u1", "a b"), ("u2", "b c")]);
        let s = identifier_stats(&c, &blacklist(&c, 1));
        // brute force: a->1, b->2, c->1 patients; occurrences a1 b2 c1
        assert_eq!(s.degree_cdf.len(), 2);
        assert!((s.degree_cdf[0].cumulative_distinct - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.degree_cdf[0].cumulative_occurrences - 0.5).abs() < 1e-12);
        assert_eq!(s.degree_cdf[1].cumulative_distinct, 1.0);
        assert_eq!(s.patients[0].indirect, 1);
        assert_eq!(s.patients[0].words, 2);
        assert_eq!(
            s.degree_csv(),
            "degree,distinct_words,occurrences,cdf_distinct_words,cdf_occurrences\n\
             1,2,2,0.666667,0.500000\n2,1,2,1.000000,1.000000\n"
        );
    }

    #[test]
    fn single_patient_everything_indirect() {
        let c = corpus(&[("u1", "all words here"), ("u1", "more words")]);
        let bl = blacklist(&c, 1);
        let s = identifier_stats(&c, &bl);
        assert_eq!(s.patients[0].indirect, 4);
        assert_eq!(s.degree_cdf.len(), 1);
        assert_eq!(s.degree_cdf[0].cumulative_distinct, 1.0);
    }

    #[test]
    fn empty_corpus_empty_report() {
        let c = Corpus::empty();
        let s = identifier_stats(&c, &blacklist(&c, 2));
        assert!(s.is_empty());
        assert!(s.degree_cdf.is_empty());
        assert_eq!(s.patients_csv(), format!("{PATIENTS_HEADER}\n"));
        assert_eq!(s.median_indirect(), None);
    }

    #[test]
    fn ngram_counts_per_order() {
        let c = corpus(&[("u1", "x y z"), ("u2", "x y w")]);
        let s = identifier_stats(&c, &blacklist(&c, 2));
        let u1: Vec<(usize, usize)> = s
            .ngram_identifiers
            .iter()
            .filter(|(p, _, _)| p.as_str() == "u1")
            .map(|(_, n, c)| (*n, *c))
            .collect();
        assert_eq!(u1, [(1, 1), (2, 1)]);
    }
}
