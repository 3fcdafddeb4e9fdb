//! Direct and indirect identifier detection.
//!
//! Direct identifiers come from a pluggable tagger. Indirect identifiers are
//! n-grams whose patient set in the patient ↔ n-gram bipartite graph has fewer
//! than `k` members. Both end up in a [`Blacklist`].

mod blacklist;
mod graph;
mod stats;
mod tagger;

pub use blacklist::{build_blacklist, Blacklist, Flags, Occurrence, WordFlags};
pub use graph::{doc_ngrams, indirect_identifiers, BipartiteGraph, NGram};
pub use stats::{
    identifier_stats, DegreeRow, IdentifierStats, PatientStats, DEGREE_HEADER, NGRAM_HEADER,
    PATIENTS_HEADER,
};
pub use tagger::{
    annotations_to_string, parse_annotations, pseudonymize, read_annotations, tag_direct,
    write_annotations, CategoryRules, DirectTag, IdentifierCategory, RuleSet, RuleTagger,
};
