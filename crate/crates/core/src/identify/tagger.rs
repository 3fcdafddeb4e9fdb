//! Direct-identifier tagging: a deterministic rule/dictionary tagger plus a
//! file exchange for annotations produced by an external tagger.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, write_file, Corpus, Word};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdentifierCategory {
    PatientName,
    Doctor,
    Hospital,
    Location,
    Date,
    Id,
    Phone,
    Age,
}

impl IdentifierCategory {
    pub const ALL: [IdentifierCategory; 8] = [
        IdentifierCategory::PatientName,
        IdentifierCategory::Doctor,
        IdentifierCategory::Hospital,
        IdentifierCategory::Location,
        IdentifierCategory::Date,
        IdentifierCategory::Id,
        IdentifierCategory::Phone,
        IdentifierCategory::Age,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IdentifierCategory::PatientName => "PATIENT_NAME",
            IdentifierCategory::Doctor => "DOCTOR",
            IdentifierCategory::Hospital => "HOSPITAL",
            IdentifierCategory::Location => "LOCATION",
            IdentifierCategory::Date => "DATE",
            IdentifierCategory::Id => "ID",
            IdentifierCategory::Phone => "PHONE",
            IdentifierCategory::Age => "AGE",
        }
    }
}

impl fmt::Display for IdentifierCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IdentifierCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown identifier category `{s}`")))
    }
}

/// A tagged half-open word range `[start, end)` of one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectTag {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub category: IdentifierCategory,
}

/// Rules for one category: regular expressions over document text and a
/// dictionary of (possibly multi-word) phrases matched on normalized words.
///
/// A pattern with a capture group tags the span of group 1 instead of the
/// whole match, which allows context cues such as `age (\d+)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRules {
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default)]
    pub dictionary: Vec<String>,
}

/// Rule set keyed by category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(flatten)]
    pub categories: std::collections::BTreeMap<IdentifierCategory, CategoryRules>,
}

impl RuleSet {
    pub fn with(mut self, category: IdentifierCategory, rules: CategoryRules) -> Self {
        self.categories.insert(category, rules);
        self
    }

    pub fn description(&self) -> String {
        if self.categories.is_empty() {
            return "rule-tagger(empty)".into();
        }
        let parts: Vec<String> = self
            .categories
            .iter()
            .map(|(c, r)| format!("{c}:{}p/{}d", r.patterns.len(), r.dictionary.len()))
            .collect();
        format!("rule-tagger({})", parts.join(","))
    }
}

struct CompiledCategory {
    category: IdentifierCategory,
    patterns: Vec<Regex>,
    phrases: Vec<Vec<String>>,
}

pub struct RuleTagger {
    categories: Vec<CompiledCategory>,
    description: String,
}

impl RuleTagger {
    pub fn new(rules: &RuleSet) -> Result<Self> {
        let mut categories = Vec::new();
        for (&category, r) in &rules.categories {
            let patterns = r
                .patterns
                .iter()
                .map(|p| {
                    Regex::new(p).map_err(|e| Error::TaggerConfig {
                        category: category.to_string(),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut phrases = Vec::new();
            for entry in &r.dictionary {
                let words: Vec<String> = tokenize(entry).into_iter().map(|w| w.normal).collect();
                if words.is_empty() {
                    return Err(Error::TaggerConfig {
                        category: category.to_string(),
                        message: format!("dictionary entry `{entry}` has no words"),
                    });
                }
                phrases.push(words);
            }
            categories.push(CompiledCategory {
                category,
                patterns,
                phrases,
            });
        }
        Ok(RuleTagger {
            categories,
            description: rules.description(),
        })
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    fn candidates(&self, text: &str, words: &[Word]) -> Vec<(usize, usize, IdentifierCategory)> {
        let mut out = Vec::new();
        for cat in &self.categories {
            for re in &cat.patterns {
                for caps in re.captures_iter(text) {
                    let m = caps.get(1).or_else(|| caps.get(0)).expect("group 0 exists");
                    if let Some((s, e)) = byte_span_to_words(words, m.start(), m.end()) {
                        out.push((s, e, cat.category));
                    }
                }
            }
            for phrase in &cat.phrases {
                let n = phrase.len();
                if n > words.len() {
                    continue;
                }
                for start in 0..=words.len() - n {
                    if words[start..start + n]
                        .iter()
                        .zip(phrase)
                        .all(|(w, p)| &w.normal == p)
                    {
                        out.push((start, start + n, cat.category));
                    }
                }
            }
        }
        out
    }
}

/// Words overlapping the byte range `[start, end)`.
fn byte_span_to_words(words: &[Word], start: usize, end: usize) -> Option<(usize, usize)> {
    if start >= end {
        return None;
    }
    let first = words.iter().position(|w| w.span.end > start)?;
    let last = words.iter().rposition(|w| w.span.start < end)?;
    (first <= last).then_some((first, last + 1))
}

/// Keep maximal non-overlapping tags: longest first, then earliest start,
/// then category order.
fn resolve_overlaps(
    mut cands: Vec<(usize, usize, IdentifierCategory)>,
    word_count: usize,
) -> Vec<(usize, usize, IdentifierCategory)> {
    cands.sort_by(|a, b| {
        (b.1 - b.0)
            .cmp(&(a.1 - a.0))
            .then(a.0.cmp(&b.0))
            .then(a.2.cmp(&b.2))
    });
    cands.dedup();
    let mut taken = vec![false; word_count];
    let mut kept = Vec::new();
    for (s, e, c) in cands {
        if taken[s..e].iter().any(|&t| t) {
            continue;
        }
        taken[s..e].iter_mut().for_each(|t| *t = true);
        kept.push((s, e, c));
    }
    kept.sort();
    kept
}

pub fn tag_direct(corpus: &Corpus, tagger: &RuleTagger) -> Vec<DirectTag> {
    let mut tags = Vec::new();
    for (doc, words) in corpus.iter() {
        let cands = tagger.candidates(&doc.text, words);
        for (start, end, category) in resolve_overlaps(cands, words.len()) {
            tags.push(DirectTag {
                doc_id: doc.doc_id.clone(),
                start,
                end,
                category,
            });
        }
    }
    tags
}

const ANNOTATION_HEADER: &str = "doc_id,start_word,end_word,category";

/// Annotations in the external-tagger exchange format.
pub fn annotations_to_string(tags: &[DirectTag]) -> Result<String> {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for t in tags {
        if t.doc_id.contains([',', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "doc_id `{}` cannot be written to the annotation format",
                t.doc_id
            )));
        }
        out.push_str(&format!("{},{},{},{}\n", t.doc_id, t.start, t.end, t.category));
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, tags: &[DirectTag]) -> Result<()> {
    write_file(path, annotations_to_string(tags)?.as_bytes())
}

/// Parse annotations and validate them against `corpus`.
pub fn parse_annotations(path: &Path, content: &str, corpus: &Corpus) -> Result<Vec<DirectTag>> {
    let mut tags = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line == ANNOTATION_HEADER) {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [doc_id, start, end, category] = fields[..] else {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        };
        let start: usize = start.parse().map_err(|_| err(format!("bad start `{start}`")))?;
        let end: usize = end.parse().map_err(|_| err(format!("bad end `{end}`")))?;
        let category: IdentifierCategory = category.parse().map_err(|e: Error| err(e.to_string()))?;
        let doc = corpus
            .doc_index(doc_id)
            .ok_or_else(|| err(format!("unknown doc_id `{doc_id}`")))?;
        let word_count = corpus.words(doc).len();
        if start >= end || end > word_count {
            return Err(err(format!(
                "range [{start},{end}) invalid for document with {word_count} words"
            )));
        }
        tags.push(DirectTag {
            doc_id: doc_id.to_string(),
            start,
            end,
            category,
        });
    }
    tags.sort();
    Ok(tags)
}

pub fn read_annotations(path: &Path, corpus: &Corpus) -> Result<Vec<DirectTag>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(path, &content, corpus)
}

/// Replace every tagged word with the literal `X`. Punctuation inside a tag is
/// kept so the word count of each document is preserved.
pub fn pseudonymize(corpus: &Corpus, tags: &[DirectTag]) -> Corpus {
    let mut docs = Vec::with_capacity(corpus.len());
    for (i, (doc, words)) in corpus.iter().enumerate() {
        let mut replace = vec![false; words.len()];
        for t in tags.iter().filter(|t| t.doc_id == doc.doc_id) {
            for w in t.start..t.end.min(words.len()) {
                replace[w] = !words[w].is_punct();
            }
        }
        let mut text = String::with_capacity(doc.text.len());
        let mut cursor = 0;
        for (w, &r) in words.iter().zip(&replace) {
            if r {
                text.push_str(&doc.text[cursor..w.span.start]);
                text.push('X');
                cursor = w.span.end;
            }
        }
        text.push_str(&doc.text[cursor..]);
        let mut d = corpus.docs()[i].clone();
        d.text = text;
        docs.push(d);
    }
    Corpus::new(docs).expect("pseudonymization keeps document ids")
}
