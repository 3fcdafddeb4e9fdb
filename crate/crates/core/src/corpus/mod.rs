//! Multi-patient corpus: ingestion, word tokenization, vocabulary and
//! fixed-length training sequences.

mod segment;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use segment::{segment, segment_corpus, Sequence};
pub use tokenize::{normalize, tokenize, Word};
pub(crate) use tokenize::is_punct_surface;
pub use vocab::{Vocabulary, BOS, MASK, PAD, SPECIAL_COUNT, UNK};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(String);

impl PatientId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::InvalidArgument("patient id must be non-empty".into()));
        }
        Ok(PatientId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub patient: PatientId,
    pub text: String,
}

/// On-disk record: one JSON object per line.
#[derive(Debug, Serialize, Deserialize)]
pub struct Record {
    pub doc_id: String,
    pub patient_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Line-delimited JSON records with `doc_id`, `patient_id`, `text`.
    Records,
    /// `<root>/<patient_id>/<doc_id>.txt`
    DirectoryTree,
}

/// Documents sorted by `doc_id`, each with its tokenized words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    words: Vec<Vec<Word>>,
    patients: BTreeMap<PatientId, Vec<usize>>,
}

impl Corpus {
    pub fn new(mut docs: Vec<Document>) -> Result<Self> {
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        for pair in docs.windows(2) {
            if pair[0].doc_id == pair[1].doc_id {
                return Err(Error::DuplicateDoc(pair[0].doc_id.clone()));
            }
        }
        let words = docs.iter().map(|d| tokenize(&d.text)).collect();
        let mut patients: BTreeMap<PatientId, Vec<usize>> = BTreeMap::new();
        for (i, doc) in docs.iter().enumerate() {
            patients.entry(doc.patient.clone()).or_default().push(i);
        }
        Ok(Corpus {
            docs,
            words,
            patients,
        })
    }

    pub fn empty() -> Self {
        Corpus {
            docs: Vec::new(),
            words: Vec::new(),
            patients: BTreeMap::new(),
        }
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn words(&self, doc: usize) -> &[Word] {
        &self.words[doc]
    }

    /// Documents paired with their words, in corpus order.
    pub fn iter(&self) -> impl Iterator<Item = (&Document, &[Word])> {
        self.docs.iter().zip(self.words.iter().map(Vec::as_slice))
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.docs
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientId> {
        self.patients.keys()
    }

    pub fn patient_count(&self) -> usize {
        self.patients.len()
    }

    /// Indices of the documents belonging to `patient`.
    pub fn patient_docs(&self, patient: &PatientId) -> &[usize] {
        self.patients.get(patient).map_or(&[], Vec::as_slice)
    }

    pub fn word_count(&self) -> usize {
        self.words.iter().map(Vec::len).sum()
    }

    /// Sub-corpus holding only the given patients' documents.
    pub fn restrict(&self, patients: &BTreeSet<PatientId>) -> Corpus {
        let docs = self
            .docs
            .iter()
            .filter(|d| patients.contains(&d.patient))
            .cloned()
            .collect();
        Corpus::new(docs).expect("subset of a valid corpus is valid")
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            let record = Record {
                doc_id: doc.doc_id.clone(),
                patient_id: doc.patient.as_str().to_string(),
                text: doc.text.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_records(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_records().as_bytes())
    }

    /// Parse line-delimited records. Blank lines are ignored.
    pub fn parse_records(source: &Path, content: &str) -> Result<Corpus> {
        let mut docs = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message,
            };
            let record: Record =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            if record.doc_id.is_empty() {
                return Err(parse_err("empty doc_id".into()));
            }
            let patient =
                PatientId::new(record.patient_id).map_err(|e| parse_err(e.to_string()))?;
            if !seen.insert(record.doc_id.clone()) {
                return Err(parse_err(format!("duplicate doc_id `{}`", record.doc_id)));
            }
            docs.push(Document {
                doc_id: record.doc_id,
                patient,
                text: record.text,
            });
        }
        Corpus::new(docs)
    }
}

pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Records => {
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Corpus::parse_records(path, &content)
        }
        CorpusFormat::DirectoryTree => ingest_directory(path),
    }
}

fn ingest_directory(root: &Path) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut patient_dirs = read_dir_sorted(root)?;
    patient_dirs.retain(|p| p.is_dir());
    for dir in patient_dirs {
        let patient_name = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("non-UTF-8 path {}", dir.display())))?;
        let patient = PatientId::new(patient_name)?;
        for file in read_dir_sorted(&dir)? {
            if file.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let doc_id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("non-UTF-8 path {}", file.display()))
                })?
                .to_string();
            let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            docs.push(Document {
                doc_id,
                patient: patient.clone(),
                text,
            });
        }
    }
    Corpus::new(docs)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}
