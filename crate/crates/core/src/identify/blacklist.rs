use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use super::graph::{doc_ngrams, NGram};
use super::tagger::DirectTag;
use crate::corpus::{write_file, Corpus, Word};
use crate::error::{Error, Result};
use crate::seed::digest_hex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Flags {
    pub direct: bool,
    pub indirect: bool,
}

impl Flags {
    pub const NONE: Flags = Flags {
        direct: false,
        indirect: false,
    };

    pub fn any(self) -> bool {
        self.direct || self.indirect
    }

    pub fn union(self, other: Flags) -> Flags {
        Flags {
            direct: self.direct || other.direct,
            indirect: self.indirect || other.indirect,
        }
    }
}

/// Normalized n-grams that must never become loss-bearing targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blacklist {
    pub k: usize,
    pub n_max: usize,
    pub tagger: String,
    entries: BTreeMap<NGram, Flags>,
}

/// One occurrence of a blacklist entry in a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence<'a> {
    pub start: usize,
    pub len: usize,
    pub entry: &'a NGram,
    pub flags: Flags,
}

impl Blacklist {
    pub fn new(k: usize, n_max: usize, tagger: impl Into<String>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
        }
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        let tagger = tagger
            .into()
            .replace(['\t', '\n', '\r'], " ");
        Ok(Blacklist {
            k,
            n_max,
            tagger,
            entries: BTreeMap::new(),
        })
    }

    /// Add flags to an entry. Entries above `n_max` or with no flag are ignored.
    pub fn insert(&mut self, gram: NGram, flags: Flags) {
        if !flags.any() || gram.order() > self.n_max {
            return;
        }
        let slot = self.entries.entry(gram).or_default();
        *slot = slot.union(flags);
    }

    pub fn entries(&self) -> &BTreeMap<NGram, Flags> {
        &self.entries
    }

    pub fn get(&self, gram: &NGram) -> Option<Flags> {
        self.entries.get(gram).copied()
    }

    pub fn flags_of_word(&self, normal: &str) -> Flags {
        self.entries.get(&NGram::from(normal)).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Orders that actually have entries, ascending.
    fn populated_orders(&self) -> BTreeSet<usize> {
        self.entries.keys().map(NGram::order).collect()
    }

    /// Every occurrence of an entry in a document, in (start, order) order.
    pub fn occurrences<'a>(&'a self, words: &[Word]) -> Vec<Occurrence<'a>> {
        let mut out = Vec::new();
        for n in self.populated_orders() {
            for (start, gram) in doc_ngrams(words, n) {
                if let Some((entry, &flags)) = self.entries.get_key_value(&gram) {
                    out.push(Occurrence {
                        start,
                        len: n,
                        entry,
                        flags,
                    });
                }
            }
        }
        out.sort_by_key(|o| (o.start, o.len));
        out
    }

    /// Per-word flags for every document: a word is flagged when it is itself
    /// an entry or lies inside an occurrence of a multi-word entry.
    pub fn word_flags(&self, corpus: &Corpus) -> WordFlags {
        let docs = corpus
            .iter()
            .map(|(_, words)| {
                let mut flags = vec![Flags::NONE; words.len()];
                for occ in self.occurrences(words) {
                    for f in &mut flags[occ.start..occ.start + occ.len] {
                        *f = f.union(occ.flags);
                    }
                }
                flags
            })
            .collect();
        WordFlags { docs }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "# blacklist\tk={}\tn_max={}\ttagger={}\n",
            self.k, self.n_max, self.tagger
        );
        for (gram, flags) in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                gram,
                u8::from(flags.direct),
                u8::from(flags.indirect)
            ));
        }
        out
    }

    pub fn digest(&self) -> String {
        digest_hex(self.to_file_string().as_bytes())
    }

    pub fn parse(path: &Path, content: &str) -> Result<Blacklist> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let (k, n_max, tagger) = match fields[..] {
            ["# blacklist", k, n, t] => {
                let k = k
                    .strip_prefix("k=")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(1, format!("bad k field `{k}`")))?;
                let n = n
                    .strip_prefix("n_max=")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| err(1, format!("bad n_max field `{n}`")))?;
                let t = t
                    .strip_prefix("tagger=")
                    .ok_or_else(|| err(1, format!("bad tagger field `{t}`")))?;
                (k, n, t)
            }
            _ => return Err(err(1, "malformed header".into())),
        };
        let mut bl = Blacklist::new(k, n_max, tagger).map_err(|e| err(1, e.to_string()))?;
        for (i, line) in lines {
            let parts: Vec<&str> = line.split('\t').collect();
            let [gram, direct, indirect] = parts[..] else {
                return Err(err(i + 1, "expected 3 tab-separated fields".into()));
            };
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(err(i + 1, format!("flag must be 0 or 1, got `{s}`"))),
            };
            let flags = Flags {
                direct: flag(direct)?,
                indirect: flag(indirect)?,
            };
            let gram = NGram::parse(gram).map_err(|e| err(i + 1, e.to_string()))?;
            if !flags.any() || gram.order() > n_max {
                return Err(err(i + 1, format!("entry `{gram}` violates blacklist invariants")));
            }
            bl.insert(gram, flags);
        }
        Ok(bl)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_file_string().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Blacklist> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &content)
    }
}

/// Flags per word of every document of one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordFlags {
    docs: Vec<Vec<Flags>>,
}

impl WordFlags {
    /// No word of the corpus flagged.
    pub fn unflagged(corpus: &Corpus) -> WordFlags {
        WordFlags {
            docs: corpus
                .iter()
                .map(|(_, words)| vec![Flags::default(); words.len()])
                .collect(),
        }
    }

    pub fn get(&self, doc: usize, word: usize) -> Flags {
        self.docs[doc][word]
    }

    pub fn doc(&self, doc: usize) -> &[Flags] {
        &self.docs[doc]
    }
}

/// Union of tagged words (flagged direct) and indirect n-grams.
///
/// Each non-punctuation word under a tag becomes a direct entry; a tag
/// spanning several words without punctuation additionally contributes the
/// whole n-gram when its order is at most `n_max`.
pub fn build_blacklist(
    tags: &[DirectTag],
    indirect: &BTreeSet<NGram>,
    corpus: &Corpus,
    k: usize,
    n_max: usize,
    tagger: &str,
) -> Result<Blacklist> {
    let mut bl = Blacklist::new(k, n_max, tagger)?;
    let direct = Flags {
        direct: true,
        indirect: false,
    };
    for tag in tags {
        let doc = corpus
            .doc_index(&tag.doc_id)
            .ok_or_else(|| Error::InvalidArgument(format!("tag for unknown doc `{}`", tag.doc_id)))?;
        let words = corpus.words(doc);
        if tag.start >= tag.end || tag.end > words.len() {
            return Err(Error::InvalidArgument(format!(
                "tag [{}, {}) out of range for `{}`",
                tag.start, tag.end, tag.doc_id
            )));
        }
        let covered = &words[tag.start..tag.end];
        for w in covered.iter().filter(|w| !w.is_punct()) {
            bl.insert(NGram::from(w.normal.as_str()), direct);
        }
        if covered.len() > 1 && covered.iter().all(|w| !w.is_punct()) {
            let joined: Vec<&str> = covered.iter().map(|w| w.normal.as_str()).collect();
            bl.insert(NGram::new(&joined), direct);
        }
    }
    for gram in indirect {
        bl.insert(
            gram.clone(),
            Flags {
                direct: false,
                indirect: true,
            },
        );
    }
    Ok(bl)
}
