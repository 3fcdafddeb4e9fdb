use std::collections::HashMap;
use std::path::Path;

use super::{write_file, Corpus};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const BOS: u32 = 3;
pub const SPECIAL_COUNT: usize = 4;

const SPECIAL_NAMES: [&str; SPECIAL_COUNT] = ["<pad>", "<mask>", "<unk>", "<bos>"];

/// Bijection between normalized words and token ids. Ids `0..4` are reserved
/// for PAD, MASK, UNK and BOS; their names contain `<` which the tokenizer
/// always splits, so they can never collide with a corpus word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Words with corpus frequency ≥ `min_count`, ordered by descending
    /// frequency then lexicographically.
    pub fn build(corpus: &Corpus, min_count: usize) -> Vocabulary {
        let min_count = min_count.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (_, words) in corpus.iter() {
            for w in words {
                *counts.entry(w.normal.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Corpus tokens in id order (ids start after the reserved ones).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocabulary {
        let mut all: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let ids = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens: all, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a normalized word, `UNK` when absent.
    pub fn encode(&self, normal: &str) -> u32 {
        match self.ids.get(normal) {
            Some(&id) if id as usize >= SPECIAL_COUNT => id,
            _ => UNK,
        }
    }

    pub fn get(&self, normal: &str) -> Option<u32> {
        self.ids
            .get(normal)
            .copied()
            .filter(|&id| id as usize >= SPECIAL_COUNT)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_COUNT
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[SPECIAL_COUNT..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(path: &Path, content: &str) -> Result<Vocabulary> {
        let mut tokens = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "vocabulary lines hold exactly one token".into(),
                });
            }
            tokens.push(line.to_string());
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "duplicate vocabulary token".into(),
            });
        }
        Ok(vocab)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_file_string().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Vocabulary> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &content)
    }
}
