use super::{Corpus, Document, PatientId, Vocabulary, Word, BOS};
use crate::error::{Error, Result};

/// A BOS-prefixed window of one document's tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub doc_id: String,
    /// Index of the source document in its corpus.
    pub doc: usize,
    pub patient: PatientId,
    pub tokens: Vec<u32>,
    /// Word index in the source document for each token; `None` for BOS.
    pub word_index: Vec<Option<usize>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct word indices covered by this window, ascending.
    pub fn words(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.word_index.iter().flatten().copied().collect();
        out.dedup();
        out
    }

    /// Token positions holding the given word.
    pub fn positions_of(&self, word: usize) -> impl Iterator<Item = usize> + '_ {
        self.word_index
            .iter()
            .enumerate()
            .filter(move |(_, w)| **w == Some(word))
            .map(|(i, _)| i)
    }
}

/// Slide windows of `context_length - 1` words (plus BOS) over a document,
/// advancing by `stride` words. The final window may be shorter; windows never
/// cross documents.
pub fn segment(
    doc: &Document,
    doc_ordinal: usize,
    words: &[Word],
    vocab: &Vocabulary,
    context_length: usize,
    stride: usize,
) -> Result<Vec<Sequence>> {
    if context_length < 2 {
        return Err(Error::InvalidArgument(format!(
            "context length must be at least 2, got {context_length}"
        )));
    }
    if stride == 0 || stride > context_length {
        return Err(Error::InvalidArgument(format!(
            "stride must be in 1..={context_length}, got {stride}"
        )));
    }
    let width = context_length - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + width).min(words.len());
        let mut tokens = Vec::with_capacity(end - start + 1);
        let mut word_index = Vec::with_capacity(end - start + 1);
        tokens.push(BOS);
        word_index.push(None);
        for w in &words[start..end] {
            tokens.push(vocab.encode(&w.normal));
            word_index.push(Some(w.index));
        }
        out.push(Sequence {
            doc_id: doc.doc_id.clone(),
            doc: doc_ordinal,
            patient: doc.patient.clone(),
            tokens,
            word_index,
        });
        if end == words.len() {
            break;
        }
        start += stride;
    }
    Ok(out)
}

pub fn segment_corpus(
    corpus: &Corpus,
    vocab: &Vocabulary,
    context_length: usize,
    stride: usize,
) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (i, (doc, words)) in corpus.iter().enumerate() {
        out.extend(segment(doc, i, words, vocab, context_length, stride)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn doc(text: &str) -> (Document, Vec<Word>) {
        let d = Document {
            doc_id: "d".into(),
            patient: PatientId::new("p").unwrap(),
            text: text.into(),
        };
        let w = tokenize(text);
        (d, w)
    }

    fn vocab_for(text: &str) -> Vocabulary {
        let (d, _) = doc(text);
        Vocabulary::build(&Corpus::new(vec![d]).unwrap(), 1)
    }

    #[test]
    fn ten_tokens_context_six_stride_five() {
        let text = "a b c d e f g h i j";
        let (d, w) = doc(text);
        let seqs = segment(&d, 0, &w, &vocab_for(text), 6, 5).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].len(), 6);
        assert_eq!(seqs[1].word_index[1], Some(5));
        assert_eq!(seqs[1].word_index.last(), Some(&Some(9)));
        assert!(seqs.iter().all(|s| s.tokens[0] == BOS));
    }

    #[test]
    fn short_document_single_window() {
        let (d, w) = doc("x y z");
        let seqs = segment(&d, 0, &w, &vocab_for("x y z"), 512, 511).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 4);
    }

    #[test]
    fn empty_document_and_bad_context() {
        let (d, w) = doc("");
        let v = vocab_for("");
        assert!(segment(&d, 0, &w, &v, 8, 7).unwrap().is_empty());
        assert!(segment(&d, 0, &w, &v, 1, 1).is_err());
        assert!(segment(&d, 0, &w, &v, 8, 0).is_err());
    }

    #[test]
    fn overlapping_windows_cover_everything() {
        let text = "a b c d e f g h i j k";
        let (d, w) = doc(text);
        let seqs = segment(&d, 0, &w, &vocab_for(text), 5, 2).unwrap();
        let covered: std::collections::BTreeSet<usize> =
            seqs.iter().flat_map(|s| s.words()).collect();
        assert_eq!(covered.len(), 11);
        assert!(seqs.iter().all(|s| s.len() <= 5));
    }
}
