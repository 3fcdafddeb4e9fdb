use serde::{Deserialize, Serialize};

use super::text::{bleu, rouge, RougeVariant};
use super::{LeakLocation, LeakReport, UtilityReport};
use crate::corpus::{is_punct_surface, Corpus, Sequence, Vocabulary, MASK};
use crate::error::{Error, Result};
use crate::identify::{Blacklist, NGram};
use crate::seed::digest_hex;
use crate::tinylm::{rank, Attention, Checkpoint};

#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub report: LeakReport,
    pub utility: UtilityReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalAuditConfig {
    /// Prefix lengths in words (BOS is always prepended).
    pub prefix_lengths: Vec<usize>,
    pub gen_length: usize,
    pub top_k: usize,
}

impl Default for CausalAuditConfig {
    fn default() -> Self {
        CausalAuditConfig {
            prefix_lengths: vec![4, 8, 16],
            gen_length: 32,
            top_k: 1,
        }
    }
}

fn check_vocab(ck: &Checkpoint, vocab: &Vocabulary, attention: Attention) -> Result<()> {
    let cfg = ck.model.config();
    if cfg.vocab_size != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "vocabulary mismatch: checkpoint has {} tokens, vocabulary has {}",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    if cfg.attention != attention {
        return Err(Error::ObjectiveMismatch(format!(
            "audit needs a {attention:?} checkpoint"
        )));
    }
    Ok(())
}

fn new_report(ck: &Checkpoint, corpus: &Corpus, blacklist: &Blacklist) -> LeakReport {
    let mut report = LeakReport::new(corpus, blacklist);
    report.scheme = ck.provenance.scheme.clone();
    report.checkpoint_digest = digest_hex(&ck.to_bytes());
    report
}

/// Probes reveal single words, so only unigram entries can leak through
/// them; multi-word entries leak through generations.
fn record_prediction(report: &mut LeakReport, doc_id: &str, at: usize, pred: &str) {
    report.record(
        &NGram::from(pred),
        LeakLocation {
            doc_id: doc_id.to_string(),
            position: at,
        },
    );
}

fn surface(vocab: &Vocabulary, id: u32) -> Option<&str> {
    (!Vocabulary::is_special(id)).then(|| vocab.token(id)).flatten()
}

/// Mask each word of each window in turn and take the top-k predictions.
/// An entry leaks when a prediction equals it. A single-word probe cannot
/// reveal a multi-word entry, so only unigram entries are audited. Mask
/// accuracy counts probes of unflagged words only.
pub fn audit_masked(
    ck: &Checkpoint,
    corpus: &Corpus,
    sequences: &[Sequence],
    vocab: &Vocabulary,
    blacklist: &Blacklist,
    top_k: usize,
) -> Result<Audit> {
    check_vocab(ck, vocab, Attention::Bidirectional)?;
    let model = &ck.model;
    let mut report = new_report(ck, corpus, blacklist);
    report.audited.retain(|gram, _| gram.order() == 1);
    let flags = blacklist.word_flags(corpus);
    let (mut correct, mut probes) = (0usize, 0usize);
    for seq in sequences {
        let doc = &corpus.docs()[seq.doc];
        let mut input = seq.tokens.clone();
        for w in seq.words() {
            let positions: Vec<usize> = seq.positions_of(w).collect();
            for &p in &positions {
                input[p] = MASK;
            }
            let logits = model.logits(&input, &positions)?;
            for (&p, z) in positions.iter().zip(&logits) {
                let ranked = rank(z);
                if !flags.get(seq.doc, w).any() {
                    probes += 1;
                    correct += usize::from(ranked[0] == seq.tokens[p]);
                }
                for &id in ranked.iter().take(top_k) {
                    if let Some(pred) = surface(vocab, id) {
                        record_prediction(&mut report, &doc.doc_id, w, pred);
                    }
                }
            }
            for &p in &positions {
                input[p] = seq.tokens[p];
            }
        }
    }
    Ok(Audit {
        report,
        utility: UtilityReport {
            mask_accuracy: (probes > 0).then(|| correct as f64 / probes as f64),
            ..UtilityReport::default()
        },
    })
}

/// Teacher-forced next-token probes plus greedy generation from each prefix
/// length of each window.
///
/// A top-k next-token prediction leaks the unigram entry it equals. A
/// generation leaks every entry appearing contiguously in it.
/// BLEU and ROUGE compare each generation with the window's true
/// continuation of the same length.
pub fn audit_causal(
    ck: &Checkpoint,
    corpus: &Corpus,
    sequences: &[Sequence],
    vocab: &Vocabulary,
    blacklist: &Blacklist,
    config: &CausalAuditConfig,
) -> Result<Audit> {
    check_vocab(ck, vocab, Attention::Causal)?;
    let model = &ck.model;
    let mut report = new_report(ck, corpus, blacklist);
    let (mut correct, mut total) = (0usize, 0usize);
    let mut text_scores: Vec<[Option<f64>; 4]> = Vec::new();
    for seq in sequences {
        let n = seq.len();
        if n < 2 {
            continue;
        }
        let doc = &corpus.docs()[seq.doc];
        let slots: Vec<usize> = (0..n - 1).collect();
        let logits = model.logits(&seq.tokens[..n - 1], &slots)?;
        for (i, z) in logits.iter().enumerate() {
            let ranked = rank(z);
            total += 1;
            correct += usize::from(ranked[0] == seq.tokens[i + 1]);
            let at = seq.word_index[i + 1].expect("non-BOS position");
            for &id in ranked.iter().take(config.top_k) {
                if let Some(pred) = surface(vocab, id) {
                    record_prediction(&mut report, &doc.doc_id, at, pred);
                }
            }
        }

        for &len in &config.prefix_lengths {
            if len == 0 || len + 1 >= n {
                continue;
            }
            let reference = &seq.tokens[len + 1..];
            let glen = config.gen_length.min(reference.len());
            if glen == 0 {
                continue;
            }
            let generated = model.generate(&seq.tokens[..len + 1], glen)?;
            let start = seq.word_index[len + 1].expect("non-BOS position");
            record_generation(&mut report, vocab, &doc.doc_id, start, &generated, blacklist.n_max);
            let reference = &reference[..glen];
            text_scores.push([
                Some(bleu(&generated, reference, 4)),
                rouge(&generated, reference, RougeVariant::N(1)),
                rouge(&generated, reference, RougeVariant::N(2)),
                rouge(&generated, reference, RougeVariant::L),
            ]);
        }
    }
    let mean = |k: usize| {
        let vals: Vec<f64> = text_scores.iter().filter_map(|s| s[k]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(Audit {
        report,
        utility: UtilityReport {
            token_accuracy: (total > 0).then(|| correct as f64 / total as f64),
            bleu: mean(0),
            rouge_1: mean(1),
            rouge_2: mean(2),
            rouge_l: mean(3),
            ..UtilityReport::default()
        },
    })
}

fn record_generation(
    report: &mut LeakReport,
    vocab: &Vocabulary,
    doc_id: &str,
    start: usize,
    generated: &[u32],
    n_max: usize,
) {
    let words: Vec<Option<&str>> = generated.iter().map(|&id| surface(vocab, id)).collect();
    for n in 1..=n_max.min(words.len()) {
        for (i, window) in words.windows(n).enumerate() {
            let Some(gram) = window.iter().copied().collect::<Option<Vec<&str>>>() else {
                continue;
            };
            if n > 1 && gram.iter().any(|w| is_punct_surface(w)) {
                continue;
            }
            report.record(
                &NGram::new(&gram),
                LeakLocation {
                    doc_id: doc_id.to_string(),
                    position: start + i,
                },
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{segment_corpus, Document, PatientId};
    use crate::identify::{build_blacklist, indirect_identifiers, BipartiteGraph};
    use crate::tinylm::{Model, ModelConfig, Provenance};

    fn corpus() -> Corpus {
        Corpus::new(vec![
            Document {
                doc_id: "a".into(),
                patient: PatientId::new("u1").unwrap(),
                text: "the smith came home".into(),
            },
            Document {
                doc_id: "b".into(),
                patient: PatientId::new("u2").unwrap(),
                text: "the jones came home".into(),
            },
        ])
        .unwrap()
    }

    /// Model whose output always favors one token.
    fn constant(vocab: &Vocabulary, token: &str, attention: Attention) -> Checkpoint {
        let mut model = Model::init(ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 4,
            context_length: 8,
            hidden_dim: 4,
            attention,
            seed: 1,
        })
        .unwrap();
        let (_, shape) = model.tensor("output").unwrap();
        let bias_at = model.param_count() - shape[0];
        let params = model.params_mut();
        let out = bias_at - shape[0] * shape[1];
        params[out..bias_at].fill(0.0);
        params[bias_at + vocab.encode(token) as usize] = 10.0;
        Checkpoint::new(
            model,
            Provenance {
                scheme: "test".into(),
                epoch: 1,
                init_seed: 1,
                train_seed: 1,
                blacklist_digest: "x".into(),
            },
        )
        .unwrap()
    }

    fn blacklist(c: &Corpus, n_max: usize) -> Blacklist {
        let g = BipartiteGraph::build(c, n_max).unwrap();
        build_blacklist(&[], &indirect_identifiers(&g, 2).unwrap(), c, 2, n_max, "none").unwrap()
    }

    #[test]
    fn hard_wired_identifier_leaks_everywhere() {
        let c = corpus();
        let vocab = Vocabulary::build(&c, 1);
        let seqs = segment_corpus(&c, &vocab, 8, 8).unwrap();
        let bl = blacklist(&c, 1);
        let ck = constant(&vocab, "smith", Attention::Bidirectional);
        let audit = audit_masked(&ck, &c, &seqs, &vocab, &bl, 1).unwrap();
        let smith = NGram::from("smith");
        assert!(audit.report.is_leaked(&smith));
        assert_eq!(audit.report.leaked_count(), 1);
        let locs = audit.report.leaked().next().unwrap().2.len();
        assert_eq!(locs, 8);
        assert_eq!(audit.utility.mask_accuracy, Some(0.0));
        assert_eq!(audit.report.privacy_scores().privacy, Some(0.5));
    }

    #[test]
    fn non_identifier_output_leaks_nothing() {
        let c = corpus();
        let vocab = Vocabulary::build(&c, 1);
        let seqs = segment_corpus(&c, &vocab, 8, 8).unwrap();
        let bl = blacklist(&c, 2);
        let ck = constant(&vocab, "the", Attention::Bidirectional);
        let audit = audit_masked(&ck, &c, &seqs, &vocab, &bl, 1).unwrap();
        assert_eq!(audit.report.leaked_count(), 0);
        assert_eq!(audit.report.privacy_scores().privacy, Some(1.0));

        let ck = constant(&vocab, "the", Attention::Causal);
        let cfg = CausalAuditConfig {
            prefix_lengths: vec![1, 2],
            gen_length: 3,
            top_k: 1,
        };
        let audit = audit_causal(&ck, &c, &seqs, &vocab, &bl, &cfg).unwrap();
        assert_eq!(audit.report.leaked_count(), 0);
        assert_eq!(audit.utility.rouge_1, Some(0.0));
    }

    #[test]
    fn generation_leaks_bigrams_probes_do_not() {
        let c = corpus();
        let vocab = Vocabulary::build(&c, 1);
        let seqs = segment_corpus(&c, &vocab, 8, 8).unwrap();
        let bl = blacklist(&c, 2);
        let ck = constant(&vocab, "came", Attention::Bidirectional);
        let audit = audit_masked(&ck, &c, &seqs, &vocab, &bl, 1).unwrap();
        assert_eq!(audit.report.leaked_count(), 0);
        assert!(audit.report.audited().keys().all(|g| g.order() == 1));
        assert!(LeakReport::new(&c, &bl).audited().keys().any(|g| g.order() == 2));

        let mut report = LeakReport::new(&c, &bl);
        let ids = [vocab.encode("jones"), vocab.encode("came"), vocab.encode("home")];
        record_generation(&mut report, &vocab, "b", 2, &ids, 2);
        assert!(report.is_leaked(&NGram::from("jones came")));
        assert!(report.is_leaked(&NGram::from("jones")));
        assert_eq!(report.leaked_by_order().get(&2), Some(&1));
    }

    #[test]
    fn causal_probe_and_generation_leaks() {
        let c = corpus();
        let vocab = Vocabulary::build(&c, 1);
        let seqs = segment_corpus(&c, &vocab, 8, 8).unwrap();
        let bl = blacklist(&c, 1);
        let ck = constant(&vocab, "jones", Attention::Causal);
        let no_gen = CausalAuditConfig {
            prefix_lengths: vec![],
            gen_length: 0,
            top_k: 1,
        };
        let audit = audit_causal(&ck, &c, &seqs, &vocab, &bl, &no_gen).unwrap();
        assert!(audit.report.is_leaked(&NGram::from("jones")));
        assert_eq!(audit.utility.bleu, None);
        // 1 of 8 next-token targets is "jones"
        assert_eq!(audit.utility.token_accuracy, Some(1.0 / 8.0));
    }

    #[test]
    fn objective_and_vocab_checked() {
        let c = corpus();
        let vocab = Vocabulary::build(&c, 1);
        let seqs = segment_corpus(&c, &vocab, 8, 8).unwrap();
        let bl = blacklist(&c, 1);
        let ck = constant(&vocab, "the", Attention::Causal);
        assert!(audit_masked(&ck, &c, &seqs, &vocab, &bl, 1).is_err());
        let small = Vocabulary::from_tokens(["the".to_string()]);
        assert!(audit_causal(&ck, &c, &seqs, &small, &bl, &CausalAuditConfig::default()).is_err());
    }
}
