//! Privacy/utility trade-off of masked language modeling: an unprotected
//! model starts predicting identifiers as training goes on, a model trained
//! on blacklist-protected plans does not.
//!
//! ```bash
//! cargo run --release --example mlm_tradeoff
//! ```
//! Pass a patient count to change the corpus size (default 20).

use pplm::corpus::{segment_corpus, Vocabulary};
use pplm::evalmetrics::{audit_masked, summary_csv, SummaryRow};
use pplm::experiment::{train_scheme, SchemeTraining};
use pplm::identify::{build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};
use pplm::synth::{generate, SynthSpec};
use pplm::tinylm::{Attention, ModelConfig, TrainConfig};

fn main() -> pplm::Result<()> {
    let patients = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let synth = generate(&SynthSpec {
        patients,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;
    let tags = tag_direct(corpus, &RuleTagger::new(&synth.rules)?);
    let graph = BipartiteGraph::build(corpus, 1)?;
    let bl = build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, 1, "rules")?;
    let vocab = Vocabulary::build(corpus, 1);
    let seqs = segment_corpus(corpus, &vocab, 64, 63)?;

    let spec = SchemeTraining {
        model: ModelConfig {
            embed_dim: 64,
            hidden_dim: 128,
            ..ModelConfig::new(vocab.len(), Attention::Bidirectional, 1)
        },
        train: TrainConfig {
            batch_size: 1,
            learning_rate: 0.3,
            max_grad_norm: Some(5.0),
            ..TrainConfig::new(64, 2)
        },
        mask_rate: 0.15,
        mask_seed: 3,
        milestones: vec![4, 8, 16, 32, 64],
    };

    let mut rows = Vec::new();
    for name in ["mlm", "DPPmlm", "PPmlm"] {
        let trained = train_scheme(corpus, &seqs, &bl, name.parse()?, &spec)?;
        for ck in &trained.checkpoints {
            let audit = audit_masked(ck, corpus, &seqs, &vocab, &bl, 1)?;
            rows.push(SummaryRow::new(name, ck.provenance.epoch, &audit));
        }
        eprintln!("{name}: final loss {:.3}", trained.epochs.last().map_or(0.0, |e| e.mean_loss));
    }
    print!("{}", summary_csv(&rows));
    Ok(())
}
