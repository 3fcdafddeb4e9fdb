//! Overfit a causal model on a small corpus with and without blacklist
//! protection, audit both for regurgitated identifiers, and round-trip the
//! protected checkpoint through its on-disk format.
//!
//! ```bash
//! cargo run --release --example causal_regurgitation
//! ```

use pplm::corpus::{segment_corpus, Vocabulary};
use pplm::evalmetrics::{audit_causal, CausalAuditConfig};
use pplm::experiment::{train_scheme, SchemeTraining};
use pplm::identify::{build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};
use pplm::synth::{generate, SynthSpec};
use pplm::tinylm::{Attention, Checkpoint, ModelConfig, TrainConfig};

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 10,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;
    let tags = tag_direct(corpus, &RuleTagger::new(&synth.rules)?);
    let graph = BipartiteGraph::build(corpus, 3)?;
    let bl = build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, 3, "rules")?;
    let vocab = Vocabulary::build(corpus, 1);
    let seqs = segment_corpus(corpus, &vocab, 64, 63)?;
    let planted = synth.planted_identifiers(synth.truth.keys());

    let epochs = 200;
    let spec = SchemeTraining {
        model: ModelConfig::new(vocab.len(), Attention::Causal, 1),
        train: TrainConfig {
            batch_size: 4,
            learning_rate: 0.5,
            ..TrainConfig::new(epochs, 2)
        },
        mask_rate: 0.15,
        mask_seed: 3,
        milestones: vec![50, 100, epochs],
    };
    let audit_cfg = CausalAuditConfig::default();

    println!("{} documents, {} planted identifiers\n", corpus.len(), planted.len());
    println!("{:<6} {:>5} {:>9} {:>8} {:>14} {:>6}", "scheme", "epoch", "token acc", "privacy", "planted leaked", "BLEU");
    let mut protected = None;
    for name in ["clm", "PPclm"] {
        let trained = train_scheme(corpus, &seqs, &bl, name.parse()?, &spec)?;
        for ck in &trained.checkpoints {
            let audit = audit_causal(ck, corpus, &seqs, &vocab, &bl, &audit_cfg)?;
            let leaked = planted.iter().filter(|g| audit.report.is_leaked(g)).count();
            println!(
                "{:<6} {:>5} {:>9.3} {:>8.3} {:>9}/{:<4} {:>6.3}",
                name,
                ck.provenance.epoch,
                audit.utility.token_accuracy.unwrap_or(0.0),
                audit.report.privacy_scores().privacy.unwrap_or(1.0),
                leaked,
                planted.len(),
                audit.utility.bleu.unwrap_or(0.0)
            );
        }
        protected = Some(trained.last().clone());
    }

    let ck = protected.expect("trained");
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    assert_eq!(back, ck);
    println!("\ncheckpoint: {} bytes, provenance {:?}", bytes.len(), back.provenance);
    Ok(())
}
