//! Multi-word identifiers: a causal model protected by a unigram-only
//! blacklist still regurgitates rare phrases built from common words, while
//! blacklisting n-grams up to length three stops it.
//!
//! ```bash
//! cargo run --release --example ngram_identifiers
//! ```

use pplm::corpus::{segment_corpus, Vocabulary};
use pplm::evalmetrics::{audit_causal, CausalAuditConfig};
use pplm::experiment::{train_scheme, SchemeTraining};
use pplm::identify::{build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};
use pplm::synth::{generate, SynthSpec};
use pplm::tinylm::{Attention, ModelConfig, TrainConfig};

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 10,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;
    let tags = tag_direct(corpus, &RuleTagger::new(&synth.rules)?);
    let vocab = Vocabulary::build(corpus, 1);
    let seqs = segment_corpus(corpus, &vocab, 64, 63)?;
    let phrases = synth.planted_phrases(synth.truth.keys());
    println!("{} planted phrases, e.g. {:?}\n", phrases.len(), phrases.iter().next());

    let audit_bl = {
        let graph = BipartiteGraph::build(corpus, 3)?;
        build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, 3, "rules")?
    };
    let spec = SchemeTraining {
        model: ModelConfig::new(vocab.len(), Attention::Causal, 1),
        train: TrainConfig {
            batch_size: 4,
            learning_rate: 0.5,
            ..TrainConfig::new(200, 2)
        },
        mask_rate: 0.15,
        mask_seed: 3,
        milestones: vec![200],
    };

    println!("{:<6} {:>5} {:>16} {:>8}", "scheme", "n_max", "leaks by order", "phrases");
    for (name, n_max) in [("clm", 3), ("PPclm", 1), ("PPclm", 3)] {
        let graph = BipartiteGraph::build(corpus, n_max)?;
        let bl = build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, n_max, "rules")?;
        let trained = train_scheme(corpus, &seqs, &bl, name.parse()?, &spec)?;
        // leaks are always counted against the full n-gram blacklist
        let audit = audit_causal(trained.last(), corpus, &seqs, &vocab, &audit_bl, &CausalAuditConfig::default())?;
        let by_order = audit.report.leaked_by_order();
        let phrase_leaks = phrases.iter().filter(|p| audit.report.is_leaked(p)).count();
        println!("{name:<6} {n_max:>5} {:>16} {phrase_leaks:>4}/{}", format!("{by_order:?}"), phrases.len());
    }
    Ok(())
}
