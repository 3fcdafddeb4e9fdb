//! Membership inference against causal models: a loss-threshold attack and
//! the low-cost identifier attack, which calls a patient a member when the
//! model regurgitates one of the patient's rare n-grams.
//!
//! ```bash
//! cargo run --release --example membership_inference
//! ```

use pplm::attacks::{identifier_mia, loss_mia, MembershipSplit};
use pplm::corpus::{segment_corpus, Corpus, Vocabulary};
use pplm::evalmetrics::{audit_causal, CausalAuditConfig};
use pplm::experiment::{train_scheme, SchemeTraining};
use pplm::identify::{
    build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, Blacklist, DirectTag,
    RuleTagger,
};
use pplm::synth::{generate, SynthSpec};
use pplm::tinylm::{Attention, ModelConfig, TrainConfig};

fn blacklist(corpus: &Corpus, tags: &[DirectTag]) -> pplm::Result<Blacklist> {
    let own: Vec<DirectTag> = tags
        .iter()
        .filter(|t| corpus.doc_index(&t.doc_id).is_some())
        .cloned()
        .collect();
    let graph = BipartiteGraph::build(corpus, 3)?;
    build_blacklist(&own, &indirect_identifiers(&graph, 2)?, corpus, 2, 3, "rules")
}

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 20,
        ..SynthSpec::default()
    })?;
    let tags = tag_direct(&synth.corpus, &RuleTagger::new(&synth.rules)?);
    let split = MembershipSplit::random(&synth.corpus, 0.5, 11)?;
    let train = split.training_corpus();
    println!(
        "{} members ({} documents), {} non-members",
        split.members.len(),
        train.len(),
        split.non_members.len()
    );

    // the trainer protects what it can see; the adversary sees everyone
    let bl = blacklist(&train, &tags)?;
    let adversary = blacklist(&split.auxiliary, &tags)?;
    let vocab = Vocabulary::build(&train, 1);
    let seqs = segment_corpus(&train, &vocab, 64, 63)?;
    let aux_seqs = segment_corpus(&split.auxiliary, &vocab, 64, 63)?;

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

    println!("\n{:<6} {:<10} {:>6} {:>9} {:>7} {:>6}", "scheme", "attack", "AUC", "precision", "recall", "F1");
    for name in ["clm", "PPclm"] {
        let trained = train_scheme(&train, &seqs, &bl, name.parse()?, &spec)?;
        let ck = trained.last();
        let loss = loss_mia(ck, &split, &vocab, 63, 5)?;
        let audit = audit_causal(ck, &split.auxiliary, &aux_seqs, &vocab, &adversary, &CausalAuditConfig::default())?;
        let ident = identifier_mia(&audit.report, &adversary, &split);
        for (attack, r) in [("loss", &loss), ("identifier", &ident)] {
            println!(
                "{:<6} {:<10} {:>6.3} {:>9.3} {:>7.3} {:>6.3}",
                name,
                attack,
                r.roc.as_ref().map_or(f64::NAN, |c| c.auc),
                r.precision.unwrap_or(0.0),
                r.recall.unwrap_or(0.0),
                r.f1.unwrap_or(0.0)
            );
        }
    }
    Ok(())
}
