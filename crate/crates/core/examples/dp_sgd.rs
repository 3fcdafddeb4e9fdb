//! DP-SGD: per-example clipping plus Gaussian noise. With σ = 0 and C = ∞
//! it performs exactly the arithmetic of plain SGD; with noise it trades
//! fit for privacy.
//!
//! ```bash
//! cargo run --release --example dp_sgd
//! ```

use pplm::corpus::{segment_corpus, Vocabulary};
use pplm::experiment::{train_scheme, SchemeTraining};
use pplm::identify::{build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};
use pplm::synth::{generate, SynthSpec};
use pplm::tinylm::{Attention, DpConfig, ModelConfig, TrainConfig};

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 5,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;
    let tags = tag_direct(corpus, &RuleTagger::new(&synth.rules)?);
    let graph = BipartiteGraph::build(corpus, 1)?;
    let bl = build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, 1, "rules")?;
    let vocab = Vocabulary::build(corpus, 1);
    let seqs = segment_corpus(corpus, &vocab, 64, 63)?;

    let epochs = 40;
    let run = |dp: Option<DpConfig>| {
        let spec = SchemeTraining {
            model: ModelConfig::new(vocab.len(), Attention::Causal, 1),
            train: TrainConfig {
                batch_size: 4,
                learning_rate: 0.5,
                dp,
                ..TrainConfig::new(epochs, 2)
            },
            mask_rate: 0.15,
            mask_seed: 3,
            milestones: vec![epochs],
        };
        train_scheme(corpus, &seqs, &bl, "clm".parse()?, &spec)
    };

    let plain = run(None)?;
    let reduced = run(Some(DpConfig {
        clip_norm: f64::INFINITY,
        noise_multiplier: 0.0,
    }))?;
    let identical = plain.last().model.params() == reduced.last().model.params();
    println!("σ = 0, C = ∞ reproduces plain SGD bit for bit: {identical}\n");

    println!("{:>6} {:>6} {:>11}", "C", "σ", "final loss");
    let loss = |t: &pplm::experiment::TrainedScheme| t.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    println!("{:>6} {:>6} {:>11.4}", "∞", 0, loss(&plain));
    for (c, sigma) in [(1.0, 0.0), (1.0, 0.05), (1.0, 0.2), (1.0, 0.3)] {
        let t = run(Some(DpConfig {
            clip_norm: c,
            noise_multiplier: sigma,
        }))?;
        println!("{c:>6} {sigma:>6} {:>11.4}", loss(&t));
    }
    Ok(())
}
