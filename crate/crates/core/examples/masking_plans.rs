//! Build masked and causal training plans for every scheme and confirm that
//! protected schemes never put a blacklisted word in the loss.
//!
//! ```bash
//! cargo run --example masking_plans
//! ```

use pplm::corpus::{segment_corpus, Vocabulary, MASK};
use pplm::identify::{build_blacklist, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};
use pplm::maskplan::{apply_plan, eligible_words, plan_causal, plan_masked, Objective, Scheme};
use pplm::synth::{generate, SynthSpec};

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 10,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;
    let tags = tag_direct(corpus, &RuleTagger::new(&synth.rules)?);
    let graph = BipartiteGraph::build(corpus, 3)?;
    let bl = build_blacklist(&tags, &indirect_identifiers(&graph, 2)?, corpus, 2, 3, "rules")?;
    let flags = bl.word_flags(corpus);

    let vocab = Vocabulary::build(corpus, 1);
    let ctx = 64;
    let seqs = segment_corpus(corpus, &vocab, ctx, ctx - 1)?;
    println!("{} windows of up to {ctx} tokens\n", seqs.len());

    println!("{:<8} {:>9} {:>12} {:>18}", "scheme", "eligible", "loss slots", "blacklisted slots");
    for scheme in Scheme::all() {
        let plan = match scheme.objective {
            Objective::Masked => plan_masked(&seqs, &flags, scheme.protection, 0.15, 42)?,
            Objective::Causal => plan_causal(&seqs, &flags, scheme.protection),
        };
        let eligible: usize = seqs
            .iter()
            .map(|s| eligible_words(s, &flags, scheme.protection).len())
            .sum();
        let mut blacklisted = 0;
        for (seq, entries) in seqs.iter().zip(&plan.sequences) {
            for e in entries.iter().filter(|e| e.in_loss) {
                if let Some(w) = seq.word_index[e.position] {
                    blacklisted += usize::from(flags.get(seq.doc, w).any());
                }
            }
        }
        println!(
            "{:<8} {:>9} {:>12} {:>18}",
            scheme.name(),
            eligible,
            plan.loss_targets(),
            blacklisted
        );
    }

    // what one masked example looks like
    let scheme: Scheme = "PPmlm".parse()?;
    let plan = plan_masked(&seqs, &flags, scheme.protection, 0.15, 42)?;
    let ex = apply_plan(&seqs[0], &plan.sequences[0], scheme.objective, ctx)?;
    let shown: Vec<String> = ex.input[..24]
        .iter()
        .map(|&t| match t {
            MASK => "[MASK]".to_string(),
            t => vocab.token(t).unwrap_or("?").to_string(),
        })
        .collect();
    println!("\n{}", shown.join(" "));
    Ok(())
}
