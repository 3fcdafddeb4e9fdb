//! Generate a synthetic multi-patient corpus with planted identifiers and
//! write it, with its ground truth, to a directory.
//!
//! ```bash
//! cargo run --example synthetic_corpus -- /tmp/synth
//! ```

use std::path::PathBuf;

use pplm::synth::{generate, SynthSpec};

fn main() -> pplm::Result<()> {
    let spec = SynthSpec {
        patients: 8,
        ..SynthSpec::default()
    };
    let synth = generate(&spec)?;
    let corpus = &synth.corpus;
    println!(
        "{} documents, {} patients, {} words",
        corpus.len(),
        corpus.patient_count(),
        corpus.word_count()
    );

    let (first, truth) = synth.truth.iter().next().expect("patients were generated");
    println!("patient {first}");
    println!("  unique tokens: {:?}", truth.unique_tokens);
    for e in &truth.entities {
        println!("  {:<9} {}", e.category.as_str(), e.value);
    }
    println!("  phrases: {:?}", truth.phrases);

    let doc = corpus.patient_docs(first)[0];
    let text = &corpus.docs()[doc].text;
    println!("\n{}", &text[..text.len().min(240)]);

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        synth.write(&dir)?;
        println!("\nwrote corpus.jsonl, annotations.csv, planted.tsv, rules.json to {}", dir.display());
    }
    Ok(())
}
