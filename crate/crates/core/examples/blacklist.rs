//! Tag direct identifiers with rules, find indirect identifiers through the
//! n-gram/patient graph, and combine both into a blacklist.
//!
//! ```bash
//! cargo run --example blacklist
//! ```

use pplm::identify::{
    build_blacklist, identifier_stats, indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger,
};
use pplm::synth::{generate, SynthSpec};

fn main() -> pplm::Result<()> {
    let synth = generate(&SynthSpec {
        patients: 20,
        ..SynthSpec::default()
    })?;
    let corpus = &synth.corpus;

    let tagger = RuleTagger::new(&synth.rules)?;
    let tags = tag_direct(corpus, &tagger);
    println!("{} direct tags from {}", tags.len(), tagger.description());

    let (k, n_max) = (2, 3);
    let graph = BipartiteGraph::build(corpus, n_max)?;
    let indirect = indirect_identifiers(&graph, k)?;
    println!("{} n-grams shared by fewer than {k} patients", indirect.len());

    let bl = build_blacklist(&tags, &indirect, corpus, k, n_max, tagger.description())?;
    let (direct, ind) = bl
        .entries()
        .values()
        .fold((0, 0), |(d, i), f| (d + usize::from(f.direct), i + usize::from(f.indirect)));
    println!("blacklist: {} entries ({direct} direct, {ind} indirect), digest {}", bl.len(), &bl.digest()[..12]);

    let planted = synth.planted_indirect();
    let found = planted.iter().filter(|g| bl.get(g).is_some()).count();
    println!("planted unique tokens blacklisted: {found}/{}", planted.len());

    let doc = &corpus.docs()[0];
    let words = corpus.words(0);
    println!("\nfirst flagged spans of {}:", doc.doc_id);
    for occ in bl.occurrences(words).iter().take(8) {
        let surface: Vec<&str> = words[occ.start..occ.start + occ.len]
            .iter()
            .map(|w| w.normal.as_str())
            .collect();
        println!(
            "  word {:>3}  {:<24} direct={} indirect={}",
            occ.start,
            surface.join(" "),
            occ.flags.direct,
            occ.flags.indirect
        );
    }

    let stats = identifier_stats(corpus, &bl);
    println!("\nmedian indirect identifiers per patient: {:?}", stats.median_indirect());
    print!("{}", stats.patients_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
