//! Exchange direct-identifier annotations with an external tagger through
//! the CSV word-range format, then pseudonymize the corpus from them.
//!
//! ```bash
//! cargo run --example external_tagger
//! ```

use pplm::identify::{
    annotations_to_string, parse_annotations, pseudonymize, tag_direct, CategoryRules,
    IdentifierCategory, RuleSet, RuleTagger,
};
use pplm::corpus::{Corpus, Document, PatientId};

fn main() -> pplm::Result<()> {
    let doc = |id: &str, patient: &str, text: &str| -> pplm::Result<Document> {
        Ok(Document {
            doc_id: id.into(),
            patient: PatientId::new(patient)?,
            text: text.into(),
        })
    };
    let corpus = Corpus::new(vec![
        doc("n1", "p1", "Mr. Alvarez, age 67, seen by Dr. Okafor on 2019-03-14.")?,
        doc("n2", "p2", "Ms. Lindqvist called 555-0142 about her refill.")?,
    ])?;

    // a small rule set; an external tool would produce the same CSV
    let rules = RuleSet::default()
        .with(
            IdentifierCategory::PatientName,
            CategoryRules {
                dictionary: vec!["alvarez".into(), "lindqvist".into()],
                ..CategoryRules::default()
            },
        )
        .with(
            IdentifierCategory::Doctor,
            CategoryRules {
                patterns: vec![r"Dr\. (\w+)".into()],
                ..CategoryRules::default()
            },
        )
        .with(
            IdentifierCategory::Age,
            CategoryRules {
                patterns: vec![r"age (\d+)".into()],
                ..CategoryRules::default()
            },
        )
        .with(
            IdentifierCategory::Date,
            CategoryRules {
                patterns: vec![r"\d{4}-\d{2}-\d{2}".into()],
                ..CategoryRules::default()
            },
        )
        .with(
            IdentifierCategory::Phone,
            CategoryRules {
                patterns: vec![r"\d{3}-\d{4}".into()],
                ..CategoryRules::default()
            },
        );
    let tags = tag_direct(&corpus, &RuleTagger::new(&rules)?);
    let csv = annotations_to_string(&tags)?;
    print!("{csv}");

    let back = parse_annotations("annotations.csv".as_ref(), &csv, &corpus)?;
    assert_eq!(back, tags);

    let pseudo = pseudonymize(&corpus, &back);
    for d in pseudo.docs() {
        println!("{}: {}", d.doc_id, d.text);
    }

    // ranges are validated against the corpus
    let bad = "doc_id,start_word,end_word,category\nn2,3,99,PHONE\n";
    match parse_annotations("bad.csv".as_ref(), bad, &corpus) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
