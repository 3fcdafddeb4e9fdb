//! Deterministic synthetic patient corpus with planted identifiers.
//!
//! Documents are sentences of pseudo-words. Shared words come from a
//! Zipf-weighted vocabulary arranged into a pool of sentence templates, some
//! with a free slot that draws another Zipf word (the source of incidental
//! unique words). Each patient additionally gets:
//!
//! * unique tokens from a separate syllable inventory (indirect ground truth),
//! * direct entities behind cue words: a surname, a doctor shared with about
//!   one other patient, and a rotating DATE / ID / PHONE value,
//! * short phrases of "phrase words" that are shared individually but whose
//!   combination belongs to one patient (n-gram identifiers).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Corpus, Document, PatientId};
use crate::error::{Error, Result};
use crate::identify::{
    annotations_to_string, CategoryRules, DirectTag, IdentifierCategory, NGram, RuleSet,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub patients: usize,
    pub docs_per_patient: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub shared_vocab: usize,
    pub zipf_exponent: f64,
    pub templates: usize,
    /// Probability that a template carries a free slot.
    pub free_slot_rate: f64,
    pub unique_tokens: usize,
    /// Occurrences of each unique token per document.
    pub unique_repeats: usize,
    pub entities: usize,
    pub phrases: usize,
    pub phrase_vocab: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            patients: 50,
            docs_per_patient: 2,
            min_words: 80,
            max_words: 150,
            shared_vocab: 300,
            zipf_exponent: 1.0,
            templates: 40,
            free_slot_rate: 0.3,
            unique_tokens: 3,
            unique_repeats: 1,
            entities: 3,
            phrases: 2,
            phrase_vocab: 16,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.min_words == 0 || self.min_words > self.max_words {
            problems.push(format!(
                "word range {}..={} is empty",
                self.min_words, self.max_words
            ));
        }
        if self.shared_vocab < 2 {
            problems.push("shared_vocab must be at least 2".into());
        }
        if self.templates == 0 {
            problems.push("templates must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.free_slot_rate) {
            problems.push("free_slot_rate must be in [0, 1]".into());
        }
        if !(self.zipf_exponent > 0.0) {
            problems.push("zipf_exponent must be positive".into());
        }
        if self.unique_tokens > 0 && self.unique_repeats == 0 {
            problems.push("unique_repeats must be at least 1".into());
        }
        if self.phrases > 0 && self.phrase_vocab < 3 {
            problems.push("phrase_vocab must be at least 3 when phrases are planted".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedEntity {
    pub category: IdentifierCategory,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatientTruth {
    pub unique_tokens: Vec<String>,
    pub entities: Vec<PlantedEntity>,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub tags: Vec<DirectTag>,
    pub truth: BTreeMap<PatientId, PatientTruth>,
    /// Rules under which the built-in tagger recovers every planted entity.
    pub rules: RuleSet,
}

const SHARED_CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const SHARED_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const UNIQUE_CONSONANTS: &[&str] = &["z", "x", "q", "j", "w", "h", "zh", "kw"];
const UNIQUE_VOWELS: &[&str] = &["y", "oo", "ae", "ui", "ei"];
const MONTHS: &[&str] = &[
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];
const UNIQUE_CUES: &[&[&str]] = &[&["history", "of"], &["reports"], &["noted"]];

struct Words<'a> {
    used: BTreeSet<String>,
    rng: &'a mut ChaCha8Rng,
}

impl Words<'_> {
    fn fresh(&mut self, consonants: &[&str], vowels: &[&str], syllables: std::ops::RangeInclusive<usize>) -> String {
        loop {
            let n = self.rng.gen_range(syllables.clone());
            let w: String = (0..n)
                .map(|_| {
                    format!(
                        "{}{}",
                        consonants.choose(self.rng).expect("non-empty"),
                        vowels.choose(self.rng).expect("non-empty")
                    )
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn unique_value(&mut self, make: impl Fn(&mut ChaCha8Rng) -> String) -> String {
        loop {
            let v = make(self.rng);
            if self.used.insert(v.clone()) {
                return v;
            }
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn entity_category(patient: usize, e: usize) -> IdentifierCategory {
    match e {
        0 => IdentifierCategory::PatientName,
        1 => IdentifierCategory::Doctor,
        _ => [
            IdentifierCategory::Date,
            IdentifierCategory::Id,
            IdentifierCategory::Phone,
        ][(patient + e - 2) % 3],
    }
}

fn cue(category: IdentifierCategory) -> &'static [&'static str] {
    match category {
        IdentifierCategory::PatientName => &["name"],
        IdentifierCategory::Doctor => &["seen", "by", "dr"],
        IdentifierCategory::Date => &["admitted"],
        IdentifierCategory::Id => &["record"],
        IdentifierCategory::Phone => &["phone"],
        _ => &["ref"],
    }
}

/// One sentence: words plus the index (within it) of a planted entity.
struct Sentence {
    words: Vec<String>,
    entity: Option<(usize, IdentifierCategory)>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, "synth"));
    let mut words = Words {
        used: BTreeSet::new(),
        rng: &mut rng,
    };
    for reserved in UNIQUE_CUES.iter().flat_map(|c| c.iter()) {
        words.used.insert(reserved.to_string());
    }
    for c in IdentifierCategory::ALL {
        for w in cue(c) {
            words.used.insert(w.to_string());
        }
    }

    let shared: Vec<String> = (0..spec.shared_vocab)
        .map(|_| words.fresh(SHARED_CONSONANTS, SHARED_VOWELS, 1..=3))
        .collect();
    let phrase_words: Vec<String> = (0..if spec.phrases > 0 { spec.phrase_vocab } else { 0 })
        .map(|_| words.fresh(SHARED_CONSONANTS, SHARED_VOWELS, 3..=3))
        .collect();
    let zipf = Zipf::new(shared.len() as u64, spec.zipf_exponent)
        .map_err(|e| Error::InvalidArgument(format!("zipf: {e:?}")))?;
    let draw = |rng: &mut ChaCha8Rng| shared[zipf.sample(rng) as usize - 1].clone();

    // template: fixed words with an optional free slot (None)
    let templates: Vec<Vec<Option<String>>> = (0..spec.templates)
        .map(|_| {
            let len = words.rng.gen_range(4..=9);
            let mut t: Vec<Option<String>> = (0..len).map(|_| Some(draw(words.rng))).collect();
            if words.rng.gen_bool(spec.free_slot_rate) {
                let slot = words.rng.gen_range(1..len);
                t[slot] = None;
            }
            t
        })
        .collect();
    let template_zipf = Zipf::new(templates.len() as u64, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("zipf: {e:?}")))?;

    let doctors: Vec<String> = (0..spec.patients.div_ceil(2).max(1))
        .map(|_| capitalize(&words.fresh(SHARED_CONSONANTS, UNIQUE_VOWELS, 2..=2)))
        .collect();
    let mut used_phrases = BTreeSet::new();

    let width = spec.patients.max(1).to_string().len().max(3);
    let mut truth = BTreeMap::new();
    let mut docs = Vec::new();
    let mut tags = Vec::new();
    for p in 0..spec.patients {
        let patient = PatientId::new(format!("p{:0width$}", p + 1))?;
        let unique_tokens: Vec<String> = (0..spec.unique_tokens)
            .map(|_| words.fresh(UNIQUE_CONSONANTS, UNIQUE_VOWELS, 2..=3))
            .collect();
        let entities: Vec<PlantedEntity> = (0..spec.entities)
            .map(|e| {
                let category = entity_category(p, e);
                let value = match category {
                    IdentifierCategory::PatientName => {
                        capitalize(&words.fresh(UNIQUE_CONSONANTS, SHARED_VOWELS, 3..=3))
                    }
                    IdentifierCategory::Doctor => doctors[(p + e) % doctors.len()].clone(),
                    IdentifierCategory::Date => words.unique_value(|r| {
                        format!(
                            "{}{}{}",
                            r.gen_range(1..=28),
                            MONTHS.choose(r).expect("months"),
                            r.gen_range(1990..=2020)
                        )
                    }),
                    IdentifierCategory::Id => {
                        words.unique_value(|r| format!("mrn{}", r.gen_range(10000..=99999)))
                    }
                    _ => words.unique_value(|r| format!("555{:04}", r.gen_range(0..=9999))),
                };
                PlantedEntity { category, value }
            })
            .collect();
        let phrases: Vec<String> = (0..spec.phrases)
            .map(|i| loop {
                let n = 2 + i % 2;
                let phrase: Vec<&str> = phrase_words
                    .choose_multiple(words.rng, n)
                    .map(String::as_str)
                    .collect();
                // every sub-phrase of two or more words must be new as well
                let subs: Vec<String> = (2..=n)
                    .flat_map(|len| phrase.windows(len).map(|w| w.join(" ")))
                    .collect();
                if subs.iter().all(|s| !used_phrases.contains(s)) {
                    used_phrases.extend(subs);
                    break phrase.join(" ");
                }
            })
            .collect();

        for d in 0..spec.docs_per_patient {
            let target = words.rng.gen_range(spec.min_words..=spec.max_words);
            let mut sentences = Vec::new();
            for e in &entities {
                let mut w: Vec<String> = cue(e.category).iter().map(|s| s.to_string()).collect();
                let at = w.len();
                w.push(e.value.clone());
                sentences.push(Sentence {
                    words: w,
                    entity: Some((at, e.category)),
                });
            }
            for (i, tok) in unique_tokens.iter().enumerate() {
                for _ in 0..spec.unique_repeats {
                    let mut w: Vec<String> = UNIQUE_CUES[i % UNIQUE_CUES.len()]
                        .iter()
                        .map(|s| s.to_string())
                        .collect();
                    w.push(tok.clone());
                    sentences.push(Sentence { words: w, entity: None });
                }
            }
            for ph in &phrases {
                sentences.push(Sentence {
                    words: ph.split(' ').map(str::to_string).collect(),
                    entity: None,
                });
            }
            let mut count: usize = sentences.iter().map(|s| s.words.len() + 1).sum();
            while count < target {
                let t = &templates[template_zipf.sample(words.rng) as usize - 1];
                let w: Vec<String> = t
                    .iter()
                    .map(|slot| match slot {
                        Some(w) => w.clone(),
                        None => draw(words.rng),
                    })
                    .collect();
                count += w.len() + 1;
                sentences.push(Sentence { words: w, entity: None });
            }
            sentences.shuffle(words.rng);

            let doc_id = format!("{patient}-{}", d + 1);
            let mut text = String::new();
            let mut index = 0;
            for s in &sentences {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&s.words.join(" "));
                text.push('.');
                if let Some((at, category)) = s.entity {
                    tags.push(DirectTag {
                        doc_id: doc_id.clone(),
                        start: index + at,
                        end: index + at + 1,
                        category,
                    });
                }
                index += s.words.len() + 1;
            }
            docs.push(Document {
                doc_id,
                patient: patient.clone(),
                text,
            });
        }
        truth.insert(
            patient,
            PatientTruth {
                unique_tokens,
                entities,
                phrases,
            },
        );
    }
    tags.sort();

    let dictionary = |cat: IdentifierCategory| -> Vec<String> {
        let set: BTreeSet<String> = truth
            .values()
            .flat_map(|t: &PatientTruth| t.entities.iter())
            .filter(|e| e.category == cat)
            .map(|e| e.value.to_lowercase())
            .collect();
        set.into_iter().collect()
    };
    let month = MONTHS.join("|");
    let rules = RuleSet::default()
        .with(
            IdentifierCategory::PatientName,
            CategoryRules {
                patterns: vec![],
                dictionary: dictionary(IdentifierCategory::PatientName),
            },
        )
        .with(
            IdentifierCategory::Doctor,
            CategoryRules {
                patterns: vec![r"\bdr ([A-Za-z]+)\b".into()],
                dictionary: vec![],
            },
        )
        .with(
            IdentifierCategory::Date,
            CategoryRules {
                patterns: vec![format!(r"\b\d{{1,2}}(?:{month})\d{{4}}\b")],
                dictionary: vec![],
            },
        )
        .with(
            IdentifierCategory::Id,
            CategoryRules {
                patterns: vec![r"\bmrn\d{5}\b".into()],
                dictionary: vec![],
            },
        )
        .with(
            IdentifierCategory::Phone,
            CategoryRules {
                patterns: vec![r"\b555\d{4}\b".into()],
                dictionary: vec![],
            },
        );

    Ok(SynthCorpus {
        corpus: Corpus::new(docs)?,
        tags,
        truth,
        rules,
    })
}

impl SynthCorpus {
    /// Planted unique tokens of all patients, the indirect ground truth.
    pub fn planted_indirect(&self) -> BTreeSet<NGram> {
        self.truth
            .values()
            .flat_map(|t| t.unique_tokens.iter())
            .map(|w| NGram::from(w.as_str()))
            .collect()
    }

    /// Normalized unigrams of planted tokens and entities for the given patients.
    pub fn planted_identifiers<'a>(
        &self,
        patients: impl IntoIterator<Item = &'a PatientId>,
    ) -> BTreeSet<NGram> {
        let mut out = BTreeSet::new();
        for p in patients {
            if let Some(t) = self.truth.get(p) {
                out.extend(t.unique_tokens.iter().map(|w| NGram::from(w.as_str())));
                out.extend(
                    t.entities
                        .iter()
                        .map(|e| NGram::from(e.value.to_lowercase().as_str())),
                );
            }
        }
        out
    }

    /// Planted multi-word phrases for the given patients.
    pub fn planted_phrases<'a>(
        &self,
        patients: impl IntoIterator<Item = &'a PatientId>,
    ) -> BTreeSet<NGram> {
        patients
            .into_iter()
            .filter_map(|p| self.truth.get(p))
            .flat_map(|t| t.phrases.iter())
            .map(|s| NGram::from(s.as_str()))
            .collect()
    }

    /// `planted.tsv`: patient, kind, value.
    pub fn truth_tsv(&self) -> String {
        let mut out = String::from("patient\tkind\tvalue\n");
        for (p, t) in &self.truth {
            for w in &t.unique_tokens {
                out.push_str(&format!("{p}\tUNIQUE\t{w}\n"));
            }
            for e in &t.entities {
                out.push_str(&format!("{p}\t{}\t{}\n", e.category, e.value));
            }
            for ph in &t.phrases {
                out.push_str(&format!("{p}\tPHRASE\t{ph}\n"));
            }
        }
        out
    }

    /// Write `corpus.jsonl`, `annotations.csv`, `planted.tsv` and `rules.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.corpus.write_records(&dir.join("corpus.jsonl"))?;
        write_file(
            &dir.join("annotations.csv"),
            annotations_to_string(&self.tags)?.as_bytes(),
        )?;
        write_file(&dir.join("planted.tsv"), self.truth_tsv().as_bytes())?;
        let rules = serde_json::to_string_pretty(&self.rules)?;
        write_file(&dir.join("rules.json"), rules.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identify::{indirect_identifiers, tag_direct, BipartiteGraph, RuleTagger};

    fn small() -> SynthSpec {
        SynthSpec {
            patients: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn planted_tokens_are_indirect() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.planted_indirect().len(), 30);
        let g = BipartiteGraph::build(&s.corpus, 1).unwrap();
        let ind = indirect_identifiers(&g, 2).unwrap();
        assert!(s.planted_indirect().is_subset(&ind));
    }

    #[test]
    fn tagger_recovers_all_entities() {
        let s = generate(&SynthSpec::default()).unwrap();
        let tagger = RuleTagger::new(&s.rules).unwrap();
        let found: BTreeSet<DirectTag> = tag_direct(&s.corpus, &tagger).into_iter().collect();
        for t in &s.tags {
            assert!(found.contains(t), "missed {t:?}");
        }
        assert_eq!(s.tags.len(), 50 * 2 * 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus.to_records(), b.corpus.to_records());
        let c = generate(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.corpus.to_records(), c.corpus.to_records());
    }

    #[test]
    fn no_planting() {
        let s = generate(&SynthSpec {
            unique_tokens: 0,
            entities: 0,
            phrases: 0,
            ..small()
        })
        .unwrap();
        assert!(s.planted_indirect().is_empty());
        assert!(s.tags.is_empty());
    }

    #[test]
    fn lengths_in_range_and_phrases_unique() {
        let spec = small();
        let s = generate(&spec).unwrap();
        for (_, words) in s.corpus.iter() {
            // the last template sentence may overshoot by at most one sentence
            assert!(words.len() >= spec.min_words && words.len() <= spec.max_words + 10);
        }
        let g = BipartiteGraph::build(&s.corpus, 3).unwrap();
        for p in s.truth.keys() {
            for ph in s.planted_phrases([p]) {
                assert_eq!(g.degree(&ph), 1, "{ph:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(generate(&SynthSpec {
            min_words: 10,
            max_words: 5,
            ..small()
        })
        .is_err());
    }
}
