//! Privacy and utility metrics from model audits.

mod audit;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::identify::{Blacklist, Flags, NGram};

pub use audit::{audit_causal, audit_masked, Audit, CausalAuditConfig};
pub use text::{bleu, rouge, RougeVariant};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct LeakLocation {
    pub doc_id: String,
    /// Word index in the document.
    pub position: usize,
}

/// Leaked blacklist entries of one audit, restricted to entries that occur
/// in the audited corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakReport {
    pub scheme: String,
    pub checkpoint_digest: String,
    audited: BTreeMap<NGram, Flags>,
    leaked: BTreeMap<NGram, BTreeSet<LeakLocation>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Totals {
    pub all: usize,
    pub direct: usize,
    pub indirect: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrivacyScores {
    pub privacy: Option<f64>,
    pub direct: Option<f64>,
    pub indirect: Option<f64>,
}

impl LeakReport {
    /// Empty report over the blacklist entries present in `corpus`.
    pub fn new(corpus: &Corpus, blacklist: &Blacklist) -> LeakReport {
        let mut audited = BTreeMap::new();
        for (_, words) in corpus.iter() {
            for occ in blacklist.occurrences(words) {
                audited.insert(occ.entry.clone(), occ.flags);
            }
        }
        LeakReport::from_audited(audited)
    }

    pub fn from_audited(audited: BTreeMap<NGram, Flags>) -> LeakReport {
        LeakReport {
            scheme: String::new(),
            checkpoint_digest: String::new(),
            audited,
            leaked: BTreeMap::new(),
        }
    }

    /// Record a leak. Returns false when the entry was not audited.
    pub fn record(&mut self, entry: &NGram, location: LeakLocation) -> bool {
        if !self.audited.contains_key(entry) {
            return false;
        }
        self.leaked.entry(entry.clone()).or_default().insert(location);
        true
    }

    pub fn is_audited(&self, entry: &NGram) -> bool {
        self.audited.contains_key(entry)
    }

    pub fn audited(&self) -> &BTreeMap<NGram, Flags> {
        &self.audited
    }

    pub fn is_leaked(&self, entry: &NGram) -> bool {
        self.leaked.contains_key(entry)
    }

    pub fn leaked(&self) -> impl Iterator<Item = (&NGram, Flags, &BTreeSet<LeakLocation>)> {
        self.leaked
            .iter()
            .map(|(g, locs)| (g, self.audited[g], locs))
    }

    pub fn leaked_count(&self) -> usize {
        self.leaked.len()
    }

    pub fn audited_totals(&self) -> Totals {
        count(self.audited.values().copied())
    }

    pub fn leaked_totals(&self) -> Totals {
        count(self.leaked.keys().map(|g| self.audited[g]))
    }

    /// Leaked entries per n-gram order.
    pub fn leaked_by_order(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for g in self.leaked.keys() {
            *out.entry(g.order()).or_insert(0) += 1;
        }
        out
    }

    pub fn privacy_scores(&self) -> PrivacyScores {
        privacy_scores(self)
    }

    /// Header line with totals, then one JSON record per leaked entry.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            scheme: &'a str,
            checkpoint: &'a str,
            audited: Totals,
            leaked: Totals,
        }
        #[derive(Serialize)]
        struct Line<'a> {
            entry: &'a NGram,
            direct: bool,
            indirect: bool,
            locations: Vec<(&'a str, usize)>,
        }
        let mut out = serde_json::to_string(&Header {
            scheme: &self.scheme,
            checkpoint: &self.checkpoint_digest,
            audited: self.audited_totals(),
            leaked: self.leaked_totals(),
        })
        .expect("serializable");
        out.push('\n');
        for (g, flags, locs) in self.leaked() {
            let line = Line {
                entry: g,
                direct: flags.direct,
                indirect: flags.indirect,
                locations: locs.iter().map(|l| (l.doc_id.as_str(), l.position)).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn count(flags: impl Iterator<Item = Flags>) -> Totals {
    let mut t = Totals::default();
    for f in flags {
        t.all += 1;
        t.direct += usize::from(f.direct);
        t.indirect += usize::from(f.indirect);
    }
    t
}

/// Privacy = 1 − leaked / audited over distinct entries; the direct and
/// indirect scores restrict both counts to entries carrying that flag.
/// A score with no audited entries is absent.
pub fn privacy_scores(report: &LeakReport) -> PrivacyScores {
    let a = report.audited_totals();
    let l = report.leaked_totals();
    let score = |leaked: usize, audited: usize| {
        (audited > 0).then(|| 1.0 - leaked as f64 / audited as f64)
    };
    PrivacyScores {
        privacy: score(l.all, a.all),
        direct: score(l.direct, a.direct),
        indirect: score(l.indirect, a.indirect),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UtilityReport {
    /// Top-1 accuracy over masked probes of non-blacklisted words.
    pub mask_accuracy: Option<f64>,
    /// Top-1 next-token accuracy over every target position.
    pub token_accuracy: Option<f64>,
    pub bleu: Option<f64>,
    pub rouge_1: Option<f64>,
    pub rouge_2: Option<f64>,
    pub rouge_l: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "scheme,epoch,privacy,direct_privacy,indirect_privacy,\
leaked,audited,mask_accuracy,token_accuracy,bleu,rouge_1,rouge_2,rouge_l";

/// One (scheme, epoch) audit condensed to a table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub epoch: usize,
    pub privacy: PrivacyScores,
    pub leaked: usize,
    pub audited: usize,
    pub utility: UtilityReport,
}

impl SummaryRow {
    pub fn new(scheme: &str, epoch: usize, audit: &Audit) -> SummaryRow {
        SummaryRow {
            scheme: scheme.to_string(),
            epoch,
            privacy: audit.report.privacy_scores(),
            leaked: audit.report.leaked_count(),
            audited: audit.report.audited_totals().all,
            utility: audit.utility,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Header plus one line per row, absent values left empty.
pub fn summary_csv<'a>(rows: impl IntoIterator<Item = &'a SummaryRow>) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let (p, u) = (&r.privacy, &r.utility);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.epoch,
            opt(p.privacy),
            opt(p.direct),
            opt(p.indirect),
            r.leaked,
            r.audited,
            opt(u.mask_accuracy),
            opt(u.token_accuracy),
            opt(u.bleu),
            opt(u.rouge_1),
            opt(u.rouge_2),
            opt(u.rouge_l)
        )
        .expect("string write");
    }
    out
}
