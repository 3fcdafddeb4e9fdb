//! Membership inference and extraction probes against checkpoints.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{segment_corpus, Corpus, PatientId, Sequence, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::LeakReport;
use crate::identify::{Blacklist, WordFlags};
use crate::maskplan::{apply_plan, plan_causal, plan_masked, Protection};
use crate::seed;
use crate::tinylm::{Attention, Checkpoint};

/// Who trained and who did not, plus the adversary's documents about both.
#[derive(Debug, Clone)]
pub struct MembershipSplit {
    pub members: BTreeSet<PatientId>,
    pub non_members: BTreeSet<PatientId>,
    pub auxiliary: Corpus,
}

impl MembershipSplit {
    pub fn new(
        members: BTreeSet<PatientId>,
        non_members: BTreeSet<PatientId>,
        auxiliary: Corpus,
    ) -> Result<Self> {
        if let Some(p) = members.intersection(&non_members).next() {
            return Err(Error::InvalidArgument(format!(
                "patient {p} is both member and non-member"
            )));
        }
        let covered: BTreeSet<&PatientId> = auxiliary.patients().collect();
        if let Some(p) = members.iter().chain(&non_members).find(|p| !covered.contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "auxiliary corpus has no documents for patient {p}"
            )));
        }
        Ok(MembershipSplit {
            members,
            non_members,
            auxiliary,
        })
    }

    /// Seeded split of a corpus's patients; the adversary holds every
    /// document. Members are the first ⌈fraction · n⌉ patients after a shuffle.
    pub fn random(corpus: &Corpus, member_fraction: f64, seed: u64) -> Result<Self> {
        if !(member_fraction > 0.0 && member_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "member fraction must be in (0, 1), got {member_fraction}"
            )));
        }
        let mut patients: Vec<PatientId> = corpus.patients().cloned().collect();
        patients.shuffle(&mut seed::rng(seed::derive(seed, "membership")));
        let m = ((patients.len() as f64 * member_fraction).ceil() as usize).min(patients.len());
        let non_members = patients.split_off(m).into_iter().collect();
        Self::new(patients.into_iter().collect(), non_members, corpus.clone())
    }

    pub fn is_member(&self, p: &PatientId) -> bool {
        self.members.contains(p)
    }

    /// Auxiliary documents of the members.
    pub fn training_corpus(&self) -> Corpus {
        self.auxiliary.restrict(&self.members)
    }

    fn labeled(&self) -> impl Iterator<Item = (&PatientId, bool)> {
        self.members
            .iter()
            .map(|p| (p, true))
            .chain(self.non_members.iter().map(|p| (p, false)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (FPR, TPR), from (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// TPR at a target FPR, interpolating linearly between points.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let mut best = (0.0, 0.0);
        for w in self.points.windows(2) {
            let ((f0, t0), (f1, t1)) = (w[0], w[1]);
            if f1 <= fpr {
                best = (f1, t1);
                continue;
            }
            if f0 <= fpr && f1 > fpr {
                return t0 + (t1 - t0) * (fpr - f0) / (f1 - f0);
            }
        }
        best.1
    }
}

/// Threshold sweep from the highest score down, ties moving together;
/// trapezoid AUC, which equals P(member outranks non-member) + ½ P(tie).
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs at least one member and one non-member".into(),
        ));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::InvalidArgument("scores must not be NaN".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let (fpr, tpr) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (pf, pt) = *points.last().expect("non-empty");
        auc += (fpr - pf) * (tpr + pt) / 2.0;
        points.push((fpr, tpr));
        i = j;
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub scores: BTreeMap<PatientId, f64>,
    pub predictions: BTreeMap<PatientId, bool>,
    pub roc: Option<RocCurve>,
    pub tpr_at_1pct_fpr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Patients left out because they had nothing to score.
    pub excluded: Vec<PatientId>,
}

impl AttackResult {
    fn build(
        split: &MembershipSplit,
        scores: BTreeMap<PatientId, f64>,
        predictions: BTreeMap<PatientId, bool>,
        excluded: Vec<PatientId>,
    ) -> Self {
        let labeled: Vec<(f64, bool)> = split
            .labeled()
            .filter_map(|(p, m)| scores.get(p).map(|s| (*s, m)))
            .collect();
        let roc = roc_curve(&labeled).ok();
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, m) in split.labeled() {
            match (predictions.get(p).copied().unwrap_or(false), m) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        AttackResult {
            tpr_at_1pct_fpr: roc.as_ref().map(|r| r.tpr_at(0.01)),
            roc,
            scores,
            predictions,
            precision,
            recall,
            f1,
            excluded,
        }
    }
}

/// Score each patient by the negative mean token loss of their auxiliary
/// documents. Causal checkpoints score every next-token slot; masked ones
/// score a fixed-seed 15% masking. Patients above the median score are
/// predicted members.
pub fn loss_mia(
    ck: &Checkpoint,
    split: &MembershipSplit,
    vocab: &Vocabulary,
    stride: usize,
    seed: u64,
) -> Result<AttackResult> {
    let model = &ck.model;
    let ctx = model.config().context_length;
    let sequences = segment_corpus(&split.auxiliary, vocab, ctx, stride)?;
    let flags = WordFlags::unflagged(&split.auxiliary);
    let plan = match model.config().attention {
        Attention::Causal => plan_causal(&sequences, &flags, Protection::None),
        Attention::Bidirectional => plan_masked(&sequences, &flags, Protection::None, 0.15, seed)?,
    };
    let mut sums: BTreeMap<&PatientId, (f64, usize)> = BTreeMap::new();
    for (seq, entries) in sequences.iter().zip(&plan.sequences) {
        let ex = apply_plan(seq, entries, plan.scheme.objective, ctx)?;
        if ex.len == 0 {
            continue;
        }
        let eval = model.evaluate(&ex)?;
        let slot = sums.entry(&seq.patient).or_default();
        slot.0 += eval.loss * eval.loss_slots as f64;
        slot.1 += eval.loss_slots;
    }
    let mut scores = BTreeMap::new();
    let mut excluded = Vec::new();
    for (p, _) in split.labeled() {
        match sums.get(p) {
            Some(&(sum, n)) if n > 0 => {
                scores.insert(p.clone(), -sum / n as f64);
            }
            _ => excluded.push(p.clone()),
        }
    }
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 0 {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    } else {
        sorted[sorted.len() / 2]
    };
    let predictions = scores.iter().map(|(p, s)| (p.clone(), *s > median)).collect();
    Ok(AttackResult::build(split, scores, predictions, excluded))
}

/// A patient is predicted a member when any indirect entry of the adversary
/// blacklist found in their auxiliary documents appears in the leak report.
/// The score is the number of such leaked entries.
pub fn identifier_mia(
    report: &LeakReport,
    adversary: &Blacklist,
    split: &MembershipSplit,
) -> AttackResult {
    let mut scores = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    for (p, _) in split.labeled() {
        let mut own = BTreeSet::new();
        for &d in split.auxiliary.patient_docs(p) {
            for occ in adversary.occurrences(split.auxiliary.words(d)) {
                if occ.flags.indirect {
                    own.insert(occ.entry);
                }
            }
        }
        let leaked = own.iter().filter(|g| report.is_leaked(g)).count();
        scores.insert(p.clone(), leaked as f64);
        predictions.insert(p.clone(), leaked > 0);
    }
    AttackResult::build(split, scores, predictions, Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extractability {
    pub attempted: usize,
    pub extractable: usize,
    /// Occurrences with fewer than `k_prefix` preceding tokens in their window.
    pub skipped: usize,
    pub fraction: Option<f64>,
}

/// For every blacklist-entry occurrence inside a training window, feed the
/// `k_prefix` tokens before it at their original positions and check whether
/// greedy generation reproduces the entry verbatim.
pub fn k_extractability(
    ck: &Checkpoint,
    corpus: &Corpus,
    sequences: &[Sequence],
    blacklist: &Blacklist,
    k_prefix: usize,
) -> Result<Extractability> {
    let model = &ck.model;
    if model.config().attention != Attention::Causal {
        return Err(Error::ObjectiveMismatch(
            "extraction needs a causal checkpoint".into(),
        ));
    }
    if k_prefix == 0 {
        return Err(Error::InvalidArgument("k_prefix must be at least 1".into()));
    }
    let (mut attempted, mut extractable, mut skipped) = (0, 0, 0);
    for seq in sequences {
        let words = corpus.words(seq.doc);
        for occ in blacklist.occurrences(words) {
            let Some(p) = seq.word_index.iter().position(|w| *w == Some(occ.start)) else {
                continue;
            };
            if p + occ.len > seq.len() {
                continue;
            }
            if p < k_prefix {
                skipped += 1;
                continue;
            }
            attempted += 1;
            let out = model.generate_at(&seq.tokens[p - k_prefix..p], p - k_prefix, occ.len)?;
            if out == seq.tokens[p..p + occ.len] {
                extractable += 1;
            }
        }
    }
    Ok(Extractability {
        attempted,
        extractable,
        skipped,
        fraction: (attempted > 0).then(|| extractable as f64 / attempted as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mann_whitney(scores: &[(f64, bool)]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for a in scores.iter().filter(|s| s.1) {
            for b in scores.iter().filter(|s| !s.1) {
                pairs += 1.0;
                num += if a.0 > b.0 {
                    1.0
                } else if a.0 == b.0 {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / pairs
    }

    #[test]
    fn trivial_curves() {
        assert_eq!(roc_curve(&[(1.0, true), (0.0, false)]).unwrap().auc, 1.0);
        assert_eq!(roc_curve(&[(0.0, true), (1.0, false)]).unwrap().auc, 0.0);
        assert_eq!(roc_curve(&[(0.3, true), (0.3, false), (0.3, true)]).unwrap().auc, 0.5);
        assert!(roc_curve(&[(1.0, true)]).is_err());
    }

    #[test]
    fn hand_picked_with_tie() {
        let s = [
            (0.9, true),
            (0.8, false),
            (0.7, true),
            (0.7, false),
            (0.4, true),
            (0.1, false),
        ];
        // pairs won: 0.9 beats 3, 0.7 beats 0.1 and ties 0.7, 0.4 beats 0.1
        let expected = (3.0 + 1.0 + 0.5 + 1.0) / 9.0;
        let roc = roc_curve(&s).unwrap();
        assert!((roc.auc - expected).abs() < 1e-12);
        assert!((roc.auc - mann_whitney(&s)).abs() < 1e-12);
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn tpr_interpolation() {
        let roc = RocCurve {
            points: vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)],
            auc: 0.0,
        };
        assert_eq!(roc.tpr_at(0.0), 0.5);
        assert!((roc.tpr_at(0.25) - 0.75).abs() < 1e-12);
        assert_eq!(roc.tpr_at(1.0), 1.0);
    }

    proptest! {
        #[test]
        fn auc_is_mann_whitney(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<(f64, bool)> = raw.iter().map(|(s, m)| (*s as f64 / 7.0, *m)).collect();
            prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
            let roc = roc_curve(&scores).unwrap();
            prop_assert!((roc.auc - mann_whitney(&scores)).abs() < 1e-9);
            prop_assert!(roc.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }
}
