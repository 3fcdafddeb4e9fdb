use std::collections::HashMap;
use std::hash::Hash;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

fn clipped_overlap<T: Hash + Eq>(cand: &[T], reference: &[T], n: usize) -> usize {
    let r = ngram_counts(reference, n);
    ngram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Sentence BLEU: geometric mean of clipped n-gram precisions for
/// `n = 1..=max_n`, times the brevity penalty `exp(min(0, 1 − |ref|/|cand|))`.
///
/// A zero clipped count is smoothed to 1 over an unchanged denominator; an
/// order the candidate is too short to contain counts as precision 1.
/// Empty candidates score 0.
pub fn bleu<T: Hash + Eq>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = candidate.len().saturating_sub(n - 1);
        let p = if total == 0 {
            1.0
        } else {
            let hits = clipped_overlap(candidate, reference, n);
            hits.max(1) as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).min(0.0).exp();
    bp * (log_sum / max_n as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    N(usize),
    L,
}

fn lcs<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE recall. `None` when the reference has no n-grams of the order asked.
pub fn rouge<T: Hash + Eq>(candidate: &[T], reference: &[T], variant: RougeVariant) -> Option<f64> {
    match variant {
        RougeVariant::N(n) => {
            let total = reference.len().checked_sub(n.checked_sub(1)?)?;
            if n == 0 || total == 0 {
                return None;
            }
            Some(clipped_overlap(candidate, reference, n) as f64 / total as f64)
        }
        RougeVariant::L => {
            if reference.is_empty() {
                return None;
            }
            Some(lcs(candidate, reference) as f64 / reference.len() as f64)
        }
    }
}
