//! Per-epoch target plans for every language-modeling scheme.
//!
//! Protected schemes never select a blacklisted word as a loss-bearing
//! target. Blacklisted words stay visible as context.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Sequence, MASK, PAD};
use crate::error::{Error, Result};
use crate::identify::{Flags, WordFlags};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Objective {
    Masked,
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protection {
    /// Plain training.
    None,
    /// Plain training on a corpus whose direct identifiers were replaced by `X`.
    Pseudo,
    DirectOnly,
    IndirectOnly,
    Full,
}

impl Protection {
    /// Whether a word with these flags is barred from being a target.
    pub fn excludes(self, flags: Flags) -> bool {
        match self {
            Protection::None | Protection::Pseudo => false,
            Protection::DirectOnly => flags.direct,
            Protection::IndirectOnly => flags.indirect,
            Protection::Full => flags.any(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scheme {
    pub objective: Objective,
    pub protection: Protection,
}

impl Scheme {
    pub const fn new(objective: Objective, protection: Protection) -> Self {
        Scheme {
            objective,
            protection,
        }
    }

    pub fn all() -> Vec<Scheme> {
        let protections = [
            Protection::None,
            Protection::Pseudo,
            Protection::DirectOnly,
            Protection::IndirectOnly,
            Protection::Full,
        ];
        [Objective::Masked, Objective::Causal]
            .into_iter()
            .flat_map(|o| protections.into_iter().map(move |p| Scheme::new(o, p)))
            .collect()
    }

    pub fn name(&self) -> String {
        let base = match self.objective {
            Objective::Masked => "mlm",
            Objective::Causal => "clm",
        };
        match self.protection {
            Protection::None => base.to_string(),
            Protection::Pseudo => format!("{base}A"),
            Protection::DirectOnly => format!("DPP{base}"),
            Protection::IndirectOnly => format!("IPP{base}"),
            Protection::Full => format!("PP{base}"),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::all()
            .into_iter()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedPosition {
    pub position: usize,
    pub replacement: u32,
    pub target: u32,
    pub in_loss: bool,
}

/// Targets for one epoch of one scheme, one entry list per sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub sequences: Vec<Vec<PlannedPosition>>,
}

pub fn eligible_words(seq: &Sequence, flags: &WordFlags, protection: Protection) -> BTreeSet<usize> {
    seq.words()
        .into_iter()
        .filter(|&w| !protection.excludes(flags.get(seq.doc, w)))
        .collect()
}

fn masked_count(eligible: usize, mask_rate: f64) -> usize {
    // the epsilon keeps exact products such as 0.15 * 20 from rounding up
    ((mask_rate * eligible as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Mask ⌈rate · |eligible|⌉ eligible words per sequence, every token of a
/// chosen word. Each sequence draws from its own stream derived from
/// `(seed, ordinal)`.
pub fn plan_masked(
    sequences: &[Sequence],
    flags: &WordFlags,
    protection: Protection,
    mask_rate: f64,
    seed: u64,
) -> Result<MaskPlan> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask rate must be in (0, 1), got {mask_rate}"
        )));
    }
    let plans = sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut words: Vec<usize> = eligible_words(seq, flags, protection).into_iter().collect();
            let take = masked_count(words.len(), mask_rate);
            let mut rng = seed::rng(seed::derive_indexed(seed, "mask", i as u64));
            words.shuffle(&mut rng);
            let chosen: BTreeSet<usize> = words.into_iter().take(take).collect();
            seq.word_index
                .iter()
                .enumerate()
                .filter(|(_, w)| w.is_some_and(|w| chosen.contains(&w)))
                .map(|(pos, _)| PlannedPosition {
                    position: pos,
                    replacement: MASK,
                    target: seq.tokens[pos],
                    in_loss: true,
                })
                .collect()
        })
        .collect();
    Ok(MaskPlan {
        scheme: Scheme::new(Objective::Masked, protection),
        seed,
        sequences: plans,
    })
}

/// Every position after BOS is a target. Under protection a blacklisted
/// target is swapped for PAD and left out of the loss; since a causal step
/// only sees earlier positions, the true token still forms the context of
/// every later step.
pub fn plan_causal(sequences: &[Sequence], flags: &WordFlags, protection: Protection) -> MaskPlan {
    let plans = sequences
        .iter()
        .map(|seq| {
            (1..seq.len())
                .map(|pos| {
                    let excluded = seq.word_index[pos]
                        .is_some_and(|w| protection.excludes(flags.get(seq.doc, w)));
                    PlannedPosition {
                        position: pos,
                        replacement: if excluded { PAD } else { seq.tokens[pos] },
                        target: seq.tokens[pos],
                        in_loss: !excluded,
                    }
                })
                .collect()
        })
        .collect();
    MaskPlan {
        scheme: Scheme::new(Objective::Causal, protection),
        seed: 0,
        sequences: plans,
    }
}

/// Model-ready example. All vectors have the context length; only the first
/// `len` positions are processed by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub objective: Objective,
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub len: usize,
}

impl TrainingExample {
    pub fn loss_slots(&self) -> usize {
        self.loss_mask[..self.len].iter().filter(|&&m| m).count()
    }
}

/// Masked: input carries MASK at planned positions, targets only there.
/// Causal: slot `i` reads input token `i` and predicts token `i + 1`, so a
/// sequence of length L has L − 1 target slots.
pub fn apply_plan(
    seq: &Sequence,
    entries: &[PlannedPosition],
    objective: Objective,
    context_length: usize,
) -> Result<TrainingExample> {
    let n = seq.len();
    if n > context_length {
        return Err(Error::PlanMismatch(format!(
            "sequence of length {n} exceeds context length {context_length}"
        )));
    }
    let mut input = vec![PAD; context_length];
    let mut target = vec![PAD; context_length];
    let mut loss_mask = vec![false; context_length];
    input[..n].copy_from_slice(&seq.tokens);

    let mut last = None;
    for e in entries {
        if e.position >= n || e.target != seq.tokens[e.position] {
            return Err(Error::PlanMismatch(format!(
                "entry at position {} targets {} but the sequence has {} tokens",
                e.position, e.target, n
            )));
        }
        if last.is_some_and(|l| e.position <= l) {
            return Err(Error::PlanMismatch("positions must strictly increase".into()));
        }
        last = Some(e.position);
    }

    let len = match objective {
        Objective::Masked => {
            for e in entries {
                if e.replacement != MASK {
                    return Err(Error::PlanMismatch("masked plans replace with MASK".into()));
                }
                input[e.position] = MASK;
                target[e.position] = e.target;
                loss_mask[e.position] = e.in_loss;
            }
            n
        }
        Objective::Causal => {
            for e in entries {
                if e.position == 0 {
                    return Err(Error::PlanMismatch("causal plans cannot target BOS".into()));
                }
                let slot = e.position - 1;
                target[slot] = if e.in_loss { e.target } else { e.replacement };
                loss_mask[slot] = e.in_loss;
            }
            n.saturating_sub(1)
        }
    };
    Ok(TrainingExample {
        objective,
        input,
        target,
        loss_mask,
        len,
    })
}

impl MaskPlan {
    pub fn to_file_string(&self, blacklist_digest: &str) -> String {
        let mut out = format!(
            "# plan\tscheme={}\tseed={}\tsequences={}\tblacklist={}\n",
            self.scheme,
            self.seed,
            self.sequences.len(),
            blacklist_digest
        );
        for (i, entries) in self.sequences.iter().enumerate() {
            for e in entries {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    i,
                    e.position,
                    e.replacement,
                    e.target,
                    u8::from(e.in_loss)
                ));
            }
        }
        out
    }

    /// Parse a plan file, returning the plan and its blacklist digest.
    pub fn parse(path: &Path, content: &str) -> Result<(MaskPlan, String)> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let ["# plan", scheme, seed, count, digest] = fields[..] else {
            return Err(err(1, "malformed header".into()));
        };
        let field = |f: &str, key: &str| -> Result<String> {
            f.strip_prefix(key)
                .map(str::to_string)
                .ok_or_else(|| err(1, format!("expected `{key}` field, got `{f}`")))
        };
        let scheme: Scheme = field(scheme, "scheme=")?
            .parse()
            .map_err(|e: Error| err(1, e.to_string()))?;
        let seed: u64 = field(seed, "seed=")?
            .parse()
            .map_err(|_| err(1, "bad seed".into()))?;
        let count: usize = field(count, "sequences=")?
            .parse()
            .map_err(|_| err(1, "bad sequence count".into()))?;
        let digest = field(digest, "blacklist=")?;

        let mut sequences = vec![Vec::new(); count];
        for (i, line) in lines {
            let nums: Vec<&str> = line.split(',').collect();
            let [s, p, r, t, l] = nums[..] else {
                return Err(err(i + 1, "expected 5 comma-separated fields".into()));
            };
            let parse = |v: &str| -> Result<u64> {
                v.parse().map_err(|_| err(i + 1, format!("bad number `{v}`")))
            };
            let ordinal = parse(s)? as usize;
            let entry = PlannedPosition {
                position: parse(p)? as usize,
                replacement: parse(r)? as u32,
                target: parse(t)? as u32,
                in_loss: match l {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(i + 1, format!("bad in_loss flag `{l}`"))),
                },
            };
            let slot = sequences
                .get_mut(ordinal)
                .ok_or_else(|| err(i + 1, format!("sequence ordinal {ordinal} out of range")))?;
            slot.push(entry);
        }
        Ok((
            MaskPlan {
                scheme,
                seed,
                sequences,
            },
            digest,
        ))
    }

    pub fn write(&self, path: &Path, blacklist_digest: &str) -> Result<()> {
        write_file(path, self.to_file_string(blacklist_digest).as_bytes())
    }

    pub fn read(path: &Path) -> Result<(MaskPlan, String)> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &content)
    }

    /// Number of loss-bearing targets across all sequences.
    pub fn loss_targets(&self) -> usize {
        self.sequences
            .iter()
            .flat_map(|s| s.iter())
            .filter(|e| e.in_loss)
            .count()
    }
}
