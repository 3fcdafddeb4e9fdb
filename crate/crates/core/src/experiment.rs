//! In-memory training of one scheme, for experiments that do not need the
//! on-disk pipeline.

use crate::corpus::{Corpus, Sequence};
use crate::error::{Error, Result};
use crate::identify::Blacklist;
use crate::maskplan::{apply_plan, plan_causal, plan_masked, Objective, Scheme, TrainingExample};
use crate::seed;
use crate::tinylm::{Attention, Checkpoint, EpochStats, Model, ModelConfig, Provenance, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeTraining {
    /// Attention is overridden to match the scheme's objective.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mask_rate: f64,
    /// Parent of the per-epoch masking seeds.
    pub mask_seed: u64,
    /// Epochs after which a checkpoint is kept, ascending.
    pub milestones: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainedScheme {
    pub checkpoints: Vec<Checkpoint>,
    pub epochs: Vec<EpochStats>,
}

impl TrainedScheme {
    pub fn at(&self, epoch: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.provenance.epoch == epoch)
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least one milestone")
    }
}

/// Seed of the masking plan for one epoch, as the pipeline derives it.
pub fn epoch_mask_seed(mask_seed: u64, epoch: usize) -> u64 {
    seed::derive_indexed(mask_seed, "epoch", epoch as u64)
}

fn examples(seqs: &[Sequence], plan: &crate::maskplan::MaskPlan, ctx: usize) -> Result<Vec<TrainingExample>> {
    seqs.iter()
        .zip(&plan.sequences)
        .map(|(s, p)| apply_plan(s, p, plan.scheme.objective, ctx))
        .collect()
}

/// Train `scheme` on `sequences` of `corpus` for `train.epochs` epochs,
/// re-planning masked targets every epoch, and keep checkpoints at the
/// milestones.
pub fn train_scheme(
    corpus: &Corpus,
    sequences: &[Sequence],
    blacklist: &Blacklist,
    scheme: Scheme,
    spec: &SchemeTraining,
) -> Result<TrainedScheme> {
    if spec.milestones.is_empty()
        || spec.milestones.windows(2).any(|w| w[0] >= w[1])
        || spec.milestones.iter().any(|&e| e == 0 || e > spec.train.epochs)
    {
        return Err(Error::InvalidArgument(format!(
            "milestones {:?} must be ascending within 1..={}",
            spec.milestones, spec.train.epochs
        )));
    }
    let flags = blacklist.word_flags(corpus);
    let digest = blacklist.digest();
    let cfg = ModelConfig {
        attention: Attention::for_objective(scheme.objective),
        ..spec.model
    };
    let ctx = cfg.context_length;
    let mut model = Model::init(cfg)?;
    let mut trainer = Trainer::new(&model, spec.train.clone(), sequences.len())?;
    let causal = match scheme.objective {
        Objective::Causal => Some(examples(
            sequences,
            &plan_causal(sequences, &flags, scheme.protection),
            ctx,
        )?),
        Objective::Masked => None,
    };
    let mut out = TrainedScheme {
        checkpoints: Vec::new(),
        epochs: Vec::new(),
    };
    for epoch in 1..=spec.train.epochs {
        let stats = match &causal {
            Some(ex) => trainer.run_epoch(&mut model, ex)?,
            None => {
                let plan = plan_masked(
                    sequences,
                    &flags,
                    scheme.protection,
                    spec.mask_rate,
                    epoch_mask_seed(spec.mask_seed, epoch),
                )?;
                trainer.run_epoch(&mut model, &examples(sequences, &plan, ctx)?)?
            }
        };
        out.epochs.push(stats);
        if spec.milestones.contains(&epoch) {
            out.checkpoints.push(Checkpoint::new(
                model.clone(),
                Provenance {
                    scheme: scheme.name(),
                    epoch,
                    init_seed: cfg.seed,
                    train_seed: spec.train.seed,
                    blacklist_digest: digest.clone(),
                },
            )?);
        }
    }
    Ok(out)
}
