use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};
use crate::maskplan::TrainingExample;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example gradient norm bound C. May be infinite.
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial rate, decayed linearly to zero over all steps.
    pub learning_rate: f64,
    pub seed: u64,
    pub dp: Option<DpConfig>,
    /// Rescale each averaged batch gradient to at most this norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-4,
            seed,
            dp: None,
            max_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                problems.push(format!("max_grad_norm must be positive, got {m}"));
            }
        }
        if let Some(dp) = &self.dp {
            if !(dp.clip_norm > 0.0) {
                problems.push(format!("dp.clip_norm must be positive, got {}", dp.clip_norm));
            }
            if !(dp.noise_multiplier >= 0.0 && dp.noise_multiplier.is_finite()) {
                problems.push(format!(
                    "dp.noise_multiplier must be finite and non-negative, got {}",
                    dp.noise_multiplier
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean example loss over examples with at least one loss-bearing slot.
    pub mean_loss: f64,
    pub steps: usize,
}

struct Scratch {
    grad: Vec<f64>,
    acc: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            grad: vec![0.0; n],
            acc: vec![0.0; n],
        }
    }
}

/// Shared SGD/DP-SGD step: per-example gradients are scaled by their clip
/// factor, summed in batch order, optionally noised, averaged by batch size
/// and applied. Without clipping the factor is exactly 1, so plain SGD and
/// DP-SGD with σ = 0 and C = ∞ perform identical arithmetic.
fn step(
    model: &mut Model,
    batch: &[&TrainingExample],
    lr: f64,
    dp: Option<(DpConfig, &mut ChaCha8Rng)>,
    max_norm: Option<f64>,
    scratch: &mut Scratch,
) -> Result<(f64, usize)> {
    scratch.acc.fill(0.0);
    let mut loss_sum = 0.0;
    let mut counted = 0;
    let clip = dp.as_ref().map(|(c, _)| c.clip_norm);
    for ex in batch {
        let loss = model.loss_and_gradient(ex, &mut scratch.grad)?;
        if ex.loss_slots() > 0 {
            loss_sum += loss;
            counted += 1;
        }
        let factor = match clip {
            Some(c) => {
                let norm = scratch.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (a, g) in scratch.acc.iter_mut().zip(&scratch.grad) {
            *a += factor * g;
        }
    }
    if let Some((cfg, rng)) = dp {
        if cfg.noise_multiplier > 0.0 {
            let normal = Normal::new(0.0, cfg.noise_multiplier * cfg.clip_norm)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for a in scratch.acc.iter_mut() {
                *a += normal.sample(rng);
            }
        }
    }
    let b = batch.len() as f64;
    let mut scale = lr / b;
    if let Some(m) = max_norm {
        let norm = scratch.acc.iter().map(|a| a * a).sum::<f64>().sqrt() / b;
        if norm > m {
            scale *= m / norm;
        }
    }
    for (p, a) in model.params_mut().iter_mut().zip(&scratch.acc) {
        *p -= scale * a;
    }
    Ok((loss_sum, counted))
}

/// One plain SGD step on a batch. Returns the summed example loss.
pub fn sgd_step(model: &mut Model, batch: &[&TrainingExample], lr: f64) -> Result<f64> {
    let mut scratch = Scratch::new(model.param_count());
    Ok(step(model, batch, lr, None, None, &mut scratch)?.0)
}

/// One DP-SGD step: clip each example gradient to norm ≤ C, sum, add
/// N(0, (σC)²) per coordinate, average by batch size, apply.
pub fn dp_sgd_step(
    model: &mut Model,
    batch: &[&TrainingExample],
    lr: f64,
    dp: DpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut scratch = Scratch::new(model.param_count());
    Ok(step(model, batch, lr, Some((dp, rng)), None, &mut scratch)?.0)
}

/// Epoch-by-epoch SGD driver. The caller supplies each epoch's examples so
/// masked schemes can re-plan every epoch.
pub struct Trainer {
    config: TrainConfig,
    total_steps: usize,
    step: usize,
    epoch: usize,
    last_loss: f64,
    noise_rng: ChaCha8Rng,
    scratch: Scratch,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig, examples_per_epoch: usize) -> Result<Trainer> {
        config.validate()?;
        let steps_per_epoch = examples_per_epoch.div_ceil(config.batch_size).max(1);
        Ok(Trainer {
            total_steps: steps_per_epoch * config.epochs,
            step: 0,
            epoch: 0,
            last_loss: f64::NAN,
            noise_rng: seed::rng(seed::derive(config.seed, "dp_noise")),
            scratch: Scratch::new(model.param_count()),
            config,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn lr(&self) -> f64 {
        let remaining = self.total_steps.saturating_sub(self.step) as f64;
        self.config.learning_rate * remaining / self.total_steps as f64
    }

    pub fn run_epoch(&mut self, model: &mut Model, examples: &[TrainingExample]) -> Result<EpochStats> {
        if self.epoch >= self.config.epochs {
            return Err(Error::InvalidArgument(format!(
                "all {} epochs already trained",
                self.config.epochs
            )));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = seed::rng(seed::derive_indexed(self.config.seed, "order", self.epoch as u64));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut counted, mut steps) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let lr = self.lr();
            let dp = self.config.dp.map(|c| (c, &mut self.noise_rng));
            let (l, c) = step(model, &batch, lr, dp, self.config.max_grad_norm, &mut self.scratch)?;
            if !l.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.step,
                    last_loss: self.last_loss,
                });
            }
            if c > 0 {
                self.last_loss = l / c as f64;
            }
            loss_sum += l;
            counted += c;
            steps += 1;
            self.step += 1;
        }
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: if counted == 0 { 0.0 } else { loss_sum / counted as f64 },
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BOS, PAD};
    use crate::maskplan::Objective;
    use crate::tinylm::{Attention, ModelConfig};

    fn model(seed: u64) -> Model {
        Model::init(ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            context_length: 8,
            hidden_dim: 16,
            attention: Attention::Causal,
            seed,
        })
        .unwrap()
    }

    fn example(tokens: &[u32]) -> TrainingExample {
        let n = tokens.len() - 1;
        let mut target = tokens[1..].to_vec();
        target.push(PAD);
        let mut loss_mask = vec![true; n];
        loss_mask.push(false);
        TrainingExample {
            objective: Objective::Causal,
            input: tokens.to_vec(),
            target,
            loss_mask,
            len: n,
        }
    }

    fn config(lr: f64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 1,
            learning_rate: lr,
            seed: 4,
            dp: None,
            max_grad_norm: None,
        }
    }

    #[test]
    fn loss_decreases_on_repeated_example() {
        let mut m = model(1);
        let data = vec![example(&[BOS, 4, 5, 6, 7])];
        let mut t = Trainer::new(&m, config(0.5), 1).unwrap();
        let e1 = t.run_epoch(&mut m, &data).unwrap();
        let e2 = t.run_epoch(&mut m, &data).unwrap();
        assert!(e2.mean_loss < e1.mean_loss);
        assert!(t.run_epoch(&mut m, &data).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut m = model(1);
        let before = m.clone();
        let data = vec![example(&[BOS, 4, 5, 6, 7])];
        let mut t = Trainer::new(&m, config(0.0), 1).unwrap();
        t.run_epoch(&mut m, &data).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn dp_reduction_is_bitwise() {
        let data: Vec<TrainingExample> = [[BOS, 4, 5, 6, 7], [BOS, 8, 9, 10, 11], [BOS, 5, 5, 4, 9]]
            .iter()
            .map(|t| example(t))
            .collect();
        let batch: Vec<&TrainingExample> = data.iter().collect();
        let mut plain = model(3);
        let mut dp = plain.clone();
        sgd_step(&mut plain, &batch, 0.3).unwrap();
        let cfg = DpConfig {
            clip_norm: f64::INFINITY,
            noise_multiplier: 0.0,
        };
        dp_sgd_step(&mut dp, &batch, 0.3, cfg, &mut seed::rng(1)).unwrap();
        assert_eq!(
            plain.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
            dp.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn clipping_halves_norm_and_keeps_direction() {
        let ex = example(&[BOS, 4, 5, 6, 7]);
        let base = model(2);
        let mut g = vec![0.0; base.param_count()];
        base.loss_and_gradient(&ex, &mut g).unwrap();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();

        let mut clipped = base.clone();
        let cfg = DpConfig {
            clip_norm: norm / 2.0,
            noise_multiplier: 0.0,
        };
        dp_sgd_step(&mut clipped, &[&ex], 1.0, cfg, &mut seed::rng(1)).unwrap();
        let delta: Vec<f64> = base
            .params()
            .iter()
            .zip(clipped.params())
            .map(|(a, b)| a - b)
            .collect();
        let dnorm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dnorm - norm / 2.0).abs() < 1e-9 * norm);
        let cos = delta.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / (dnorm * norm);
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn max_grad_norm_bounds_the_update() {
        let data = vec![example(&[BOS, 4, 5, 6, 7])];
        let start = model(2);
        let run = |max_grad_norm| {
            let mut m = start.clone();
            let cfg = TrainConfig {
                epochs: 1,
                max_grad_norm,
                ..config(1.0)
            };
            Trainer::new(&m, cfg, 1).unwrap().run_epoch(&mut m, &data).unwrap();
            m.params()
                .iter()
                .zip(start.params())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let free = run(None);
        assert!(free > 0.01);
        assert!((run(Some(0.01)) - 0.01).abs() < 1e-9);
        assert_eq!(run(Some(free * 2.0)), free);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut m = model(1);
        let data = vec![example(&[BOS, 4, 5, 6, 7])];
        let mut t = Trainer::new(&m, config(1e300), 1).unwrap();
        let mut result = Ok(());
        for _ in 0..2 {
            if let Err(e) = t.run_epoch(&mut m, &data) {
                result = Err(e);
                break;
            }
        }
        assert!(matches!(result, Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = model(1);
        let mut c = config(0.1);
        c.epochs = 0;
        assert!(Trainer::new(&m, c.clone(), 1).is_err());
        c.epochs = 1;
        c.dp = Some(DpConfig {
            clip_norm: 0.0,
            noise_multiplier: -1.0,
        });
        match Trainer::new(&m, c, 1) {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            _ => panic!("expected config error"),
        }
    }
}
