use serde::{Deserialize, Serialize};

use super::backward::{loss_and_grad_hooked, LossExample};
use super::forward::PackedCopy;
use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::ModelConfig;
use super::params::Params;
use super::tokens::TokenSequence;
use super::Model;
use crate::error::{Error, Result};

/// One training sequence. `targets[i]` marks whether token `i` is predicted
/// under the loss (it is then the target of position `i - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingEpisode {
    pub tokens: TokenSequence,
    pub targets: Vec<bool>,
    pub transplant: Option<Transplant>,
}

/// Replaces the episode's residual at (`layer`, `target_position`) with the
/// activation of `source` at (`layer`, `source_position`). The source runs
/// in the same batch and receives the gradient of the replaced row.
#[derive(Debug, Clone, PartialEq)]
pub struct Transplant {
    pub source: TokenSequence,
    /// Loss mask over `source`, as in [`TrainingEpisode::targets`].
    pub source_targets: Vec<bool>,
    pub source_position: usize,
    pub target_position: usize,
    pub layer: usize,
}

fn shifted_targets(ids: &[usize], mask: &[bool]) -> Vec<Option<usize>> {
    (0..ids.len())
        .map(|i| match mask.get(i + 1) {
            Some(true) => Some(ids[i + 1]),
            _ => None,
        })
        .collect()
}

impl TrainingEpisode {
    fn loss_targets(&self) -> Vec<Option<usize>> {
        shifted_targets(self.tokens.ids(), &self.targets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHparams {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Cosine decay floor as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainHparams {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            lr: 3e-4,
            warmup_steps: 100,
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl TrainHparams {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps.min(step)) as f64 / span).min(1.0);
        let floor = self.lr * self.min_lr_ratio;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainProgress {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

struct Adam {
    m: Params<f32>,
    v: Params<f32>,
    t: i32,
}

impl Adam {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params<f32>, grads: &Params<f32>, hp: &TrainHparams, lr: f64) {
        self.t += 1;
        let (b1, b2) = (hp.beta1 as f32, hp.beta2 as f32);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let step = lr as f32 / bc1;
        let eps = hp.eps as f32;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / ((v[i] / bc2).sqrt() + eps);
            }
        }
    }
}

fn clip(grads: &mut Params<f32>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn run(
    mut model: Model<f32>,
    data: &mut dyn Iterator<Item = TrainingEpisode>,
    hp: &TrainHparams,
    mut progress: Option<&mut dyn FnMut(TrainProgress)>,
) -> Result<Model<f32>> {
    let mut adam = Adam::new(&model.config);
    for step in 0..hp.steps {
        let episodes: Vec<TrainingEpisode> = (0..hp.batch_size).map_while(|_| data.next()).collect();
        if episodes.is_empty() {
            break;
        }
        for e in &episodes {
            model.validate_input(e.tokens.ids())?;
            if let Some(t) = &e.transplant {
                model.validate_input(t.source.ids())?;
                if t.layer > model.config.n_layers {
                    return Err(Error::InvalidConfig(format!(
                        "transplant layer {} exceeds model depth {}",
                        t.layer, model.config.n_layers
                    )));
                }
                if t.source_position >= t.source.len() || t.target_position >= e.tokens.len() {
                    return Err(Error::InvalidConfig("transplant position out of range".into()));
                }
            }
        }
        let mut copies = Vec::new();
        let mut sources = Vec::new();
        for (i, e) in episodes.iter().enumerate() {
            if let Some(t) = &e.transplant {
                copies.push(PackedCopy {
                    layer: t.layer,
                    from: (episodes.len() + sources.len(), t.source_position),
                    to: (i, t.target_position),
                });
                sources.push(t);
            }
        }
        let batch: Vec<LossExample> = episodes
            .iter()
            .map(|e| LossExample {
                ids: e.tokens.ids(),
                targets: e.loss_targets(),
            })
            .chain(sources.iter().map(|t| LossExample {
                ids: t.source.ids(),
                targets: shifted_targets(t.source.ids(), &t.source_targets),
            }))
            .collect();
        let (loss, _, mut grads) = loss_and_grad_hooked(&model.config, &model.params, &batch, &[], &copies);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: loss as f64,
            });
        }
        clip(&mut grads, hp.grad_clip);
        let lr = hp.lr_at(step);
        adam.step(&mut model.params, &grads, hp, lr);
        if let Some(cb) = progress.as_mut() {
            cb(TrainProgress {
                step,
                loss: loss as f64,
                lr,
            });
        }
    }
    Ok(model)
}

/// Trains a freshly initialised model on `data` with Adam and a cosine
/// schedule.
pub fn train_model(
    config: &ModelConfig,
    data: &mut dyn Iterator<Item = TrainingEpisode>,
    hp: &TrainHparams,
    mixture: &str,
    progress: Option<&mut dyn FnMut(TrainProgress)>,
) -> Result<Checkpoint> {
    let model = Model::new(config.clone())?;
    let model = run(model, data, hp, progress)?;
    Checkpoint::new(
        model,
        TrainingMeta {
            steps: hp.steps,
            data_mixture: mixture.to_string(),
            parent_id: None,
            config_hash: None,
        },
    )
}

/// Continues training `base` on a mixture that includes image tokens.
/// `expected` must equal the base configuration. The learning rate is
/// `hp.lr * lr_multiplier`.
pub fn fine_tune_modality(
    base: &Checkpoint,
    expected: &ModelConfig,
    data: &mut dyn Iterator<Item = TrainingEpisode>,
    hp: &TrainHparams,
    lr_multiplier: f64,
    mixture: &str,
    progress: Option<&mut dyn FnMut(TrainProgress)>,
) -> Result<Checkpoint> {
    if base.config() != expected {
        return Err(Error::InvalidConfig(format!(
            "fine-tune config does not match base checkpoint {}",
            base.id()
        )));
    }
    let scaled = TrainHparams {
        lr: hp.lr * lr_multiplier,
        ..hp.clone()
    };
    let model = run(base.model().clone(), data, &scaled, progress)?;
    Checkpoint::new(
        model,
        TrainingMeta {
            steps: base.meta().steps + hp.steps,
            data_mixture: mixture.to_string(),
            parent_id: Some(base.id().to_string()),
            config_hash: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let hp = TrainHparams {
            steps: 100,
            warmup_steps: 10,
            lr: 1.0,
            min_lr_ratio: 0.1,
            ..TrainHparams::default()
        };
        assert!((hp.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((hp.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((hp.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((hp.lr_at(100) - 0.1).abs() < 1e-12);
        assert!(hp.lr_at(50) < 1.0 && hp.lr_at(50) > 0.1);
    }

    #[test]
    fn loss_targets_shift_by_one() {
        let tokens = TokenSequence::new(vec![5, 6, 7], vec![crate::model::ModalityTag::Text; 3]).unwrap();
        let e = TrainingEpisode {
            tokens,
            targets: vec![false, false, true],
            transplant: None,
        };
        assert_eq!(e.loss_targets(), vec![None, Some(7), None]);
    }
}
