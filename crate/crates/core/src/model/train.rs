use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::DenoiserModel;
use crate::augment::{draw_noise, AugmentationParams};
use crate::data::PairedVolume;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many iterations (0 disables intermediate checkpoints).
    pub checkpoint_every: usize,
    pub augmentation: AugmentationParams,
}

impl TrainConfig {
    pub fn new(augmentation: AugmentationParams) -> Self {
        Self {
            batch_size: 32,
            iterations: 1000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            augmentation,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Model("batch size and iteration count must be positive".into()));
        }
        if !(self.lr > 0.0 && self.eps > 0.0) {
            return Err(Error::Model("learning rate and epsilon must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Model(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// A routine-dose target and its low-dose condition, flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub target: Vec<f64>,
    pub condition: Vec<f64>,
}

impl From<&PairedVolume> for TrainingPair {
    fn from(p: &PairedVolume) -> Self {
        Self {
            target: p.routine.as_slice().to_vec(),
            condition: p.lowdose.as_slice().to_vec(),
        }
    }
}

/// A target perturbed at noise level `sigma`, with its condition.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedSample {
    pub target: Vec<f64>,
    pub noisy: Vec<f64>,
    pub condition: Vec<f64>,
    pub sigma: f64,
}

/// Owns a model, its optimizer state and the sampling stream.
pub struct Trainer<T: Real> {
    pub model: DenoiserModel<T>,
    pub optimizer: AdamState<T>,
    pub loss_history: Vec<f64>,
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: DenoiserModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.augmentation.n != model.layout().data_len() {
            return Err(Error::Model(format!(
                "augmentation dimension N={} does not match model data length {}",
                config.augmentation.n,
                model.layout().data_len()
            )));
        }
        let optimizer = AdamState::new(model.num_params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            optimizer,
            loss_history: Vec::new(),
            config,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.loss_history.len()
    }

    /// Draws a training batch: for each element pick a pair, then `σ`,
    /// `r = σ√D`, `R` and `v`, and perturb the target.
    pub fn draw_batch(&mut self, data: &[TrainingPair]) -> Result<Vec<PerturbedSample>> {
        (0..self.config.batch_size)
            .map(|_| {
                let pair = &data[self.rng.gen_range(0..data.len())];
                let noise = draw_noise(&mut self.rng, &self.config.augmentation)?;
                PerturbedSample::new(&pair.target, &noise, &pair.condition)
            })
            .collect()
    }

    /// One optimizer update on a given batch. Returns the batch loss before the update.
    pub fn step_on(&mut self, batch: &[PerturbedSample]) -> Result<f64> {
        let (loss, grads) = self.model.batch_loss_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::Model(format!(
                "non-finite loss at iteration {}",
                self.iteration() + 1
            )));
        }
        let adam = self.config.adam();
        adam_step(&mut self.optimizer, self.model.params_mut(), &grads, &adam)?;
        self.loss_history.push(loss);
        Ok(loss)
    }

    pub fn step(&mut self, data: &[TrainingPair]) -> Result<f64> {
        let batch = self.draw_batch(data)?;
        self.step_on(&batch)
    }
}

pub struct TrainOutcome<T: Real> {
    pub model: DenoiserModel<T>,
    pub optimizer: AdamState<T>,
    pub loss_history: Vec<f64>,
}

fn check_dataset(data: &[TrainingPair], model_len: usize, cond_len: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Model("training dataset is empty".into()));
    }
    for (i, p) in data.iter().enumerate() {
        if p.target.len() != model_len || p.condition.len() != cond_len {
            return Err(Error::Model(format!(
                "pair {i} has target/condition lengths {}/{}, model expects {model_len}/{cond_len}",
                p.target.len(),
                p.condition.len()
            )));
        }
    }
    Ok(())
}

/// Runs the full training loop. `on_checkpoint` is called every
/// `checkpoint_every` iterations and after the last one.
pub fn train<T: Real>(
    model: DenoiserModel<T>,
    data: &[TrainingPair],
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Trainer<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let layout = model.layout();
    check_dataset(data, layout.data_len(), layout.cond_len())?;
    let mut trainer = Trainer::new(model, config.clone())?;
    for it in 1..=config.iterations {
        trainer.step(data)?;
        let cadence = config.checkpoint_every > 0 && it % config.checkpoint_every == 0;
        if cadence || it == config.iterations {
            on_checkpoint(&trainer)?;
        }
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {:.6}", trainer.loss_history[it - 1]);
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        optimizer: trainer.optimizer,
        loss_history: trainer.loss_history,
    })
}
