//! The conditional denoiser `f_θ(x̂, σ, c)` and its training objective.
//!
//! The backbone output `F` is wrapped in variance-aware preconditioning:
//!
//! ```text
//! f_θ(x̂, σ, c) = c_skip(σ)·x̂ + c_out(σ)·F(c_in(σ)·x̂ ⊕ c, c_noise(σ))
//! c_skip = σ_d²/(σ²+σ_d²)   c_out = σ·σ_d/√(σ²+σ_d²)   c_in = 1/√(σ²+σ_d²)   c_noise = ¼ ln σ
//! ```
//!
//! and trained with `λ(σ)·‖f_θ − y‖²`, `λ(σ) = (σ²+σ_d²)/(σ·σ_d)²`, which
//! equals `1/c_out²` and so normalizes the effective target of `F`.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use train::{train, PerturbedSample, TrainConfig, TrainOutcome, Trainer, TrainingPair};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{perturb_flat, NoiseDraw};
use crate::error::{Error, Result};
use crate::nn::{Architecture, DataLayout, Network};
use crate::real::Real;
use crate::sampler::Denoise;
use crate::volume::{JointVolume, Role};

/// Preconditioning coefficients at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let total = sigma * sigma + sigma_data * sigma_data;
        Self {
            c_skip: sigma_data * sigma_data / total,
            c_out: sigma * sigma_data / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            c_noise: 0.25 * sigma.ln(),
        }
    }
}

/// Loss weight `λ(σ) = (σ² + σ_d²)/(σ·σ_d)²`.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel<T: Real = f32> {
    architecture: Architecture,
    layout: DataLayout,
    sigma_data: f64,
    network: Network,
    params: Vec<T>,
}

fn to_real<T: Real>(xs: &[f64], scale: f64) -> Vec<T> {
    xs.iter().map(|&x| T::of(x * scale)).collect()
}

impl<T: Real> DenoiserModel<T> {
    /// Fresh model with parameters drawn from a seeded stream.
    pub fn new(architecture: Architecture, layout: DataLayout, sigma_data: f64, seed: u64) -> Result<Self> {
        let network = Network::build(&architecture, layout).map_err(Error::Model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = network.init_params(&mut rng);
        Self::assemble(architecture, layout, sigma_data, network, params)
    }

    pub fn from_params(architecture: Architecture, layout: DataLayout, sigma_data: f64, params: Vec<T>) -> Result<Self> {
        let network = Network::build(&architecture, layout).map_err(Error::Model)?;
        Self::assemble(architecture, layout, sigma_data, network, params)
    }

    fn assemble(
        architecture: Architecture,
        layout: DataLayout,
        sigma_data: f64,
        network: Network,
        params: Vec<T>,
    ) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(Error::Model(format!("sigma_data must be positive, got {sigma_data}")));
        }
        if params.len() != network.num_params() {
            return Err(Error::Model(format!(
                "backbone needs {} parameters, got {}",
                network.num_params(),
                params.len()
            )));
        }
        Ok(Self {
            architecture,
            layout,
            sigma_data,
            network,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layout(&self) -> DataLayout {
        self.layout
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn check_inputs(&self, x_hat: &[f64], sigma: f64, cond: &[f64]) -> Result<()> {
        if x_hat.len() != self.layout.data_len() {
            return Err(Error::Model(format!(
                "noisy input has length {}, model expects {}",
                x_hat.len(),
                self.layout.data_len()
            )));
        }
        if cond.len() != self.layout.cond_len() {
            return Err(Error::Model(format!(
                "condition has length {}, model expects {}",
                cond.len(),
                self.layout.cond_len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Model(format!("noise level must be positive, got {sigma}")));
        }
        if let Some(i) = self.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Model(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    /// Backbone output `F` before preconditioning.
    pub fn raw_output(&self, x_hat: &[f64], sigma: f64, cond: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x_hat, sigma, cond)?;
        let pc = Preconditioning::new(sigma, self.sigma_data);
        let (out, _) = self.network.forward(
            &self.params,
            &to_real::<T>(x_hat, pc.c_in),
            &to_real::<T>(cond, 1.0),
            T::of(pc.c_noise),
        );
        Ok(out.into_iter().map(Real::as_f64).collect())
    }

    /// Denoised estimate `f_θ(x̂, σ, c)` on flat data.
    pub fn forward_flat(&self, x_hat: &[f64], sigma: f64, cond: &[f64]) -> Result<Vec<f64>> {
        let pc = Preconditioning::new(sigma, self.sigma_data);
        let raw = self.raw_output(x_hat, sigma, cond)?;
        Ok(x_hat
            .iter()
            .zip(raw)
            .map(|(x, f)| pc.c_skip * x + pc.c_out * f)
            .collect())
    }

    pub fn forward(&self, x_hat: &JointVolume, sigma: f64, c: &JointVolume) -> Result<JointVolume> {
        x_hat.check_shape(c, Error::Model)?;
        let out = self.forward_flat(x_hat.as_slice(), sigma, c.as_slice())?;
        x_hat.with_data(out, Role::Reconstruction)
    }

    /// Weighted loss of one perturbed sample, accumulating `∂loss/∂θ` into `grads`.
    pub fn accumulate_loss_grad(&self, sample: &PerturbedSample, weight: f64, grads: &mut [T]) -> Result<f64> {
        self.check_inputs(&sample.noisy, sample.sigma, &sample.condition)?;
        if sample.target.len() != sample.noisy.len() {
            return Err(Error::Model("target and noisy input differ in length".into()));
        }
        let pc = Preconditioning::new(sample.sigma, self.sigma_data);
        let (raw, tape) = self.network.forward(
            &self.params,
            &to_real::<T>(&sample.noisy, pc.c_in),
            &to_real::<T>(&sample.condition, 1.0),
            T::of(pc.c_noise),
        );
        let lambda = loss_weight(sample.sigma, self.sigma_data);
        let mut loss = 0.0;
        let mut grad_out = Vec::with_capacity(raw.len());
        for ((f, x), y) in raw.iter().zip(&sample.noisy).zip(&sample.target) {
            let resid = pc.c_skip * x + pc.c_out * f.as_f64() - y;
            loss += resid * resid;
            // ∂(λ·resid²)/∂F = 2·λ·c_out·resid
            grad_out.push(T::of(weight * 2.0 * lambda * pc.c_out * resid));
        }
        self.network.backward(&self.params, &tape, &grad_out, grads);
        Ok(lambda * loss)
    }

    /// Mean loss over a batch and its gradient.
    pub fn batch_loss_grad(&self, batch: &[PerturbedSample]) -> Result<(f64, Vec<T>)> {
        if batch.is_empty() {
            return Err(Error::Model("empty batch".into()));
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            loss += w * self.accumulate_loss_grad(s, w, &mut grads)?;
        }
        Ok((loss, grads))
    }

    /// Mean loss over a batch without gradients.
    pub fn batch_loss(&self, batch: &[PerturbedSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let out = self.forward_flat(&s.noisy, s.sigma, &s.condition)?;
            let sq: f64 = out.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum();
            total += loss_weight(s.sigma, self.sigma_data) * sq;
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

impl<T: Real> Denoise for DenoiserModel<T> {
    fn denoise(&self, x: &JointVolume, sigma: f64, c: &JointVolume) -> Result<JointVolume> {
        self.forward(x, sigma, c)
    }
}

/// `λ(σ)·‖f_θ(perturb(y, R, v), σ, c) − y‖²`.
pub fn joint_loss<T: Real>(model: &DenoiserModel<T>, y: &JointVolume, noise: &NoiseDraw, c: &JointVolume) -> Result<f64> {
    y.check_shape(c, Error::Model)?;
    let sample = PerturbedSample::new(y.as_slice(), noise, c.as_slice())?;
    model.batch_loss(std::slice::from_ref(&sample))
}

/// Direction-matching objective `‖F − (x − y)/(r/√D)‖²`.
pub fn field_matching_loss(raw_output: &[f64], x: &[f64], y: &[f64], r: f64, d: usize) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Model(format!("field matching needs r > 0, got {r}")));
    }
    if raw_output.len() != x.len() || x.len() != y.len() {
        return Err(Error::Model("field matching inputs differ in length".into()));
    }
    let scale = r / (d as f64).sqrt();
    Ok(raw_output
        .iter()
        .zip(x.iter().zip(y))
        .map(|(o, (a, b))| (o - (a - b) / scale).powi(2))
        .sum())
}

impl PerturbedSample {
    /// Perturbs `target` with the draw's `R·v`.
    pub fn new(target: &[f64], noise: &NoiseDraw, condition: &[f64]) -> Result<Self> {
        Ok(Self {
            noisy: perturb_flat(target, noise.radius, &noise.direction)?,
            target: target.to_vec(),
            condition: condition.to_vec(),
            sigma: noise.sigma,
        })
    }
}
