//! Condition-initialized Heun sampling with per-step refinement toward the
//! joint condition.
//!
//! Each step blends the state toward the condition, `x ← (1−w)·x + w·c`,
//! takes an Euler step along `d = (x − f(x, t, c))/t`, and, unless the next
//! level is zero, averages in the slope at the proposal (Heun).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{JointVolume, Role};

/// Anything that maps a noisy volume, a noise level and a condition to a
/// denoised estimate.
pub trait Denoise {
    fn denoise(&self, x: &JointVolume, sigma: f64, c: &JointVolume) -> Result<JointVolume>;
}

impl<F> Denoise for F
where
    F: Fn(&JointVolume, f64, &JointVolume) -> Result<JointVolume>,
{
    fn denoise(&self, x: &JointVolume, sigma: f64, c: &JointVolume) -> Result<JointVolume> {
        self(x, sigma, c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from the condition itself.
    #[default]
    Condition,
    /// Start from the condition plus Gaussian noise scaled by the first level.
    ConditionPlusNoise,
}

/// Serializable sampler settings, from which a schedule is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub w: f64,
    pub init_mode: InitMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            w: 0.1,
            init_mode: InitMode::Condition,
        }
    }
}

impl SamplerConfig {
    pub fn schedule(&self) -> Result<SamplerSchedule> {
        build_schedule(self.steps, self.sigma_min, self.sigma_max, self.rho)?
            .with_w(self.w)
            .map(|s| s.with_init_mode(self.init_mode))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSchedule {
    t: Vec<f64>,
    pub w: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub init_mode: InitMode,
}

/// Noise levels `t_0 = σ_max > … > t_{T−1} = σ_min`, interpolated uniformly in
/// `t^{1/ρ}`, followed by `t_T = 0`. Refinement weight defaults to 0.1.
pub fn build_schedule(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<SamplerSchedule> {
    if steps == 0 {
        return Err(Error::Sampler("step count T must be at least 1".into()));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::Sampler(format!(
            "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::Sampler(format!("rho must be at least 1, got {rho}")));
    }
    let (hi, lo) = (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho));
    let mut t: Vec<f64> = if steps == 1 {
        vec![sigma_max]
    } else {
        (0..steps)
            .map(|n| (hi + n as f64 / (steps - 1) as f64 * (lo - hi)).powf(rho))
            .collect()
    };
    t[0] = sigma_max;
    t.push(0.0);
    Ok(SamplerSchedule {
        t,
        w: 0.1,
        sigma_min,
        sigma_max,
        rho,
        init_mode: InitMode::Condition,
    })
}

impl SamplerSchedule {
    /// A schedule over explicit levels, which must be finite, nonnegative and
    /// strictly decreasing.
    pub fn from_levels(t: Vec<f64>, w: f64, init_mode: InitMode) -> Result<Self> {
        if t.len() < 2 {
            return Err(Error::Sampler("a schedule needs at least two levels".into()));
        }
        if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || t.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::Sampler("levels must be finite, nonnegative and strictly decreasing".into()));
        }
        let last_positive = t.iter().rev().find(|v| **v > 0.0).copied().unwrap_or(t[0]);
        Self {
            sigma_min: last_positive,
            sigma_max: t[0],
            rho: 1.0,
            t,
            w: 0.0,
            init_mode,
        }
        .with_w(w)
    }

    pub fn with_w(mut self, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Sampler(format!("refinement weight w must lie in [0, 1], got {w}")));
        }
        self.w = w;
        Ok(self)
    }

    pub fn with_init_mode(mut self, mode: InitMode) -> Self {
        self.init_mode = mode;
        self
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn levels(&self) -> &[f64] {
        &self.t
    }
}

/// `(1−w)·x + w·c`. With `w = 0` the state is returned untouched.
pub fn refine_with_condition(x: &JointVolume, c: &JointVolume, w: f64) -> Result<JointVolume> {
    x.check_shape(c, Error::Sampler)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Sampler(format!("refinement weight w must lie in [0, 1], got {w}")));
    }
    if w == 0.0 {
        return Ok(x.clone());
    }
    let data = x
        .as_slice()
        .iter()
        .zip(c.as_slice())
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect();
    x.with_data(data, x.role())
}

/// Which update rule to use at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Heun,
    Euler,
}

fn slope<D: Denoise + ?Sized>(denoiser: &D, x: &JointVolume, t: f64, c: &JointVolume) -> Result<Vec<f64>> {
    let f = denoiser.denoise(x, t, c)?;
    if !f.same_shape(x) {
        return Err(Error::Sampler("denoiser changed the volume shape".into()));
    }
    Ok(x.as_slice().iter().zip(f.as_slice()).map(|(a, b)| (a - b) / t).collect())
}

fn next_state(x: &JointVolume, data: Vec<f64>, step: usize, t: f64) -> Result<JointVolume> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Sampler(format!(
            "non-finite state at step {step} (t = {t}), flat index {i}"
        )));
    }
    x.with_data(data, Role::Reconstruction)
}

/// Runs the step loop from `x` along `schedule`, refining toward `c` with
/// weight `w` when `refine` is set.
pub fn integrate<D: Denoise + ?Sized>(
    denoiser: &D,
    mut x: JointVolume,
    c: &JointVolume,
    schedule: &SamplerSchedule,
    refine: bool,
    integrator: Integrator,
) -> Result<JointVolume> {
    x.check_shape(c, Error::Sampler)?;
    let t = schedule.levels();
    for n in 0..schedule.steps() {
        if refine {
            x = refine_with_condition(&x, c, schedule.w)?;
        }
        let (tn, tn1) = (t[n], t[n + 1]);
        let h = tn1 - tn;
        let d = slope(denoiser, &x, tn, c)?;
        let euler: Vec<f64> = x.as_slice().iter().zip(&d).map(|(a, s)| a + h * s).collect();
        let proposal = next_state(&x, euler, n, tn1)?;
        x = if integrator == Integrator::Heun && tn1 > 0.0 {
            let d2 = slope(denoiser, &proposal, tn1, c)?;
            let data = x
                .as_slice()
                .iter()
                .zip(d.iter().zip(&d2))
                .map(|(a, (s1, s2))| a + h * 0.5 * (s1 + s2))
                .collect();
            next_state(&x, data, n, tn1)?
        } else {
            proposal
        };
    }
    Ok(x)
}

fn initial_state<R: Rng + ?Sized>(c: &JointVolume, schedule: &SamplerSchedule, rng: &mut R) -> Result<JointVolume> {
    if !c.is_finite() {
        return Err(Error::Sampler("condition holds non-finite values".into()));
    }
    let x0 = match schedule.init_mode {
        InitMode::Condition => c.as_slice().to_vec(),
        InitMode::ConditionPlusNoise => {
            let t0 = schedule.levels()[0];
            c.as_slice()
                .iter()
                .map(|v| v + t0 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    c.with_data(x0, Role::Reconstruction)
}

/// Conditional sampling with refinement weight `schedule.w`.
pub fn sample<D: Denoise + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    c: &JointVolume,
    schedule: &SamplerSchedule,
    rng: &mut R,
) -> Result<JointVolume> {
    let x0 = initial_state(c, schedule, rng)?;
    integrate(denoiser, x0, c, schedule, true, Integrator::Heun)
}

/// The same sampler with the refinement step removed; `c` still seeds the
/// initial state and is passed to the denoiser.
pub fn sample_unrefined<D: Denoise + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    c: &JointVolume,
    schedule: &SamplerSchedule,
    rng: &mut R,
) -> Result<JointVolume> {
    let x0 = initial_state(c, schedule, rng)?;
    integrate(denoiser, x0, c, schedule, false, Integrator::Heun)
}

/// Endpoint errors and the implied order for the linear denoiser `f(x, t) = a·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderProbe {
    pub coarse_error: f64,
    pub fine_error: f64,
    pub order: f64,
}

/// With `f(x, t) = a·x` the flow is `dx/dt = (1−a)·x/t`, solved by
/// `x ∝ t^{1−a}`. Integrates from `σ_max` to `σ_min` over `intervals` and
/// `2·intervals` steps of the ρ-schedule and reports `log₂` of the error ratio.
pub fn heun_order_probe(
    a: f64,
    intervals: usize,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
    integrator: Integrator,
) -> Result<OrderProbe> {
    if intervals == 0 {
        return Err(Error::Sampler("order probe needs at least one interval".into()));
    }
    let linear = |x: &JointVolume, _t: f64, _c: &JointVolume| -> Result<JointVolume> {
        x.with_data(x.as_slice().iter().map(|v| a * v).collect(), Role::Reconstruction)
    };
    let x0 = JointVolume::filled(1, 1, 1.0, Role::Reconstruction);
    let exact = (sigma_min / sigma_max).powf(1.0 - a);
    let error = |k: usize| -> Result<f64> {
        // Drop the trailing zero level: the probe stays on the positive part.
        let mut levels = build_schedule(k + 1, sigma_min, sigma_max, rho)?.levels().to_vec();
        levels.pop();
        let schedule = SamplerSchedule::from_levels(levels, 0.0, InitMode::Condition)?;
        let x = integrate(&linear, x0.clone(), &x0, &schedule, false, integrator)?;
        Ok(x.as_slice().iter().map(|v| (v - exact).abs()).fold(0.0, f64::max))
    };
    let coarse_error = error(intervals)?;
    let fine_error = error(2 * intervals)?;
    Ok(OrderProbe {
        coarse_error,
        fine_error,
        order: (coarse_error / fine_error).log2(),
    })
}
