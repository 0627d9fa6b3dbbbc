//! Perturbation-kernel geometry in the augmented `(N + D)`-dimensional space.
//!
//! Every random quantity used to corrupt a training target lives here: the
//! noise level `σ`, the anchor radius `r = σ√D`, the radial magnitude `R` and
//! the isotropic direction `v`.
//!
//! `R` has density `∝ R^{N−1} / (R² + r²)^{(N+D)/2}`. Substituting
//! `B = R² / (R² + r²)` turns this into `B ∼ Beta(N/2, D/2)`, so a draw is
//! `R = r·√(B / (1 − B))`. The Beta variate is built from two Gamma draws
//! (`B = X / (X + Y)`, `X ∼ Γ(N/2, 1)`, `Y ∼ Γ(D/2, 1)`) using the
//! Marsaglia–Tsang squeeze sampler from `rand_distr`, which also covers
//! shape parameters below one through its `U^{1/α}` boost.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::JointVolume;

/// Clamp applied to Beta draws before the radius transform.
pub const BETA_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationParams {
    /// Flattened data dimension.
    pub n: usize,
    /// Augmented dimension.
    pub d: usize,
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl AugmentationParams {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            sigma_data: 0.5,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Augment("data dimension N must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Augment("augmented dimension D must be at least 1".into()));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::Augment(format!(
                "sigma_data must be positive, got {}",
                self.sigma_data
            )));
        }
        if !(self.p_std > 0.0 && self.p_std.is_finite()) || !self.p_mean.is_finite() {
            return Err(Error::Augment(format!(
                "sigma prior needs finite p_mean and positive p_std, got ({}, {})",
                self.p_mean, self.p_std
            )));
        }
        Ok(())
    }
}

/// One perturbation event.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub sigma: f64,
    pub r: f64,
    pub radius: f64,
    pub direction: Vec<f64>,
}

impl NoiseDraw {
    /// Displacement `R·v`.
    pub fn displacement(&self) -> impl Iterator<Item = f64> + '_ {
        self.direction.iter().map(move |v| self.radius * v)
    }
}

pub fn sigma_to_r(sigma: f64, d: usize) -> f64 {
    sigma * (d as f64).sqrt()
}

/// Log-normal noise-level prior: `ln σ ∼ Normal(p_mean, p_std²)`.
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R, params: &AugmentationParams) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (params.p_mean + params.p_std * z).exp()
}

/// Maps a Beta(N/2, D/2) variate to the radial magnitude.
pub fn radius_from_beta(r: f64, beta: f64) -> f64 {
    let b = beta.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP);
    r * (b / (1.0 - b)).sqrt()
}

fn gamma(shape: f64) -> Gamma<f64> {
    Gamma::new(shape, 1.0).expect("positive gamma shape")
}

pub fn sample_radius<R: Rng + ?Sized>(rng: &mut R, r: f64, n: usize, d: usize) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Augment(format!("anchor radius must be positive, got {r}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::Augment(format!("dimensions must be positive, got N={n}, D={d}")));
    }
    let x = gamma(n as f64 / 2.0).sample(rng);
    let y = gamma(d as f64 / 2.0).sample(rng);
    let sum = x + y;
    // Both gammas underflowing to zero is only possible for tiny shapes.
    let beta = if sum > 0.0 { x / sum } else { 0.5 };
    Ok(radius_from_beta(r, beta))
}

/// Uniform direction on the unit sphere in `R^n`.
pub fn sample_unit_direction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    assert!(n >= 1, "direction dimension must be positive");
    loop {
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return u.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws `σ`, `r`, `R` and `v` in that order.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, params: &AugmentationParams) -> Result<NoiseDraw> {
    let sigma = sample_sigma(rng, params);
    draw_noise_at(rng, params, sigma)
}

/// As [`draw_noise`] but with the noise level fixed.
pub fn draw_noise_at<R: Rng + ?Sized>(
    rng: &mut R,
    params: &AugmentationParams,
    sigma: f64,
) -> Result<NoiseDraw> {
    let r = sigma_to_r(sigma, params.d);
    let radius = sample_radius(rng, r, params.n, params.d)?;
    let direction = sample_unit_direction(rng, params.n);
    Ok(NoiseDraw {
        sigma,
        r,
        radius,
        direction,
    })
}

/// `y + R·v` on flat vectors.
pub fn perturb_flat(y: &[f64], radius: f64, direction: &[f64]) -> Result<Vec<f64>> {
    if y.len() != direction.len() {
        return Err(Error::Augment(format!(
            "direction has length {}, data has {}",
            direction.len(),
            y.len()
        )));
    }
    Ok(y.iter().zip(direction).map(|(a, v)| a + radius * v).collect())
}

/// `y + R·v` reshaped to `y`'s shape.
pub fn perturb(y: &JointVolume, radius: f64, direction: &[f64]) -> Result<JointVolume> {
    let data = perturb_flat(y.as_slice(), radius, direction)?;
    y.with_data(data, y.role())
        .map_err(|e| Error::Augment(format!("perturbation produced invalid volume: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Role;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn sigma_to_r_examples() {
        assert_eq!(sigma_to_r(1.0, 4), 2.0);
        assert_eq!(sigma_to_r(0.0, 128), 0.0);
        assert_eq!(sigma_to_r(2.5, 64), 20.0);
    }

    #[test]
    fn degenerate_sigma_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = AugmentationParams {
            p_std: 1e-300,
            ..AugmentationParams::new(4, 8)
        };
        for _ in 0..10 {
            assert_eq!(sample_sigma(&mut rng, &params), (-1.2f64).exp());
        }
    }

    #[test]
    fn log_sigma_moments_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AugmentationParams::new(4, 8);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_sigma(&mut rng, &params)).collect();
        let mean_log = draws.iter().map(|s| s.ln()).sum::<f64>() / n as f64;
        // 3 standard errors of 1.2/sqrt(1e5) is 0.0114, inside the 0.02 band.
        assert!((mean_log + 1.2).abs() < 0.02, "mean ln sigma {mean_log}");
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[n / 2];
        let target = (-1.2f64).exp();
        assert!((median / target - 1.0).abs() < 0.02, "median {median}");
    }

    #[test]
    fn beta_half_gives_r() {
        assert!((radius_from_beta(3.0, 0.5) - 3.0).abs() < 1e-15);
        assert!(radius_from_beta(3.0, 0.0) >= 0.0);
        assert!(radius_from_beta(3.0, 1.0).is_finite());
    }

    #[test]
    fn radius_rejects_nonpositive_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_radius(&mut rng, 0.0, 2, 2).is_err());
        assert!(sample_radius(&mut rng, -1.0, 2, 2).is_err());
    }

    #[test]
    fn radius_second_moment_matches_beta_prime() {
        // E[R²/r²] = N/(D−2) for B ∼ Beta(N/2, D/2).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, draws) = (3usize, 10usize, 200_000usize);
        let samples: Vec<f64> = (0..draws)
            .map(|_| sample_radius(&mut rng, 2.0, n, d).unwrap().powi(2) / 4.0)
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let expected = n as f64 / (d as f64 - 2.0);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn one_dimensional_direction_is_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let plus = (0..n)
            .filter(|_| sample_unit_direction(&mut rng, 1)[0] > 0.0)
            .count();
        let frac = plus as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.005, "{frac}");
    }

    #[test]
    fn three_dimensional_direction_is_centred() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let v = sample_unit_direction(&mut rng, 3);
            for k in 0..3 {
                sum[k] += v[k];
            }
        }
        // Var(v_k) = 1/3 for a uniform direction in R³.
        let se = (1.0 / 3.0 / n as f64).sqrt();
        for s in sum {
            assert!((s / n as f64).abs() < 3.0 * se);
        }
    }

    #[test]
    fn perturb_examples() {
        let y = JointVolume::filled(2, 2, 0.25, Role::Routine);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = sample_unit_direction(&mut rng, y.len());
        assert_eq!(perturb(&y, 0.0, &v).unwrap(), y);

        let zero = JointVolume::zeros(2, 2, Role::Routine);
        let mut e1 = vec![0.0; zero.len()];
        e1[0] = 1.0;
        let out = perturb(&zero, 1.0, &e1).unwrap();
        assert_eq!(out.as_slice(), e1.as_slice());

        let out = perturb(&y, 2.75, &v).unwrap();
        let diff: Vec<f64> = out.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a - b).collect();
        assert!((norm(&diff) / 2.75 - 1.0).abs() < 1e-5);

        assert!(perturb(&y, 1.0, &v[..3]).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let params = AugmentationParams::new(12, 64);
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let x = draw_noise(&mut a, &params).unwrap();
            let y = draw_noise(&mut b, &params).unwrap();
            assert_eq!(x.sigma.to_bits(), y.sigma.to_bits());
            assert_eq!(x.radius.to_bits(), y.radius.to_bits());
            assert!(x.direction.iter().zip(&y.direction).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert_eq!(x.r, x.sigma * 8.0);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn draws_are_well_formed(seed in any::<u64>(), n in 1usize..40, d in 1usize..3000) {
                let params = AugmentationParams::new(n, d);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let draw = draw_noise(&mut rng, &params).unwrap();
                prop_assert!(draw.radius >= 0.0 && draw.radius.is_finite());
                prop_assert!((norm(&draw.direction) - 1.0).abs() < 1e-6);
                prop_assert_eq!(draw.r, draw.sigma * (d as f64).sqrt());
            }
        }
    }
}
