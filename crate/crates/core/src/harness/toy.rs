//! Low-dimensional toy distributions for oracle and learned-field checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two isotropic Gaussians centered at `±separation/2` on the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub points: usize,
    pub separation: f64,
    pub std: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            points: 200,
            separation: 2.0,
            std: 0.25,
            seed: 0,
        }
    }
}

/// Draws `points` samples, alternating between the two components.
pub fn two_gaussian_mixture(spec: &MixtureSpec) -> Result<Vec<Vec<f64>>> {
    if spec.dim == 0 || spec.points == 0 || !(spec.std >= 0.0) || !spec.separation.is_finite() {
        return Err(Error::Config(format!("invalid mixture specification {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.points)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            (0..spec.dim)
                .map(|k| {
                    let center = if k == 0 { sign * spec.separation / 2.0 } else { 0.0 };
                    center + spec.std * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect())
}
