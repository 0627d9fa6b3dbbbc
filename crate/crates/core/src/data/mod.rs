//! Phantoms, dose degradation, paired datasets and the tensor archive.

pub mod archive;
mod phantom;

pub use archive::{read_archive, write_archive, Archive, Tensor};
pub use phantom::{
    cross_phase_correlation, generate_phantom, generate_phantom_detailed, Phantom, PhantomSpec, AIR,
    SOFT_TISSUE,
};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{JointVolume, Role, PHASES};

/// Normalized intensity `[-1, 1]` maps to `[-HU_SCALE, HU_SCALE]` pseudo-HU.
pub const HU_SCALE: f64 = 1024.0;

pub fn to_pseudo_hu(v: f64) -> f64 {
    v * HU_SCALE
}

/// Image-domain dose degradation: i.i.d. Gaussian noise with standard
/// deviation `base_sigma / √dose_fraction` on every pixel of every phase.
pub fn simulate_low_dose<R: Rng + ?Sized>(
    y: &JointVolume,
    dose_fraction: f64,
    base_sigma: f64,
    rng: &mut R,
) -> Result<JointVolume> {
    if !(dose_fraction > 0.0 && dose_fraction <= 1.0) {
        return Err(Error::Data(format!("dose fraction must lie in (0, 1], got {dose_fraction}")));
    }
    if !(base_sigma >= 0.0 && base_sigma.is_finite()) {
        return Err(Error::Data(format!("base sigma must be nonnegative, got {base_sigma}")));
    }
    let std = base_sigma / dose_fraction.sqrt();
    let data = y
        .as_slice()
        .iter()
        .map(|v| v + std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    y.with_data(data, Role::Lowdose)
}

/// A routine-dose target with its simulated low-dose counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedVolume {
    pub routine: JointVolume,
    pub lowdose: JointVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub phantom: PhantomSpec,
    pub count: usize,
    pub dose_fraction: f64,
    pub base_sigma: f64,
}

/// Generates `count` phantom pairs. Phantom seeds and dose noise are drawn
/// from one stream seeded by `spec.phantom.seed`. Values are rounded to
/// `f32` so in-memory datasets match what the archive stores.
pub fn generate_pairs(spec: &DatasetSpec) -> Result<Vec<PairedVolume>> {
    if spec.count == 0 {
        return Err(Error::Data("dataset must contain at least one volume".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.phantom.seed);
    (0..spec.count)
        .map(|_| {
            let phantom = PhantomSpec {
                seed: rng.next_u64(),
                ..spec.phantom.clone()
            };
            let routine = round_to_f32(generate_phantom(&phantom)?)?;
            let lowdose = simulate_low_dose(&routine, spec.dose_fraction, spec.base_sigma, &mut rng)?;
            let lowdose = round_to_f32(lowdose)?;
            Ok(PairedVolume { routine, lowdose })
        })
        .collect()
}

fn round_to_f32(v: JointVolume) -> Result<JointVolume> {
    let data = v.as_slice().iter().map(|&x| x as f32 as f64).collect();
    v.with_data(data, v.role())
}

/// Stacks volumes into one `[count, L, W, 3]` tensor.
pub fn volumes_to_tensor(volumes: &[JointVolume]) -> Result<Tensor> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Data("cannot store an empty volume list".into()))?;
    let [rows, cols, _] = first.shape();
    let mut data = Vec::with_capacity(volumes.len() * first.len());
    for v in volumes {
        if v.shape() != first.shape() {
            return Err(Error::Data(format!(
                "shape constant across a dataset: {:?} vs {:?}",
                v.shape(),
                first.shape()
            )));
        }
        data.extend(v.as_slice().iter().map(|&x| x as f32));
    }
    Ok(Tensor::new(vec![volumes.len(), rows, cols, PHASES], data))
}

/// Inverse of [`volumes_to_tensor`]; also accepts a single `[L, W, 3]` tensor.
pub fn tensor_to_volumes(tensor: &Tensor, role: Role) -> Result<Vec<JointVolume>> {
    let (count, rows, cols) = match tensor.shape.as_slice() {
        [n, l, w, 3] => (*n, *l, *w),
        [l, w, 3] => (1, *l, *w),
        other => {
            return Err(Error::Data(format!(
                "expected a [count, L, W, 3] or [L, W, 3] tensor, got {other:?}"
            )))
        }
    };
    let per = rows * cols * PHASES;
    (0..count)
        .map(|i| {
            let data = tensor.data[i * per..(i + 1) * per].iter().map(|&x| x as f64).collect();
            JointVolume::from_interleaved(rows, cols, data, role)
        })
        .collect()
}
