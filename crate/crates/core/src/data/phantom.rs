//! Synthetic multiphase phantoms.
//!
//! One anatomy (body outline, organ ellipses, fine tissue texture) is shared
//! by all three phases; only the vessel discs change intensity, by the
//! per-phase contrast amplitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{JointVolume, Phase, Role, PHASES};

/// Intensity of the region outside the body.
pub const AIR: f64 = -1.0;
/// Soft-tissue baseline inside the body outline.
pub const SOFT_TISSUE: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    /// Inclusive range of organ ellipses.
    pub ellipses: [usize; 2],
    /// Inclusive range of vessel discs.
    pub vessels: [usize; 2],
    /// Vessel enhancement per phase (I, II, III).
    pub amplitudes: [f64; PHASES],
    /// Standard deviation of the shared tissue texture.
    pub tissue_noise: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            ellipses: [3, 6],
            vessels: [3, 6],
            amplitudes: [0.05, 0.30, 0.15],
            tissue_noise: 0.005,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 8 || self.cols < 8 {
            return Err(Error::Data(format!(
                "phantom must be at least 8x8, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.ellipses[0] > self.ellipses[1] || self.vessels[0] > self.vessels[1] {
            return Err(Error::Data("count ranges must satisfy min <= max".into()));
        }
        let [a1, a2, a3] = self.amplitudes;
        if !(a2 >= a3 && a3 >= a1) {
            return Err(Error::Data(format!(
                "amplitudes must satisfy phase II >= phase III >= phase I, got {:?}",
                self.amplitudes
            )));
        }
        if !(self.tissue_noise >= 0.0) || self.amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Data("tissue noise and amplitudes must be finite, noise nonnegative".into()));
        }
        Ok(())
    }
}

/// A phantom together with the pixels covered by vessels.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: JointVolume,
    pub vessel_mask: Vec<bool>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

pub fn generate_phantom_detailed(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, cols) = (spec.rows, spec.cols);
    let (h, w) = (rows as f64, cols as f64);
    let body = Ellipse {
        cy: h / 2.0,
        cx: w / 2.0,
        ay: h * rng.gen_range(0.38..0.46),
        ax: w * rng.gen_range(0.40..0.47),
        angle: 0.0,
    };

    let organ_count = rng.gen_range(spec.ellipses[0]..=spec.ellipses[1]);
    let organs: Vec<(Ellipse, f64)> = (0..organ_count)
        .map(|_| {
            let ay = body.ay * rng.gen_range(0.12..0.45);
            let ax = body.ax * rng.gen_range(0.12..0.45);
            let cy = body.cy + body.ay * rng.gen_range(-0.5..0.5);
            let cx = body.cx + body.ax * rng.gen_range(-0.5..0.5);
            let e = Ellipse {
                cy,
                cx,
                ay,
                ax,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            };
            (e, rng.gen_range(-0.12..0.08))
        })
        .collect();

    let vessel_count = rng.gen_range(spec.vessels[0]..=spec.vessels[1]);
    let scale = h.min(w) / 64.0;
    let vessels: Vec<Ellipse> = (0..vessel_count)
        .map(|_| {
            let radius = scale * rng.gen_range(1.2..3.2);
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let rho = rng.gen_range(0.0..0.75);
            Ellipse {
                cy: body.cy + rho * body.ay * t.sin(),
                cx: body.cx + rho * body.ax * t.cos(),
                ay: radius,
                ax: radius,
                angle: 0.0,
            }
        })
        .collect();

    let mut data = vec![0.0; rows * cols * PHASES];
    let mut vessel_mask = vec![false; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let idx = i * cols + j;
            // Texture is drawn for every pixel so the stream does not depend on geometry.
            let texture: f64 = spec.tissue_noise * rng.sample::<f64, _>(StandardNormal);
            let mut base = AIR;
            if body.contains(y, x) {
                base = SOFT_TISSUE + texture;
                for (e, level) in &organs {
                    if e.contains(y, x) {
                        base = SOFT_TISSUE + level + texture;
                    }
                }
            }
            let in_vessel = base > AIR && vessels.iter().any(|v| v.contains(y, x));
            vessel_mask[idx] = in_vessel;
            for k in 0..PHASES {
                let v = if in_vessel { base + spec.amplitudes[k] } else { base };
                data[idx * PHASES + k] = v.clamp(-1.0, 1.0);
            }
        }
    }
    let volume = JointVolume::from_interleaved(rows, cols, data, Role::Routine)?;
    Ok(Phantom {
        volume,
        vessel_mask,
    })
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<JointVolume> {
    Ok(generate_phantom_detailed(spec)?.volume)
}

/// Pearson correlation between two phases over the pixels where `mask` is
/// false.
pub fn cross_phase_correlation(p: &Phantom, a: Phase, b: Phase) -> f64 {
    let xa = p.volume.phase(a);
    let xb = p.volume.phase(b);
    let pairs: Vec<(f64, f64)> = xa
        .data
        .iter()
        .zip(&xb.data)
        .zip(&p.vessel_mask)
        .filter(|(_, &m)| !m)
        .map(|((u, v), _)| (*u, *v))
        .collect();
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |acc, (u, v)| (acc.0 + u, acc.1 + v));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (u, v) in &pairs {
        sab += (u - ma) * (v - mb);
        saa += (u - ma).powi(2);
        sbb += (v - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
