//! Image-quality metrics, per phase and averaged.
//!
//! MAE is reported in pseudo-HU. SSIM defaults to the global form, one mean
//! and variance per image; a sliding-window variant is available. The
//! Fréchet distance works on any feature vectors; the default extractor
//! average-pools the three-phase stack on a coarse grid.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::HU_SCALE;
use crate::error::{Error, Result};
use crate::volume::{Image, JointVolume, Phase, PHASES};

/// Largest feature dimension accepted by [`frechet_distance`].
pub const MAX_FEATURE_DIM: usize = 256;

/// Dynamic range of normalized intensities `[-1, 1]`.
pub const INTENSITY_RANGE: f64 = 2.0;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Metrics(format!(
            "inputs must be nonempty and equal in size, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean absolute error in the inputs' own units.
pub fn mae(reference: &[f64], reconstruction: &[f64]) -> Result<f64> {
    check_len(reference, reconstruction)?;
    let sum: f64 = reference.iter().zip(reconstruction).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / reference.len() as f64)
}

/// Mean absolute error of normalized intensities, in pseudo-HU.
pub fn mae_hu(reference: &[f64], reconstruction: &[f64]) -> Result<f64> {
    Ok(mae(reference, reconstruction)? * HU_SCALE)
}

pub fn mse(reference: &[f64], reconstruction: &[f64]) -> Result<f64> {
    check_len(reference, reconstruction)?;
    let sum: f64 = reference.iter().zip(reconstruction).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / reference.len() as f64)
}

/// Stabilizing constants `((0.01·max)², (0.03·max)²)`.
pub fn ssim_constants(max: f64) -> (f64, f64) {
    ((0.01 * max).powi(2), (0.03 * max).powi(2))
}

fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    (ma, mb, va / n, vb / n, cov / n)
}

fn ssim_from_moments((ma, mb, va, vb, cov): (f64, f64, f64, f64, f64), c1: f64, c2: f64) -> f64 {
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Global SSIM: one set of means, variances and covariance per image.
pub fn ssim(reference: &[f64], reconstruction: &[f64], c1: f64, c2: f64) -> Result<f64> {
    check_len(reference, reconstruction)?;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Metrics(format!("SSIM constants must be positive, got ({c1}, {c2})")));
    }
    Ok(ssim_from_moments(moments(reference, reconstruction), c1, c2))
}

/// Mean SSIM over all `window×window` patches (uniform weights, stride 1).
pub fn ssim_windowed(reference: &Image, reconstruction: &Image, window: usize, c1: f64, c2: f64) -> Result<f64> {
    if (reference.rows, reference.cols) != (reconstruction.rows, reconstruction.cols) {
        return Err(Error::Metrics("SSIM inputs differ in shape".into()));
    }
    if window == 0 || window > reference.rows || window > reference.cols {
        return Err(Error::Metrics(format!(
            "window {window} does not fit a {}x{} image",
            reference.rows, reference.cols
        )));
    }
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Metrics(format!("SSIM constants must be positive, got ({c1}, {c2})")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut pa = Vec::with_capacity(window * window);
    let mut pb = Vec::with_capacity(window * window);
    for i in 0..=reference.rows - window {
        for j in 0..=reference.cols - window {
            pa.clear();
            pb.clear();
            for di in 0..window {
                let start = (i + di) * reference.cols + j;
                pa.extend_from_slice(&reference.data[start..start + window]);
                pb.extend_from_slice(&reconstruction.data[start..start + window]);
            }
            total += ssim_from_moments(moments(&pa, &pb), c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `10·log₁₀(max²/MSE)` in dB. Identical inputs have no finite PSNR and are
/// reported as an error.
pub fn psnr(reference: &[f64], reconstruction: &[f64], max: f64) -> Result<f64> {
    if !(max > 0.0) {
        return Err(Error::Metrics(format!("PSNR peak must be positive, got {max}")));
    }
    let m = mse(reference, reconstruction)?;
    if m == 0.0 {
        return Err(Error::Metrics("identical inputs: PSNR is infinite".into()));
    }
    Ok(10.0 * (max * max / m).log10())
}

fn mean_and_covariance(set: &[Vec<f64>], k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let mut mean = DVector::zeros(k);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(k, k);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (n - 1) as f64;
    (mean, cov)
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let k = a.first().map_or(0, Vec::len);
    if k == 0 || k > MAX_FEATURE_DIM {
        return Err(Error::Metrics(format!(
            "feature dimension must lie in 1..={MAX_FEATURE_DIM}, got {k}"
        )));
    }
    if a.iter().chain(b).any(|v| v.len() != k) {
        return Err(Error::Metrics("feature vectors differ in length".into()));
    }
    if a.len() <= k || b.len() <= k {
        return Err(Error::Metrics(format!(
            "need more than {k} samples per set to estimate a covariance, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Metrics("features hold non-finite values".into()));
    }
    let (mu_a, cov_a) = mean_and_covariance(a, k);
    let (mu_b, cov_b) = mean_and_covariance(b, k);
    let root_a = psd_sqrt(cov_a.clone());
    let mut inner = &root_a * &cov_b * &root_a;
    // Symmetrize away rounding before the eigendecomposition.
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let worst = eig.eigenvalues.iter().cloned().fold(0.0, f64::min);
    if worst < -1e-6 {
        log::warn!("clamping negative eigenvalue {worst:e} in Fréchet square root");
    }
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(dist.max(0.0))
}

/// Average-pools each phase onto a `grid×grid` lattice and flattens the
/// three phases as channels, giving `grid²·3` features.
pub fn pooled_features(v: &JointVolume, grid: usize) -> Result<Vec<f64>> {
    let [rows, cols, _] = v.shape();
    if grid == 0 || grid > rows || grid > cols {
        return Err(Error::Metrics(format!("pooling grid {grid} does not fit {rows}x{cols}")));
    }
    let mut out = Vec::with_capacity(grid * grid * PHASES);
    for gi in 0..grid {
        let (r0, r1) = (gi * rows / grid, (gi + 1) * rows / grid);
        for gj in 0..grid {
            let (c0, c1) = (gj * cols / grid, (gj + 1) * cols / grid);
            let area = ((r1 - r0) * (c1 - c0)) as f64;
            for p in Phase::ALL {
                let mut s = 0.0;
                for i in r0..r1 {
                    for j in c0..c1 {
                        s += v.get(i, j, p);
                    }
                }
                out.push(s / area);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SsimMode {
    Global,
    Windowed { window: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub ssim: SsimMode,
    /// Peak value for PSNR and the SSIM constants.
    pub max: f64,
    /// Pooling grid of the Fréchet feature extractor.
    pub feature_grid: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ssim: SsimMode::Global,
            max: INTENSITY_RANGE,
            feature_grid: 8,
        }
    }
}

/// Metrics of one volume and one phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    pub volume: usize,
    pub phase: Phase,
    pub mae_hu: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

/// Mean metrics for one phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub mae_hu: f64,
    pub ssim_percent: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<PhaseScore>,
    pub phases: Vec<PhaseSummary>,
    pub mean_mae_hu: f64,
    pub mean_ssim_percent: f64,
    pub mean_psnr_db: f64,
    /// `None` when either set has too few volumes for the feature dimension.
    pub frechet: Option<f64>,
    pub volumes: usize,
    pub fingerprint: String,
}

pub fn score_phase(reference: &Image, reconstruction: &Image, options: &EvalOptions) -> Result<(f64, f64, f64)> {
    let (c1, c2) = ssim_constants(options.max);
    let s = match options.ssim {
        SsimMode::Global => ssim(&reference.data, &reconstruction.data, c1, c2)?,
        SsimMode::Windowed { window } => ssim_windowed(reference, reconstruction, window, c1, c2)?,
    };
    Ok((
        mae_hu(&reference.data, &reconstruction.data)?,
        s,
        psnr(&reference.data, &reconstruction.data, options.max)?,
    ))
}

/// Scores reconstructions against routine-dose references.
pub fn evaluate(
    references: &[JointVolume],
    reconstructions: &[JointVolume],
    options: &EvalOptions,
    fingerprint: &str,
) -> Result<EvalReport> {
    if references.is_empty() || references.len() != reconstructions.len() {
        return Err(Error::Metrics(format!(
            "need equally many references and reconstructions, got {} and {}",
            references.len(),
            reconstructions.len()
        )));
    }
    let mut scores = Vec::with_capacity(references.len() * PHASES);
    for (i, (r, x)) in references.iter().zip(reconstructions).enumerate() {
        r.check_shape(x, Error::Metrics)?;
        for p in Phase::ALL {
            let (mae_hu, ssim, psnr_db) = score_phase(&r.phase(p), &x.phase(p), options)?;
            scores.push(PhaseScore {
                volume: i,
                phase: p,
                mae_hu,
                ssim,
                psnr_db,
            });
        }
    }
    let n = references.len() as f64;
    let phases: Vec<PhaseSummary> = Phase::ALL
        .iter()
        .map(|&p| {
            let mut s = PhaseSummary {
                phase: p,
                mae_hu: 0.0,
                ssim_percent: 0.0,
                psnr_db: 0.0,
            };
            for sc in scores.iter().filter(|s| s.phase == p) {
                s.mae_hu += sc.mae_hu / n;
                s.ssim_percent += 100.0 * sc.ssim / n;
                s.psnr_db += sc.psnr_db / n;
            }
            s
        })
        .collect();
    let mean = |f: fn(&PhaseSummary) -> f64| phases.iter().map(f).sum::<f64>() / PHASES as f64;
    let features = |set: &[JointVolume]| -> Result<Vec<Vec<f64>>> {
        set.iter().map(|v| pooled_features(v, options.feature_grid)).collect()
    };
    let k = options.feature_grid * options.feature_grid * PHASES;
    let frechet = if references.len() > k {
        Some(frechet_distance(&features(references)?, &features(reconstructions)?)?)
    } else {
        None
    };
    let report = EvalReport {
        mean_mae_hu: mean(|s| s.mae_hu),
        mean_ssim_percent: mean(|s| s.ssim_percent),
        mean_psnr_db: mean(|s| s.psnr_db),
        scores,
        phases,
        frechet,
        volumes: references.len(),
        fingerprint: fingerprint.to_string(),
    };
    let finite = report
        .scores
        .iter()
        .all(|s| s.mae_hu.is_finite() && s.ssim.is_finite() && s.psnr_db.is_finite());
    if !finite {
        return Err(Error::Metrics("evaluation produced non-finite metrics".into()));
    }
    Ok(report)
}
