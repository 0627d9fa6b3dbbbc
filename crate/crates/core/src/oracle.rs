//! Exact Poisson field of a finite charge set in augmented space.
//!
//! Charges sit on the `z = 0` hyperplane. At a point `(x, r)` the field is
//!
//! ```text
//! E_x = Σᵢ wᵢ (x − yᵢ) / dᵢ^{N+D},   E_r = Σᵢ wᵢ r / dᵢ^{N+D},   dᵢ² = ‖x − yᵢ‖² + r²
//! ```
//!
//! with the sphere-area prefactor dropped, since only `E_x / E_r` is ever
//! consumed. `dᵢ^{N+D}` overflows for image-sized `N`, so summation runs in
//! the log domain relative to the largest summand.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Lower cutoff used in place of `r = 0` when integrating field lines.
pub const R_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ChargeSet {
    charges: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

impl ChargeSet {
    pub fn new(charges: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = charges.first() else {
            return Err(Error::Oracle("charge set is empty".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Oracle("charges must have positive dimension".into()));
        }
        if charges.len() != weights.len() {
            return Err(Error::Oracle(format!(
                "{} charges but {} weights",
                charges.len(),
                weights.len()
            )));
        }
        if let Some(i) = charges.iter().position(|c| c.len() != dim) {
            return Err(Error::Oracle(format!(
                "charge {i} has length {}, expected {dim}",
                charges[i].len()
            )));
        }
        if charges.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Oracle("charge coordinates must be finite".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Oracle("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Oracle(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            charges,
            weights,
            dim,
        })
    }

    /// Equal weights `1/M`.
    pub fn uniform(charges: Vec<Vec<f64>>) -> Result<Self> {
        let m = charges.len().max(1);
        let weights = vec![1.0 / m as f64; charges.len()];
        Self::new(charges, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn charges(&self) -> &[Vec<f64>] {
        &self.charges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Field at `(x, r)` up to the positive factor `exp(log_scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldValue {
    pub e_x: Vec<f64>,
    pub e_r: f64,
    /// The physical field is `exp(log_scale)·(e_x, e_r)`.
    pub log_scale: f64,
}

pub(crate) fn field_raw(
    charges: &[Vec<f64>],
    weights: &[f64],
    x: &[f64],
    r: f64,
    d: usize,
) -> Result<FieldValue> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Oracle(format!("field needs r > 0, got {r}")));
    }
    if charges.is_empty() {
        return Err(Error::Oracle("charge set is empty".into()));
    }
    let n = x.len();
    if charges[0].len() != n {
        return Err(Error::Oracle(format!(
            "point has length {n}, charges have length {}",
            charges[0].len()
        )));
    }
    let exponent = (n + d) as f64;
    let r2 = r * r;
    let mut logs = Vec::with_capacity(charges.len());
    for (y, &w) in charges.iter().zip(weights) {
        let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + r2;
        // ln(w / d^{N+D}) = ln w − (N+D)/2 · ln d²
        logs.push(w.ln() - 0.5 * exponent * dist2.ln());
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Oracle("all charges carry zero weight".into()));
    }
    let mut e_x = vec![0.0; n];
    let mut total = 0.0;
    for (y, l) in charges.iter().zip(&logs) {
        let s = (l - peak).exp();
        if s == 0.0 {
            continue;
        }
        total += s;
        for ((e, a), b) in e_x.iter_mut().zip(x).zip(y) {
            *e += s * (a - b);
        }
    }
    Ok(FieldValue {
        e_x,
        e_r: total * r,
        log_scale: peak,
    })
}

pub fn field(charges: &ChargeSet, x: &[f64], r: f64, d: usize) -> Result<FieldValue> {
    field_raw(&charges.charges, &charges.weights, x, r, d)
}

/// `dx/dr = E_x / E_r`.
pub fn ode_rhs(charges: &ChargeSet, x: &[f64], r: f64, d: usize) -> Result<Vec<f64>> {
    let f = field(charges, x, r, d)?;
    Ok(f.e_x.into_iter().map(|e| e / f.e_r).collect())
}

/// One recorded point on a field line.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub r: f64,
    pub x: Vec<f64>,
}

/// Integrates a field line from `r_start` down to `max(r_end, R_MIN)` with
/// classical RK4 on `s = ln r`, returning every intermediate state.
pub fn trace_field_line(
    charges: &ChargeSet,
    x0: &[f64],
    r_start: f64,
    r_end: f64,
    steps: usize,
    d: usize,
) -> Result<Vec<TracePoint>> {
    let stop = r_end.max(R_MIN);
    if !(r_start > stop && r_start.is_finite()) {
        return Err(Error::Oracle(format!(
            "need r_start > max(r_end, {R_MIN}), got r_start={r_start}, r_end={r_end}"
        )));
    }
    if steps == 0 {
        return Err(Error::Oracle("integration needs at least one step".into()));
    }
    if x0.len() != charges.dim() {
        return Err(Error::Oracle(format!(
            "start point has length {}, charges have length {}",
            x0.len(),
            charges.dim()
        )));
    }
    let (s0, s1) = (r_start.ln(), stop.ln());
    let h = (s1 - s0) / steps as f64;
    // In s = ln r the right-hand side becomes r · E_x/E_r.
    let deriv = |x: &[f64], s: f64| -> Result<Vec<f64>> {
        let r = s.exp();
        Ok(ode_rhs(charges, x, r, d)?.into_iter().map(|v| v * r).collect())
    };
    let axpy = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(p, q)| p + a * q).collect()
    };

    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(TracePoint {
        step: 0,
        r: r_start,
        x: x.clone(),
    });
    for step in 0..steps {
        let s = s0 + step as f64 * h;
        let k1 = deriv(&x, s)?;
        let k2 = deriv(&axpy(&x, &k1, h / 2.0), s + h / 2.0)?;
        let k3 = deriv(&axpy(&x, &k2, h / 2.0), s + h / 2.0)?;
        let k4 = deriv(&axpy(&x, &k3, h), s + h)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Oracle(format!(
                "non-finite state at step {} (coordinate {i}, r = {})",
                step + 1,
                (s + h).exp()
            )));
        }
        let r = if step + 1 == steps { stop } else { (s + h).exp() };
        out.push(TracePoint {
            step: step + 1,
            r,
            x: x.clone(),
        });
    }
    Ok(out)
}

/// Endpoint of [`trace_field_line`].
pub fn integrate_field_line(
    charges: &ChargeSet,
    x0: &[f64],
    r_start: f64,
    r_end: f64,
    steps: usize,
    d: usize,
) -> Result<Vec<f64>> {
    let mut trace = trace_field_line(charges, x0, r_start, r_end, steps, d)?;
    Ok(trace.pop().expect("trace holds the start point").x)
}

/// Gaussian far-field approximation of the uniform law on the `r = r_max`
/// hyper-cylinder: `x ∼ Normal(0, (r_max²/D)·I_N)`.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, r_max: f64, n: usize, d: usize) -> Vec<f64> {
    let scale = r_max / (d as f64).sqrt();
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// 1-Wasserstein distance between two weighted empirical measures on the line.
pub fn wasserstein_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(x, w)| (x, w))
        .chain(b.iter().map(|&(x, w)| (x, -w)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf_gap = 0.0;
    let mut dist = 0.0;
    for pair in events.windows(2) {
        cdf_gap += pair[0].1;
        dist += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    dist
}

/// Sliced 1-Wasserstein distance between an unweighted sample set and a
/// charge set, averaged over `projections` random directions.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    rng: &mut R,
    samples: &[Vec<f64>],
    charges: &ChargeSet,
    projections: usize,
) -> f64 {
    let n = charges.dim();
    let ws = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    for _ in 0..projections {
        let dir = crate::augment::sample_unit_direction(rng, n);
        let dot = |p: &[f64]| p.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
        let a: Vec<(f64, f64)> = samples.iter().map(|s| (dot(s), ws)).collect();
        let b: Vec<(f64, f64)> = charges
            .charges()
            .iter()
            .zip(charges.weights())
            .map(|(c, &w)| (dot(c), w))
            .collect();
        total += wasserstein_1d(&a, &b);
    }
    total / projections as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    /// Plain double-precision summation of the field formula, no log tricks.
    fn brute_force_field(charges: &[Vec<f64>], w: &[f64], x: &[f64], r: f64, d: usize) -> (Vec<f64>, f64) {
        let p = (x.len() + d) as f64;
        let mut ex = vec![0.0; x.len()];
        let mut er = 0.0;
        for (y, wi) in charges.iter().zip(w) {
            let dist = (x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + r * r).sqrt();
            let k = wi / dist.powf(p);
            for (e, (a, b)) in ex.iter_mut().zip(x.iter().zip(y)) {
                *e += k * (a - b);
            }
            er += k * r;
        }
        (ex, er)
    }

    #[test]
    fn single_charge_field_is_radial() {
        let set = ChargeSet::uniform(vec![vec![0.0, 0.0, 0.0]]).unwrap();
        let x = [0.3, -1.7, 2.2];
        let f = field(&set, &x, 0.9, 17).unwrap();
        for (e, xi) in f.e_x.iter().zip(x) {
            assert!((e / f.e_r - xi / 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_pair_cancels_at_midpoint() {
        let set = ChargeSet::uniform(vec![vec![-1.5], vec![1.5]]).unwrap();
        let f = field(&set, &[0.0], 0.4, 5).unwrap();
        assert_eq!(f.e_x[0], 0.0);
        assert!(f.e_r > 0.0);
        assert_eq!(ode_rhs(&set, &[0.0], 0.4, 5).unwrap(), vec![0.0]);
    }

    #[test]
    fn matches_brute_force_summation() {
        let charges = vec![vec![0.5, -0.2], vec![-1.0, 0.8], vec![0.1, 1.3]];
        let weights = vec![0.2, 0.5, 0.3];
        let set = ChargeSet::new(charges.clone(), weights.clone()).unwrap();
        let x = [0.35, 0.4];
        let (r, d) = (0.7, 3);
        let f = field(&set, &x, r, d).unwrap();
        let scale = f.log_scale.exp();
        let got_x: Vec<f64> = f.e_x.iter().map(|e| e * scale).collect();
        let (ex, er) = brute_force_field(&charges, &weights, &x, r, d);
        assert!(rel_err(&got_x, &ex) < 1e-10);
        assert!((f.e_r * scale / er - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_charge_rhs_closed_form() {
        let y0 = vec![1.0, -2.0];
        let set = ChargeSet::uniform(vec![y0.clone()]).unwrap();
        let x = [3.0, 0.5];
        let rhs = ode_rhs(&set, &x, 2.0, 64).unwrap();
        assert!((rhs[0] - 1.0).abs() < 1e-14 && (rhs[1] - 1.25).abs() < 1e-14);
    }

    #[test]
    fn large_dimension_does_not_overflow() {
        let charges: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.1; 3 * 64 * 64]).collect();
        let set = ChargeSet::uniform(charges).unwrap();
        let x = vec![0.05; 3 * 64 * 64];
        let f = field(&set, &x, 0.5, 128).unwrap();
        assert!(f.e_r > 0.0 && f.e_x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn field_errors() {
        let set = ChargeSet::uniform(vec![vec![0.0]]).unwrap();
        assert!(field(&set, &[0.0], 0.0, 2).is_err());
        assert!(field(&set, &[0.0, 1.0], 1.0, 2).is_err());
        assert!(ChargeSet::uniform(vec![]).is_err());
        assert!(ChargeSet::new(vec![vec![0.0]], vec![0.5]).is_err());
    }

    #[test]
    fn weight_scale_cancels() {
        let charges = vec![vec![0.5, -0.2], vec![-1.0, 0.8], vec![0.1, 1.3]];
        let w = vec![0.2, 0.5, 0.3];
        let x = [0.2, 0.1];
        let base = field_raw(&charges, &w, &x, 0.6, 7).unwrap();
        for k in [1e-6, 0.37, 5.0, 1e8] {
            let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
            let f = field_raw(&charges, &scaled, &x, 0.6, 7).unwrap();
            for (a, b) in f.e_x.iter().zip(&base.e_x) {
                let (ra, rb) = (a / f.e_r, b / base.e_r);
                assert!((ra - rb).abs() <= 1e-12 * rb.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn single_charge_line_follows_closed_form() {
        let y0 = vec![0.4, -0.3];
        let set = ChargeSet::uniform(vec![y0.clone()]).unwrap();
        let x0 = [5.0, 2.0];
        let r_start = 10.0;
        let end = integrate_field_line(&set, &x0, r_start, 0.0, 200, 16).unwrap();
        let exact: Vec<f64> = y0
            .iter()
            .zip(x0)
            .map(|(y, x)| y + (x - y) * R_MIN / r_start)
            .collect();
        assert!(rel_err(&end, &exact) < 1e-6, "{end:?} vs {exact:?}");
    }

    #[test]
    fn charge_is_a_fixed_point() {
        let y0 = vec![0.4, -0.3];
        let set = ChargeSet::uniform(vec![y0.clone(), vec![3.0, 3.0]]).unwrap();
        let single = ChargeSet::uniform(vec![y0.clone()]).unwrap();
        let trace = trace_field_line(&single, &y0, 5.0, 0.0, 50, 8).unwrap();
        assert!(trace.iter().all(|p| p.x == y0));
        // With a second charge the line still ends on y0 from there.
        let end = integrate_field_line(&set, &y0, 0.5, 0.0, 100, 8).unwrap();
        assert!(rel_err(&end, &y0) < 1e-6);
    }

    #[test]
    fn backward_integration_contracts_toward_single_charge() {
        let y0 = vec![1.0, 1.0, -1.0];
        let set = ChargeSet::uniform(vec![y0.clone()]).unwrap();
        let trace = trace_field_line(&set, &[4.0, -2.0, 0.5], 20.0, 0.0, 80, 32).unwrap();
        let dist = |x: &[f64]| x.iter().zip(&y0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for pair in trace.windows(2) {
            assert!(dist(&pair[1].x) < dist(&pair[0].x));
        }
    }

    #[test]
    fn rk4_error_drops_at_least_eightfold_when_steps_double() {
        let y0 = vec![0.0];
        let set = ChargeSet::uniform(vec![y0]).unwrap();
        let (x0, r0) = ([3.0], 50.0);
        let exact = 3.0 * R_MIN / r0;
        let err = |steps| (integrate_field_line(&set, &x0, r0, 0.0, steps, 4).unwrap()[0] - exact).abs();
        let (coarse, fine) = (err(20), err(40));
        assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn rhs_is_consistent_with_integrated_trajectory() {
        // Mixture: a finite difference of the integrated path approximates the rhs.
        let set = ChargeSet::uniform(vec![vec![-1.0, 0.0], vec![1.0, 0.5], vec![0.2, -1.0]]).unwrap();
        let (x0, r0, d) = ([0.3, 0.9], 1.5, 6);
        for dr in [1e-2, 5e-3] {
            let x1 = integrate_field_line(&set, &x0, r0, r0 - dr, 4, d).unwrap();
            let fd: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| (a - b) / dr).collect();
            let rhs = ode_rhs(&set, &x0, r0, d).unwrap();
            let gap = rel_err(&fd, &rhs);
            assert!(gap < 10.0 * dr, "dr={dr}, gap={gap}");
        }
    }

    #[test]
    fn prior_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (r_max, n, d, draws) = (40.0, 2, 100, 100_000);
        let var_expected = r_max * r_max / d as f64;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..draws {
            let x = sample_prior(&mut rng, r_max, n, d);
            for k in 0..n {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        for k in 0..n {
            let mean = sum[k] / draws as f64;
            let var = sq[k] / draws as f64 - mean * mean;
            assert!(mean.abs() < 3.0 * (var_expected / draws as f64).sqrt());
            // Var of a sample variance of Gaussians is 2σ⁴/(n−1).
            let se = (2.0 * var_expected * var_expected / draws as f64).sqrt();
            assert!((var - var_expected).abs() < 3.0 * se, "{var}");
        }
    }

    #[test]
    fn prior_unit_variance_case() {
        // D = N·r_max² gives r_max²/D = 1/N; N = 1 yields unit variance.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws: Vec<f64> = (0..50_000).map(|_| sample_prior(&mut rng, 3.0, 1, 9)[0]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn wasserstein_1d_shift() {
        let a = [(0.0, 0.5), (1.0, 0.5)];
        let b = [(2.0, 0.5), (3.0, 0.5)];
        assert!((wasserstein_1d(&a, &b) - 2.0).abs() < 1e-12);
        assert_eq!(wasserstein_1d(&a, &a), 0.0);
    }
}
