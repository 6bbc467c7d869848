//! Multivariate normal rectangle probabilities and truncated sampling.
//!
//! Rectangle probabilities use randomised quasi-Monte-Carlo over the
//! sequential-conditioning transform (Genz–Bretz). Coordinates that are
//! unbounded on both sides are marginalised out exactly first, so one- and
//! two-dimensional problems are evaluated in closed form or by the bivariate
//! quadrature in [`bvn`].

pub mod bvn;
mod chol;
mod genz;
mod lattice;

pub use chol::{chol_pivot, PivotedCholesky};
pub use genz::GenzMap;
pub use lattice::ShiftedLattice;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::special::norm_cdf;

/// Default seed for the lattice shifts.
pub const DEFAULT_SEED: u64 = 0x5eed_2017;
/// Default absolute error target for [`mvn_rect_prob`].
pub const DEFAULT_ABS_TOL: f64 = 1e-5;
/// Default sample budget for [`mvn_rect_prob`].
pub const DEFAULT_MAX_SAMPLES: usize = 1 << 20;

/// A normal law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnSpec {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
}

impl MvnSpec {
    /// Validates dimensions, symmetry and finiteness. Positive semi-definiteness
    /// is checked lazily by the factorisations that need it.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d}, covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mean has non-finite entries".into()));
        }
        chol::check_symmetric(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Restrict to the listed coordinates (marginal law).
    pub fn marginal(&self, keep: &[usize]) -> MvnSpec {
        let mean = keep.iter().map(|&i| self.mean[i]).collect();
        let cov = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.cov[(keep[i], keep[j])]);
        MvnSpec { mean, cov }
    }
}

/// Axis-aligned box with possibly infinite sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "lower has length {}, upper has length {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() || a == f64::INFINITY || b == f64::NEG_INFINITY || a >= b {
                return Err(Error::InvalidInput(format!(
                    "rectangle side {j} is empty: ({a}, {b})"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The whole space in `d` dimensions.
    pub fn full(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    fn bounded_coordinates(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.lower[j].is_finite() || self.upper[j].is_finite())
            .collect()
    }

    fn select(&self, keep: &[usize]) -> Rectangle {
        Rectangle {
            lower: keep.iter().map(|&j| self.lower[j]).collect(),
            upper: keep.iter().map(|&j| self.upper[j]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmcOptions {
    /// Stop once the 3-sigma error estimate is at or below this value.
    pub abs_tol: f64,
    /// Upper bound on integrand evaluations across all shifts.
    pub max_samples: usize,
    /// Number of independent random shifts used for the error estimate.
    pub shifts: usize,
    pub seed: u64,
    /// Prioritise variables by conditional interval mass.
    pub reorder: bool,
}

impl Default for QmcOptions {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            max_samples: DEFAULT_MAX_SAMPLES,
            shifts: 8,
            seed: DEFAULT_SEED,
            reorder: true,
        }
    }
}

impl QmcOptions {
    /// A fixed budget: every call uses exactly `shifts * points` evaluations, so the
    /// estimate is a smooth function of the inputs for a fixed seed.
    pub fn fixed(shifts: usize, points: usize, seed: u64) -> Self {
        Self {
            abs_tol: 0.0,
            max_samples: shifts * points,
            shifts,
            seed,
            reorder: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectProbResult {
    pub probability: f64,
    /// Three standard errors of the shift means; zero for closed forms.
    pub error_estimate: f64,
    pub samples_used: usize,
    /// False when the sample budget ran out before `abs_tol` was met.
    pub tolerance_reached: bool,
}

impl RectProbResult {
    fn exact(p: f64) -> Self {
        Self {
            probability: p.clamp(0.0, 1.0),
            error_estimate: 0.0,
            samples_used: 0,
            tolerance_reached: true,
        }
    }
}

fn check_dims(spec: &MvnSpec, rect: &Rectangle) -> Result<()> {
    if spec.dim() != rect.dim() {
        return Err(Error::DimensionMismatch(format!(
            "normal law has dimension {}, rectangle has dimension {}",
            spec.dim(),
            rect.dim()
        )));
    }
    Ok(())
}

/// `P(lower <= Y <= upper)` for `Y ~ spec`.
pub fn mvn_rect_prob(spec: &MvnSpec, rect: &Rectangle, opts: &QmcOptions) -> Result<RectProbResult> {
    check_dims(spec, rect)?;
    if !(opts.abs_tol >= 0.0) || opts.shifts == 0 {
        return Err(Error::InvalidInput("abs_tol must be >= 0 and shifts >= 1".into()));
    }
    let keep = rect.bounded_coordinates();
    let d = keep.len();
    if d == 0 {
        return Ok(RectProbResult::exact(1.0));
    }
    let spec = spec.marginal(&keep);
    let rect = rect.select(&keep);
    match d {
        1 => Ok(RectProbResult::exact(univariate(&spec, &rect)?)),
        2 => bivariate(&spec, &rect, opts),
        _ => qmc_probability(&spec, &rect, opts),
    }
}

fn univariate(spec: &MvnSpec, rect: &Rectangle) -> Result<f64> {
    let var = spec.cov()[(0, 0)];
    if var < 0.0 {
        return Err(Error::NotPositiveSemiDefinite { index: 0, pivot: var });
    }
    let (a, b) = (rect.lower()[0] - spec.mean()[0], rect.upper()[0] - spec.mean()[0]);
    if var == 0.0 {
        return Ok(if a <= 0.0 && 0.0 <= b { 1.0 } else { 0.0 });
    }
    let sd = var.sqrt();
    let (lo, hi) = (a / sd, b / sd);
    Ok(if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    })
}

fn bivariate(spec: &MvnSpec, rect: &Rectangle, opts: &QmcOptions) -> Result<RectProbResult> {
    let c = spec.cov();
    let (v1, v2) = (c[(0, 0)], c[(1, 1)]);
    let scale = v1.max(v2).max(f64::MIN_POSITIVE);
    let tol = chol::PIVOT_TOLERANCE * scale;
    if v1 < -tol || v2 < -tol {
        return Err(Error::NotPositiveSemiDefinite {
            index: if v1 < v2 { 0 } else { 1 },
            pivot: v1.min(v2),
        });
    }
    if v1 <= tol || v2 <= tol {
        // a degenerate margin: fall back to the general transform
        return qmc_probability(spec, rect, opts);
    }
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let r = c[(0, 1)] / (s1 * s2);
    if r.abs() > 1.0 + 1e-10 {
        return Err(Error::NotPositiveSemiDefinite {
            index: 1,
            pivot: 1.0 - r * r,
        });
    }
    let r = r.clamp(-1.0, 1.0);
    let m = spec.mean();
    let lo = [(rect.lower()[0] - m[0]) / s1, (rect.lower()[1] - m[1]) / s2];
    let hi = [(rect.upper()[0] - m[0]) / s1, (rect.upper()[1] - m[1]) / s2];
    Ok(RectProbResult::exact(bvn::bvn_rect(lo, hi, r)))
}

/// Running per-shift sums over an extensible lattice.
struct ShiftAccumulator {
    sums: Vec<f64>,
    n: usize,
}

impl ShiftAccumulator {
    fn summary(&self) -> (f64, f64) {
        let m = self.sums.len() as f64;
        let means: Vec<f64> = self.sums.iter().map(|s| s / self.n as f64).collect();
        let mean = means.iter().sum::<f64>() / m;
        if self.sums.len() < 2 {
            return (mean, f64::INFINITY);
        }
        let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, 3.0 * (var / m).sqrt())
    }
}

/// Points per shift for the adaptive schedule: 64, 128, ... capped by the budget.
fn schedule(opts: &QmcOptions) -> impl Iterator<Item = usize> {
    let cap = (opts.max_samples / opts.shifts).max(1);
    let mut n = 64.min(cap);
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let cur = n;
        if n >= cap {
            done = true;
        } else {
            n = (2 * n).min(cap);
        }
        Some(cur)
    })
}

fn qmc_probability(spec: &MvnSpec, rect: &Rectangle, opts: &QmcOptions) -> Result<RectProbResult> {
    let map = GenzMap::new(spec, rect, opts.reorder)?;
    let d = map.dim();
    let lattice = ShiftedLattice::new(d.saturating_sub(1).max(1), opts.shifts, opts.seed);
    let mut acc = ShiftAccumulator {
        sums: vec![0.0; opts.shifts],
        n: 0,
    };
    let mut u = vec![0.0; lattice.dim()];
    let mut w = vec![0.0; d];
    let mut result = None;
    for target in schedule(opts) {
        for (s, sum) in acc.sums.iter_mut().enumerate() {
            for k in (acc.n + 1)..=target {
                lattice.point(s, k, &mut u);
                *sum += map.weight(&u, &mut w);
            }
        }
        acc.n = target;
        let (p, err) = acc.summary();
        let reached = err <= opts.abs_tol;
        result = Some(RectProbResult {
            probability: p.clamp(0.0, 1.0),
            error_estimate: err,
            samples_used: target * opts.shifts,
            tolerance_reached: reached,
        });
        if reached {
            break;
        }
    }
    let out = result.expect("schedule yields at least one step");
    if !out.tolerance_reached && opts.abs_tol > 0.0 {
        log::debug!(
            "rectangle probability stopped at {} samples with error {:.2e} > {:.2e}",
            out.samples_used,
            out.error_estimate,
            opts.abs_tol
        );
    }
    Ok(out)
}

/// Self-normalised expectation `E[f(Y) | Y in rect]` over the Genz transform,
/// evaluated on a fixed-budget shifted lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationResult {
    pub value: f64,
    pub error_estimate: f64,
    pub samples_used: usize,
}

pub fn truncated_expectation<F>(
    spec: &MvnSpec,
    rect: &Rectangle,
    opts: &QmcOptions,
    mut f: F,
) -> Result<ExpectationResult>
where
    F: FnMut(&[f64]) -> f64,
{
    check_dims(spec, rect)?;
    let map = GenzMap::new(spec, rect, opts.reorder)?;
    let d = map.dim();
    let shifts = opts.shifts.max(1);
    let n = (opts.max_samples / shifts).max(1);
    let lattice = ShiftedLattice::new(d, shifts, opts.seed);
    let (mut u, mut w, mut y) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut ratios = Vec::with_capacity(shifts);
    let (mut total_num, mut total_den) = (0.0, 0.0);
    for s in 0..shifts {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..=n {
            lattice.point(s, k, &mut u);
            let wt = map.sample(&u, &mut w, &mut y);
            if wt > 0.0 {
                num += wt * f(&y);
                den += wt;
            }
        }
        if den <= 0.0 {
            return Err(Error::DegenerateRegion(0.0));
        }
        ratios.push(num / den);
        total_num += num;
        total_den += den;
    }
    let value = total_num / total_den;
    let m = ratios.len() as f64;
    let err = if ratios.len() > 1 {
        let mean = ratios.iter().sum::<f64>() / m;
        3.0 * (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ExpectationResult {
        value,
        error_estimate: err,
        samples_used: n * shifts,
    })
}

/// Weighted draws from the sequential-conditioning proposal on a rectangle.
///
/// Each point lies inside the rectangle. The weights are the conditional
/// interval masses; weighted averages converge to truncated-normal moments,
/// and when the rectangle constrains a single coordinate (or none) the weights
/// are constant and the draws are exact.
#[derive(Debug, Clone)]
pub struct TruncatedSample {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Rectangle probability used for the degeneracy check.
    pub probability: f64,
}

impl TruncatedSample {
    pub fn weighted_mean(&self) -> Vec<f64> {
        let d = self.points.first().map_or(0, Vec::len);
        let total: f64 = self.weights.iter().sum();
        let mut out = vec![0.0; d];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }
}

/// Minimum rectangle probability accepted by [`truncated_mvn_sample`].
pub const MIN_REGION_PROBABILITY: f64 = 1e-12;

pub fn truncated_mvn_sample(
    spec: &MvnSpec,
    rect: &Rectangle,
    n: usize,
    seed: u64,
) -> Result<TruncatedSample> {
    let prob = mvn_rect_prob(spec, rect, &QmcOptions::default())?.probability;
    if prob < MIN_REGION_PROBABILITY {
        return Err(Error::DegenerateRegion(prob));
    }
    let map = GenzMap::new(spec, rect, true)?;
    let d = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut u, mut w) = (vec![0.0; d], vec![0.0; d]);
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    while points.len() < n {
        u.iter_mut().for_each(|x| *x = rng.gen::<f64>());
        let mut y = vec![0.0; d];
        let wt = map.sample(&u, &mut w, &mut y);
        if wt > 0.0 {
            points.push(y);
            weights.push(wt);
        }
    }
    Ok(TruncatedSample {
        points,
        weights,
        probability: prob,
    })
}

#[cfg(test)]
mod tests;
