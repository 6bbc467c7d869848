//! Logit-scale delta-method intervals, Wald and permutation tests for arm
//! differences, and the binary comparators.
//!
//! Gradients are central differences over `theta` with the quadrature seeds
//! fixed, so every perturbed evaluation shares the same random numbers.
//! Perturbations of logistic parameters reuse the rectangle table of the
//! fitted tumour model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modelfit::{self, fit_arm_logistic, FittedModel};
use crate::respprob::{
    self, EndpointKind, EndpointSpec, Method, QuadratureConfig, ResponseEstimate, TrialEvaluator,
};
use crate::special::{expit, logit, norm_cdf, norm_quantile};
use crate::trialdata::{Arm, TrialDataset};

/// Relative finite-difference step for gradients.
pub const FD_STEP: f64 = 1e-5;
/// Means this close to 0 or 1 have no usable logit-scale interval.
pub const BOUNDARY: f64 = 1e-6;
pub const DEFAULT_PERMUTATIONS: usize = 999;
/// Largest tolerated share of failed permutation refits.
pub const MAX_PERMUTATION_FAILURES: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOptions {
    pub quad: QuadratureConfig,
    pub step: f64,
    /// Evaluate gradient coordinates (and permutations) on the rayon pool.
    pub parallel: bool,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            quad: QuadratureConfig::default(),
            step: FD_STEP,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: Method,
    pub endpoint: EndpointKind,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    /// Set when the binary comparator's logistic fit hit separation.
    pub separated: bool,
}

impl TestResult {
    fn wald(method: Method, endpoint: EndpointKind, estimate: f64, std_error: f64, alpha: f64) -> Self {
        let statistic = if estimate == 0.0 {
            0.0
        } else if std_error > 0.0 && std_error.is_finite() {
            estimate / std_error
        } else {
            f64::NAN
        };
        let p_value = if statistic.is_nan() { 1.0 } else { 2.0 * norm_cdf(-statistic.abs()) };
        let z = norm_quantile(1.0 - alpha / 2.0);
        Self {
            method,
            endpoint,
            estimate,
            std_error,
            statistic,
            p_value,
            ci: (estimate - z * std_error, estimate + z * std_error),
            separated: false,
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Flat result row shared by estimates and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kind: &'static str,
    pub method: String,
    pub endpoint: String,
    pub arm: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub statistic: f64,
    pub p_value: f64,
}

impl ResultRow {
    pub fn estimate(e: &ResponseEstimate, arm: Option<Arm>) -> Self {
        let p = e.mean_probability;
        let se = if e.logit_variance.is_finite() {
            p * (1.0 - p) * e.logit_variance.max(0.0).sqrt()
        } else {
            (p * (1.0 - p) / e.per_patient.len().max(1) as f64).sqrt()
        };
        Self {
            kind: "estimate",
            method: e.method.to_string(),
            endpoint: e.endpoint.to_string(),
            arm: arm_label(arm),
            estimate: p,
            se,
            ci_lower: e.ci.0,
            ci_upper: e.ci.1,
            statistic: f64::NAN,
            p_value: f64::NAN,
        }
    }

    pub fn test(t: &TestResult) -> Self {
        Self {
            kind: "difference",
            method: t.method.to_string(),
            endpoint: t.endpoint.to_string(),
            arm: "experimental-control".into(),
            estimate: t.estimate,
            se: t.std_error,
            ci_lower: t.ci.0,
            ci_upper: t.ci.1,
            statistic: t.statistic,
            p_value: t.p_value,
        }
    }
}

fn arm_label(arm: Option<Arm>) -> String {
    match arm {
        None => "all".into(),
        Some(Arm::Control) => "control".into(),
        Some(Arm::Experimental) => "experimental".into(),
    }
}

/// Wilson score interval for `successes` of `n`.
pub fn wilson_ci(successes: usize, n: usize, alpha: f64) -> (f64, f64) {
    assert!(n >= 1 && successes <= n, "wilson_ci needs 0 <= successes <= n, n >= 1");
    let z = norm_quantile(1.0 - alpha / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2n = z * z / nf;
    let centre = (p + z2n / 2.0) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / nf + z2n / (4.0 * nf)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Value and central-difference gradient over `theta` of `f(arm means)`.
fn gradient<F>(ev: &TrialEvaluator, model: &FittedModel, opts: &DeltaOptions, f: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let base = ev.rect_table(&model.tumour)?;
    let value = f(&ev.arm_means(&base, &model.tumour, &model.progression)?);
    let tumour = model.layout.tumour_range();
    let at = |j: usize, delta: f64| -> Result<f64> {
        let mut theta = model.theta.clone();
        theta[j] += delta;
        let (tm, pm) = model.models_at(&theta);
        let means = if tumour.contains(&j) {
            ev.arm_means(&ev.rect_table(&tm)?, &tm, &pm)?
        } else {
            ev.arm_means(&base, &tm, &pm)?
        };
        Ok(f(&means))
    };
    let coord = |j: usize| -> Result<f64> {
        let h = opts.step * model.theta[j].abs().max(1.0);
        Ok((at(j, h)? - at(j, -h)?) / (2.0 * h))
    };
    let n = model.theta.len();
    let grad = if opts.parallel {
        (0..n).into_par_iter().map(coord).collect::<Result<Vec<f64>>>()?
    } else {
        (0..n).map(coord).collect::<Result<Vec<f64>>>()?
    };
    Ok((value, grad))
}

fn quadratic_form(cov: &DMatrix<f64>, g: &[f64]) -> f64 {
    let g = DVector::from_column_slice(g);
    (g.transpose() * cov * &g)[(0, 0)].max(0.0)
}

fn require_cov(model: &FittedModel) -> Result<()> {
    if model.theta_cov.nrows() != model.theta.len() {
        return Err(Error::InvalidInput("the fitted model carries no parameter covariance".into()));
    }
    Ok(())
}

fn responders(data: &TrialDataset, spec: &EndpointSpec, arm: Option<Arm>) -> Vec<f64> {
    data.patients
        .iter()
        .filter(|p| arm.is_none() || !data.is_two_arm() || p.arm == arm)
        .map(|p| spec.classify(p) as u8 as f64)
        .collect()
}

/// Responder proportion with its Wilson interval.
pub fn bin_estimate(data: &TrialDataset, spec: &EndpointSpec, alpha: f64, arm: Option<Arm>) -> Result<ResponseEstimate> {
    let dich = responders(data, spec, arm);
    if dich.is_empty() {
        return Err(Error::InsufficientData("no patients in the requested arm".into()));
    }
    let k = dich.iter().sum::<f64>() as usize;
    Ok(ResponseEstimate {
        method: Method::Bin,
        endpoint: spec.kind,
        mean_probability: k as f64 / dich.len() as f64,
        logit_variance: f64::NAN,
        ci: wilson_ci(k, dich.len(), alpha),
        per_patient: dich,
        wilson_fallback: false,
    })
}

/// Mean response with a logit-scale delta-method interval. Two-arm models
/// need `arm`, the arm indicator forced for every patient.
pub fn ci_logit_delta(
    data: &TrialDataset,
    model: &FittedModel,
    spec: &EndpointSpec,
    method: Method,
    alpha: f64,
    arm: Option<Arm>,
    opts: &DeltaOptions,
) -> Result<ResponseEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if method == Method::Bin {
        return bin_estimate(data, spec, alpha, arm);
    }
    let dich = responders(data, spec, arm);
    if dich.is_empty() {
        return Err(Error::InsufficientData("no patients in the requested arm".into()));
    }
    let k = dich.iter().sum::<f64>() as usize;
    require_cov(model)?;
    let idx = respprob::arm_index(model, arm)?;
    let ev = TrialEvaluator::new(data, spec, method, opts.quad)?;
    let table = ev.rect_table(&model.tumour)?;
    let per_patient = ev.patient_probs(&table, &model.tumour, &model.progression, idx)?;
    let mean = per_patient.iter().sum::<f64>() / per_patient.len() as f64;
    if mean <= BOUNDARY || mean >= 1.0 - BOUNDARY {
        log::warn!("{}", Error::BoundaryProbability(mean));
        let (lo, hi) = wilson_ci(k, dich.len(), alpha);
        return Ok(ResponseEstimate {
            method,
            endpoint: spec.kind,
            mean_probability: mean,
            logit_variance: f64::NAN,
            ci: (lo.min(mean), hi.max(mean)),
            per_patient,
            wilson_fallback: true,
        });
    }
    let clamp = |p: f64| p.clamp(1e-300, 1.0 - 1e-16);
    let (_, grad) = gradient(&ev, model, opts, |m| logit(clamp(m[idx])))?;
    let var = quadratic_form(&model.theta_cov, &grad);
    let z = norm_quantile(1.0 - alpha / 2.0);
    let l = logit(mean);
    let sd = var.sqrt();
    Ok(ResponseEstimate {
        method,
        endpoint: spec.kind,
        mean_probability: mean,
        logit_variance: var,
        ci: (expit(l - z * sd), expit(l + z * sd)),
        per_patient,
        wilson_fallback: false,
    })
}

/// Wald test on the arm coefficient of a logistic regression of the
/// dichotomised endpoint on arm and baseline size.
pub fn bin_two_arm_test(data: &TrialDataset, spec: &EndpointSpec, alpha: f64) -> Result<TestResult> {
    if !data.is_two_arm() {
        return Err(Error::InvalidInput("two-arm test on a single-arm dataset".into()));
    }
    let y: Vec<bool> = data.patients.iter().map(|p| spec.classify(p)).collect();
    let r: Vec<f64> = data.patients.iter().map(|p| p.arm.map_or(0.0, Arm::indicator)).collect();
    let z: Vec<f64> = data.patients.iter().map(|p| p.baseline).collect();
    let fit = fit_arm_logistic(&y, &r, &z)?;
    let se = fit.cov[(1, 1)].max(0.0).sqrt();
    let mut t = TestResult::wald(Method::Bin, spec.kind, fit.coef[1], se, alpha);
    t.separated = fit.separated;
    Ok(t)
}

/// Wald test of the experimental-minus-control difference in mean response.
pub fn wald_difference_test(
    data: &TrialDataset,
    model: &FittedModel,
    spec: &EndpointSpec,
    method: Method,
    alpha: f64,
    opts: &DeltaOptions,
) -> Result<TestResult> {
    if method == Method::Bin {
        return bin_two_arm_test(data, spec, alpha);
    }
    if !model.two_arm() || !data.is_two_arm() {
        return Err(Error::InvalidInput("difference test needs a two-arm model and dataset".into()));
    }
    require_cov(model)?;
    let ev = TrialEvaluator::new(data, spec, method, opts.quad)?;
    let means = ev.means(&model.tumour, &model.progression)?;
    for &m in &means {
        if m <= BOUNDARY || m >= 1.0 - BOUNDARY {
            return Err(Error::BoundaryProbability(m));
        }
    }
    let (diff, grad) = gradient(&ev, model, opts, |m| m[1] - m[0])?;
    let se = quadratic_form(&model.theta_cov, &grad).sqrt();
    Ok(TestResult::wald(method, spec.kind, diff, se, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    /// Statistics of the successful permutations, in permutation order.
    pub distribution: Vec<f64>,
    pub failures: usize,
}

fn difference_statistic(
    data: &TrialDataset,
    spec: &EndpointSpec,
    method: Method,
    model: Option<&FittedModel>,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    match (method, model) {
        (Method::Bin, _) => {
            let e = responders(data, spec, Some(Arm::Experimental));
            let c = responders(data, spec, Some(Arm::Control));
            if e.is_empty() || c.is_empty() {
                return Err(Error::InsufficientData("an arm is empty".into()));
            }
            Ok(e.iter().sum::<f64>() / e.len() as f64 - c.iter().sum::<f64>() / c.len() as f64)
        }
        (_, Some(m)) => {
            let means = TrialEvaluator::new(data, spec, method, *cfg)?.means(&m.tumour, &m.progression)?;
            Ok(means[1] - means[0])
        }
        (_, None) => unreachable!("model-based statistic without a model"),
    }
}

/// Permutation test of no arm difference: arm labels are shuffled, the models
/// refitted (warm-started at the observed fit) and the difference in mean
/// response recomputed. The p-value uses add-one smoothing.
pub fn permutation_test(
    data: &TrialDataset,
    spec: &EndpointSpec,
    method: Method,
    n_perm: usize,
    seed: u64,
    opts: &DeltaOptions,
) -> Result<PermutationResult> {
    if !data.is_two_arm() {
        return Err(Error::InvalidInput("permutation test on a single-arm dataset".into()));
    }
    if n_perm < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 permutations, got {n_perm}")));
    }
    let base = if method == Method::Bin { None } else { Some(modelfit::fit_point(data, true)?) };
    let observed = difference_statistic(data, spec, method, base.as_ref(), &opts.quad)?;
    let labels: Vec<Arm> = data.patients.iter().map(|p| p.arm.expect("two-arm data")).collect();
    let one = |k: usize| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let mut arms = labels.clone();
        arms.shuffle(&mut rng);
        let permuted = data.with_arms(&arms);
        let model = match &base {
            Some(b) => Some(modelfit::refit(&permuted, b)?),
            None => None,
        };
        difference_statistic(&permuted, spec, method, model.as_ref(), &opts.quad)
    };
    let results: Vec<Result<f64>> = if opts.parallel {
        (0..n_perm).into_par_iter().map(one).collect()
    } else {
        (0..n_perm).map(one).collect()
    };
    let mut distribution = Vec::with_capacity(n_perm);
    let mut failures = 0;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => distribution.push(s),
            Err(e) => {
                log::debug!("permutation {k} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > MAX_PERMUTATION_FAILURES * n_perm as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: n_perm,
        });
    }
    let cut = observed.abs() * (1.0 - 1e-12);
    let extreme = distribution.iter().filter(|s| s.abs() >= cut).count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + extreme) as f64 / (1 + distribution.len()) as f64,
        distribution,
        failures,
    })
}

#[cfg(test)]
mod tests;
