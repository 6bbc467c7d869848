//! Per-visit logistic models for new-lesion progression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::special::{expit, log_expit, log_one_minus_expit};
use crate::trialdata::TrialDataset;

/// Coefficients beyond this magnitude indicate a monotone likelihood.
pub const COEF_CAP: f64 = 20.0;
const STEP_TOL: f64 = 1e-12;
const MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionModel {
    pub alpha: Vec<f64>,
    /// Arm coefficients; `None` for a single-arm model.
    pub beta: Option<Vec<f64>>,
    pub gamma: Vec<f64>,
    /// Visits whose fit hit separation and were capped.
    pub separated: Vec<bool>,
}

impl ProgressionModel {
    pub fn horizon(&self) -> usize {
        self.alpha.len()
    }

    /// Linear predictor for visit `t` (0-based), previous size `z_prev`, arm `r`.
    #[inline]
    pub fn eta(&self, t: usize, z_prev: f64, r: f64) -> f64 {
        let b = self.beta.as_ref().map_or(0.0, |b| b[t] * r);
        self.alpha[t] + b + self.gamma[t] * z_prev
    }

    /// `P(D_t = 1 | z_{t-1}, R)`.
    #[inline]
    pub fn hazard(&self, t: usize, z_prev: f64, r: f64) -> f64 {
        expit(self.eta(t, z_prev, r))
    }
}

/// At-risk set of one visit: outcome, previous size, arm.
#[derive(Debug, Clone, Default)]
pub(crate) struct RiskSet {
    pub d: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub r: Vec<f64>,
}

pub(crate) fn risk_sets(data: &TrialDataset) -> Vec<RiskSet> {
    let mut sets = vec![RiskSet::default(); data.horizon];
    for p in &data.patients {
        let r = p.arm.map_or(0.0, |a| a.indicator());
        for t in 0..p.last_observed() {
            let z_prev = if t == 0 { p.baseline } else { p.sizes[t - 1] };
            let s = &mut sets[t];
            s.d.push(if p.new_lesion[t] { 1.0 } else { 0.0 });
            s.z_prev.push(z_prev);
            s.r.push(r);
        }
    }
    sets.iter_mut().for_each(RiskSet::canonicalise);
    sets
}

impl RiskSet {
    /// Sort rows by (d, r, z) so sums, and hence fits, do not depend on the
    /// order patients were listed in.
    fn canonicalise(&mut self) {
        let mut idx: Vec<usize> = (0..self.d.len()).collect();
        idx.sort_by(|&a, &b| {
            self.d[a]
                .total_cmp(&self.d[b])
                .then(self.r[a].total_cmp(&self.r[b]))
                .then(self.z_prev[a].total_cmp(&self.z_prev[b]))
        });
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        *self = RiskSet {
            d: pick(&self.d),
            z_prev: pick(&self.z_prev),
            r: pick(&self.r),
        };
    }
}

#[inline]
fn row(set: &RiskSet, i: usize, two_arm: bool) -> ([f64; 3], usize) {
    if two_arm {
        ([1.0, set.r[i], set.z_prev[i]], 3)
    } else {
        ([1.0, set.z_prev[i], 0.0], 2)
    }
}

pub(crate) fn visit_loglik(set: &RiskSet, coef: &[f64], two_arm: bool) -> f64 {
    let mut ll = 0.0;
    for i in 0..set.d.len() {
        let (x, p) = row(set, i, two_arm);
        let eta: f64 = (0..p).map(|j| x[j] * coef[j]).sum();
        ll += if set.d[i] > 0.5 { log_expit(eta) } else { log_one_minus_expit(eta) };
    }
    ll
}

pub(crate) struct VisitFit {
    pub coef: Vec<f64>,
    pub loglik: f64,
    pub separated: bool,
}

/// Newton–Raphson with step halving; `init` is a warm start.
pub(crate) fn fit_visit(set: &RiskSet, two_arm: bool, init: Option<&[f64]>, visit: usize) -> Result<VisitFit> {
    let n = set.d.len();
    let p = if two_arm { 3 } else { 2 };
    if n == 0 {
        return Err(Error::EmptyRiskSet(visit));
    }
    let events: f64 = set.d.iter().sum();
    if events == 0.0 || events == n as f64 {
        log::warn!("visit {visit}: {} new-lesion events among {n} at risk; intercept capped", events as usize);
        let mut coef = vec![0.0; p];
        coef[0] = if events == 0.0 { -COEF_CAP } else { COEF_CAP };
        return Ok(VisitFit {
            loglik: visit_loglik(set, &coef, two_arm),
            coef,
            separated: true,
        });
    }
    let mut coef: Vec<f64> = match init {
        Some(c) if c.len() == p && c.iter().all(|v| v.abs() < COEF_CAP) => c.to_vec(),
        _ => {
            let mut c = vec![0.0; p];
            let rate = events / n as f64;
            c[0] = (rate / (1.0 - rate)).ln();
            c
        }
    };
    let mut ll = visit_loglik(set, &coef, two_arm);
    // Converged once a Newton step no longer moves the coefficients; the
    // score itself has a rounding floor that grows with n.
    let mut last_step = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut score = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let (x, _) = row(set, i, two_arm);
            let eta: f64 = (0..p).map(|j| x[j] * coef[j]).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            for a in 0..p {
                score[a] += x[a] * (set.d[i] - mu);
                for b in 0..p {
                    info[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        let size = coef.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        if last_step <= STEP_TOL * size || score.amax() == 0.0 {
            return Ok(VisitFit {
                coef,
                loglik: ll,
                separated: false,
            });
        }
        let Some(step) = info.clone().cholesky().map(|c| c.solve(&score)) else {
            return Err(Error::SingularDesign(format!("logistic information at visit {visit} is singular")));
        };
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
            let tl = visit_loglik(set, &trial, two_arm);
            if tl >= ll - 1e-12 || scale < 1e-6 {
                last_step = step.amax() * scale;
                coef = trial;
                ll = tl;
                break;
            }
            scale *= 0.5;
        }
        if coef.iter().any(|c| c.abs() > COEF_CAP) {
            log::warn!("visit {visit}: monotone likelihood, coefficients capped at {COEF_CAP}");
            coef.iter_mut().for_each(|c| *c = c.clamp(-COEF_CAP, COEF_CAP));
            return Ok(VisitFit {
                loglik: visit_loglik(set, &coef, two_arm),
                coef,
                separated: true,
            });
        }
    }
    log::warn!("visit {visit}: Newton-Raphson did not converge in {MAX_ITER} iterations (monotone likelihood?)");
    Ok(VisitFit {
        coef,
        loglik: ll,
        separated: true,
    })
}

pub(crate) fn fit(
    sets: &[RiskSet],
    two_arm: bool,
    init: Option<&ProgressionModel>,
) -> Result<(ProgressionModel, f64)> {
    let t_max = sets.len();
    let mut model = ProgressionModel {
        alpha: vec![0.0; t_max],
        beta: two_arm.then(|| vec![0.0; t_max]),
        gamma: vec![0.0; t_max],
        separated: vec![false; t_max],
    };
    let mut total = 0.0;
    for (t, set) in sets.iter().enumerate() {
        let warm = init.filter(|m| m.horizon() == t_max).map(|m| coef_of(m, t));
        let f = fit_visit(set, two_arm, warm.as_deref(), t + 1)?;
        set_coef(&mut model, t, &f.coef);
        model.separated[t] = f.separated;
        total += f.loglik;
    }
    Ok((model, total))
}

/// Logistic regression of `y` on `(1, r, z)` with its inverse information.
#[derive(Debug, Clone)]
pub struct ArmLogisticFit {
    /// Intercept, arm, covariate.
    pub coef: [f64; 3],
    pub cov: DMatrix<f64>,
    pub separated: bool,
}

pub fn fit_arm_logistic(y: &[bool], r: &[f64], z: &[f64]) -> Result<ArmLogisticFit> {
    let mut set = RiskSet {
        d: y.iter().map(|&b| b as u8 as f64).collect(),
        z_prev: z.to_vec(),
        r: r.to_vec(),
    };
    set.canonicalise();
    let f = fit_visit(&set, true, None, 1)?;
    let mut info = DMatrix::<f64>::zeros(3, 3);
    for i in 0..set.d.len() {
        let (x, _) = row(&set, i, true);
        let mu = expit(x.iter().zip(&f.coef).map(|(a, b)| a * b).sum());
        let w = mu * (1.0 - mu);
        for a in 0..3 {
            for b in 0..3 {
                info[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    let (cov, _) = super::invert_information(&info);
    Ok(ArmLogisticFit {
        coef: [f.coef[0], f.coef[1], f.coef[2]],
        cov,
        separated: f.separated,
    })
}

pub(crate) fn coef_of(m: &ProgressionModel, t: usize) -> Vec<f64> {
    match &m.beta {
        Some(b) => vec![m.alpha[t], b[t], m.gamma[t]],
        None => vec![m.alpha[t], m.gamma[t]],
    }
}

pub(crate) fn set_coef(m: &mut ProgressionModel, t: usize, c: &[f64]) {
    m.alpha[t] = c[0];
    match &mut m.beta {
        Some(b) => {
            b[t] = c[1];
            m.gamma[t] = c[2];
        }
        None => m.gamma[t] = c[1],
    }
}
