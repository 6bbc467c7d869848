//! Maximum-likelihood fits of the tumour-size and new-lesion models, packed
//! into one parameter vector with its estimated covariance.
//!
//! Parameter order (`T` visits, bracketed parts two-arm only):
//!
//! ```text
//! m_1..m_T, b, [a_1..a_T], logchol(Σ), then per visit t: α_t, [β_t], γ_t
//! ```
//!
//! `logchol(Σ)` lists the lower Cholesky factor row by row with the diagonal on
//! the log scale, so every vector maps to a positive definite Σ.

mod hessian;
mod logistic;
mod tumour;

pub use hessian::{invert_information, numerical_hessian, HESSIAN_STEP};
pub use logistic::{fit_arm_logistic, ArmLogisticFit, ProgressionModel, COEF_CAP};
pub use tumour::TumourModel;

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::trialdata::TrialDataset;

use logistic::RiskSet;
use tumour::TumourData;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub horizon: usize,
    pub two_arm: bool,
}

impl ThetaLayout {
    pub fn new(horizon: usize, two_arm: bool) -> Self {
        Self { horizon, two_arm }
    }

    fn n_mean(&self) -> usize {
        if self.two_arm {
            2 * self.horizon + 1
        } else {
            self.horizon + 1
        }
    }

    fn n_chol(&self) -> usize {
        self.horizon * (self.horizon + 1) / 2
    }

    fn per_visit(&self) -> usize {
        if self.two_arm {
            3
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.n_mean() + self.n_chol() + self.per_visit() * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Indices of the tumour-model parameters.
    pub fn tumour_range(&self) -> Range<usize> {
        0..self.n_mean() + self.n_chol()
    }

    /// Indices of the logistic parameters of visit `t` (0-based).
    pub fn visit_range(&self, t: usize) -> Range<usize> {
        let start = self.n_mean() + self.n_chol() + t * self.per_visit();
        start..start + self.per_visit()
    }

    pub fn intercept(&self, t: usize) -> usize {
        t
    }

    pub fn slope(&self) -> usize {
        self.horizon
    }

    pub fn arm_effect(&self, t: usize) -> Option<usize> {
        self.two_arm.then(|| self.horizon + 1 + t)
    }

    /// Index of Cholesky entry `(i, j)`, `j <= i`.
    pub fn chol(&self, i: usize, j: usize) -> usize {
        self.n_mean() + i * (i + 1) / 2 + j
    }

    pub fn alpha(&self, t: usize) -> usize {
        self.visit_range(t).start
    }

    pub fn beta(&self, t: usize) -> Option<usize> {
        self.two_arm.then(|| self.visit_range(t).start + 1)
    }

    pub fn gamma(&self, t: usize) -> usize {
        self.visit_range(t).end - 1
    }

    /// Human-readable name of parameter `k`.
    pub fn name(&self, k: usize) -> String {
        let t_max = self.horizon;
        let n_mean = self.n_mean();
        if k < t_max {
            format!("m{}", k + 1)
        } else if k == t_max {
            "b".into()
        } else if k < n_mean {
            format!("a{}", k - t_max)
        } else if k < n_mean + self.n_chol() {
            let mut idx = k - n_mean;
            let mut i = 0;
            while idx > i {
                idx -= i + 1;
                i += 1;
            }
            if idx == i {
                format!("logL{}{}", i + 1, idx + 1)
            } else {
                format!("L{}{}", i + 1, idx + 1)
            }
        } else {
            let off = k - n_mean - self.n_chol();
            let t = off / self.per_visit() + 1;
            match (off % self.per_visit(), self.two_arm) {
                (0, _) => format!("alpha{t}"),
                (1, true) => format!("beta{t}"),
                _ => format!("gamma{t}"),
            }
        }
    }

    pub fn pack_tumour(&self, m: &TumourModel, theta: &mut [f64]) -> Result<()> {
        let t_max = self.horizon;
        theta[..t_max].copy_from_slice(&m.intercepts);
        theta[t_max] = m.slope;
        if let (Some(a), true) = (&m.arm_effects, self.two_arm) {
            theta[t_max + 1..2 * t_max + 1].copy_from_slice(a);
        }
        let l = m
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("covariance is not positive definite".into()))?
            .l();
        for i in 0..t_max {
            for j in 0..=i {
                theta[self.chol(i, j)] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
            }
        }
        Ok(())
    }

    pub fn unpack_tumour(&self, theta: &[f64]) -> TumourModel {
        let t_max = self.horizon;
        let mut l = DMatrix::<f64>::zeros(t_max, t_max);
        for i in 0..t_max {
            for j in 0..=i {
                let v = theta[self.chol(i, j)];
                l[(i, j)] = if i == j { v.exp() } else { v };
            }
        }
        TumourModel {
            intercepts: theta[..t_max].to_vec(),
            slope: theta[t_max],
            arm_effects: self.two_arm.then(|| theta[t_max + 1..2 * t_max + 1].to_vec()),
            cov: &l * l.transpose(),
        }
    }

    pub fn pack_progression(&self, m: &ProgressionModel, theta: &mut [f64]) {
        for t in 0..self.horizon {
            let r = self.visit_range(t);
            theta[r].copy_from_slice(&logistic::coef_of(m, t));
        }
    }

    pub fn unpack_progression(&self, theta: &[f64], separated: &[bool]) -> ProgressionModel {
        let t_max = self.horizon;
        let mut m = ProgressionModel {
            alpha: vec![0.0; t_max],
            beta: self.two_arm.then(|| vec![0.0; t_max]),
            gamma: vec![0.0; t_max],
            separated: if separated.len() == t_max { separated.to_vec() } else { vec![false; t_max] },
        };
        for t in 0..t_max {
            logistic::set_coef(&mut m, t, &theta[self.visit_range(t)]);
        }
        m
    }

    pub fn pack(&self, tumour: &TumourModel, progression: &ProgressionModel) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.len()];
        self.pack_tumour(tumour, &mut theta)?;
        self.pack_progression(progression, &mut theta);
        Ok(theta)
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub layout: ThetaLayout,
    pub tumour: TumourModel,
    pub progression: ProgressionModel,
    pub theta: Vec<f64>,
    /// Inverse observed information; empty (0x0) when not computed.
    pub theta_cov: DMatrix<f64>,
    pub loglik_tumour: f64,
    pub loglik_progression: f64,
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn two_arm(&self) -> bool {
        self.layout.two_arm
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    /// Structured models for an arbitrary parameter vector in this layout.
    pub fn models_at(&self, theta: &[f64]) -> (TumourModel, ProgressionModel) {
        (
            self.layout.unpack_tumour(theta),
            self.layout.unpack_progression(theta, &self.progression.separated),
        )
    }

    /// `key = value` summary of the fit.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "horizon = {}", self.layout.horizon);
        let _ = writeln!(s, "two_arm = {}", self.layout.two_arm);
        let _ = writeln!(s, "loglik_tumour = {}", self.loglik_tumour);
        let _ = writeln!(s, "loglik_progression = {}", self.loglik_progression);
        let has_cov = self.theta_cov.nrows() == self.theta.len();
        for (k, v) in self.theta.iter().enumerate() {
            let se = if has_cov { self.theta_cov[(k, k)].max(0.0).sqrt() } else { f64::NAN };
            let _ = writeln!(s, "{} = {} (se {})", self.layout.name(k), v, se);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }
}

/// Tumour-model MLE and its log-likelihood.
pub fn fit_tumour(data: &TrialDataset, two_arm: bool) -> Result<(TumourModel, f64)> {
    check_arms(data, two_arm)?;
    tumour::fit(&TumourData::new(data, two_arm)?, None)
}

/// Per-visit logistic MLEs and the summed log-likelihood.
pub fn fit_progression(data: &TrialDataset, two_arm: bool) -> Result<(ProgressionModel, f64)> {
    check_arms(data, two_arm)?;
    logistic::fit(&logistic::risk_sets(data), two_arm, None)
}

/// Observed-data log-likelihood of the tumour model.
pub fn tumour_loglik(data: &TrialDataset, two_arm: bool, model: &TumourModel) -> Result<f64> {
    Ok(tumour::loglik(&TumourData::new(data, two_arm)?, model))
}

/// Log-likelihood of the new-lesion models.
pub fn progression_loglik(data: &TrialDataset, model: &ProgressionModel) -> f64 {
    let two_arm = model.beta.is_some();
    logistic::risk_sets(data)
        .iter()
        .enumerate()
        .map(|(t, s)| logistic::visit_loglik(s, &logistic::coef_of(model, t), two_arm))
        .sum()
}

fn check_arms(data: &TrialDataset, two_arm: bool) -> Result<()> {
    if two_arm && !data.is_two_arm() {
        return Err(Error::InsufficientData("two-arm fit requested but no arm labels present".into()));
    }
    Ok(())
}

/// Fit both models and estimate the parameter covariance.
pub fn assemble(data: &TrialDataset, two_arm: bool) -> Result<FittedModel> {
    fit_all(data, two_arm, None, true)
}

/// Point estimates only (no covariance).
pub fn fit_point(data: &TrialDataset, two_arm: bool) -> Result<FittedModel> {
    fit_all(data, two_arm, None, false)
}

/// Point estimates only, warm-started from `init` (used for refits of
/// relabelled data, where the covariance is not needed).
pub fn refit(data: &TrialDataset, init: &FittedModel) -> Result<FittedModel> {
    fit_all(data, init.two_arm(), Some(init), false)
}

fn fit_all(data: &TrialDataset, two_arm: bool, init: Option<&FittedModel>, with_cov: bool) -> Result<FittedModel> {
    check_arms(data, two_arm)?;
    let layout = ThetaLayout::new(data.horizon, two_arm);
    let tdata = TumourData::new(data, two_arm)?;
    let sets = logistic::risk_sets(data);
    let (tumour, ll_t) = tumour::fit(&tdata, init.map(|m| &m.tumour))?;
    let (progression, ll_p) = logistic::fit(&sets, two_arm, init.map(|m| &m.progression))?;
    let theta = layout.pack(&tumour, &progression)?;
    let mut warnings = Vec::new();
    for (t, &s) in progression.separated.iter().enumerate() {
        if s {
            warnings.push(format!("separation at visit {}", t + 1));
        }
    }
    let theta_cov = if with_cov {
        let (cov, pseudo) = information_inverse(&layout, &theta, &tdata, &sets);
        if pseudo {
            log::warn!("observed information is singular; using a pseudo-inverse");
            warnings.push("singular information; pseudo-inverse used".into());
        }
        cov
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(FittedModel {
        layout,
        tumour,
        progression,
        theta,
        theta_cov,
        loglik_tumour: ll_t,
        loglik_progression: ll_p,
        warnings,
    })
}

/// Block-diagonal inverse observed information (tumour block, then one block
/// per visit), from central-difference Hessians.
fn information_inverse(
    layout: &ThetaLayout,
    theta: &[f64],
    tdata: &TumourData,
    sets: &[RiskSet],
) -> (DMatrix<f64>, bool) {
    let n = layout.len();
    let mut cov = DMatrix::zeros(n, n);
    let mut pseudo = false;
    let mut place = |range: Range<usize>, hess: DMatrix<f64>| {
        let (inv, p) = invert_information(&(-hess));
        pseudo |= p;
        for (a, i) in range.clone().enumerate() {
            for (b, j) in range.clone().enumerate() {
                cov[(i, j)] = inv[(a, b)];
            }
        }
    };
    let tr = layout.tumour_range();
    let mut full = theta.to_vec();
    let h = numerical_hessian(&theta[tr.clone()], |x| {
        full[tr.clone()].copy_from_slice(x);
        tumour::loglik(tdata, &layout.unpack_tumour(&full))
    });
    place(tr, h);
    for (t, set) in sets.iter().enumerate() {
        let r = layout.visit_range(t);
        let h = numerical_hessian(&theta[r.clone()], |x| logistic::visit_loglik(set, x, layout.two_arm));
        place(r, h);
    }
    (cov, pseudo)
}

#[cfg(test)]
mod tests;
