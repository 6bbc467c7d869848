//! Normal model for the log size ratios under monotone missingness.
//!
//! The mean is `m_t + b z0 (+ a_t R)` with a slope shared across visits, so the
//! sequential-regression factorisation does not separate the mean parameters.
//! The MLE is found by alternating a GLS step for the mean (given Σ) with the
//! exact monotone-pattern MLE of Σ (given the mean), which is a sequence of
//! no-intercept regressions of each residual on the earlier residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::trialdata::TrialDataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_ITER: usize = 2000;
const REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct TumourModel {
    pub intercepts: Vec<f64>,
    pub slope: f64,
    /// Per-visit arm effects; `None` for a single-arm model.
    pub arm_effects: Option<Vec<f64>>,
    pub cov: DMatrix<f64>,
}

impl TumourModel {
    pub fn horizon(&self) -> usize {
        self.intercepts.len()
    }

    /// Mean log ratios for baseline `z0` and arm indicator `r`.
    pub fn mean(&self, z0: f64, r: f64) -> Vec<f64> {
        let mut m: Vec<f64> = self.intercepts.iter().map(|m| m + self.slope * z0).collect();
        if let Some(a) = &self.arm_effects {
            for (mt, at) in m.iter_mut().zip(a) {
                *mt += at * r;
            }
        }
        m
    }
}

/// Observed log ratios with their covariates.
#[derive(Debug, Clone)]
pub(crate) struct TumourData {
    pub y: Vec<Vec<f64>>,
    pub z0: Vec<f64>,
    pub r: Vec<f64>,
    pub horizon: usize,
    pub two_arm: bool,
}

impl TumourData {
    pub fn new(data: &TrialDataset, two_arm: bool) -> Result<Self> {
        let mut out = TumourData {
            y: Vec::new(),
            z0: Vec::new(),
            r: Vec::new(),
            horizon: data.horizon,
            two_arm,
        };
        for p in &data.patients {
            if p.last_observed() == 0 {
                continue;
            }
            out.y.push(p.log_ratios()?);
            out.z0.push(p.baseline);
            out.r.push(p.arm.map_or(0.0, |a| a.indicator()));
        }
        Ok(out)
    }

    fn n_mean(&self) -> usize {
        if self.two_arm {
            2 * self.horizon + 1
        } else {
            self.horizon + 1
        }
    }

    fn check(&self) -> Result<()> {
        let t_max = self.horizon;
        if self.y.len() < t_max + 3 {
            return Err(Error::InsufficientData(format!(
                "{} patients with follow-up; at least {} needed for T = {t_max}",
                self.y.len(),
                t_max + 3
            )));
        }
        for t in 0..t_max {
            let n_t = self.y.iter().filter(|y| y.len() > t).count();
            if n_t < 2 || n_t <= t {
                return Err(Error::InsufficientData(format!("visit {} observed for {n_t} patients", t + 1)));
            }
            if self.two_arm {
                let exp = self.y.iter().zip(&self.r).filter(|(y, &r)| y.len() > t && r > 0.5).count();
                if exp == 0 || exp == n_t {
                    return Err(Error::InsufficientData(format!("visit {} observed in one arm only", t + 1)));
                }
            }
        }
        Ok(())
    }

    /// Mean vector of patient `i` under stacked mean parameters `beta`.
    fn mean_of(&self, i: usize, beta: &[f64], out: &mut Vec<f64>) {
        let t_max = self.horizon;
        out.clear();
        for t in 0..self.y[i].len() {
            let mut m = beta[t] + beta[t_max] * self.z0[i];
            if self.two_arm {
                m += beta[t_max + 1 + t] * self.r[i];
            }
            out.push(m);
        }
    }

    fn design_row(&self, i: usize, t: usize, row: &mut [f64]) {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[t] = 1.0;
        row[self.horizon] = self.z0[i];
        if self.two_arm {
            row[self.horizon + 1 + t] = self.r[i];
        }
    }
}

/// Inverses and log-determinants of the leading principal blocks of Σ.
pub(crate) struct LeadingBlocks {
    inv: Vec<DMatrix<f64>>,
    logdet: Vec<f64>,
}

impl LeadingBlocks {
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let t_max = cov.nrows();
        let mut inv = Vec::with_capacity(t_max);
        let mut logdet = Vec::with_capacity(t_max);
        for k in 1..=t_max {
            let chol = cov.view((0, 0), (k, k)).into_owned().cholesky()?;
            logdet.push(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>());
            inv.push(chol.inverse());
        }
        Some(Self { inv, logdet })
    }

    fn quad(&self, r: &[f64]) -> f64 {
        let k = r.len();
        let w = &self.inv[k - 1];
        let mut s = 0.0;
        for a in 0..k {
            let mut row = 0.0;
            for b in 0..k {
                row += w[(a, b)] * r[b];
            }
            s += r[a] * row;
        }
        s
    }
}

pub(crate) fn loglik(data: &TumourData, model: &TumourModel) -> f64 {
    let Some(blocks) = LeadingBlocks::new(&model.cov) else {
        return f64::NEG_INFINITY;
    };
    let beta = stack_mean(model);
    loglik_with(data, &beta, &blocks)
}

fn loglik_with(data: &TumourData, beta: &[f64], blocks: &LeadingBlocks) -> f64 {
    let mut m = Vec::with_capacity(data.horizon);
    let mut r = Vec::with_capacity(data.horizon);
    let mut ll = 0.0;
    for i in 0..data.y.len() {
        data.mean_of(i, beta, &mut m);
        r.clear();
        r.extend(data.y[i].iter().zip(&m).map(|(y, m)| y - m));
        let k = r.len();
        ll -= 0.5 * (k as f64 * LN_2PI + blocks.logdet[k - 1] + blocks.quad(&r));
    }
    ll
}

fn stack_mean(model: &TumourModel) -> Vec<f64> {
    let mut beta = model.intercepts.clone();
    beta.push(model.slope);
    if let Some(a) = &model.arm_effects {
        beta.extend_from_slice(a);
    }
    beta
}

fn gls_step(data: &TumourData, blocks: &LeadingBlocks) -> Result<Vec<f64>> {
    let p = data.n_mean();
    let t_max = data.horizon;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut c = DVector::<f64>::zeros(p);
    let mut x = DMatrix::<f64>::zeros(t_max, p);
    let mut row = vec![0.0; p];
    for i in 0..data.y.len() {
        let k = data.y[i].len();
        for t in 0..k {
            data.design_row(i, t, &mut row);
            for j in 0..p {
                x[(t, j)] = row[j];
            }
        }
        let xi = x.rows(0, k);
        let wx = &blocks.inv[k - 1] * xi;
        a += xi.transpose() * &wx;
        let y = DVector::from_column_slice(&data.y[i]);
        c += wx.transpose() * y;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("mean-model normal equations are singular".into()))?;
    Ok(chol.solve(&c).iter().copied().collect())
}

/// Exact MLE of Σ for fixed means under a monotone pattern.
fn cov_step(data: &TumourData, beta: &[f64]) -> Result<DMatrix<f64>> {
    let t_max = data.horizon;
    let mut resid: Vec<Vec<f64>> = Vec::with_capacity(data.y.len());
    let mut m = Vec::with_capacity(t_max);
    for i in 0..data.y.len() {
        data.mean_of(i, beta, &mut m);
        resid.push(data.y[i].iter().zip(&m).map(|(y, m)| y - m).collect());
    }
    let mut cov = DMatrix::<f64>::zeros(t_max, t_max);
    for t in 0..t_max {
        let rows: Vec<&Vec<f64>> = resid.iter().filter(|r| r.len() > t).collect();
        let n_t = rows.len() as f64;
        if t == 0 {
            cov[(0, 0)] = rows.iter().map(|r| r[0] * r[0]).sum::<f64>() / n_t;
        } else {
            let mut xtx = DMatrix::<f64>::zeros(t, t);
            let mut xty = DVector::<f64>::zeros(t);
            for r in &rows {
                for a in 0..t {
                    xty[a] += r[a] * r[t];
                    for b in 0..t {
                        xtx[(a, b)] += r[a] * r[b];
                    }
                }
            }
            let phi = xtx
                .cholesky()
                .ok_or_else(|| Error::SingularDesign(format!("residual regression for visit {} is singular", t + 1)))?
                .solve(&xty);
            let rss: f64 = rows
                .iter()
                .map(|r| {
                    let fit: f64 = (0..t).map(|a| phi[a] * r[a]).sum();
                    (r[t] - fit).powi(2)
                })
                .sum();
            let prev = cov.view((0, 0), (t, t)).into_owned();
            let cross = &prev * &phi;
            for a in 0..t {
                cov[(t, a)] = cross[a];
                cov[(a, t)] = cross[a];
            }
            cov[(t, t)] = rss / n_t + phi.dot(&cross);
        }
        if !(cov[(t, t)] > 0.0) {
            return Err(Error::SingularDesign(format!("zero residual variance at visit {}", t + 1)));
        }
    }
    Ok(cov)
}

fn unstack(beta: &[f64], cov: DMatrix<f64>, t_max: usize, two_arm: bool) -> TumourModel {
    TumourModel {
        intercepts: beta[..t_max].to_vec(),
        slope: beta[t_max],
        arm_effects: two_arm.then(|| beta[t_max + 1..].to_vec()),
        cov,
    }
}

/// Fit by alternating GLS and covariance updates. `init` seeds the covariance.
pub(crate) fn fit(data: &TumourData, init: Option<&TumourModel>) -> Result<(TumourModel, f64)> {
    data.check()?;
    let t_max = data.horizon;
    let mut cov = match init {
        Some(m) if m.horizon() == t_max => m.cov.clone(),
        _ => DMatrix::identity(t_max, t_max),
    };
    let mut prev = f64::NEG_INFINITY;
    let mut beta;
    let mut iter = 0;
    loop {
        let blocks = LeadingBlocks::new(&cov)
            .ok_or_else(|| Error::SingularDesign("covariance estimate lost positive definiteness".into()))?;
        beta = gls_step(data, &blocks)?;
        cov = cov_step(data, &beta)?;
        let blocks = LeadingBlocks::new(&cov)
            .ok_or_else(|| Error::SingularDesign("covariance estimate lost positive definiteness".into()))?;
        let ll = loglik_with(data, &beta, &blocks);
        iter += 1;
        if (ll - prev).abs() <= REL_TOL * ll.abs().max(1.0) || iter >= MAX_ITER {
            if iter >= MAX_ITER {
                log::warn!("tumour model stopped after {MAX_ITER} alternating steps");
            }
            return Ok((unstack(&beta, cov, t_max, data.two_arm), ll));
        }
        prev = ll;
    }
}
