//! Probability-of-response engines.
//!
//! Every endpoint is a sum of disjoint rectangle terms (see [`terms`]). For a
//! term over visits `1..=d` carrying `K` survival factors:
//!
//! * eAugbin integrates `∏_{t≤K} (1 − π_t(z_{t−1}))` against the normal density
//!   over the rectangle, as `P(rect) · E[∏ … | Y ∈ rect]`, with the conditional
//!   expectation computed over the Genz transform;
//! * mAug multiplies `P(rect)` by `∏_{t≤K} (1 − π_it)`, using the fitted hazard
//!   at the observed previous size where it exists and a trimmed mean hazard
//!   over at-risk patients otherwise.

mod evaluator;
mod interp;
mod terms;

pub use evaluator::{RectTable, TrialEvaluator};
pub use interp::Chebyshev;
pub use terms::{terms, Term};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::modelfit::{FittedModel, ProgressionModel, TumourModel};
use crate::mvnquad::{self, MvnSpec, QmcOptions, Rectangle};
use crate::trialdata::{self, detect_progression, Arm, PatientRecord, ProgressionCause, TrialDataset};

/// Terms whose rectangle probability falls below this contribute nothing.
pub const NEGLIGIBLE_REGION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndpointKind {
    FixedTime,
    BorUnconfirmed,
    BorConfirmed,
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointKind::FixedTime => "fixed",
            EndpointKind::BorUnconfirmed => "bor",
            EndpointKind::BorConfirmed => "bor-confirmed",
        })
    }
}

impl FromStr for EndpointKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed_time" => Ok(EndpointKind::FixedTime),
            "bor" | "bor_unconfirmed" => Ok(EndpointKind::BorUnconfirmed),
            "bor-confirmed" | "bor_confirmed" => Ok(EndpointKind::BorConfirmed),
            _ => Err(Error::InvalidInput(format!("unknown endpoint `{s}`"))),
        }
    }
}

/// Bound on intermediate visits for the fixed-time endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntermediateBound {
    Unbounded,
    GrowthBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointSpec {
    pub kind: EndpointKind,
    pub horizon: usize,
    pub response: f64,
    pub growth: f64,
    pub intermediate: IntermediateBound,
}

impl EndpointSpec {
    pub fn new(kind: EndpointKind, horizon: usize) -> Self {
        Self {
            kind,
            horizon,
            response: trialdata::default_response_threshold(),
            growth: trialdata::default_growth_threshold(),
            intermediate: IntermediateBound::Unbounded,
        }
    }

    pub fn fixed(horizon: usize) -> Self {
        Self::new(EndpointKind::FixedTime, horizon)
    }

    pub fn bor(horizon: usize) -> Self {
        Self::new(EndpointKind::BorUnconfirmed, horizon)
    }

    pub fn bor_confirmed(horizon: usize) -> Self {
        Self::new(EndpointKind::BorConfirmed, horizon)
    }

    pub fn with_thresholds(mut self, th: &trialdata::Thresholds) -> Self {
        self.response = th.response;
        self.growth = th.growth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("endpoint horizon must be at least 1".into()));
        }
        if !(self.response < self.growth) {
            return Err(Error::InvalidInput("response threshold must be below growth threshold".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> trialdata::Thresholds {
        trialdata::Thresholds {
            response: self.response,
            growth: self.growth,
        }
    }

    /// Dichotomised outcome of one patient.
    pub fn classify(&self, p: &PatientRecord) -> bool {
        let th = self.thresholds();
        match self.kind {
            EndpointKind::FixedTime => trialdata::classify_fixed(
                p,
                self.horizon,
                &th,
                self.intermediate == IntermediateBound::GrowthBound,
            ),
            EndpointKind::BorUnconfirmed => trialdata::classify_bor(p, &th, false),
            EndpointKind::BorConfirmed => trialdata::classify_bor(p, &th, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bin,
    EAugbin,
    MAug,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bin, Method::EAugbin, Method::MAug];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bin => "bin",
            Method::EAugbin => "eaugbin",
            Method::MAug => "maug",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bin" => Ok(Method::Bin),
            "eaugbin" => Ok(Method::EAugbin),
            "maug" => Ok(Method::MAug),
            _ => Err(Error::InvalidInput(format!("unknown method `{s}`"))),
        }
    }
}

/// Integration settings shared by the engines. Both rules use a fixed budget
/// and no variable reordering, so results are smooth in the parameters for a
/// fixed seed (needed for finite-difference gradients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Rectangle probabilities in three or more dimensions.
    pub rect: QmcOptions,
    /// Conditional expectations for eAugbin.
    pub eaug: QmcOptions,
    /// Chebyshev nodes in baseline size for trial means; 0 evaluates every
    /// patient directly.
    pub nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rect: QmcOptions::fixed(8, 64, mvnquad::DEFAULT_SEED),
            eaug: QmcOptions::fixed(8, 1 << 13, mvnquad::DEFAULT_SEED),
            nodes: 6,
        }
    }
}

impl QuadratureConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rect.seed = seed;
        self.eaug.seed = seed;
        self
    }
}

/// Estimated mean response with its logit-scale interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEstimate {
    pub method: Method,
    pub endpoint: EndpointKind,
    pub mean_probability: f64,
    pub logit_variance: f64,
    pub ci: (f64, f64),
    pub per_patient: Vec<f64>,
    /// True when the interval fell back to Wilson.
    pub wilson_fallback: bool,
}

impl ResponseEstimate {
    pub fn width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

fn term_law(tm: &TumourModel, z0: f64, r: f64, term: &Term) -> Result<(MvnSpec, Rectangle)> {
    let d = term.dims();
    let mean = tm.mean(z0, r)[..d].to_vec();
    let cov = DMatrix::from_fn(d, d, |i, j| tm.cov[(i, j)]);
    Ok((MvnSpec::new(mean, cov)?, Rectangle::new(term.lower.clone(), term.upper.clone())?))
}

/// `P(Y ∈ term)` for a patient with baseline `z0` and arm indicator `r`.
pub fn term_probability(tm: &TumourModel, z0: f64, r: f64, term: &Term, cfg: &QuadratureConfig) -> Result<f64> {
    let (spec, rect) = term_law(tm, z0, r, term)?;
    Ok(mvnquad::mvn_rect_prob(&spec, &rect, &cfg.rect)?.probability)
}

/// `E[∏_{t≤K} (1 − π_t(z_{t−1})) | Y ∈ term]` with `z_t = z0 · exp(y_t)`.
pub fn term_survival(
    tm: &TumourModel,
    pm: &ProgressionModel,
    z0: f64,
    r: f64,
    term: &Term,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let (spec, rect) = term_law(tm, z0, r, term)?;
    let k = term.factors;
    let res = mvnquad::truncated_expectation(&spec, &rect, &cfg.eaug, |y| {
        let mut s = 1.0 - pm.hazard(0, z0, r);
        for t in 1..k {
            s *= 1.0 - pm.hazard(t, z0 * y[t - 1].exp(), r);
        }
        s
    })?;
    Ok(res.value)
}

/// eAugbin probability for a patient with baseline `z0` and arm indicator `r`.
pub fn prob_eaugbin(
    z0: f64,
    r: f64,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    spec.validate()?;
    check_horizon(tm, spec)?;
    let mut total = 0.0;
    for term in terms(spec) {
        let p = term_probability(tm, z0, r, &term, cfg)?;
        if p < NEGLIGIBLE_REGION {
            continue;
        }
        total += p * term_survival(tm, pm, z0, r, &term, cfg)?;
    }
    Ok(total.clamp(0.0, 1.0))
}

fn check_horizon(tm: &TumourModel, spec: &EndpointSpec) -> Result<()> {
    if spec.horizon > tm.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "endpoint horizon {} exceeds model horizon {}",
            spec.horizon,
            tm.horizon()
        )));
    }
    Ok(())
}

fn require(spec: &EndpointSpec, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} called with a {} endpoint", spec.kind)))
    }
}

pub fn prob_fixed_eaugbin(
    p: &PatientRecord,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    require(spec, spec.kind == EndpointKind::FixedTime, "prob_fixed_eaugbin")?;
    prob_eaugbin(p.baseline, arm_of(p), tm, pm, spec, cfg)
}

pub fn prob_bor_eaugbin(
    p: &PatientRecord,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    require(spec, spec.kind != EndpointKind::FixedTime, "prob_bor_eaugbin")?;
    prob_eaugbin(p.baseline, arm_of(p), tm, pm, spec, cfg)
}

fn arm_of(p: &PatientRecord) -> f64 {
    p.arm.map_or(0.0, |a| a.indicator())
}

/// Data-side view of a patient used by mAug.
#[derive(Debug, Clone)]
pub(crate) struct PatientView {
    pub z0: f64,
    /// Observed `z_{t−1}` for visits `t = 1..=F+1` (index `t − 1`).
    pub z_prev: Vec<f64>,
}

impl PatientView {
    pub fn new(p: &PatientRecord) -> Self {
        let mut z_prev = Vec::with_capacity(p.last_observed() + 1);
        z_prev.push(p.baseline);
        z_prev.extend_from_slice(&p.sizes);
        Self { z0: p.baseline, z_prev }
    }
}

/// Per-visit patient sets behind the trimmed mean hazards of one term.
#[derive(Debug, Clone)]
pub(crate) struct TrimSets {
    /// `[t]`: previous sizes of the patients kept at visit `t`.
    pub kept: Vec<Vec<f64>>,
}

impl TrimSets {
    pub fn new(data: &TrialDataset, term: &Term) -> Self {
        let th = data.thresholds;
        let mut kept = vec![Vec::new(); term.factors];
        let mut warned = false;
        for (t, slot) in kept.iter_mut().enumerate() {
            let (lo, hi) = term.phi[t];
            let mut all = Vec::new();
            for p in &data.patients {
                let f = p.last_observed();
                let at_risk = f > t
                    || (f == t && detect_progression(p, &th).cause == ProgressionCause::None);
                if !at_risk {
                    continue;
                }
                let z = if t == 0 { p.baseline } else { p.sizes[t - 1] };
                all.push(z);
                let inside = if f > t {
                    let y = (p.sizes[t] / p.baseline).ln();
                    lo < y && y < hi
                } else {
                    true
                };
                if inside {
                    slot.push(z);
                }
            }
            if slot.is_empty() {
                if !all.is_empty() && !warned {
                    log::warn!("every at-risk patient at visit {} trimmed; using the untrimmed mean", t + 1);
                    warned = true;
                }
                *slot = all;
            }
        }
        Self { kept }
    }

    /// Imputed hazards `π̃_t` for arm indicator `r`.
    pub fn hazards(&self, pm: &ProgressionModel, r: f64, fallback_z: f64) -> Vec<f64> {
        self.kept
            .iter()
            .enumerate()
            .map(|(t, zs)| {
                if zs.is_empty() {
                    pm.hazard(t, fallback_z, r)
                } else {
                    zs.iter().map(|&z| pm.hazard(t, z, r)).sum::<f64>() / zs.len() as f64
                }
            })
            .collect()
    }
}

/// Survival product `∏_{t≤K} (1 − π_it)` for mAug.
pub(crate) fn maug_survival(v: &PatientView, pm: &ProgressionModel, r: f64, factors: usize, tilde: &[f64]) -> f64 {
    let mut s = 1.0;
    for t in 0..factors {
        let pi = match v.z_prev.get(t) {
            Some(&z) => pm.hazard(t, z, r),
            None => tilde[t],
        };
        s *= 1.0 - pi;
    }
    s
}

/// mAug probability for one patient, with imputed hazards from `data`.
/// `arm` overrides the patient's own arm indicator.
pub fn prob_maug(
    p: &PatientRecord,
    arm: Option<f64>,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    data: &TrialDataset,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    spec.validate()?;
    check_horizon(tm, spec)?;
    let r = arm.unwrap_or_else(|| arm_of(p));
    let view = PatientView::new(p);
    let zbar = mean_baseline(data);
    let mut total = 0.0;
    for term in terms(spec) {
        let tilde = TrimSets::new(data, &term).hazards(pm, r, zbar);
        let prob = term_probability(tm, p.baseline, r, &term, cfg)?;
        total += prob * maug_survival(&view, pm, r, term.factors, &tilde);
    }
    Ok(total.clamp(0.0, 1.0))
}

pub fn prob_fixed_maug(
    p: &PatientRecord,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    data: &TrialDataset,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    require(spec, spec.kind == EndpointKind::FixedTime, "prob_fixed_maug")?;
    prob_maug(p, None, tm, pm, spec, data, cfg)
}

pub fn prob_bor_maug(
    p: &PatientRecord,
    tm: &TumourModel,
    pm: &ProgressionModel,
    spec: &EndpointSpec,
    data: &TrialDataset,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    require(spec, spec.kind != EndpointKind::FixedTime, "prob_bor_maug")?;
    prob_maug(p, None, tm, pm, spec, data, cfg)
}

pub(crate) fn mean_baseline(data: &TrialDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.patients.iter().map(|p| p.baseline).sum::<f64>() / data.len() as f64
}

/// Proportion of dichotomised responders.
pub fn bin_proportion(data: &TrialDataset, spec: &EndpointSpec) -> (usize, usize) {
    let k = data.patients.iter().filter(|p| spec.classify(p)).count();
    (k, data.len())
}

fn arm_subset(data: &TrialDataset, arm: Option<Arm>) -> TrialDataset {
    let mut out = data.clone();
    if let (Some(a), true) = (arm, data.is_two_arm()) {
        out.patients.retain(|p| p.arm == Some(a));
    }
    out
}

/// Trial-mean response probability (interval fields unset).
///
/// Two-arm models average over all patients with the arm indicator forced to
/// `arm`; `Bin` uses the responders of that arm. `arm` is ignored for
/// single-arm models.
pub fn mean_response(
    data: &TrialDataset,
    model: &FittedModel,
    spec: &EndpointSpec,
    method: Method,
    arm: Option<Arm>,
    cfg: &QuadratureConfig,
) -> Result<ResponseEstimate> {
    let (mean, per_patient) = if method == Method::Bin {
        let sub = arm_subset(data, arm);
        let per: Vec<f64> = sub.patients.iter().map(|p| spec.classify(p) as u8 as f64).collect();
        if per.is_empty() {
            return Err(Error::InsufficientData("no patients in the requested arm".into()));
        }
        (per.iter().sum::<f64>() / per.len() as f64, per)
    } else {
        let ev = TrialEvaluator::new(data, spec, method, *cfg)?;
        let idx = arm_index(model, arm)?;
        let table = ev.rect_table(&model.tumour)?;
        let per = ev.patient_probs(&table, &model.tumour, &model.progression, idx)?;
        (per.iter().sum::<f64>() / per.len() as f64, per)
    };
    Ok(ResponseEstimate {
        method,
        endpoint: spec.kind,
        mean_probability: mean,
        logit_variance: f64::NAN,
        ci: (f64::NAN, f64::NAN),
        per_patient,
        wilson_fallback: false,
    })
}

pub(crate) fn arm_index(model: &FittedModel, arm: Option<Arm>) -> Result<usize> {
    match (model.two_arm(), arm) {
        (false, _) => Ok(0),
        (true, Some(a)) => Ok(a.indicator() as usize),
        (true, None) => Err(Error::InvalidInput("two-arm model: an arm must be given".into())),
    }
}

/// Experimental minus control mean response.
pub fn arm_difference(
    data: &TrialDataset,
    model: &FittedModel,
    spec: &EndpointSpec,
    method: Method,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if !model.two_arm() || !data.is_two_arm() {
        return Err(Error::InvalidInput("arm difference needs a two-arm model and dataset".into()));
    }
    let e = mean_response(data, model, spec, method, Some(Arm::Experimental), cfg)?;
    let c = mean_response(data, model, spec, method, Some(Arm::Control), cfg)?;
    Ok(e.mean_probability - c.mean_probability)
}
