//! Trial-level means with cached rectangle probabilities.
//!
//! The rectangle probability of a term, and the eAugbin conditional
//! expectation, depend on a patient only through `(z0, R)`. They are computed
//! on Chebyshev nodes spanning the observed baselines and interpolated, unless
//! `nodes == 0`, in which case each patient is evaluated directly. The table of
//! rectangle probabilities depends on the tumour model alone and can be reused
//! across perturbations of the logistic parameters.

use crate::error::{Error, Result};
use crate::modelfit::{ProgressionModel, TumourModel};
use crate::trialdata::TrialDataset;

use super::interp::Chebyshev;
use super::{
    maug_survival, mean_baseline, term_probability, term_survival, terms, EndpointSpec, Method, PatientView,
    QuadratureConfig, Term, TrimSets, NEGLIGIBLE_REGION,
};

#[derive(Debug, Clone)]
pub struct RectTable {
    /// `[arm][term][point]`.
    values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct TrialEvaluator<'a> {
    data: &'a TrialDataset,
    method: Method,
    cfg: QuadratureConfig,
    terms: Vec<Term>,
    views: Vec<PatientView>,
    trims: Vec<TrimSets>,
    grid: Option<Chebyshev>,
    arms: Vec<f64>,
    zbar: f64,
}

impl<'a> TrialEvaluator<'a> {
    pub fn new(data: &'a TrialDataset, spec: &EndpointSpec, method: Method, cfg: QuadratureConfig) -> Result<Self> {
        spec.validate()?;
        if method == Method::Bin {
            return Err(Error::InvalidInput("the binary method has no model-based evaluator".into()));
        }
        if spec.horizon > data.horizon {
            return Err(Error::DimensionMismatch(format!(
                "endpoint horizon {} exceeds data horizon {}",
                spec.horizon, data.horizon
            )));
        }
        if data.is_empty() {
            return Err(Error::InsufficientData("no patients".into()));
        }
        let terms = terms(spec);
        let trims = if method == Method::MAug {
            terms.iter().map(|t| TrimSets::new(data, t)).collect()
        } else {
            Vec::new()
        };
        let grid = (cfg.nodes > 0).then(|| {
            let lo = data.patients.iter().map(|p| p.baseline).fold(f64::INFINITY, f64::min);
            let hi = data.patients.iter().map(|p| p.baseline).fold(f64::NEG_INFINITY, f64::max);
            Chebyshev::new(lo, hi, cfg.nodes)
        });
        let arms = if data.is_two_arm() { vec![0.0, 1.0] } else { vec![0.0] };
        Ok(Self {
            data,
            method,
            cfg,
            terms,
            views: data.patients.iter().map(PatientView::new).collect(),
            trims,
            grid,
            arms,
            zbar: mean_baseline(data),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Arm indicators evaluated: `[0]` single-arm, `[0, 1]` two-arm.
    pub fn arms(&self) -> &[f64] {
        &self.arms
    }

    fn points(&self) -> Vec<f64> {
        match &self.grid {
            Some(g) => g.nodes().to_vec(),
            None => self.views.iter().map(|v| v.z0).collect(),
        }
    }

    #[inline]
    fn lookup(&self, values: &[f64], i: usize) -> f64 {
        match &self.grid {
            Some(g) => g.eval(values, self.views[i].z0),
            None => values[i],
        }
    }

    pub fn rect_table(&self, tm: &TumourModel) -> Result<RectTable> {
        let pts = self.points();
        let mut values = Vec::with_capacity(self.arms.len());
        for &r in &self.arms {
            let mut per_term = Vec::with_capacity(self.terms.len());
            for term in &self.terms {
                per_term.push(
                    pts.iter()
                        .map(|&z| term_probability(tm, z, r, term, &self.cfg))
                        .collect::<Result<Vec<f64>>>()?,
                );
            }
            values.push(per_term);
        }
        Ok(RectTable { values })
    }

    /// Per-patient probabilities with arm indicator `arms()[arm]` forced.
    pub fn patient_probs(
        &self,
        table: &RectTable,
        tm: &TumourModel,
        pm: &ProgressionModel,
        arm: usize,
    ) -> Result<Vec<f64>> {
        let r = self.arms[arm];
        let n = self.views.len();
        let mut out = vec![0.0; n];
        match self.method {
            Method::MAug => {
                for (h, term) in self.terms.iter().enumerate() {
                    let tilde = self.trims[h].hazards(pm, r, self.zbar);
                    let probs = &table.values[arm][h];
                    for (i, v) in self.views.iter().enumerate() {
                        let p = self.lookup(probs, i).clamp(0.0, 1.0);
                        out[i] += p * maug_survival(v, pm, r, term.factors, &tilde);
                    }
                }
            }
            Method::EAugbin => {
                let pts = self.points();
                for (h, term) in self.terms.iter().enumerate() {
                    let probs = &table.values[arm][h];
                    let surv = pts
                        .iter()
                        .zip(probs)
                        .map(|(&z, &p)| {
                            if p < NEGLIGIBLE_REGION {
                                Ok(0.0)
                            } else {
                                term_survival(tm, pm, z, r, term, &self.cfg).map(|s| p * s)
                            }
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += self.lookup(&surv, i).clamp(0.0, 1.0);
                    }
                }
            }
            Method::Bin => unreachable!("rejected in new"),
        }
        out.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        Ok(out)
    }

    /// Mean probability for each entry of `arms()`.
    pub fn arm_means(&self, table: &RectTable, tm: &TumourModel, pm: &ProgressionModel) -> Result<Vec<f64>> {
        (0..self.arms.len())
            .map(|a| {
                let p = self.patient_probs(table, tm, pm, a)?;
                Ok(p.iter().sum::<f64>() / p.len() as f64)
            })
            .collect()
    }

    pub fn means(&self, tm: &TumourModel, pm: &ProgressionModel) -> Result<Vec<f64>> {
        let table = self.rect_table(tm)?;
        self.arm_means(&table, tm, pm)
    }

    pub fn data(&self) -> &TrialDataset {
        self.data
    }
}
