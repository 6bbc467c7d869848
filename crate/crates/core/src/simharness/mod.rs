//! Trial simulation and operating characteristics.
//!
//! Every replicate draws from its own ChaCha stream `(scenario seed, index)`,
//! so results do not depend on how replicates are scheduled across threads.

mod scenario;

pub use scenario::{preset_names, Scenario};

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::infer::{self, DeltaOptions};
use crate::modelfit::{self, FittedModel};
use crate::respprob::Method;
use crate::special::expit;
use crate::trialdata::{Arm, PatientRecord, Thresholds, TrialDataset};

/// Largest tolerated share of failed replicates.
pub const MAX_REPLICATE_FAILURES: f64 = 0.02;
pub const DEFAULT_TRUE_SAMPLES: usize = 10_000_000;
/// Stream offset for the truth simulation, clear of replicate indices.
const TRUTH_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessOptions {
    pub alpha: f64,
    pub delta: DeltaOptions,
    /// Run replicates on the rayon pool.
    pub parallel: bool,
    pub true_samples: usize,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            delta: DeltaOptions::default(),
            parallel: true,
            true_samples: DEFAULT_TRUE_SAMPLES,
        }
    }
}

struct Sampler {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    growth: f64,
}

impl Sampler {
    fn new(s: &Scenario, arm: Option<Arm>) -> Self {
        Self {
            mean: s.arm_mean(arm),
            chol: s.sigma.clone().cholesky().expect("validated scenario").l(),
            growth: Thresholds::default().growth,
        }
    }

    fn patient(&self, s: &Scenario, rng: &mut ChaCha8Rng, id: String, arm: Option<Arm>) -> PatientRecord {
        let t_max = s.horizon;
        let z0: f64 = rng.gen();
        let e: Vec<f64> = (0..t_max).map(|_| rng.sample(StandardNormal)).collect();
        let mut sizes = Vec::with_capacity(t_max);
        let mut flags = Vec::with_capacity(t_max);
        let mut z_prev = z0;
        for t in 0..t_max {
            let y = self.mean[t] + (0..=t).map(|k| self.chol[(t, k)] * e[k]).sum::<f64>();
            let lesion = rng.gen::<f64>() < expit(s.alpha + s.gamma * z_prev);
            z_prev = z0 * y.exp();
            sizes.push(z_prev);
            flags.push(lesion);
            if lesion || (s.growth_censoring && y > self.growth) {
                break;
            }
        }
        PatientRecord::new(id, arm, z0, sizes, flags).expect("simulated sizes are positive")
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Replicate `index` of the scenario: `n` patients per arm, control first.
pub fn generate(s: &Scenario, index: u64) -> TrialDataset {
    let mut rng = stream(s.seed, index);
    let arms: Vec<Option<Arm>> = if s.is_two_arm() {
        vec![Some(Arm::Control), Some(Arm::Experimental)]
    } else {
        vec![None]
    };
    let mut patients = Vec::with_capacity(s.n * arms.len());
    for arm in arms {
        let sampler = Sampler::new(s, arm);
        for i in 0..s.n {
            let id = format!("{}{}", arm.map_or("p", |a| if a == Arm::Control { "c" } else { "e" }), i + 1);
            patients.push(sampler.patient(s, &mut rng, id, arm));
        }
    }
    TrialDataset::new(patients, s.horizon, Thresholds::default()).expect("simulated data are valid")
}

/// Monte-Carlo response rate of the scenario endpoint for one arm
/// (`None` for single-arm scenarios), with its standard error.
pub fn true_probability(s: &Scenario, arm: Option<Arm>, samples: usize) -> (f64, f64) {
    const CHUNK: usize = 100_000;
    let spec = s.endpoint_spec();
    let sampler = Sampler::new(s, arm);
    let offset = TRUTH_STREAM + arm.map_or(0, |a| a.indicator() as u64) * (1 << 32);
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(s.seed, offset + c as u64);
            let m = CHUNK.min(samples - c * CHUNK);
            (0..m).filter(|_| spec.classify(&sampler.patient(s, &mut rng, String::new(), arm))).count()
        })
        .sum();
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

fn map_reps<T: Send>(n_reps: usize, parallel: bool, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n_reps as u64).into_par_iter().map(f).collect()
    } else {
        (0..n_reps as u64).map(f).collect()
    }
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_REPLICATE_FAILURES * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

fn fit_if_needed(data: &TrialDataset, methods: &[Method], two_arm: bool) -> Result<Option<FittedModel>> {
    if methods.iter().any(|&m| m != Method::Bin) {
        modelfit::assemble(data, two_arm).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_estimate: f64,
    pub coverage: f64,
    pub mean_width: f64,
    /// Mean over replicates of `1 − width/width(Bin)`, in percent; NaN when
    /// Bin was not run.
    pub width_reduction: f64,
    pub wilson_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCharacteristics {
    pub scenario: String,
    pub endpoint: String,
    pub time: usize,
    pub truth: f64,
    pub truth_se: f64,
    pub reps: usize,
    pub failures: usize,
    pub methods: Vec<MethodSummary>,
}

impl OperatingCharacteristics {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// One wide row per scenario, mirroring the paper's results tables.
    pub fn write_csv(&self, mut w: impl Write, header: bool) -> Result<()> {
        let ms: Vec<String> = self.methods.iter().map(|m| m.method.to_string()).collect();
        if header {
            let mut cols = vec!["scenario".to_string(), "endpoint".into(), "time".into(), "true".into(), "true_se".into()];
            for prefix in ["mean", "coverage", "width", "reduction_pct"] {
                cols.extend(ms.iter().map(|m| format!("{prefix}_{m}")));
            }
            cols.extend(["reps".into(), "failures".into()]);
            writeln!(w, "{}", cols.join(","))?;
        }
        let mut vals = vec![
            self.scenario.clone(),
            self.endpoint.clone(),
            self.time.to_string(),
            format!("{:.6}", self.truth),
            format!("{:.6}", self.truth_se),
        ];
        vals.extend(self.methods.iter().map(|m| format!("{:.6}", m.mean_estimate)));
        vals.extend(self.methods.iter().map(|m| format!("{:.4}", m.coverage)));
        vals.extend(self.methods.iter().map(|m| format!("{:.6}", m.mean_width)));
        vals.extend(self.methods.iter().map(|m| format!("{:.3}", m.width_reduction)));
        vals.extend([self.reps.to_string(), self.failures.to_string()]);
        writeln!(w, "{}", vals.join(","))?;
        Ok(())
    }
}

/// Coverage, mean estimate and CI-width reduction for a single-arm scenario.
/// `truth` defaults to [`true_probability`] with `opts.true_samples`.
pub fn run_single_arm(
    s: &Scenario,
    methods: &[Method],
    n_reps: usize,
    truth: Option<(f64, f64)>,
    opts: &HarnessOptions,
) -> Result<OperatingCharacteristics> {
    if s.is_two_arm() {
        return Err(Error::InvalidInput("run_single_arm needs a single-arm scenario".into()));
    }
    if n_reps == 0 || methods.is_empty() {
        return Err(Error::InvalidInput("need at least one replicate and one method".into()));
    }
    let (truth, truth_se) = truth.unwrap_or_else(|| true_probability(s, None, opts.true_samples));
    let spec = s.endpoint_spec();
    let one = |i: u64| -> Result<Vec<(f64, (f64, f64), bool)>> {
        let data = generate(s, i);
        let model = fit_if_needed(&data, methods, false)?;
        methods
            .iter()
            .map(|&m| {
                let e = match (&model, m) {
                    (_, Method::Bin) => infer::bin_estimate(&data, &spec, opts.alpha, None)?,
                    (Some(model), _) => infer::ci_logit_delta(&data, model, &spec, m, opts.alpha, None, &opts.delta)?,
                    (None, _) => unreachable!("model fitted for model-based methods"),
                };
                Ok((e.mean_probability, e.ci, e.wilson_fallback))
            })
            .collect()
    };
    let results = map_reps(n_reps, opts.parallel, |i| {
        one(i).map_err(|e| {
            log::warn!("replicate {i} failed: {e}");
            e
        })
    });
    let ok: Vec<_> = results.into_iter().filter_map(|r| r.ok()).collect();
    let failures = n_reps - ok.len();
    check_failures(failures, n_reps)?;
    let bin = methods.iter().position(|&m| m == Method::Bin);
    let k = ok.len() as f64;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let width = |r: &Vec<(f64, (f64, f64), bool)>| r[j].1 .1 - r[j].1 .0;
            MethodSummary {
                method,
                mean_estimate: ok.iter().map(|r| r[j].0).sum::<f64>() / k,
                coverage: ok.iter().filter(|r| r[j].1 .0 <= truth && truth <= r[j].1 .1).count() as f64 / k,
                mean_width: ok.iter().map(width).sum::<f64>() / k,
                width_reduction: match bin {
                    Some(b) => {
                        100.0 * ok.iter().map(|r| 1.0 - width(r) / (r[b].1 .1 - r[b].1 .0)).sum::<f64>() / k
                    }
                    None => f64::NAN,
                },
                wilson_fallbacks: ok.iter().filter(|r| r[j].2).count(),
            }
        })
        .collect();
    Ok(OperatingCharacteristics {
        scenario: s.name.clone(),
        endpoint: spec.kind.to_string(),
        time: spec.horizon,
        truth,
        truth_se,
        reps: n_reps,
        failures,
        methods: summaries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub tau: f64,
    pub psi: f64,
    pub method: Method,
    pub power: f64,
    /// Monte-Carlo standard error of `power`.
    pub se: f64,
    pub reps: usize,
    pub failures: usize,
}

pub const POWER_CSV_HEADER: &str = "tau,psi,method,power,se,reps,failures";

pub fn write_power_csv(rows: &[PowerRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{POWER_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{:.4},{:.4},{},{}", r.tau, r.psi, r.method, r.power, r.se, r.reps, r.failures)?;
    }
    Ok(())
}

/// Rejection rates of the two-sided difference test at each `tau`. The same
/// replicate streams are used at every grid point.
pub fn run_two_arm_power(
    s: &Scenario,
    taus: &[f64],
    methods: &[Method],
    n_reps: usize,
    opts: &HarnessOptions,
) -> Result<Vec<PowerRow>> {
    if !s.is_two_arm() {
        return Err(Error::InvalidInput("run_two_arm_power needs a two-arm scenario".into()));
    }
    if n_reps == 0 || methods.is_empty() {
        return Err(Error::InvalidInput("need at least one replicate and one method".into()));
    }
    let spec = s.endpoint_spec();
    let mut rows = Vec::new();
    for &tau in taus {
        let sc = s.with_tau(tau);
        let results = map_reps(n_reps, opts.parallel, |i| -> Result<Vec<bool>> {
            let data = generate(&sc, i);
            let model = fit_if_needed(&data, methods, true)?;
            methods
                .iter()
                .map(|&m| {
                    let t = match (&model, m) {
                        (_, Method::Bin) => infer::bin_two_arm_test(&data, &spec, opts.alpha)?,
                        (Some(model), _) => {
                            infer::wald_difference_test(&data, model, &spec, m, opts.alpha, &opts.delta)?
                        }
                        (None, _) => unreachable!("model fitted for model-based methods"),
                    };
                    Ok(t.rejects(opts.alpha))
                })
                .collect::<Result<Vec<bool>>>()
                .inspect_err(|e| log::warn!("tau {tau}, replicate {i} failed: {e}"))
        });
        let ok: Vec<Vec<bool>> = results.into_iter().filter_map(|r| r.ok()).collect();
        let failures = n_reps - ok.len();
        check_failures(failures, n_reps)?;
        for (j, &method) in methods.iter().enumerate() {
            let k = ok.len() as f64;
            let power = ok.iter().filter(|r| r[j]).count() as f64 / k;
            rows.push(PowerRow {
                tau,
                psi: sc.psi,
                method,
                power,
                se: (power * (1.0 - power) / k).sqrt(),
                reps: n_reps,
                failures,
            });
        }
    }
    Ok(rows)
}

/// Median wall time in seconds per replicate (simulate, fit, estimate with
/// interval) for each method, over `reps` ≥ 5 serial replicates.
pub fn timing_probe(s: &Scenario, methods: &[Method], reps: usize, opts: &HarnessOptions) -> Result<Vec<(Method, f64)>> {
    let reps = reps.max(5);
    let spec = s.endpoint_spec();
    let serial = DeltaOptions {
        parallel: false,
        ..opts.delta
    };
    methods
        .iter()
        .map(|&m| {
            let mut times = Vec::with_capacity(reps);
            for i in 0..reps as u64 {
                let start = Instant::now();
                let data = generate(s, i);
                let model = fit_if_needed(&data, &[m], s.is_two_arm())?;
                match (&model, s.is_two_arm()) {
                    (None, true) => drop(infer::bin_two_arm_test(&data, &spec, opts.alpha)?),
                    (None, false) => drop(infer::bin_estimate(&data, &spec, opts.alpha, None)?),
                    (Some(model), true) => drop(infer::wald_difference_test(&data, model, &spec, m, opts.alpha, &serial)?),
                    (Some(model), false) => drop(infer::ci_logit_delta(&data, model, &spec, m, opts.alpha, None, &serial)?),
                }
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            Ok((m, times[times.len() / 2]))
        })
        .collect()
}
