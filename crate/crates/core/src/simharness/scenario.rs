//! Simulation scenarios and their text format.
//!
//! ```text
//! name = fixed-T2-a15
//! arms = 1                # 1 or 2; n is per arm
//! n = 75
//! horizon = 2
//! endpoint = fixed        # fixed | bor | bor-confirmed
//! time = 2                # endpoint horizon, defaults to `horizon`
//! alpha = -1.5            # new-lesion logistic intercept
//! gamma = 0               # ... and size effect
//! mu_level = ln(0.7)
//! mu_frac = 0.5 1         # mu_t = mu_frac_t * mu_level
//! sigma = 0.5 0.5; 0.5 1  # rows separated by ';'
//! growth_censoring = false
//! tau = 0                 # two-arm: mu_t += effect_frac_t * (delta*tau + psi),
//! psi = 0                 # delta = +1 control, -1 experimental
//! effect_frac = 0.5 1
//! seed = 20170101
//! ```
//!
//! Numbers may be written as `ln(x)`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::respprob::{EndpointKind, EndpointSpec};
use crate::trialdata::Arm;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Patients per arm.
    pub n: usize,
    pub arms: usize,
    pub horizon: usize,
    pub endpoint: EndpointKind,
    pub time: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub mu_level: f64,
    pub mu_frac: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Stop follow-up after tumour-growth progression as well as after new
    /// lesions.
    pub growth_censoring: bool,
    pub tau: f64,
    pub psi: f64,
    pub effect_frac: Vec<f64>,
    pub seed: u64,
}

const PRESETS: &[(&str, &str)] = &[
    ("fixed-T2-a15", include_str!("../../presets/fixed-T2-a15.scn")),
    ("fixed-T2-a25", include_str!("../../presets/fixed-T2-a25.scn")),
    ("fixed-T3-a15", include_str!("../../presets/fixed-T3-a15.scn")),
    ("fixed-T3-a25", include_str!("../../presets/fixed-T3-a25.scn")),
    ("fixed-T4-a15", include_str!("../../presets/fixed-T4-a15.scn")),
    ("fixed-T4-a25", include_str!("../../presets/fixed-T4-a25.scn")),
    ("bor-T4-a15", include_str!("../../presets/bor-T4-a15.scn")),
    ("bor-T4-a25", include_str!("../../presets/bor-T4-a25.scn")),
    ("bor-T5-a15", include_str!("../../presets/bor-T5-a15.scn")),
    ("bor-T5-a25", include_str!("../../presets/bor-T5-a25.scn")),
    ("bor-T6-a15", include_str!("../../presets/bor-T6-a15.scn")),
    ("bor-T6-a25", include_str!("../../presets/bor-T6-a25.scn")),
    ("bor-T7-a15", include_str!("../../presets/bor-T7-a15.scn")),
    ("bor-T7-a25", include_str!("../../presets/bor-T7-a25.scn")),
    ("fixed-T2-2arm", include_str!("../../presets/fixed-T2-2arm.scn")),
    ("bor-T4-2arm", include_str!("../../presets/bor-T4-2arm.scn")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

impl Scenario {
    /// A bundled preset by exact name, or by unique prefix among presets
    /// with `arms` arms (any number of arms when `None`).
    pub fn preset(name: &str, arms: Option<usize>) -> Result<Self> {
        if let Some((_, text)) = PRESETS.iter().find(|p| p.0 == name) {
            return text.parse();
        }
        let mut hits = Vec::new();
        for (n, text) in PRESETS {
            if n.starts_with(name) {
                let s: Scenario = text.parse()?;
                if arms.map_or(true, |a| a == s.arms) {
                    hits.push(s);
                }
            }
        }
        match hits.len() {
            1 => Ok(hits.pop().expect("one hit")),
            0 => Err(Error::InvalidInput(format!(
                "unknown preset `{name}`; available: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            ))),
            _ => Err(Error::InvalidInput(format!("preset name `{name}` is ambiguous"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn endpoint_spec(&self) -> EndpointSpec {
        EndpointSpec::new(self.endpoint, self.time)
    }

    pub fn is_two_arm(&self) -> bool {
        self.arms == 2
    }

    /// Mean log ratios for patients of `arm` (`None` for single-arm).
    pub fn arm_mean(&self, arm: Option<Arm>) -> Vec<f64> {
        let shift = match arm {
            Some(a) if self.is_two_arm() => {
                let delta = if a == Arm::Control { 1.0 } else { -1.0 };
                delta * self.tau + self.psi
            }
            _ => 0.0,
        };
        (0..self.horizon)
            .map(|t| self.mu_frac[t] * self.mu_level + self.effect_frac.get(t).copied().unwrap_or(0.0) * shift)
            .collect()
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("scenario `{}`: {m}", self.name)));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(1..=2).contains(&self.arms) {
            return bad(format!("arms must be 1 or 2, got {}", self.arms));
        }
        if self.horizon == 0 || self.time == 0 || self.time > self.horizon {
            return bad(format!("need 1 <= time ({}) <= horizon ({})", self.time, self.horizon));
        }
        if self.endpoint == EndpointKind::BorConfirmed && self.time < 2 {
            return bad("confirmed BOR needs two visits".into());
        }
        if self.mu_frac.len() != self.horizon {
            return bad(format!("mu_frac has {} entries for {} visits", self.mu_frac.len(), self.horizon));
        }
        if self.is_two_arm() && self.effect_frac.len() != self.horizon {
            return bad(format!("effect_frac has {} entries for {} visits", self.effect_frac.len(), self.horizon));
        }
        if self.sigma.nrows() != self.horizon || self.sigma.ncols() != self.horizon {
            return bad("sigma has the wrong shape".into());
        }
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 {
            return bad("sigma is not symmetric".into());
        }
        if self.sigma.clone().cholesky().is_none() {
            return bad("sigma is not positive definite".into());
        }
        let finite = [self.mu_level, self.gamma, self.tau, self.psi]
            .iter()
            .chain(&self.mu_frac)
            .chain(&self.effect_frac)
            .all(|v| v.is_finite());
        if !finite || self.alpha.is_nan() {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "arms = {}", self.arms);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "endpoint = {}", self.endpoint);
        let _ = writeln!(s, "time = {}", self.time);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "mu_level = {}", self.mu_level);
        let _ = writeln!(s, "mu_frac = {}", list(&self.mu_frac));
        let rows: Vec<String> = (0..self.horizon)
            .map(|i| list(&self.sigma.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let _ = writeln!(s, "sigma = {}", rows.join("; "));
        let _ = writeln!(s, "growth_censoring = {}", self.growth_censoring);
        if self.is_two_arm() {
            let _ = writeln!(s, "tau = {}", self.tau);
            let _ = writeln!(s, "psi = {}", self.psi);
            let _ = writeln!(s, "effect_frac = {}", list(&self.effect_frac));
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

fn number(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix("ln(").and_then(|r| r.strip_suffix(')')) {
        return Ok(number(inner)?.ln());
    }
    s.parse().map_err(|_| Error::InvalidInput(format!("not a number: `{s}`")))
}

fn numbers(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(number).collect()
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut s = Scenario {
            name: "unnamed".into(),
            n: 0,
            arms: 1,
            horizon: 0,
            endpoint: EndpointKind::FixedTime,
            time: 0,
            alpha: 0.0,
            gamma: 0.0,
            mu_level: 0.7f64.ln(),
            mu_frac: Vec::new(),
            sigma: DMatrix::zeros(0, 0),
            growth_censoring: false,
            tau: 0.0,
            psi: 0.0,
            effect_frac: Vec::new(),
            seed: 1,
        };
        let int = |v: &str, k: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::InvalidInput(format!("`{k}` must be a non-negative integer, got `{v}`")))
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => s.name = v.to_string(),
                "n" => s.n = int(v, k)?,
                "arms" => s.arms = int(v, k)?,
                "horizon" | "T" => s.horizon = int(v, k)?,
                "time" => s.time = int(v, k)?,
                "endpoint" => s.endpoint = v.parse()?,
                "alpha" => s.alpha = number(v)?,
                "gamma" => s.gamma = number(v)?,
                "mu_level" => s.mu_level = number(v)?,
                "mu_frac" => s.mu_frac = numbers(v)?,
                "effect_frac" => s.effect_frac = numbers(v)?,
                "tau" => s.tau = number(v)?,
                "psi" => s.psi = number(v)?,
                "seed" => s.seed = v.parse().map_err(|_| Error::InvalidInput(format!("bad seed `{v}`")))?,
                "growth_censoring" => {
                    s.growth_censoring = v.parse().map_err(|_| Error::InvalidInput(format!("bad boolean `{v}`")))?
                }
                "sigma" => {
                    let rows = v.split(';').map(numbers).collect::<Result<Vec<_>>>()?;
                    let d = rows.len();
                    if rows.iter().any(|r| r.len() != d) {
                        return Err(Error::InvalidInput("sigma must be square".into()));
                    }
                    s.sigma = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                }
                _ => return Err(Error::InvalidInput(format!("line {}: unknown key `{k}`", lineno + 1))),
            }
        }
        if s.time == 0 {
            s.time = s.horizon;
        }
        s.validate()?;
        Ok(s)
    }
}
