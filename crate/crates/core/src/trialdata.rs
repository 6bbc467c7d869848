//! Per-patient visit series, endpoint classification and CSV ingestion.
//!
//! Visits after progression are structurally absent: a record holds sizes for
//! visits `1..=F` only, and a new-lesion flag may be set on the last visit alone.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Response threshold on the log-ratio scale: 30% shrinkage.
pub fn default_response_threshold() -> f64 {
    0.7f64.ln()
}

/// Growth threshold on the log-ratio scale: 20% increase.
pub fn default_growth_threshold() -> f64 {
    1.2f64.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Control,
    Experimental,
}

impl Arm {
    /// The regression indicator `R`.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Experimental => 1.0,
        }
    }

    pub fn from_indicator(r: u8) -> Option<Arm> {
        match r {
            0 => Some(Arm::Control),
            1 => Some(Arm::Experimental),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// `c`: a visit is a response when `y_t < c`.
    pub response: f64,
    /// `g`: tumour-growth progression when `y_t > g`.
    pub growth: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            response: default_response_threshold(),
            growth: default_growth_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub arm: Option<Arm>,
    /// Baseline size `z0` in mm.
    pub baseline: f64,
    /// Sizes at visits `1..=F`.
    pub sizes: Vec<f64>,
    /// New-lesion indicators `D_t` at visits `1..=F`.
    pub new_lesion: Vec<bool>,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        arm: Option<Arm>,
        baseline: f64,
        sizes: Vec<f64>,
        new_lesion: Vec<bool>,
    ) -> Result<Self> {
        let p = Self {
            id: id.into(),
            arm,
            baseline,
            sizes,
            new_lesion,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline > 0.0 && self.baseline.is_finite())
            || self.sizes.iter().any(|&z| !(z > 0.0 && z.is_finite()))
        {
            return Err(Error::NonPositiveSize {
                id: self.id.clone(),
            });
        }
        if self.sizes.len() != self.new_lesion.len() {
            return Err(Error::validation(
                None,
                format!(
                    "patient {}: {} sizes but {} new-lesion flags",
                    self.id,
                    self.sizes.len(),
                    self.new_lesion.len()
                ),
            ));
        }
        if let Some(t) = self.new_lesion.iter().position(|&d| d) {
            if t + 1 != self.new_lesion.len() {
                return Err(Error::validation(
                    None,
                    format!("patient {}: records continue after new-lesion progression at visit {}", self.id, t + 1),
                ));
            }
        }
        Ok(())
    }

    /// `F_i`, the number of post-baseline visits on record.
    pub fn last_observed(&self) -> usize {
        self.sizes.len()
    }

    /// `y_t = log(z_t / z0)` for the observed visits.
    pub fn log_ratios(&self) -> Result<Vec<f64>> {
        if !(self.baseline > 0.0) || self.sizes.iter().any(|&z| !(z > 0.0)) {
            return Err(Error::NonPositiveSize {
                id: self.id.clone(),
            });
        }
        Ok(self.sizes.iter().map(|z| (z / self.baseline).ln()).collect())
    }

    /// True when new-lesion progression is recorded (at the last visit).
    pub fn new_lesion_progressed(&self) -> bool {
        self.new_lesion.last().copied().unwrap_or(false)
    }

    fn ratios_unchecked(&self) -> impl Iterator<Item = f64> + '_ {
        self.sizes.iter().map(move |z| (z / self.baseline).ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgressionCause {
    None,
    NewLesion,
    TumourGrowth,
}

impl fmt::Display for ProgressionCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgressionCause::None => "none",
            ProgressionCause::NewLesion => "new_lesion",
            ProgressionCause::TumourGrowth => "tumour_growth",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progression {
    pub cause: ProgressionCause,
    /// Visit at which progression was detected.
    pub visit: Option<usize>,
}

/// First progression: growth past the threshold from baseline or a new lesion.
/// A new lesion on the same visit as growth takes precedence.
pub fn detect_progression(p: &PatientRecord, th: &Thresholds) -> Progression {
    for (i, y) in p.ratios_unchecked().enumerate() {
        if p.new_lesion[i] {
            return Progression {
                cause: ProgressionCause::NewLesion,
                visit: Some(i + 1),
            };
        }
        if y > th.growth {
            return Progression {
                cause: ProgressionCause::TumourGrowth,
                visit: Some(i + 1),
            };
        }
    }
    Progression {
        cause: ProgressionCause::None,
        visit: None,
    }
}

/// Fixed-time response `S_it`: no new lesion through `t` and `y_t < c`.
/// With `growth_check`, intermediate visits must also stay at or below the
/// growth threshold. Unobserved visits classify as non-response.
pub fn classify_fixed(p: &PatientRecord, t: usize, th: &Thresholds, growth_check: bool) -> bool {
    if t == 0 || t > p.last_observed() {
        return false;
    }
    if p.new_lesion[..t].iter().any(|&d| d) {
        return false;
    }
    let y: Vec<f64> = p.ratios_unchecked().take(t).collect();
    if growth_check && y[..t - 1].iter().any(|&v| v > th.growth) {
        return false;
    }
    y[t - 1] < th.response
}

/// Best observed response before progression. With `confirmation`, two
/// consecutive responding visits are required.
pub fn classify_bor(p: &PatientRecord, th: &Thresholds, confirmation: bool) -> bool {
    let mut run = 0;
    for (i, y) in p.ratios_unchecked().enumerate() {
        if p.new_lesion[i] || y > th.growth {
            return false;
        }
        if y < th.response {
            run += 1;
            if !confirmation || run >= 2 {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub patients: Vec<PatientRecord>,
    /// `T`, the planned number of post-baseline visits.
    pub horizon: usize,
    pub thresholds: Thresholds,
}

impl TrialDataset {
    pub fn new(patients: Vec<PatientRecord>, horizon: usize, thresholds: Thresholds) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::validation(None, "horizon must be at least 1"));
        }
        if !(thresholds.response < thresholds.growth) {
            return Err(Error::validation(None, "response threshold must be below the growth threshold"));
        }
        let two_arm = patients.first().map(|p| p.arm.is_some()).unwrap_or(false);
        for p in &patients {
            p.validate()?;
            if p.last_observed() > horizon {
                return Err(Error::validation(
                    None,
                    format!("patient {} has {} visits, more than T = {horizon}", p.id, p.last_observed()),
                ));
            }
            if p.arm.is_some() != two_arm {
                return Err(Error::validation(
                    None,
                    format!("patient {}: arm must be given for all patients or none", p.id),
                ));
            }
        }
        Ok(Self {
            patients,
            horizon,
            thresholds,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn is_two_arm(&self) -> bool {
        self.patients.first().map(|p| p.arm.is_some()).unwrap_or(false)
    }

    /// Patients in `arm`; all patients when the dataset is single-arm.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.patients[i].arm.map_or(true, |a| a == arm))
            .collect()
    }

    /// Copy with every patient's arm replaced, in order.
    pub fn with_arms(&self, arms: &[Arm]) -> TrialDataset {
        let mut out = self.clone();
        for (p, &a) in out.patients.iter_mut().zip(arms) {
            p.arm = Some(a);
        }
        out
    }
}

/// Dataset-level settings kept beside the CSV in a `key = value` file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DatasetConfig {
    pub horizon: Option<usize>,
    pub thresholds: Thresholds,
}

impl FromStr for DatasetConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = DatasetConfig::default();
        for (n, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::validation(Some(n + 1), format!("expected key = value, got `{line}`")))?;
            let value = value.trim();
            let bad = |what: &str| Error::validation(Some(n + 1), format!("{what}: `{value}`"));
            match key.trim() {
                "horizon" | "T" => cfg.horizon = Some(value.parse().map_err(|_| bad("invalid horizon"))?),
                "response_threshold" => {
                    cfg.thresholds.response = value.parse().map_err(|_| bad("invalid threshold"))?
                }
                "growth_threshold" => {
                    cfg.thresholds.growth = value.parse().map_err(|_| bad("invalid threshold"))?
                }
                other => return Err(Error::validation(Some(n + 1), format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

impl DatasetConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(t) = self.horizon {
            s.push_str(&format!("horizon = {t}\n"));
        }
        s.push_str(&format!("response_threshold = {}\n", self.thresholds.response));
        s.push_str(&format!("growth_threshold = {}\n", self.thresholds.growth));
        s
    }
}

pub const CSV_HEADER: [&str; 5] = ["patient_id", "arm", "visit", "size_mm", "new_lesion"];

struct Row {
    line: usize,
    arm: Option<Arm>,
    visit: usize,
    size: f64,
    new_lesion: bool,
}

fn parse_field<T: FromStr>(s: &str, line: usize, column: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        row: line,
        column: column.to_string(),
        message: format!("cannot parse `{s}`"),
    })
}

fn parse_flag(s: &str, line: usize, column: &str) -> Result<u8> {
    match s.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Parse {
            row: line,
            column: column.to_string(),
            message: format!("expected 0 or 1, got `{s}`"),
        }),
    }
}

/// Read the long-format visit table. `horizon` defaults to the largest visit seen.
pub fn read_csv<R: Read>(reader: R, config: &DatasetConfig) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            row: 1,
            column: "header".into(),
            message: format!("expected `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: line,
                column: "patient_id".into(),
                message: "empty identifier".into(),
            });
        }
        let arm = if rec[1].is_empty() {
            None
        } else {
            Arm::from_indicator(parse_flag(&rec[1], line, "arm")?)
        };
        let row = Row {
            line,
            arm,
            visit: parse_field(&rec[2], line, "visit")?,
            size: parse_field(&rec[3], line, "size_mm")?,
            new_lesion: parse_flag(&rec[4], line, "new_lesion")? == 1,
        };
        if !(row.size > 0.0) {
            return Err(Error::validation(Some(line), format!("patient {id}: size must be positive")));
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(row);
    }

    let mut patients = Vec::with_capacity(order.len());
    let mut max_visit = 0;
    for id in order {
        let mut rs = rows.remove(&id).unwrap_or_default();
        rs.sort_by_key(|r| r.visit);
        let first = &rs[0];
        if first.visit != 0 {
            return Err(Error::validation(Some(first.line), format!("patient {id}: no baseline (visit 0) row")));
        }
        if first.new_lesion {
            return Err(Error::validation(Some(first.line), format!("patient {id}: new_lesion must be 0 at baseline")));
        }
        let arm = first.arm;
        let mut sizes = Vec::new();
        let mut flags = Vec::new();
        for (k, r) in rs.iter().enumerate() {
            if r.visit != k {
                return Err(Error::validation(
                    Some(r.line),
                    format!("patient {id}: visit {} out of sequence (expected {k})", r.visit),
                ));
            }
            if r.arm != arm {
                return Err(Error::validation(Some(r.line), format!("patient {id}: arm changes between rows")));
            }
            if k > 0 && rs[k - 1].new_lesion {
                return Err(Error::validation(
                    Some(r.line),
                    format!("patient {id}: record after new-lesion progression"),
                ));
            }
            if k > 0 {
                sizes.push(r.size);
                flags.push(r.new_lesion);
            }
        }
        max_visit = max_visit.max(sizes.len());
        patients.push(PatientRecord {
            id,
            arm,
            baseline: first.size,
            sizes,
            new_lesion: flags,
        });
    }
    let horizon = config.horizon.unwrap_or(max_visit);
    TrialDataset::new(patients, horizon, config.thresholds)
}

/// Load a dataset; a sibling `<stem>.cfg` file is used when no config is given.
pub fn load_csv(path: impl AsRef<Path>, config: Option<&DatasetConfig>) -> Result<TrialDataset> {
    let path = path.as_ref();
    let cfg = match config {
        Some(c) => *c,
        None => {
            let side = path.with_extension("cfg");
            if side.exists() {
                DatasetConfig::load(side)?
            } else {
                DatasetConfig::default()
            }
        }
    };
    read_csv(std::fs::File::open(path)?, &cfg)
}

pub fn write_csv<W: Write>(data: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for p in &data.patients {
        let arm = p.arm.map(|a| (a.indicator() as u8).to_string()).unwrap_or_default();
        w.write_record([p.id.as_str(), &arm, "0", &p.baseline.to_string(), "0"])?;
        for (t, (z, d)) in p.sizes.iter().zip(&p.new_lesion).enumerate() {
            w.write_record([
                p.id.as_str(),
                &arm,
                &(t + 1).to_string(),
                &z.to_string(),
                if *d { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
