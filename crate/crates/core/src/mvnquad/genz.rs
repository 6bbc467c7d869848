//! Sequential-conditioning transform of a normal rectangle onto the unit cube.
//!
//! For a factor `L` (in integration order) each coordinate is written as
//! `y_j = mu_j + sum_k L[j,k] w_k` and the `w_j` are drawn one at a time from a
//! standard normal truncated to the interval left open by the earlier draws.
//! The product of the interval masses is the importance weight; its mean is the
//! rectangle probability.

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

use super::{MvnSpec, Rectangle};

/// Largest magnitude a transformed coordinate may take (guards Φ⁻¹ at 0 or 1).
const W_CLAMP: f64 = 38.0;

#[derive(Debug, Clone)]
pub struct GenzMap {
    dim: usize,
    /// `order[j]` is the original index of the j-th integration variable.
    order: Vec<usize>,
    /// Row-major lower-triangular factor in integration order.
    chol: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    mean: Vec<f64>,
}

impl GenzMap {
    /// Build the transform; with `reorder` the variables are prioritised so that
    /// the most constrained conditional intervals come first.
    pub fn new(spec: &MvnSpec, rect: &Rectangle, reorder: bool) -> Result<Self> {
        let d = spec.dim();
        let cov = spec.cov();
        let scale = (0..d).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
        let tol = super::chol::PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE);

        let mut c: Vec<f64> = (0..d * d).map(|i| cov[(i / d, i % d)]).collect();
        let mut a: Vec<f64> = (0..d).map(|i| rect.lower()[i] - spec.mean()[i]).collect();
        let mut b: Vec<f64> = (0..d).map(|i| rect.upper()[i] - spec.mean()[i]).collect();
        let mut order: Vec<usize> = (0..d).collect();
        let mut l = vec![0.0f64; d * d];
        // conditional expectations of the already placed w's
        let mut expect = vec![0.0; d];

        for j in 0..d {
            let mut pick = j;
            if reorder {
                let mut best_mass = f64::INFINITY;
                for i in j..d {
                    let var = c[i * d + i] - (0..j).map(|k| l[i * d + k].powi(2)).sum::<f64>();
                    let sd = var.max(0.0).sqrt();
                    let shift: f64 = (0..j).map(|k| l[i * d + k] * expect[k]).sum();
                    let mass = if sd > tol.sqrt() {
                        norm_cdf((b[i] - shift) / sd) - norm_cdf((a[i] - shift) / sd)
                    } else {
                        1.0
                    };
                    if mass < best_mass {
                        best_mass = mass;
                        pick = i;
                    }
                }
            }
            if pick != j {
                swap_sym(&mut c, d, j, pick);
                for k in 0..d {
                    l.swap(j * d + k, pick * d + k);
                }
                a.swap(j, pick);
                b.swap(j, pick);
                order.swap(j, pick);
            }

            let var = c[j * d + j] - (0..j).map(|k| l[j * d + k].powi(2)).sum::<f64>();
            if var < -tol {
                return Err(Error::NotPositiveSemiDefinite {
                    index: order[j],
                    pivot: var,
                });
            }
            if var <= tol {
                l[j * d + j] = 0.0;
                for i in (j + 1)..d {
                    l[i * d + j] = 0.0;
                }
                expect[j] = 0.0;
                continue;
            }
            let piv = var.sqrt();
            l[j * d + j] = piv;
            for i in (j + 1)..d {
                let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
                l[i * d + j] = (c[i * d + j] - s) / piv;
            }
            let shift: f64 = (0..j).map(|k| l[j * d + k] * expect[k]).sum();
            let lo = (a[j] - shift) / piv;
            let hi = (b[j] - shift) / piv;
            let mass = norm_cdf(hi) - norm_cdf(lo);
            expect[j] = if mass > 1e-300 {
                (norm_pdf(lo) - norm_pdf(hi)) / mass
            } else if lo > 0.0 {
                lo
            } else {
                hi
            };
        }

        Ok(Self {
            dim: d,
            order,
            chol: l,
            lower: a,
            upper: b,
            mean: spec.mean().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Conditional interval for coordinate `j` given the earlier draws.
    #[inline]
    fn interval(&self, j: usize, w: &[f64]) -> (f64, f64, f64) {
        let d = self.dim;
        let row = &self.chol[j * d..j * d + j];
        let s: f64 = row.iter().zip(&w[..j]).map(|(l, w)| l * w).sum();
        (self.lower[j] - s, self.upper[j] - s, self.chol[j * d + j])
    }

    /// Importance weight for the probability integrand; reads `dim - 1` uniforms.
    pub fn weight(&self, u: &[f64], w: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut weight = 1.0;
        for j in 0..d {
            let (lo, hi, piv) = self.interval(j, w);
            if piv == 0.0 {
                if lo > 0.0 || hi < 0.0 {
                    return 0.0;
                }
                w[j] = 0.0;
                continue;
            }
            let (lo, hi) = (lo / piv, hi / piv);
            if j + 1 == d {
                weight *= interval_mass(lo, hi);
                break;
            }
            let (mass, draw) = truncated_draw(lo, hi, u[j]);
            if mass <= 0.0 {
                return 0.0;
            }
            weight *= mass;
            w[j] = draw;
        }
        weight
    }

    /// Map `dim` uniforms to a point `y` (original variable order) and its weight.
    pub fn sample(&self, u: &[f64], w: &mut [f64], y: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut weight = 1.0;
        for j in 0..d {
            let (lo, hi, piv) = self.interval(j, w);
            if piv == 0.0 {
                if lo > 0.0 || hi < 0.0 {
                    weight = 0.0;
                }
                w[j] = 0.0;
                continue;
            }
            let (mass, draw) = truncated_draw(lo / piv, hi / piv, u[j]);
            if mass <= 0.0 {
                weight = 0.0;
            }
            weight *= mass;
            w[j] = draw;
        }
        for j in 0..d {
            let row = &self.chol[j * d..j * d + j + 1];
            let v: f64 = row.iter().zip(&w[..=j]).map(|(l, w)| l * w).sum();
            let orig = self.order[j];
            y[orig] = self.mean[orig] + v;
        }
        weight
    }
}

#[inline]
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

/// Mass of `(lo, hi)` and the `u`-quantile of the standard normal restricted to it.
/// Works on the upper tail when the interval lies right of zero to keep precision.
#[inline]
fn truncated_draw(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    let (mass, w) = if lo > 0.0 {
        let ql = norm_cdf(-lo);
        let qh = norm_cdf(-hi);
        let mass = ql - qh;
        (mass, -norm_quantile(ql - u * mass))
    } else {
        let e = norm_cdf(lo);
        let f = norm_cdf(hi);
        let mass = f - e;
        (mass, norm_quantile(e + u * mass))
    };
    let w = if w.is_nan() { 0.0 } else { w.clamp(lo.max(-W_CLAMP), hi.min(W_CLAMP)) };
    (mass, w)
}

fn swap_sym(c: &mut [f64], d: usize, i: usize, j: usize) {
    for k in 0..d {
        c.swap(i * d + k, j * d + k);
    }
    for k in 0..d {
        c.swap(k * d + i, k * d + j);
    }
}
