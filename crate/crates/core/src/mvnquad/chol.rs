use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative tolerance applied to pivots, scaled by the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Lower-triangular factor of a symmetrically permuted covariance matrix.
///
/// `cov[perm[i], perm[j]] == (lower * lower^T)[i, j]`.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    pub lower: DMatrix<f64>,
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedCholesky {
    /// Rebuild the covariance in its original variable order.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = self.perm.len();
        let llt = &self.lower * self.lower.transpose();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[(self.perm[i], self.perm[j])] = llt[(i, j)];
            }
        }
        out
    }
}

/// Cholesky factorisation with diagonal pivoting for positive semi-definite input.
///
/// At each step the largest remaining diagonal is moved into place. Pivots
/// within `PIVOT_TOLERANCE * max(diag)` of zero are treated as exact zeros and
/// the remaining columns are left empty.
pub fn chol_pivot(cov: &DMatrix<f64>) -> Result<PivotedCholesky> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}",
            d,
            cov.ncols()
        )));
    }
    check_symmetric(cov)?;
    let scale = (0..d).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
    let tol = PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE);

    let mut a = cov.clone();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut lower = DMatrix::zeros(d, d);
    let mut rank = 0;

    for j in 0..d {
        // residual diagonals after removing the first j columns
        let mut best = j;
        let mut best_val = f64::NEG_INFINITY;
        for i in j..d {
            let r = a[(i, i)] - (0..j).map(|k| lower[(i, k)] * lower[(i, k)]).sum::<f64>();
            if r > best_val {
                best_val = r;
                best = i;
            }
        }
        if best_val < -tol {
            return Err(Error::NotPositiveSemiDefinite {
                index: perm[best],
                pivot: best_val,
            });
        }
        if best != j {
            a.swap_rows(j, best);
            a.swap_columns(j, best);
            lower.swap_rows(j, best);
            perm.swap(j, best);
        }
        if best_val <= tol {
            // remaining block is numerically zero
            for i in j..d {
                for k in j..d {
                    let r = a[(i, k)] - (0..j).map(|m| lower[(i, m)] * lower[(k, m)]).sum::<f64>();
                    if r.abs() > tol.sqrt() * scale.sqrt().max(1.0) && i != k {
                        return Err(Error::NotPositiveSemiDefinite {
                            index: perm[i],
                            pivot: best_val,
                        });
                    }
                }
            }
            break;
        }
        let pivot = best_val.sqrt();
        lower[(j, j)] = pivot;
        for i in (j + 1)..d {
            let s: f64 = (0..j).map(|k| lower[(i, k)] * lower[(j, k)]).sum();
            lower[(i, j)] = (a[(i, j)] - s) / pivot;
        }
        rank += 1;
    }

    Ok(PivotedCholesky { lower, perm, rank })
}

pub(crate) fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    let d = cov.nrows();
    for i in 0..d {
        if !cov[(i, i)].is_finite() {
            return Err(Error::InvalidInput("covariance has non-finite entries".into()));
        }
        for j in 0..i {
            let (x, y) = (cov[(i, j)], cov[(j, i)]);
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInput("covariance has non-finite entries".into()));
            }
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::InvalidInput(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = chol_pivot(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.lower, DMatrix::identity(3, 3));
        assert_eq!(f.perm, vec![0, 1, 2]);
        assert_eq!(f.rank, 3);
    }

    #[test]
    fn hand_checked_two_by_two() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let f = chol_pivot(&cov).unwrap();
        assert_eq!(f.perm, vec![0, 1]);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((f.lower - expected).norm() < 1e-15);
    }

    #[test]
    fn random_spd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(5, 5) * 0.05;
            let f = chol_pivot(&cov).unwrap();
            assert_eq!(f.rank, 5);
            assert!(frobenius_rel(&f.reconstruct(), &cov) <= 1e-10);
            // pivots come out non-increasing
            for j in 1..5 {
                assert!(f.lower[(j, j)] <= f.lower[(j - 1, j - 1)] + 1e-12);
            }
        }
    }

    #[test]
    fn semidefinite_rank_deficient() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let cov = &v * v.transpose();
        let f = chol_pivot(&cov).unwrap();
        assert_eq!(f.rank, 1);
        assert!(frobenius_rel(&f.reconstruct(), &cov) <= 1e-10);
    }

    #[test]
    fn indefinite_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            chol_pivot(&cov),
            Err(Error::NotPositiveSemiDefinite { .. })
        ));
    }

    #[test]
    fn asymmetric_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(matches!(chol_pivot(&cov), Err(Error::InvalidInput(_))));
    }
}
