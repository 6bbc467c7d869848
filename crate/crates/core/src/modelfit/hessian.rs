use nalgebra::{DMatrix, SymmetricEigen};

/// Relative step used for the observed-information Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Central-difference Hessian of `f` at `x`, step `HESSIAN_STEP * max(1, |x_j|)`.
pub fn numerical_hessian<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| HESSIAN_STEP * v.abs().max(1.0)).collect();
    let mut xp = x.to_vec();
    let f0 = f(&xp);
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Inverse of a symmetric information matrix. Falls back to a pseudo-inverse
/// (eigenvalues at or below `1e-10 * max` dropped) and reports whether it did.
pub fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = info.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), false);
    }
    if let Some(c) = info.clone().cholesky() {
        let inv = c.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return (inv, false);
        }
    }
    let sym = (info + info.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = 1e-10 * top.max(f64::MIN_POSITIVE);
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > cut {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lam;
        }
    }
    (inv, true)
}
