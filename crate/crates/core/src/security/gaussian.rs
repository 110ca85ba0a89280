//! Generic Gaussian-state covariance tools in the `(x1, p1, x2, p2, ...)`
//! ordering, vacuum covariance = identity.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Block-diagonal symplectic form `⊕ [[0, 1], [-1, 0]]`.
pub fn symplectic_form(modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * modes, 2 * modes);
    for k in 0..modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// Symplectic eigenvalues, largest first.
///
/// With `S = γ^{1/2}`, the antisymmetric `M = SΩS` has `MᵀM` symmetric with
/// eigenvalues `ν_k²`, each twice. Requires `γ` positive definite.
pub fn symplectic_spectrum(gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = gamma.nrows();
    if n == 0 || !n.is_multiple_of(2) || gamma.ncols() != n {
        return Err(Error::InvalidState(format!(
            "covariance must be square with even dimension, got {}x{}",
            n,
            gamma.ncols()
        )));
    }
    let sym = (gamma + gamma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidState("covariance not positive definite".into()));
    }
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let s = &eig.eigenvectors * sqrt_diag * eig.eigenvectors.transpose();
    let m = &s * symplectic_form(n / 2) * &s;
    let mtm = m.transpose() * &m;
    let mut nu2: Vec<f64> = SymmetricEigen::new((&mtm + mtm.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nu2.sort_by(|a, b| b.total_cmp(a));
    Ok(nu2
        .chunks(2)
        .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
        .collect())
}

/// Beam splitter of transmission `eta` acting on modes `i` and `j`:
/// `i' = √η i + √(1−η) j`, `j' = −√(1−η) i + √η j`.
pub fn beam_splitter(modes: usize, i: usize, j: usize, eta: f64) -> DMatrix<f64> {
    let mut s = DMatrix::identity(2 * modes, 2 * modes);
    let (t, r) = (eta.sqrt(), (1.0 - eta).sqrt());
    for q in 0..2 {
        let (a, b) = (2 * i + q, 2 * j + q);
        s[(a, a)] = t;
        s[(a, b)] = r;
        s[(b, a)] = -r;
        s[(b, b)] = t;
    }
    s
}

/// Covariance of a two-mode squeezed (EPR) state with local variance `v`.
pub fn epr_block(v: f64) -> DMatrix<f64> {
    let c = (v * v - 1.0).max(0.0).sqrt();
    let mut g = DMatrix::zeros(4, 4);
    for q in 0..2 {
        let sign = if q == 0 { 1.0 } else { -1.0 };
        g[(q, q)] = v;
        g[(2 + q, 2 + q)] = v;
        g[(q, 2 + q)] = sign * c;
        g[(2 + q, q)] = sign * c;
    }
    g
}

/// Covariance of the remaining modes after a heterodyne measurement of
/// mode `m` with extra classical noise `added` per quadrature (in units of
/// the heterodyne vacuum penalty, i.e. `γ_m + (1 + added)·I` is inverted).
pub fn heterodyne_condition(gamma: &DMatrix<f64>, m: usize, added: f64) -> Result<DMatrix<f64>> {
    let n = gamma.nrows();
    let measured = [2 * m, 2 * m + 1];
    let rest: Vec<usize> = (0..n).filter(|k| !measured.contains(k)).collect();
    let g_rest = gamma.select_rows(&rest).select_columns(&rest);
    let g_m = gamma.select_rows(&measured).select_columns(&measured);
    let cross = gamma.select_rows(&rest).select_columns(&measured);
    let inv = (g_m + DMatrix::identity(2, 2) * (1.0 + added))
        .try_inverse()
        .ok_or_else(|| Error::NumericalDomain("singular heterodyne block".into()))?;
    Ok(g_rest - &cross * inv * cross.transpose())
}
