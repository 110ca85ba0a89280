//! The four-state constellation `alpha·e^{i(2k+1)π/4}` and the quantities
//! that map it onto an equivalent Gaussian-modulated state: the weights
//! `ξ_m`, the correlation `Z` and its Gaussian counterpart `Z_EPR`.
//!
//! Shot-noise-unit convention: `x = a + a†`, so a coherent state `|γ⟩` has
//! mean quadratures `(2 Re γ, 2 Im γ)` and the constellation's modulation
//! variance per quadrature is `V_A = 2·alpha²`.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four coherent states of common amplitude `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub alpha: f64,
    pub v_a: f64,
}

impl Constellation {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::domain("alpha", "amplitude must be finite and > 0"));
        }
        Ok(Self {
            alpha,
            v_a: 2.0 * alpha * alpha,
        })
    }

    pub fn from_v_a(v_a: f64) -> Result<Self> {
        if !(v_a.is_finite() && v_a > 0.0) {
            return Err(Error::domain("v_a", "modulation variance must be finite and > 0"));
        }
        Ok(Self {
            alpha: (v_a / 2.0).sqrt(),
            v_a,
        })
    }

    /// Complex amplitude `(re, im)` of state `k` (taken mod 4).
    pub fn amplitude(&self, k: u8) -> (f64, f64) {
        let phase = f64::from(2 * (k % 4) + 1) * FRAC_PI_4;
        (self.alpha * phase.cos(), self.alpha * phase.sin())
    }

    /// Mean `(x, p)` quadratures of state `k`; each is `±√V_A`.
    pub fn quadrature_means(&self, k: u8) -> (f64, f64) {
        quadrature_means(self.v_a, k)
    }
}

/// Signs of the QPSK mapping: k = 0 → (+,+), 1 → (−,+), 2 → (−,−), 3 → (+,−).
pub fn quadrature_signs(k: u8) -> (f64, f64) {
    match k % 4 {
        0 => (1.0, 1.0),
        1 => (-1.0, 1.0),
        2 => (-1.0, -1.0),
        _ => (1.0, -1.0),
    }
}

pub(crate) fn quadrature_means(v_a: f64, k: u8) -> (f64, f64) {
    let (sx, sp) = quadrature_signs(k);
    let r = v_a.sqrt();
    (sx * r, sp * r)
}

/// The weights `ξ_0..ξ_3`. They are the Poisson probabilities of the photon
/// number modulo 4 for mean photon number `alpha²`, so they sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiCoefficients {
    pub xi: [f64; 4],
}

impl XiCoefficients {
    pub fn sum(&self) -> f64 {
        self.xi.iter().sum()
    }
}

fn check_alpha_sq(alpha_sq: f64) -> Result<()> {
    if alpha_sq.is_finite() && alpha_sq > 0.0 {
        Ok(())
    } else {
        Err(Error::domain("alpha_sq", format!("{alpha_sq} must be finite and > 0")))
    }
}

/// Closed-form `ξ_m` with positive arguments:
///
/// `ξ_{0,2} = ½e^{-x}(cosh x ± cos x)`, `ξ_{1,3} = ½e^{-x}(sinh x ± sin x)`, `x = alpha²`.
///
/// The form with `−alpha²` inside cosh/sinh gives negative `ξ_{1,3}`; the
/// positive form is the one consistent with normalization and positivity.
/// Differences are rewritten to avoid cancellation: `ξ_2` through
/// `cosh x − cos x = 2(sinh²(x/2) + sin²(x/2))`, and `ξ_3` through its Taylor
/// series below `x = 1`.
pub fn xi_closed_form(alpha_sq: f64) -> Result<XiCoefficients> {
    check_alpha_sq(alpha_sq)?;
    let x = alpha_sq;
    let e = (-x).exp();
    // e^{-x}cosh x and e^{-x}sinh x without overflow
    let ecosh = 0.5 * (1.0 + (-2.0 * x).exp());
    let esinh = -0.5 * (-2.0 * x).exp_m1();
    let xi0 = 0.5 * (ecosh + e * x.cos());
    let xi1 = 0.5 * (esinh + e * x.sin());
    let half_sin = (0.5 * x).sin();
    let xi2 = 0.25 * (-x).exp_m1().powi(2) + e * half_sin * half_sin;
    let xi3 = if x < 1.0 {
        e * sinh_minus_sin_half(x)
    } else {
        0.5 * (esinh - e * x.sin())
    };
    Ok(XiCoefficients {
        xi: [xi0, xi1, xi2, xi3],
    })
}

/// `(sinh x − sin x)/2 = Σ x^{4n+3}/(4n+3)!`, converging fast for `x < 1`.
fn sinh_minus_sin_half(x: f64) -> f64 {
    let x4 = x.powi(4);
    let mut term = x * x * x / 6.0;
    let mut sum = term;
    let mut k = 3.0_f64;
    while term > sum * 1e-18 {
        term *= x4 / ((k + 1.0) * (k + 2.0) * (k + 3.0) * (k + 4.0));
        k += 4.0;
        sum += term;
    }
    sum
}

/// Brute-force `ξ_m = e^{-x} Σ_n x^{4n+m}/(4n+m)!` by direct summation of
/// Poisson terms, truncated at `4n + m <= 4·n_max`.
///
/// Terms are built by ratio (`p_k = p_{k-1}·x/k`) so no factorial is ever
/// formed. Fails if the last retained term is not negligible.
pub fn xi_series_oracle(alpha_sq: f64, n_max: usize) -> Result<XiCoefficients> {
    check_alpha_sq(alpha_sq)?;
    if n_max < 10 {
        return Err(Error::domain("n_max", "need at least 10 terms per residue class"));
    }
    let x = alpha_sq;
    let mut xi = [0.0; 4];
    let mut term = (-x).exp();
    xi[0] = term;
    let last = 4 * n_max;
    for k in 1..=last {
        term *= x / k as f64;
        xi[k % 4] += term;
    }
    let total: f64 = xi.iter().sum();
    if !(term <= total * 1e-17) {
        return Err(Error::NumericalDomain(format!(
            "series for alpha^2 = {x} not converged after {last} terms (last term {term:e})"
        )));
    }
    Ok(XiCoefficients { xi })
}

/// Correlation `Z = 2alpha² Σ_m ξ_m^{3/2} ξ_{m+1}^{-1/2}` between Alice's
/// purification and the sent mode, for `V_A = 2alpha²`.
pub fn correlation_z(v_a: f64) -> Result<f64> {
    if !(v_a.is_finite() && v_a > 0.0) {
        return Err(Error::domain("v_a", "modulation variance must be finite and > 0"));
    }
    let xi = xi_closed_form(v_a / 2.0)?.xi;
    let tiny = xi.iter().any(|&v| v < 1e-30);
    let sum: f64 = (0..4)
        .map(|m| {
            let (a, b) = (xi[m], xi[(m + 1) % 4]);
            if tiny {
                (1.5 * a.ln() - 0.5 * b.ln()).exp()
            } else {
                a * a.sqrt() / b.sqrt()
            }
        })
        .sum();
    Ok(v_a * sum)
}

/// `Z_EPR = √(V_A² + 2V_A)`, the correlation of a two-mode squeezed vacuum
/// of variance `V_A + 1`.
pub fn z_epr(v_a: f64) -> Result<f64> {
    if !(v_a.is_finite() && v_a >= 0.0) {
        return Err(Error::domain("v_a", "modulation variance must be finite and >= 0"));
    }
    Ok((v_a * v_a + 2.0 * v_a).sqrt())
}
