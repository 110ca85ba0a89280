//! Lower bound on the reverse-reconciliation secret key rate under
//! collective attacks, via the equivalent Gaussian-modulated model.
//!
//! The chain is: equivalent channel `(T, ε)` → noise budget → mutual
//! information → symplectic spectra of `γ_AB` and of the state conditioned on
//! Bob's heterodyne outcome → `K̃ = β·I(a:b) − χ(b:EF)`.

pub mod gaussian;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constellation::{correlation_z, z_epr};
use crate::error::{Error, Result};
use crate::params::{ChannelParams, DetectorParams, LinkParams, SourceNoise};

/// Tolerance below 1 accepted for symplectic eigenvalues.
pub const EIGEN_TOL: f64 = 1e-9;

/// How mutual information and Holevo bound are counted.
///
/// `Single` uses `log₂((V+χ_t)/(1+χ_t))` as is; `Doubled` counts both
/// quantities twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Single,
    Doubled,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::Single, Convention::Doubled];

    pub fn factor(self) -> f64 {
        match self {
            Convention::Single => 1.0,
            Convention::Doubled => 2.0,
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Single => "single",
            Convention::Doubled => "doubled",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(Convention::Single),
            "doubled" => Ok(Convention::Doubled),
            other => Err(Error::Config(format!(
                "unknown convention `{other}` (expected single|doubled)"
            ))),
        }
    }
}

/// Route used for the symplectic spectrum of the conditioned state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalMethod {
    /// Assemble the full detector model and condition the covariance matrix.
    #[default]
    Oracle,
    /// Standard closed form for a noisy heterodyne detector.
    ClosedForm,
    /// The closed form missing the `2χ_d·b` term; kept for comparison only.
    Literal,
}

impl fmt::Display for ConditionalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionalMethod::Oracle => "oracle",
            ConditionalMethod::ClosedForm => "closed_form",
            ConditionalMethod::Literal => "literal",
        })
    }
}

impl FromStr for ConditionalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "oracle" => Ok(ConditionalMethod::Oracle),
            "closed_form" => Ok(ConditionalMethod::ClosedForm),
            "literal" => Ok(ConditionalMethod::Literal),
            other => Err(Error::Config(format!(
                "unknown conditional method `{other}` (expected oracle|closed_form|literal)"
            ))),
        }
    }
}

/// Gaussian channel `(T, ε)` reproducing the discrete-modulation covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentChannel {
    pub t: f64,
    pub eps: f64,
}

/// Added noise referred to the channel input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub chi_c: f64,
    pub chi_d: f64,
    pub chi_t: f64,
}

/// `γ_AB = [[a·I, c·σ_z], [c·σ_z, b·I]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeCov {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TwoModeCov {
    /// Builds the matrix after checking `a, b >= 1`, `ab − c² >= 1` and the
    /// uncertainty relation `(ab − c²)² + 1 >= a² + b² − 2c²`.
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let cov = Self { a, b, c };
        cov.check_physical()?;
        Ok(cov)
    }

    pub fn det(&self) -> f64 {
        self.a * self.b - self.c * self.c
    }

    /// `(A, B)` with `A = a² + b² − 2c²`, `B = (ab − c²)²`.
    pub fn invariants(&self) -> (f64, f64) {
        let c2 = self.c * self.c;
        (self.a * self.a + self.b * self.b - 2.0 * c2, self.det().powi(2))
    }

    pub fn check_physical(&self) -> Result<()> {
        let Self { a, b, c } = *self;
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        if a < 1.0 - EIGEN_TOL || b < 1.0 - EIGEN_TOL {
            return Err(Error::InvalidState(format!("local variances a={a}, b={b} below vacuum")));
        }
        if self.det() < 1.0 - EIGEN_TOL {
            return Err(Error::InvalidState(format!("ab - c^2 = {} < 1", self.det())));
        }
        let (big_a, big_b) = self.invariants();
        if big_b + 1.0 - big_a < -EIGEN_TOL * big_b.max(1.0) {
            return Err(Error::InvalidState("uncertainty relation violated".into()));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(4, 4);
        for q in 0..2 {
            let sign = if q == 0 { 1.0 } else { -1.0 };
            g[(q, q)] = self.a;
            g[(2 + q, 2 + q)] = self.b;
            g[(q, 2 + q)] = sign * self.c;
            g[(2 + q, q)] = sign * self.c;
        }
        g
    }
}

/// Full output of one key-rate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub v_a: f64,
    pub beta: f64,
    pub equivalent: EquivalentChannel,
    pub budget: NoiseBudget,
    pub covariance: TwoModeCov,
    /// Bits per symbol, scaled by the convention.
    pub i_ab: f64,
    /// `λ1..λ4`.
    pub lambda: [f64; 4],
    pub s_ab: f64,
    pub s_cond: f64,
    pub holevo: f64,
    pub key_rate_per_symbol: f64,
    pub key_rate_per_second: f64,
    pub convention: Convention,
    pub conditional_method: ConditionalMethod,
    /// False when the bound is non-positive (no secret key).
    pub secure: bool,
}

/// Variance `N` of the thermal state that models electronic noise through
/// a beam splitter of transmission `eta`: `N = 1 + 2υ/(1 − η)`.
pub fn detector_thermal_variance(det: &DetectorParams) -> Result<f64> {
    det.validate()?;
    if det.eta >= 1.0 {
        return Err(Error::ThermalModelUndefined);
    }
    Ok(1.0 + 2.0 * det.upsilon / (1.0 - det.eta))
}

/// Variance of one heterodyne outcome for a received mode of variance
/// `v_b`: `η(V_B/2 + ½) + (1 − η) + υ`. Valid for every `eta` in (0, 1].
pub fn heterodyne_outcome_variance(v_b: f64, det: &DetectorParams) -> f64 {
    det.eta * (0.5 * v_b + 0.5) + (1.0 - det.eta) + det.upsilon
}

/// `T = T0·Z²/Z_EPR²`, `ε = (Z_EPR²/Z²)(V_A + ε0 + δε) − V_A`.
pub fn equivalent_gaussian_channel(
    v_a: f64,
    ch: &ChannelParams,
    src: &SourceNoise,
) -> Result<EquivalentChannel> {
    ch.validate()?;
    src.validate()?;
    let z = correlation_z(v_a)?;
    let ze = z_epr(v_a)?;
    let ratio = (z / ze).powi(2);
    Ok(EquivalentChannel {
        t: ch.t0 * ratio,
        eps: (v_a + ch.eps0 + src.delta_eps) / ratio - v_a,
    })
}

/// `χ_c = 1/T − 1 + ε`, `χ_d = 2(1 + υ)/η − 1`, `χ_t = χ_c + χ_d/T`.
pub fn noise_budget(equiv: &EquivalentChannel, det: &DetectorParams) -> NoiseBudget {
    let chi_c = 1.0 / equiv.t - 1.0 + equiv.eps;
    let chi_d = 2.0 * (1.0 + det.upsilon) / det.eta - 1.0;
    NoiseBudget {
        chi_c,
        chi_d,
        chi_t: chi_c + chi_d / equiv.t,
    }
}

/// `log₂((V + χ_t)/(χ_t + 1))` with `V = V_A + 1`, times the convention factor.
pub fn mutual_information(v_a: f64, chi_t: f64, convention: Convention) -> Result<f64> {
    if !(v_a.is_finite() && v_a >= 0.0) {
        return Err(Error::domain("v_a", "must be finite and >= 0"));
    }
    if !(chi_t.is_finite() && chi_t >= 0.0) {
        return Err(Error::domain("chi_t", "must be finite and >= 0"));
    }
    Ok(convention.factor() * (v_a / (chi_t + 1.0)).ln_1p() / std::f64::consts::LN_2)
}

/// `a = V_A + 1`, `b = T(V_A + ε) + 1`, `c = √T·Z_EPR`.
pub fn covariance_ab(v_a: f64, equiv: &EquivalentChannel) -> Result<TwoModeCov> {
    TwoModeCov::new(
        v_a + 1.0,
        equiv.t * (v_a + equiv.eps) + 1.0,
        equiv.t.sqrt() * z_epr(v_a)?,
    )
}

fn spectrum_pair(sum: f64, product_sqrt: f64, what: &str) -> Result<(f64, f64)> {
    let disc = sum * sum - 4.0 * product_sqrt * product_sqrt;
    if disc < -EIGEN_TOL * sum.abs().max(1.0).powi(2) {
        return Err(Error::NumericalDomain(format!("{what}: discriminant {disc:e} < 0")));
    }
    let hi = (0.5 * (sum + disc.max(0.0).sqrt())).sqrt();
    Ok((hi, product_sqrt / hi))
}

/// `λ_{1,2} = √(½(A ± √(A² − 4B)))` of `γ_AB`.
pub fn channel_symplectic_eigenvalues(cov: &TwoModeCov) -> Result<(f64, f64)> {
    cov.check_physical()?;
    // λ1 + λ2 = √((a+b)² − 4c²), λ1 − λ2 = |a − b|
    let TwoModeCov { a, b, c } = *cov;
    let sum = ((a + b - 2.0 * c) * (a + b + 2.0 * c)).max(0.0).sqrt();
    let diff = (a - b).abs();
    Ok((0.5 * (sum + diff), 0.5 * (sum - diff)))
}

/// Symplectic eigenvalues `(λ3, λ4)` of the state left after Bob's
/// heterodyne measurement, including the modes `G, H` that purify the
/// detector noise.
pub fn conditional_symplectic_eigenvalues(
    cov: &TwoModeCov,
    det: &DetectorParams,
    method: ConditionalMethod,
) -> Result<(f64, f64)> {
    cov.check_physical()?;
    det.validate()?;
    match method {
        ConditionalMethod::Oracle => conditional_oracle(cov, det),
        ConditionalMethod::ClosedForm => conditional_closed_form(cov, det, false),
        ConditionalMethod::Literal => conditional_closed_form(cov, det, true),
    }
}

fn conditional_oracle(cov: &TwoModeCov, det: &DetectorParams) -> Result<(f64, f64)> {
    use gaussian::*;

    if det.eta >= 1.0 {
        // No thermal purification: electronic noise is added to the outcome.
        let cond = heterodyne_condition(&cov.to_matrix(), 1, 2.0 * det.upsilon)?;
        let nu = symplectic_spectrum(&cond)?;
        return Ok((nu[0], 1.0));
    }
    let n = detector_thermal_variance(det)?;
    // modes: A, B, G, H0
    let mut gamma = DMatrix::zeros(8, 8);
    gamma.view_mut((0, 0), (4, 4)).copy_from(&cov.to_matrix());
    gamma.view_mut((4, 4), (4, 4)).copy_from(&epr_block(n));
    let bs = beam_splitter(4, 1, 3, det.eta);
    let gamma = &bs * gamma * bs.transpose();
    let cond = heterodyne_condition(&gamma, 1, 0.0)?;
    let nu = symplectic_spectrum(&cond)?;
    Ok((nu[0], nu[1]))
}

fn conditional_closed_form(
    cov: &TwoModeCov,
    det: &DetectorParams,
    literal: bool,
) -> Result<(f64, f64)> {
    let TwoModeCov { a, b, c } = *cov;
    let c2 = c * c;
    let (big_a, big_b) = cov.invariants();
    let sqrt_b = big_b.sqrt();
    let chi_d = 2.0 * (1.0 + det.upsilon) / det.eta - 1.0;
    let denom = (b + chi_d).powi(2);
    let numer = if literal {
        big_a * chi_d * chi_d + 2.0 * a * cov.det() * chi_d + 2.0 * c2 + big_b + 1.0
    } else {
        big_a * chi_d * chi_d + big_b + 1.0 + 2.0 * chi_d * (a * sqrt_b + b) + 2.0 * c2
    };
    let big_c = numer / denom;
    let sqrt_d = (a + sqrt_b * chi_d) / (b + chi_d);
    if literal {
        let disc = big_c * big_c - 4.0 * sqrt_d * sqrt_d;
        if disc < -1e-12 * big_c.abs().max(1.0).powi(2) {
            return Err(Error::LiteralUnphysical { discriminant: disc });
        }
        return spectrum_pair(big_c, sqrt_d, "λ3,4");
    }
    // C − 2√D = ((χ_d(a − b) + det − 1)/(b + χ_d))², so the difference of the
    // pair needs no square root of a cancelling discriminant
    let sum = (big_c + 2.0 * sqrt_d).sqrt();
    let diff = ((chi_d * (a - b) + cov.det() - 1.0) / (b + chi_d)).abs();
    if !(sum.is_finite() && diff <= sum) {
        return Err(Error::NumericalDomain(format!("λ3,4: sum {sum:e}, difference {diff:e}")));
    }
    Ok((0.5 * (sum + diff), 0.5 * (sum - diff)))
}

/// `g(x) = ((x+1)/2)·log₂((x+1)/2) − ((x−1)/2)·log₂((x−1)/2)`, the entropy of
/// a thermal mode with symplectic eigenvalue `x`.
pub fn entropy_g(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 1.0 - 1e-6 {
        return Err(Error::domain("x", format!("symplectic eigenvalue {x} below 1")));
    }
    let x = x.max(1.0);
    let up = 0.5 * (x + 1.0);
    let down = 0.5 * (x - 1.0);
    let mut g = up * up.log2();
    if x - 1.0 >= 1e-12 {
        g -= down * down.log2();
    }
    Ok(g)
}

/// Key rate with the default (oracle) conditional route.
pub fn key_rate(link: &LinkParams, convention: Convention) -> Result<SecurityReport> {
    key_rate_with(link, convention, ConditionalMethod::Oracle)
}

pub fn key_rate_with(
    link: &LinkParams,
    convention: Convention,
    method: ConditionalMethod,
) -> Result<SecurityReport> {
    link.validate()?;
    let v_a = link.protocol.v_a;
    let beta = link.protocol.beta;
    let equivalent = equivalent_gaussian_channel(v_a, &link.channel, &link.source)?;
    let budget = noise_budget(&equivalent, &link.detector);
    let covariance = covariance_ab(v_a, &equivalent)?;
    let (l1, l2) = channel_symplectic_eigenvalues(&covariance)?;
    let (l3, l4) = conditional_symplectic_eigenvalues(&covariance, &link.detector, method)?;
    let f = convention.factor();
    let i_ab = mutual_information(v_a, budget.chi_t, convention)?;
    let s_ab = f * (entropy_g(l1)? + entropy_g(l2)?);
    let s_cond = f * (entropy_g(l3)? + entropy_g(l4)?);
    let holevo = s_ab - s_cond;
    let key = beta * i_ab - holevo;
    Ok(SecurityReport {
        v_a,
        beta,
        equivalent,
        budget,
        covariance,
        i_ab,
        lambda: [l1, l2, l3, l4],
        s_ab,
        s_cond,
        holevo,
        key_rate_per_symbol: key,
        key_rate_per_second: key * link.protocol.encoding_rate,
        convention,
        conditional_method: method,
        secure: key > 0.0,
    })
}
