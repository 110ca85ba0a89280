//! Channel and detector parameters recovered from `(alice, bob)` records:
//! regression gain, total added noise, the electronic noise behind it, and
//! the empirical information rate.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::SymbolRecord;

/// Fewest records the estimators accept.
pub const MIN_RECORDS: usize = 1000;
const Z95: f64 = 1.959_963_984_540_054;
const OPAQUE_SLOPE: f64 = 1e-6;
const BACKOUT_TOLERANCE: f64 = -1e-3;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn around(centre: f64, se: f64) -> Self {
        Self {
            lo: centre - Z95 * se,
            hi: centre + Z95 * se,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Regression of one quadrature (or both pooled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureFit {
    pub slope: f64,
    pub residual_variance: f64,
    pub chi_t: f64,
    pub snr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateIntervals {
    pub gain_sq: Interval,
    pub chi_t_hat: Interval,
    pub t_hat: Interval,
    pub snr_hat: Interval,
    pub i_ab_hat: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub v_a: f64,
    pub eta: f64,
    /// Pooled slope `g` of Bob on Alice.
    pub slope: f64,
    /// `g²`, an estimate of `ηT/2`.
    pub gain_sq: f64,
    pub residual_variance: f64,
    pub chi_t_hat: f64,
    pub t_hat: f64,
    pub snr_hat: f64,
    pub i_ab_hat: f64,
    pub n_used: usize,
    pub x: QuadratureFit,
    pub p: QuadratureFit,
    /// 95 % intervals.
    pub ci: EstimateIntervals,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: usize,
    aa: f64,
    ab: f64,
    bb: f64,
}

impl Moments {
    fn add(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            aa: self.aa + o.aa,
            ab: self.ab + o.ab,
            bb: self.bb + o.bb,
        }
    }

    fn slope(&self) -> f64 {
        self.ab / self.aa
    }

    /// Residual variance about the through-origin fit.
    fn residual_variance(&self) -> f64 {
        let rss = if self.aa > 0.0 { self.bb - self.ab * self.ab / self.aa } else { self.bb };
        rss / (self.n as f64 - 1.0)
    }
}

/// X and P moments, summed in fixed-size chunks and merged in order so the
/// result does not depend on the thread count.
fn moments(records: &[SymbolRecord]) -> (Moments, Moments) {
    let partial: Vec<(Moments, Moments)> = records
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk.iter().fold((Moments::default(), Moments::default()), |(x, p), r| {
                (
                    x.add(Moments {
                        n: 1,
                        aa: r.alice_x * r.alice_x,
                        ab: r.alice_x * r.bob_x,
                        bb: r.bob_x * r.bob_x,
                    }),
                    p.add(Moments {
                        n: 1,
                        aa: r.alice_p * r.alice_p,
                        ab: r.alice_p * r.bob_p,
                        bb: r.bob_p * r.bob_p,
                    }),
                )
            })
        })
        .collect();
    partial
        .into_iter()
        .fold((Moments::default(), Moments::default()), |(x, p), (cx, cp)| (x.add(cx), p.add(cp)))
}

fn require(records: &[SymbolRecord]) -> Result<()> {
    if records.len() < MIN_RECORDS {
        return Err(Error::InsufficientData {
            needed: MIN_RECORDS,
            got: records.len(),
        });
    }
    Ok(())
}

fn fit(m: &Moments) -> Result<QuadratureFit> {
    let slope = m.slope();
    if !slope.is_finite() || slope.abs() < OPAQUE_SLOPE {
        return Err(Error::ChannelOpaque { slope });
    }
    let residual_variance = m.residual_variance();
    if !(residual_variance > 0.0) {
        return Err(Error::Estimation(format!(
            "residual variance {residual_variance:e} is not positive"
        )));
    }
    let g2 = slope * slope;
    Ok(QuadratureFit {
        slope,
        residual_variance,
        chi_t: residual_variance / g2 - 1.0,
        snr: g2 * (m.aa / m.n as f64) / residual_variance,
        n: m.n,
    })
}

/// Least-squares estimate of the channel from `records`, with `η` known.
///
/// Both quadratures are pooled: `g = Σab/Σa²`, `gain_sq = g²`,
/// `chi_t_hat = r²/g² − 1` with `r²` the residual variance, and
/// `t_hat = 2g²/η`.
pub fn estimate_channel(records: &[SymbolRecord], v_a: f64, eta: f64) -> Result<EstimationResult> {
    require(records)?;
    if !(v_a.is_finite() && v_a >= 0.0) {
        return Err(Error::domain("v_a", "must be >= 0"));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain("eta", "efficiency must lie in (0, 1]"));
    }
    let (mx, mp) = moments(records);
    let pooled = mx.add(mp);
    let fx = fit(&mx)?;
    let fp = fit(&mp)?;
    let f = fit(&pooled)?;
    let second_moment = pooled.aa / pooled.n as f64;
    if (second_moment - v_a).abs() > 1e-9 * v_a.max(1.0) {
        warn!("alice second moment {second_moment} differs from v_a = {v_a}");
    }

    let (g, r2, n) = (f.slope, f.residual_variance, pooled.n as f64);
    let gain_sq = g * g;
    let var_g = r2 / pooled.aa;
    let var_r2 = 2.0 * r2 * r2 / (n - 1.0);
    let se_gain_sq = 2.0 * g.abs() * var_g.sqrt();
    let se_chi = ((2.0 * r2 / g.powi(3)).powi(2) * var_g + var_r2 / g.powi(4)).sqrt();
    let snr_hat = gain_sq * v_a / r2;
    let se_snr = ((4.0 * snr_hat + 2.0 * snr_hat * snr_hat) / n).sqrt();
    let mi = empirical_mutual_information(records)?;

    Ok(EstimationResult {
        v_a,
        eta,
        slope: g,
        gain_sq,
        residual_variance: r2,
        chi_t_hat: f.chi_t,
        t_hat: 2.0 * gain_sq / eta,
        snr_hat,
        i_ab_hat: mi.bits,
        n_used: records.len(),
        x: fx,
        p: fp,
        ci: EstimateIntervals {
            gain_sq: Interval::around(gain_sq, se_gain_sq),
            chi_t_hat: Interval::around(f.chi_t, se_chi),
            t_hat: Interval::around(2.0 * gain_sq / eta, 2.0 * se_gain_sq / eta),
            snr_hat: Interval::around(snr_hat, se_snr),
            i_ab_hat: mi.ci,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorBackout {
    pub upsilon: f64,
    /// Set when `upsilon` came out below −1e-3.
    pub inconsistent: bool,
}

/// Electronic noise implied by a measured total noise:
/// `υ = (η/2)·((χ_t − (1/t − 1 + ε))·t + 1) − 1`.
pub fn backout_detector_noise(chi_t_hat: f64, t: f64, eps: f64, eta: f64) -> Result<DetectorBackout> {
    if !chi_t_hat.is_finite() {
        return Err(Error::domain("chi_t", "must be finite"));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain("t", "transmittance must lie in (0, 1]"));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::domain("eps", "excess noise must be >= 0"));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain("eta", "efficiency must lie in (0, 1]"));
    }
    let chi_c = 1.0 / t - 1.0 + eps;
    let upsilon = 0.5 * eta * ((chi_t_hat - chi_c) * t + 1.0) - 1.0;
    let inconsistent = upsilon < BACKOUT_TOLERANCE;
    if inconsistent {
        warn!("backed-out electronic noise {upsilon} is negative; inputs are inconsistent");
    }
    Ok(DetectorBackout {
        upsilon,
        inconsistent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformationEstimate {
    /// Bits per symbol, both quadratures.
    pub bits: f64,
    pub ci: Interval,
    pub snr_x: f64,
    pub snr_p: f64,
    pub n: usize,
}

/// `Σ_q ½·log2(1 + SNR_q)` with each SNR from that quadrature's
/// signal/residual split.
pub fn empirical_mutual_information(records: &[SymbolRecord]) -> Result<MutualInformationEstimate> {
    require(records)?;
    let (mx, mp) = moments(records);
    let n = records.len() as f64;
    let mut bits = 0.0;
    let mut var = 0.0;
    let mut snr = [0.0; 2];
    for (q, m) in [mx, mp].iter().enumerate() {
        let r2 = m.residual_variance();
        if !(r2 > 0.0) {
            return Err(Error::Estimation(format!("residual variance {r2:e} is not positive")));
        }
        let s = if m.aa > 0.0 { m.slope().powi(2) * (m.aa / n) / r2 } else { 0.0 };
        snr[q] = s;
        bits += 0.5 * s.ln_1p() / std::f64::consts::LN_2;
        let d = 1.0 / (2.0 * std::f64::consts::LN_2 * (1.0 + s));
        var += d * d * (4.0 * s + 2.0 * s * s) / n;
    }
    Ok(MutualInformationEstimate {
        bits,
        ci: Interval::around(bits, var.sqrt()),
        snr_x: snr[0],
        snr_p: snr[1],
        n: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawKey {
    /// Two bits per symbol: sign of x, then sign of p (1 for >= 0).
    pub alice_bits: Vec<u8>,
    pub bob_bits: Vec<u8>,
    /// Mismatch rate of the x bits and of the p bits.
    pub mismatch_x: f64,
    pub mismatch_p: f64,
    pub mismatch_rate: f64,
}

pub fn raw_key_bits(records: &[SymbolRecord]) -> RawKey {
    let bit = |v: f64| u8::from(v >= 0.0);
    let mut alice_bits = Vec::with_capacity(2 * records.len());
    let mut bob_bits = Vec::with_capacity(2 * records.len());
    let (mut ex, mut ep) = (0usize, 0usize);
    for r in records {
        let (ax, ap, bx, bp) = (bit(r.alice_x), bit(r.alice_p), bit(r.bob_x), bit(r.bob_p));
        alice_bits.extend([ax, ap]);
        bob_bits.extend([bx, bp]);
        ex += usize::from(ax != bx);
        ep += usize::from(ap != bp);
    }
    let n = records.len().max(1) as f64;
    RawKey {
        alice_bits,
        bob_bits,
        mismatch_x: ex as f64 / n,
        mismatch_p: ep as f64 / n,
        mismatch_rate: (ex + ep) as f64 / (2.0 * n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            got: 0,
        });
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            2.0 * sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    Ok(KsTest {
        statistic: d,
        p_value: if lambda < 1e-3 { 1.0 } else { p.clamp(0.0, 1.0) },
    })
}
