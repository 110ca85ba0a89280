use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// ADC samples per symbol: each symbol integral spans `5τ`.
pub const SAMPLES_PER_SYMBOL: usize = 5;

/// Coefficient window `i = 0..=5` used by the receiver.
pub const DEFAULT_TRUNCATION: (i64, i64) = (0, 5);

const EXTRAPOLATION_LIMIT: f64 = 10.0;
const PIECE_TOL: f64 = 1e-15;
const MAX_DEPTH: u32 = 40;

/// Normalized sinc `sin(πu)/(πu)`.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - (PI * u).powi(2) / 6.0
    } else {
        (PI * u).sin() / (PI * u)
    }
}

/// `S_i = ∫_{−iτ}^{(5−i)τ} sinc(t/τ) dt` for `i` in a contiguous window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SincKernel {
    pub tau: f64,
    pub i_min: i64,
    pub s: Vec<f64>,
}

impl SincKernel {
    pub fn i_max(&self) -> i64 {
        self.i_min + self.s.len() as i64 - 1
    }

    pub fn get(&self, i: i64) -> Option<f64> {
        usize::try_from(i - self.i_min)
            .ok()
            .and_then(|k| self.s.get(k).copied())
    }

    pub fn covers(&self, window: (i64, i64)) -> bool {
        window.0 >= self.i_min && window.1 <= self.i_max()
    }
}

/// Computes `S_i` for `i_min ≤ i ≤ i_max` by adaptive Gauss–Kronrod
/// quadrature of the normalized sinc, one unit interval of `t/τ` at a time.
pub fn sinc_coefficients(tau: f64, index_range: (i64, i64)) -> Result<SincKernel> {
    let (i_min, i_max) = index_range;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::domain("tau", "must be finite and > 0"));
    }
    if i_min > i_max {
        return Err(Error::domain("index_range", format!("empty window ({i_min}, {i_max})")));
    }
    let s = (i_min..=i_max)
        .map(|i| {
            let mut total = 0.0;
            for j in 0..SAMPLES_PER_SYMBOL as i64 {
                let a = (j - i) as f64;
                total += adaptive_gk(sinc, a, a + 1.0, PIECE_TOL, MAX_DEPTH)
                    .ok_or(Error::Quadrature { index: i })?;
            }
            Ok(tau * total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SincKernel { tau, i_min, s })
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its distance from the embedded 7-point
/// Gauss rule.
fn gk15(f: fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let pair = f(c - h * XGK[k]) + f(c + h * XGK[k]);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (h * kronrod, h * (kronrod - gauss).abs())
}

fn adaptive_gk(f: fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> Option<f64> {
    let (val, err) = gk15(f, a, b);
    if !val.is_finite() {
        return None;
    }
    if err <= tol {
        return Some(val);
    }
    if depth == 0 {
        return None;
    }
    let m = 0.5 * (a + b);
    Some(adaptive_gk(f, a, m, 0.5 * tol, depth - 1)? + adaptive_gk(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Whittaker–Shannon interpolation `Σ_i V_i·sinc((t − t0)/τ − i)` over the
/// available samples. Warns when `t` is more than `10τ` outside the span.
pub fn reconstruct(w: &Waveform, t: f64) -> f64 {
    let u = (t - w.t0) * w.sample_rate;
    let last = w.len().saturating_sub(1) as f64;
    if u < -EXTRAPOLATION_LIMIT || u > last + EXTRAPOLATION_LIMIT {
        warn!(
            "reconstruct: t = {t:e} s lies {:.1} samples outside the sampled span; extrapolating",
            if u < 0.0 { -u } else { u - last }
        );
    }
    if (u - u.round()).abs() < 1e-12 && u.round() >= 0.0 && u.round() <= last {
        return w.samples[u.round() as usize];
    }
    // sin(π(u − i)) = ±sin(πu): factor it out of the sum
    let s = (PI * u).sin();
    let mut acc = 0.0;
    for (i, v) in w.samples.iter().enumerate() {
        let d = u - i as f64;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc += if d.abs() < 1e-8 { v * sinc(d) } else { sign * v * s / (PI * d) };
    }
    acc
}

/// Unscaled symbol integrals `Σ_i V_{5m+i}·S_i` for every symbol `m` whose
/// sample window lies inside the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovered {
    /// Index of the first recovered symbol; symbol `m` spans
    /// `[t0 + mT, t0 + (m+1)T)`.
    pub first_symbol: usize,
    pub values: Vec<f64>,
    /// Whole symbols dropped because their window ran off either end.
    pub boundary_dropped: usize,
    /// Samples after the last whole symbol, ignored.
    pub trailing_samples: usize,
}

/// Recovers one quadrature per symbol from the ADC record `w`.
///
/// `symbol_period` must equal `5τ`; the kernel must cover the truncation
/// window `(i_lo, i_hi)`. Symbols whose window needs samples outside the
/// record are dropped rather than zero-padded.
pub fn recover_symbols(
    w: &Waveform,
    symbol_period: f64,
    kernel: &SincKernel,
    truncation: (i64, i64),
) -> Result<Recovered> {
    let tau = w.tau();
    if ((symbol_period / tau) - SAMPLES_PER_SYMBOL as f64).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "symbol period {symbol_period:e} s is not {SAMPLES_PER_SYMBOL} samples at {} Hz",
            w.sample_rate
        )));
    }
    if ((kernel.tau - tau) / tau).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "kernel tau {:e} s does not match sample interval {tau:e} s",
            kernel.tau
        )));
    }
    let (lo, hi) = truncation;
    if lo > hi || !kernel.covers(truncation) {
        return Err(Error::Config(format!(
            "truncation ({lo}, {hi}) not covered by kernel ({}, {})",
            kernel.i_min,
            kernel.i_max()
        )));
    }
    let weights: Vec<f64> = (lo..=hi).map(|i| kernel.get(i).expect("covered")).collect();
    let n = w.len() as i64;
    let spc = SAMPLES_PER_SYMBOL as i64;
    let whole = n / spc;
    let complete = |m: i64| spc * m + lo >= 0 && spc * m + hi < n;
    let first = (0..whole).find(|&m| complete(m));
    let mut values = Vec::new();
    if let Some(first) = first {
        let mut m = first;
        while m < whole && complete(m) {
            let base = spc * m + lo;
            values.push(
                weights
                    .iter()
                    .enumerate()
                    .map(|(k, s)| s * w.samples[(base + k as i64) as usize])
                    .sum(),
            );
            m += 1;
        }
    }
    Ok(Recovered {
        first_symbol: first.unwrap_or(0) as usize,
        boundary_dropped: whole as usize - values.len(),
        values,
        trailing_samples: (n % spc) as usize,
    })
}

/// Paired per-symbol quadratures in calibrated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolQuadratures {
    pub first_symbol: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// The calibration constant `k` applied to the raw integrals.
    pub scale: f64,
}

impl SymbolQuadratures {
    pub fn from_arms(x: &Recovered, p: &Recovered, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::domain("scale", "must be finite and > 0"));
        }
        if x.first_symbol != p.first_symbol || x.values.len() != p.values.len() {
            return Err(Error::Config("X and P arms recovered different symbol ranges".into()));
        }
        Ok(Self {
            first_symbol: x.first_symbol,
            x: x.values.iter().map(|v| scale * v).collect(),
            p: p.values.iter().map(|v| scale * v).collect(),
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values of S_i/τ from 30-digit quadrature
    const S_REF: [(i64, f64); 6] = [
        (0, 0.520_107_164_191_308_52),
        (1, 1.064_459_542_119_738_7),
        (2, 0.984_504_904_408_412_3),
        (6, -0.106_284_654_738_336_5),
        (8, -0.045_719_012_560_452_011),
        (200, -0.001_026_196_396_409_427_5),
    ];

    #[test]
    fn coefficients_match_reference() {
        let k = sinc_coefficients(1.0, (-1, 200)).unwrap();
        for (i, want) in S_REF {
            assert!((k.get(i).unwrap() - want).abs() < 1e-13, "S_{i}");
        }
        assert!((k.get(-1).unwrap() - k.get(6).unwrap()).abs() < 1e-15);
        let k2 = sinc_coefficients(2e-8, (0, 5)).unwrap();
        assert!((k2.s[0] / 2e-8 - S_REF[0].1).abs() < 1e-13);
    }

    #[test]
    fn kernel_window_lookup() {
        let k = sinc_coefficients(1.0, (-2, 7)).unwrap();
        assert_eq!(k.i_max(), 7);
        assert!(k.get(-3).is_none() && k.get(8).is_none());
        assert!(k.covers((0, 5)) && !k.covers((0, 8)));
        assert!(sinc_coefficients(1.0, (3, 2)).is_err());
        assert!(sinc_coefficients(0.0, (0, 5)).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_grid() {
        let w = Waveform::new(5e7, 1e-7, vec![0.3, -1.0, 2.5, 0.0, 4.0]).unwrap();
        for i in 0..w.len() {
            assert_eq!(reconstruct(&w, w.time(i)), w.samples[i]);
        }
    }

    #[test]
    fn constant_signal_mid_span() {
        let w = Waveform::new(1.0, 0.0, vec![2.0; 200_001]).unwrap();
        let v = reconstruct(&w, 100_000.37);
        assert!((v - 2.0).abs() < 1e-5, "{v}");
    }

    fn rec(samples: Vec<f64>, trunc: (i64, i64)) -> Recovered {
        let w = Waveform::new(5e7, 0.0, samples).unwrap();
        let k = sinc_coefficients(2e-8, (-3, 8)).unwrap();
        recover_symbols(&w, 1e-7, &k, trunc).unwrap()
    }

    #[test]
    fn zero_waveform_recovers_zeros() {
        let r = rec(vec![0.0; 52], DEFAULT_TRUNCATION);
        assert!(r.values.iter().all(|&v| v == 0.0));
        assert_eq!((r.first_symbol, r.values.len()), (0, 10));
        assert_eq!((r.boundary_dropped, r.trailing_samples), (0, 2));
    }

    #[test]
    fn boundary_symbols_dropped() {
        // 50 samples: the last symbol would need sample 50
        let r = rec(vec![1.0; 50], DEFAULT_TRUNCATION);
        assert_eq!((r.values.len(), r.boundary_dropped, r.trailing_samples), (9, 1, 0));
        let r = rec(vec![1.0; 50], (-3, 8));
        assert_eq!((r.first_symbol, r.values.len(), r.boundary_dropped), (1, 8, 2));
    }

    #[test]
    fn recovery_is_weighted_sum() {
        let samples: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = rec(samples, DEFAULT_TRUNCATION);
        let k = sinc_coefficients(2e-8, (0, 5)).unwrap();
        let want: f64 = (0..6).map(|i| k.s[i] * (5 + i) as f64).sum();
        assert!((r.values[1] - want).abs() < 1e-22);
    }

    #[test]
    fn recovery_preconditions() {
        let w = Waveform::new(5e7, 0.0, vec![0.0; 20]).unwrap();
        let k = sinc_coefficients(2e-8, (0, 5)).unwrap();
        assert!(recover_symbols(&w, 2e-7, &k, (0, 5)).is_err());
        assert!(recover_symbols(&w, 1e-7, &k, (-1, 5)).is_err());
        let k_bad = sinc_coefficients(1e-8, (0, 5)).unwrap();
        assert!(recover_symbols(&w, 1e-7, &k_bad, (0, 5)).is_err());
    }

    #[test]
    fn quadratures_pairing() {
        let x = rec(vec![1.0; 30], DEFAULT_TRUNCATION);
        let q = SymbolQuadratures::from_arms(&x, &x, 2.0).unwrap();
        assert_eq!(q.len(), 5);
        assert!((q.x[0] - 2.0 * x.values[0]).abs() < 1e-20);
        let shorter = rec(vec![1.0; 25], DEFAULT_TRUNCATION);
        assert!(SymbolQuadratures::from_arms(&x, &shorter, 1.0).is_err());
        assert!(SymbolQuadratures::from_arms(&x, &x, 0.0).is_err());
    }
}
