use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{draw_symbol, stream_rng, Channel, RunConfig, SymbolRecord};
use crate::constellation::quadrature_means;
use crate::dsp::{
    downsample, mix_and_filter_with, recover_symbols, sinc_coefficients, FirFilter, Recovered,
    SincKernel, SymbolQuadratures, Waveform, DEFAULT_TRUNCATION, LPF_TAPS, SAMPLES_PER_SYMBOL,
};
use crate::error::{Error, Result};

/// Modulation beyond this fraction of `x0` breaks `A ≈ x0 + x`.
pub const LINEAR_LIMIT: f64 = 0.05;
const SOURCE_NOISE_TAPS: usize = 513;

/// Integer rate relations of a waveform run.
#[derive(Debug, Clone, Copy)]
pub(super) struct Layout {
    samples_per_symbol: usize,
    decimation: usize,
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let n = r.round();
    if !(r.is_finite() && n >= 1.0 && (r - n).abs() <= 1e-9 * r) {
        return Err(Error::Config(format!("{what} = {r} must be a positive integer")));
    }
    Ok(n as usize)
}

impl Layout {
    pub(super) fn new(cfg: &RunConfig) -> Result<Self> {
        let fs = cfg.internal_rate;
        let symbol_rate = cfg.symbol_rate();
        let samples_per_symbol = integer_ratio(fs, symbol_rate, "internal_rate / symbol_rate")?;
        let decimation = integer_ratio(fs, cfg.adc_rate, "internal_rate / adc_rate")?;
        if integer_ratio(cfg.adc_rate, symbol_rate, "adc_rate / symbol_rate")? != SAMPLES_PER_SYMBOL
        {
            return Err(Error::Config(format!(
                "adc_rate must be {SAMPLES_PER_SYMBOL} x symbol_rate"
            )));
        }
        integer_ratio(cfg.carrier_hz, symbol_rate, "carrier_hz / symbol_rate")?;
        if cfg.carrier_hz >= 0.5 * fs || cfg.cutoff_hz >= 0.5 * fs || cfg.cutoff_hz <= 0.0 {
            return Err(Error::Config(format!(
                "carrier and cutoff must lie below the internal Nyquist rate {} Hz",
                0.5 * fs
            )));
        }
        let wf = &cfg.waveform;
        if !(wf.x0.is_finite() && wf.x0 > 0.0) {
            return Err(Error::domain("x0", "carrier offset must be > 0"));
        }
        if !(wf.shot_noise_amplitude.is_finite() && wf.shot_noise_amplitude > 0.0) {
            return Err(Error::domain("shot_noise_amplitude", "must be > 0"));
        }
        let sn = &wf.source_noise;
        if !(sn.amp_rms >= 0.0 && sn.phase_rms >= 0.0) {
            return Err(Error::domain("source_noise", "RMS values must be >= 0"));
        }
        if (sn.amp_rms > 0.0 || sn.phase_rms > 0.0)
            && !(sn.bandwidth_hz > 0.0 && sn.bandwidth_hz < 0.5 * fs)
        {
            return Err(Error::Config("source noise bandwidth must lie below Nyquist".into()));
        }
        let min_guard = (LPF_TAPS / 2 + 1).div_ceil(samples_per_symbol);
        if wf.guard_symbols < min_guard {
            return Err(Error::Config(format!(
                "need at least {min_guard} guard symbols to cover the filter transient"
            )));
        }
        Ok(Self {
            samples_per_symbol,
            decimation,
        })
    }
}

/// The receive chain seen as one linear functional on the internal-rate
/// detector samples of a symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainResponse {
    /// `Σ W_j²`: recovered variance per unit of white sample variance.
    pub noise_weight_sq: f64,
    /// Recovered value per unit of carrier-modulated amplitude.
    pub gain: f64,
    /// Leakage from the previous and the next symbol, relative to `gain`.
    pub isi_prev: f64,
    pub isi_next: f64,
    /// The calibration constant `k` giving unit vacuum variance.
    pub scale: f64,
    /// Modulation amplitude per shot-noise unit of quadrature.
    pub a_mod: f64,
}

/// Evaluates the chain weights analytically for the configured rates.
pub fn chain_response(cfg: &RunConfig) -> Result<ChainResponse> {
    let layout = Layout::new(cfg)?;
    let filter = FirFilter::lowpass(cfg.cutoff_hz, cfg.internal_rate, LPF_TAPS)?;
    let kernel = sinc_coefficients(1.0 / cfg.adc_rate, DEFAULT_TRUNCATION)?;
    let (ns, dec, d) = (layout.samples_per_symbol, layout.decimation, filter.group_delay());
    // a symbol far enough from t = 0 that its whole support has j >= 0
    let m = d.div_ceil(ns) + 2;
    let omega = 2.0 * PI * cfg.carrier_hz / cfg.internal_rate;
    let spc = SAMPLES_PER_SYMBOL;
    let j_lo = dec * spc * m - d;
    let j_hi = dec * spc * (m + 1) + d;
    let weight = |j: usize| {
        let f: f64 = (0..=spc)
            .filter_map(|i| {
                let idx = (dec * (spc * m + i) + d).checked_sub(j)?;
                Some(kernel.s[i] * *filter.taps.get(idx)?)
            })
            .sum();
        (omega * j as f64).cos() * f
    };
    let weights: Vec<(usize, f64)> = (j_lo..=j_hi).map(|j| (j, weight(j))).collect();
    let noise_weight_sq: f64 = weights.iter().map(|(_, w)| w * w).sum();
    let symbol_gain = |sym: usize| -> f64 {
        weights
            .iter()
            .filter(|(j, _)| j / ns == sym)
            .map(|&(j, w)| w * (omega * j as f64).cos())
            .sum()
    };
    let gain = symbol_gain(m);
    if !(gain > 0.0 && noise_weight_sq > 0.0) {
        return Err(Error::Calibration(format!(
            "degenerate receive chain (gain {gain:e}, noise weight {noise_weight_sq:e})"
        )));
    }
    let amp = cfg.waveform.shot_noise_amplitude;
    Ok(ChainResponse {
        noise_weight_sq,
        gain,
        isi_prev: symbol_gain(m - 1) / gain,
        isi_next: symbol_gain(m + 1) / gain,
        scale: 1.0 / (amp * noise_weight_sq.sqrt()),
        a_mod: amp * noise_weight_sq.sqrt() / gain,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveformDiagnostics {
    pub samples_per_symbol: usize,
    pub decimation: usize,
    pub guard_symbols: usize,
    pub response: ChainResponse,
    /// Largest `max(|x|, |p|)/x0` over the run.
    pub max_modulation_depth: f64,
    pub boundary_dropped: usize,
    /// ADC-rate records of the X and P arms after mixing and filtering.
    #[serde(skip)]
    pub adc_x: Waveform,
    #[serde(skip)]
    pub adc_p: Waveform,
}

struct Modulation {
    k: Vec<u8>,
    /// Per padded symbol, displacement included; zero in the guards.
    x: Vec<f64>,
    p: Vec<f64>,
}

fn modulation(cfg: &RunConfig, guard: usize, on: bool) -> Modulation {
    let n = cfg.n_symbols;
    let total = n + 2 * guard;
    let link = &cfg.link;
    let excess_sd = (link.channel.eps0 + link.source.delta_eps).sqrt();
    let drawn: Vec<(u8, f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let k = draw_symbol(cfg.seed, i);
            if !on {
                return (k, 0.0, 0.0);
            }
            let (ax, ap) = quadrature_means(link.protocol.v_a, k);
            let dx: f64 = stream_rng(cfg.seed, i, Channel::ExcessX).sample(StandardNormal);
            let dp: f64 = stream_rng(cfg.seed, i, Channel::ExcessP).sample(StandardNormal);
            (k, ax + excess_sd * dx, ap + excess_sd * dp)
        })
        .collect();
    let mut x = vec![0.0; total];
    let mut p = vec![0.0; total];
    for (i, &(_, dx, dp)) in drawn.iter().enumerate() {
        x[guard + i] = dx;
        p[guard + i] = dp;
    }
    Modulation {
        k: drawn.iter().map(|d| d.0).collect(),
        x,
        p,
    }
}

/// Unit-variance Gaussian process low-passed at `bandwidth_hz`, or `None`
/// when `rms` is zero.
fn source_process(
    cfg: &RunConfig,
    channel: Channel,
    rms: f64,
    layout: &Layout,
    total: usize,
) -> Result<Option<Vec<f64>>> {
    if rms == 0.0 {
        return Ok(None);
    }
    let ns = layout.samples_per_symbol;
    let mut white = vec![0.0; total * ns];
    white.par_chunks_mut(ns).enumerate().for_each(|(m, chunk)| {
        let mut rng = stream_rng(cfg.seed, m as u64, channel);
        chunk.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    });
    let lp = FirFilter::lowpass(
        cfg.waveform.source_noise.bandwidth_hz,
        cfg.internal_rate,
        SOURCE_NOISE_TAPS,
    )?;
    let norm = rms / lp.taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    Ok(Some(lp.apply(&white).into_iter().map(|v| norm * v).collect()))
}

/// Detector outputs of both heterodyne arms at the internal rate.
fn detector_arms(
    cfg: &RunConfig,
    layout: &Layout,
    a_mod: f64,
    upsilon: f64,
    modn: &Modulation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ns = layout.samples_per_symbol;
    let total = modn.x.len();
    let wf = &cfg.waveform;
    let n_a = source_process(cfg, Channel::SourceAmplitude, wf.source_noise.amp_rms, layout, total)?;
    let n_p = source_process(cfg, Channel::SourcePhase, wf.source_noise.phase_rms, layout, total)?;
    let link = &cfg.link;
    let s = (0.5 * link.detector.eta * link.channel.t0).sqrt();
    let sigma = wf.shot_noise_amplitude * (1.0 + upsilon).sqrt();
    let x0 = wf.x0;
    let omega = 2.0 * PI * cfg.carrier_hz / cfg.internal_rate;

    let mut arm_x = vec![0.0; total * ns];
    let mut arm_p = vec![0.0; total * ns];
    arm_x
        .par_chunks_mut(ns)
        .zip(arm_p.par_chunks_mut(ns))
        .enumerate()
        .for_each(|(m, (cx, cp))| {
            let mut wx = stream_rng(cfg.seed, m as u64, Channel::NoiseX);
            let mut wp = stream_rng(cfg.seed, m as u64, Channel::NoiseP);
            for jj in 0..ns {
                let j = m * ns + jj;
                let carrier = (omega * j as f64).cos();
                let xm = a_mod * modn.x[m] * carrier;
                let pm = a_mod * modn.p[m] * carrier;
                let na = n_a.as_ref().map_or(0.0, |v| a_mod * v[j]);
                let np = n_p.as_ref().map_or(0.0, |v| v[j]);
                // field (x0 + n_A + x)·e^{i(n_P + p/x0)} against an LO that
                // shares n_P; the X arm is AC-coupled
                let amplitude = x0 + na + xm;
                let phase = np + pm / x0;
                let lo_x = np;
                let lo_p = FRAC_PI_2 + np;
                let nx: f64 = wx.sample(StandardNormal);
                let npn: f64 = wp.sample(StandardNormal);
                cx[jj] = s * (amplitude * (phase - lo_x).cos() - x0) + sigma * nx;
                cp[jj] = s * amplitude * (phase - lo_p).cos() + sigma * npn;
            }
        });
    Ok((arm_x, arm_p))
}

struct Received {
    x: Recovered,
    p: Recovered,
    adc_x: Waveform,
    adc_p: Waveform,
}

fn receive(cfg: &RunConfig, arm_x: Vec<f64>, arm_p: Vec<f64>) -> Result<Received> {
    let filter = FirFilter::lowpass(cfg.cutoff_hz, cfg.internal_rate, LPF_TAPS)?;
    let kernel: SincKernel = sinc_coefficients(1.0 / cfg.adc_rate, DEFAULT_TRUNCATION)?;
    let period = 1.0 / cfg.symbol_rate();
    let chain = |arm: Vec<f64>| -> Result<(Recovered, Waveform)> {
        let w = Waveform::new(cfg.internal_rate, 0.0, arm)?;
        let adc = downsample(&mix_and_filter_with(&w, cfg.carrier_hz, 0.0, &filter)?, cfg.adc_rate)?;
        Ok((recover_symbols(&adc, period, &kernel, DEFAULT_TRUNCATION)?, adc))
    };
    let (rx, rp) = rayon::join(|| chain(arm_x), || chain(arm_p));
    let ((x, adc_x), (p, adc_p)) = (rx?, rp?);
    Ok(Received { x, p, adc_x, adc_p })
}

fn max_depth(modn: &Modulation, a_mod: f64, x0: f64) -> f64 {
    modn.x
        .iter()
        .chain(&modn.p)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        * a_mod
        / x0
}

/// Full-chain run: QPSK symbols on a 50 MHz carrier modulate the amplitude
/// and phase of the carrier offset, the channel and detector act on the
/// field, and Bob mixes, filters, decimates and integrates each symbol.
pub fn waveform_level_run(cfg: &RunConfig) -> Result<(Vec<SymbolRecord>, WaveformDiagnostics)> {
    cfg.validate()?;
    let layout = Layout::new(cfg)?;
    let resp = chain_response(cfg)?;
    let guard = cfg.waveform.guard_symbols;
    let modn = modulation(cfg, guard, true);
    let depth = max_depth(&modn, resp.a_mod, cfg.waveform.x0);
    if depth >= LINEAR_LIMIT {
        return Err(Error::Linearization {
            depth,
            limit: LINEAR_LIMIT,
        });
    }
    let (arm_x, arm_p) = detector_arms(cfg, &layout, resp.a_mod, cfg.link.detector.upsilon, &modn)?;
    let rec = receive(cfg, arm_x, arm_p)?;
    let quads = SymbolQuadratures::from_arms(&rec.x, &rec.p, resp.scale)?;

    let v_a = cfg.link.protocol.v_a;
    let mut records = Vec::with_capacity(cfg.n_symbols);
    for (idx, (&bx, &bp)) in quads.x.iter().zip(&quads.p).enumerate() {
        let m = quads.first_symbol + idx;
        if m < guard || m >= guard + cfg.n_symbols {
            continue;
        }
        let n = m - guard;
        let k = modn.k[n];
        let (ax, ap) = quadrature_means(v_a, k);
        records.push(SymbolRecord {
            n: n as u64,
            k,
            alice_x: ax,
            alice_p: ap,
            bob_x: bx,
            bob_p: bp,
        });
    }
    if records.len() != cfg.n_symbols {
        return Err(Error::Config(format!(
            "recovered {} of {} symbols; increase guard_symbols",
            records.len(),
            cfg.n_symbols
        )));
    }
    let diag = WaveformDiagnostics {
        samples_per_symbol: layout.samples_per_symbol,
        decimation: layout.decimation,
        guard_symbols: guard,
        response: resp,
        max_modulation_depth: depth,
        boundary_dropped: rec.x.boundary_dropped,
        adc_x: rec.adc_x,
        adc_p: rec.adc_p,
    };
    Ok((records, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotNoiseCalibration {
    /// Multiplier taking raw symbol integrals to shot-noise units.
    pub scale: f64,
    pub raw_variance: f64,
    pub n_values: usize,
    /// The chain's analytic value of the same constant.
    pub analytic_scale: f64,
}

/// Vacuum run (no modulation, no electronic, excess or source noise) through
/// the full chain; the scale is the inverse RMS of the raw integrals over
/// both arms.
pub fn shot_noise_calibration(cfg: &RunConfig) -> Result<ShotNoiseCalibration> {
    let mut vac = *cfg;
    vac.link.protocol.v_a = 0.0;
    vac.link.detector.upsilon = 0.0;
    vac.link.channel.eps0 = 0.0;
    vac.link.source.delta_eps = 0.0;
    vac.waveform.source_noise.amp_rms = 0.0;
    vac.waveform.source_noise.phase_rms = 0.0;
    vac.validate()?;
    let layout = Layout::new(&vac)?;
    let resp = chain_response(&vac)?;
    let modn = modulation(&vac, vac.waveform.guard_symbols, false);
    let (arm_x, arm_p) = detector_arms(&vac, &layout, resp.a_mod, 0.0, &modn)?;
    let rec = receive(&vac, arm_x, arm_p)?;
    let values: Vec<f64> = rec.x.values.iter().chain(&rec.p.values).copied().collect();
    let n = values.len();
    if n < 2 {
        return Err(Error::Calibration("no complete symbols recovered".into()));
    }
    // vacuum outcomes are zero-mean by construction
    let raw_variance = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(raw_variance.is_finite() && raw_variance > 0.0) {
        return Err(Error::Calibration(format!(
            "recovered vacuum variance is {raw_variance:e}"
        )));
    }
    Ok(ShotNoiseCalibration {
        scale: 1.0 / raw_variance.sqrt(),
        raw_variance,
        n_values: n,
        analytic_scale: resp.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LinkParams;
    use crate::simulate::Fidelity;

    fn cfg(n: usize, v_a: f64) -> RunConfig {
        let mut link = LinkParams::reference(1.0, 0.0);
        link.protocol.v_a = v_a;
        link.channel.t0 = 1.0;
        link.detector.eta = 1.0;
        let mut c = RunConfig::new(n, 11, link);
        c.fidelity = Fidelity::Waveform;
        c
    }

    #[test]
    fn response_of_default_chain() {
        let r = chain_response(&cfg(10, 1.0)).unwrap();
        assert!((r.scale * r.a_mod * r.gain - 1.0).abs() < 1e-12);
        assert!(r.isi_prev.abs() < 0.1 && r.isi_next.abs() < 0.1);
    }

    #[test]
    fn layout_rejects_bad_rates() {
        let mut c = cfg(10, 1.0);
        c.adc_rate = 3e7;
        assert!(c.validate().is_err());
        let mut c = cfg(10, 1.0);
        c.internal_rate = 4.1e8;
        assert!(c.validate().is_err());
        let mut c = cfg(10, 1.0);
        c.carrier_hz = 4.5e7 + 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(10, 1.0);
        c.waveform.guard_symbols = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cluster_means_come_back_scaled() {
        let (recs, diag) = waveform_level_run(&cfg(4000, 4.0)).unwrap();
        assert_eq!(recs.len(), 4000);
        let s = 0.5f64.sqrt();
        for k in 0..4 {
            let c: Vec<_> = recs.iter().filter(|r| r.k == k).collect();
            let n = c.len() as f64;
            let mx = c.iter().map(|r| r.bob_x).sum::<f64>() / n;
            let mp = c.iter().map(|r| r.bob_p).sum::<f64>() / n;
            // unit vacuum noise plus the neighbours' leakage
            let se = (1.0 + 2.0 * 2.0 * 0.1f64.powi(2)).sqrt() / n.sqrt();
            assert!((mx - s * c[0].alice_x).abs() < 4.0 * se, "k={k} {mx}");
            assert!((mp - s * c[0].alice_p).abs() < 4.0 * se, "k={k} {mp}");
        }
        assert!(diag.max_modulation_depth < 1e-3);
        assert_eq!(diag.adc_x.len(), 5 * 4004);
    }

    #[test]
    fn linearization_violation() {
        let mut c = cfg(20, 18.0);
        c.waveform.x0 = 5.0;
        assert!(matches!(waveform_level_run(&c), Err(Error::Linearization { .. })));
    }

    #[test]
    fn deterministic() {
        let c = cfg(300, 2.0);
        assert_eq!(waveform_level_run(&c).unwrap().0, waveform_level_run(&c).unwrap().0);
    }

    #[test]
    fn vacuum_calibration() {
        let c = cfg(20_000, 0.0);
        let cal = shot_noise_calibration(&c).unwrap();
        assert!((cal.scale / cal.analytic_scale - 1.0).abs() < 0.02);
        let mut loud = c;
        loud.waveform.shot_noise_amplitude = 2.0;
        let cal2 = shot_noise_calibration(&loud).unwrap();
        assert!((cal2.raw_variance / cal.raw_variance - 4.0).abs() < 1e-9);
        assert!((cal.scale / cal2.scale - 2.0).abs() < 1e-9);
    }
}
