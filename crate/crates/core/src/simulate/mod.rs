//! Monte Carlo prepare-and-measure runs. The symbol-level path samples the
//! Gaussian outcome model directly; the waveform-level path drives the
//! modulator, detector and the full receive chain of [`crate::dsp`].

mod rng;
mod waveform;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constellation::quadrature_means;
use crate::error::{Error, Result};
use crate::params::LinkParams;

pub use rng::{stream_rng, Channel};
pub use waveform::{
    chain_response, shot_noise_calibration, waveform_level_run, ChainResponse, ShotNoiseCalibration,
    WaveformDiagnostics,
};

/// One transmitted symbol and Bob's heterodyne outcome, in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolRecord {
    pub n: u64,
    pub k: u8,
    pub alice_x: f64,
    pub alice_p: f64,
    pub bob_x: f64,
    pub bob_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    #[default]
    Symbol,
    Waveform,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Symbol => "symbol",
            Fidelity::Waveform => "waveform",
        })
    }
}

impl FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "symbol" => Ok(Fidelity::Symbol),
            "waveform" => Ok(Fidelity::Waveform),
            other => Err(Error::Config(format!(
                "unknown fidelity `{other}` (expected symbol|waveform)"
            ))),
        }
    }
}

/// Laser amplitude noise `n_A` and phase noise `n_P`, each a Gaussian
/// process low-passed at `bandwidth_hz`. Illustrative, not physical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceNoiseProfile {
    /// RMS of `n_A` in shot-noise quadrature units.
    pub amp_rms: f64,
    /// RMS of `n_P` in radians.
    pub phase_rms: f64,
    pub bandwidth_hz: f64,
}

impl Default for SourceNoiseProfile {
    fn default() -> Self {
        Self {
            amp_rms: 0.0,
            phase_rms: 0.0,
            bandwidth_hz: 8e6,
        }
    }
}

impl SourceNoiseProfile {
    /// Strong low-frequency noise on both the amplitude and the phase.
    pub fn noisy_laser() -> Self {
        Self {
            amp_rms: 30.0,
            phase_rms: 0.5,
            bandwidth_hz: 8e6,
        }
    }
}

/// Knobs that only matter at waveform fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformOptions {
    /// Carrier offset `x0` in the units of the modulation field.
    pub x0: f64,
    pub source_noise: SourceNoiseProfile,
    /// Amplitude of the white detector noise per internal sample.
    pub shot_noise_amplitude: f64,
    /// Unmodulated symbols padded at each end of the record.
    pub guard_symbols: usize,
}

impl Default for WaveformOptions {
    fn default() -> Self {
        Self {
            // 4 µW signal against a 40 mW local oscillator
            x0: 1e4,
            source_noise: SourceNoiseProfile::default(),
            shot_noise_amplitude: 1.0,
            guard_symbols: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_symbols: usize,
    pub seed: u64,
    /// `link.protocol.encoding_rate` is the symbol rate.
    pub link: LinkParams,
    pub fidelity: Fidelity,
    pub carrier_hz: f64,
    pub adc_rate: f64,
    pub internal_rate: f64,
    pub cutoff_hz: f64,
    pub waveform: WaveformOptions,
}

impl RunConfig {
    /// Symbol-fidelity run with the receiver defaults: 50 MHz carrier,
    /// 50 MS/s ADC, 400 MS/s internal rate, 25 MHz low-pass.
    pub fn new(n_symbols: usize, seed: u64, link: LinkParams) -> Self {
        Self {
            n_symbols,
            seed,
            link,
            fidelity: Fidelity::Symbol,
            carrier_hz: 5e7,
            adc_rate: 5e7,
            internal_rate: 4e8,
            cutoff_hz: 2.5e7,
            waveform: WaveformOptions::default(),
        }
    }

    pub fn symbol_rate(&self) -> f64 {
        self.link.protocol.encoding_rate
    }

    /// `v_a = 0` is allowed here (unmodulated runs).
    pub fn validate(&self) -> Result<()> {
        let v_a = self.link.protocol.v_a;
        if !(v_a.is_finite() && v_a >= 0.0) {
            return Err(Error::domain("v_a", "modulation variance must be >= 0"));
        }
        self.link.with_v_a(if v_a == 0.0 { 1.0 } else { v_a }).validate()?;
        if self.n_symbols == 0 {
            return Err(Error::domain("n_symbols", "must be > 0"));
        }
        if self.fidelity == Fidelity::Waveform {
            waveform::Layout::new(self)?;
        }
        Ok(())
    }
}

fn symbol_noise_std(link: &LinkParams) -> f64 {
    let det = link.detector;
    let excess = link.channel.eps0 + link.source.delta_eps;
    (1.0 + det.upsilon + 0.5 * det.eta * link.channel.t0 * excess).sqrt()
}

fn draw_symbol(seed: u64, n: u64) -> u8 {
    stream_rng(seed, n, Channel::Symbol).random_range(0..4u8)
}

/// Fast path: each outcome is `√(ηT0/2)·alice + N(0, 1 + υ + ηT0(ε0+δε)/2)`
/// per quadrature.
pub fn symbol_level_run(cfg: &RunConfig) -> Result<Vec<SymbolRecord>> {
    cfg.validate()?;
    let link = &cfg.link;
    let gain = (0.5 * link.detector.eta * link.channel.t0).sqrt();
    let sd = symbol_noise_std(link);
    Ok((0..cfg.n_symbols as u64)
        .into_par_iter()
        .map(|n| {
            let k = draw_symbol(cfg.seed, n);
            let (ax, ap) = quadrature_means(link.protocol.v_a, k);
            let nx: f64 = stream_rng(cfg.seed, n, Channel::NoiseX).sample(StandardNormal);
            let np: f64 = stream_rng(cfg.seed, n, Channel::NoiseP).sample(StandardNormal);
            SymbolRecord {
                n,
                k,
                alice_x: ax,
                alice_p: ap,
                bob_x: gain * ax + sd * nx,
                bob_p: gain * ap + sd * np,
            }
        })
        .collect())
}

/// Dispatches on `cfg.fidelity`.
pub fn run(cfg: &RunConfig) -> Result<Vec<SymbolRecord>> {
    match cfg.fidelity {
        Fidelity::Symbol => symbol_level_run(cfg),
        Fidelity::Waveform => waveform_level_run(cfg).map(|(r, _)| r),
    }
}

/// CSV with header `n,k,alice_x,alice_p,bob_x,bob_p`.
pub fn write_records<W: Write>(out: W, records: &[SymbolRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["n", "k", "alice_x", "alice_p", "bob_x", "bob_p"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<SymbolRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let records = r.deserialize().collect::<std::result::Result<Vec<SymbolRecord>, _>>()?;
    Ok(records)
}
