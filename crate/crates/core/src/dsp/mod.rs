//! Bob's receive chain: carrier mixing and low-pass filtering, decimation to
//! the ADC rate, band-limited reconstruction and symbol recovery from
//! integrals of the filtered signal.

mod filter;
mod sinc;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{downsample, mix_and_filter, mix_and_filter_with, FirFilter, LPF_TAPS};
pub use sinc::{
    reconstruct, recover_symbols, sinc, sinc_coefficients, Recovered, SincKernel,
    SymbolQuadratures, DEFAULT_TRUNCATION, SAMPLES_PER_SYMBOL,
};

/// Uniformly sampled real signal starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: f64, t0: f64, samples: Vec<f64>) -> Result<Self> {
        let w = Self {
            sample_rate,
            t0,
            samples,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::domain("sample_rate", "must be finite and > 0"));
        }
        if !self.t0.is_finite() {
            return Err(Error::domain("t0", "must be finite"));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain("samples", format!("sample {i} is not finite")));
        }
        Ok(())
    }

    /// Samples `f(t0 + i/sample_rate)` for `i < n`.
    pub fn from_fn(sample_rate: f64, t0: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples = (0..n).map(|i| f(t0 + i as f64 / sample_rate)).collect();
        Self::new(sample_rate, t0, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    /// Writes raw little-endian `f64` samples to `path` and the metadata to
    /// `<path>.json`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for v in &self.samples {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        let meta = WaveformMeta {
            sample_rate: self.sample_rate,
            t0: self.t0,
            n_samples: self.samples.len(),
            encoding: "f64le".into(),
        };
        let mut side = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(&mut side, &meta)?;
        side.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let meta: WaveformMeta =
            serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
        if meta.encoding != "f64le" {
            return Err(Error::Config(format!("unsupported encoding `{}`", meta.encoding)));
        }
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * meta.n_samples {
            return Err(Error::Config(format!(
                "{} holds {} bytes, sidecar declares {} samples",
                path.display(),
                bytes.len(),
                meta.n_samples
            )));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(meta.sample_rate, meta.t0, samples)
    }

    /// Two-column `t,v` CSV for inspection.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["t", "v"])?;
        for (i, v) in self.samples.iter().enumerate() {
            w.write_record([self.time(i).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WaveformMeta {
    sample_rate: f64,
    t0: f64,
    n_samples: usize,
    encoding: String,
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Waveform::new(0.0, 0.0, vec![]).is_err());
        assert!(Waveform::new(1.0, f64::NAN, vec![]).is_err());
        assert!(Waveform::new(1.0, 0.0, vec![1.0, f64::INFINITY]).is_err());
        let w = Waveform::new(5e7, 1e-6, vec![0.0; 3]).unwrap();
        assert_eq!(w.tau(), 2e-8);
        assert!((w.time(2) - 1.04e-6).abs() < 1e-18);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.f64");
        let w = Waveform::new(4e8, -3e-9, vec![1.5, -0.25, 1e-300, 7.0]).unwrap();
        w.write_binary(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32);
        assert_eq!(Waveform::read_binary(&path).unwrap(), w);
        std::fs::write(&path, [0u8; 8]).unwrap();
        assert!(Waveform::read_binary(&path).is_err());
    }

    #[test]
    fn csv_export() {
        let w = Waveform::new(2.0, 0.0, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,v\n0,1\n0.5,2\n");
    }
}
