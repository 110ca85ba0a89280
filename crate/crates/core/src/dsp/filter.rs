use std::f64::consts::PI;

use rayon::prelude::*;

use super::{sinc, Waveform};
use crate::error::{Error, Result};

/// Taps of the receiver low-pass filter.
pub const LPF_TAPS: usize = 129;

/// Linear-phase FIR filter applied with its group delay removed.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub sample_rate: f64,
}

impl FirFilter {
    /// Blackman-windowed sinc low-pass with unit DC gain. `n_taps` must be odd.
    pub fn lowpass(cutoff_hz: f64, sample_rate: f64, n_taps: usize) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain("sample_rate", "must be finite and > 0"));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < 0.5 * sample_rate) {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, Nyquist = {} Hz)",
                0.5 * sample_rate
            )));
        }
        if n_taps.is_multiple_of(2) || n_taps < 3 {
            return Err(Error::Config(format!("FIR length must be odd and >= 3, got {n_taps}")));
        }
        let fc = cutoff_hz / sample_rate;
        let m = (n_taps - 1) as f64;
        let mut taps: Vec<f64> = (0..n_taps)
            .map(|k| {
                let x = k as f64;
                let window =
                    0.42 - 0.5 * (2.0 * PI * x / m).cos() + 0.08 * (4.0 * PI * x / m).cos();
                2.0 * fc * sinc(2.0 * fc * (x - 0.5 * m)) * window
            })
            .collect();
        let dc: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|h| *h /= dc);
        Ok(Self { taps, sample_rate })
    }

    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// `y[n] = Σ_k h[k]·x[n + D − k]` with `D` the group delay; samples
    /// outside the input count as zero.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.group_delay() as isize;
        let n = x.len() as isize;
        let mut y = vec![0.0; x.len()];
        y.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            for (o, out) in chunk.iter_mut().enumerate() {
                let centre = (c * 4096 + o) as isize + d;
                let k_lo = (centre - n + 1).max(0) as usize;
                let k_hi = (centre.min(self.taps.len() as isize - 1)) as usize;
                let mut acc = 0.0;
                if k_lo <= k_hi {
                    for k in k_lo..=k_hi {
                        acc += self.taps[k] * x[(centre - k as isize) as usize];
                    }
                }
                *out = acc;
            }
        });
        y
    }

    /// Complex gain `(re, im)` at frequency `f_hz`, delay included.
    pub fn response(&self, f_hz: f64) -> (f64, f64) {
        let w = 2.0 * PI * f_hz / self.sample_rate;
        self.taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, h)| {
            let ph = w * k as f64;
            (re + h * ph.cos(), im - h * ph.sin())
        })
    }

    pub fn magnitude_db(&self, f_hz: f64) -> f64 {
        let (re, im) = self.response(f_hz);
        20.0 * re.hypot(im).log10()
    }
}

/// Multiplies by `cos(2π·carrier·t + phase)` and low-passes at `cutoff_hz`
/// with the default 129-tap filter.
pub fn mix_and_filter(w: &Waveform, carrier_hz: f64, phase: f64, cutoff_hz: f64) -> Result<Waveform> {
    let filter = FirFilter::lowpass(cutoff_hz, w.sample_rate, LPF_TAPS)?;
    mix_and_filter_with(w, carrier_hz, phase, &filter)
}

/// As [`mix_and_filter`] with a prebuilt filter designed for `w`'s rate.
pub fn mix_and_filter_with(
    w: &Waveform,
    carrier_hz: f64,
    phase: f64,
    filter: &FirFilter,
) -> Result<Waveform> {
    if !(carrier_hz.is_finite() && carrier_hz >= 0.0 && carrier_hz < 0.5 * w.sample_rate) {
        return Err(Error::Config(format!(
            "carrier {carrier_hz} Hz must lie below Nyquist = {} Hz",
            0.5 * w.sample_rate
        )));
    }
    if filter.sample_rate != w.sample_rate {
        return Err(Error::Config("filter designed for a different sample rate".into()));
    }
    let mixed: Vec<f64> = w
        .samples
        .iter()
        .enumerate()
        .map(|(i, v)| v * (2.0 * PI * carrier_hz * w.time(i) + phase).cos())
        .collect();
    Ok(Waveform {
        sample_rate: w.sample_rate,
        t0: w.t0,
        samples: filter.apply(&mixed),
    })
}

/// Keeps every `sample_rate/target_rate`-th sample starting with the first.
pub fn downsample(w: &Waveform, target_rate: f64) -> Result<Waveform> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::domain("target_rate", "must be finite and > 0"));
    }
    let ratio = w.sample_rate / target_rate;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "rate ratio {} / {} = {ratio} is not a positive integer",
            w.sample_rate, target_rate
        )));
    }
    Ok(Waveform {
        sample_rate: target_rate,
        t0: w.t0,
        samples: w.samples.iter().step_by(factor as usize).copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 4e8;

    fn tone(f: f64, amp: f64, n: usize) -> Waveform {
        Waveform::from_fn(FS, 0.0, n, |t| amp * (2.0 * PI * f * t).cos()).unwrap()
    }

    #[test]
    fn filter_design() {
        let h = FirFilter::lowpass(2.5e7, FS, LPF_TAPS).unwrap();
        assert_eq!(h.taps.len(), 129);
        assert!((h.taps.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for k in 0..64 {
            assert!((h.taps[k] - h.taps[128 - k]).abs() < 1e-16);
        }
        assert!(h.magnitude_db(0.0).abs() < 1e-12);
        assert!(h.magnitude_db(1e7).abs() < 0.01);
        assert!(h.magnitude_db(6e7) < -70.0);
        assert!(FirFilter::lowpass(2e8, FS, 129).is_err());
        assert!(FirFilter::lowpass(2e7, FS, 128).is_err());
    }

    #[test]
    fn carrier_tone_mixes_to_half_amplitude() {
        let out = mix_and_filter(&tone(5e7, 3.0, 4000), 5e7, 0.0, 2.5e7).unwrap();
        for v in &out.samples[200..3800] {
            assert!((v - 1.5).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn stopband_tone_is_rejected() {
        let out = mix_and_filter(&tone(1.1e8, 1.0, 4000), 5e7, 0.0, 2.5e7).unwrap();
        let peak = out.samples[200..3800].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(20.0 * peak.log10() < -60.0);
    }

    #[test]
    fn zero_in_zero_out_and_linearity() {
        let z = Waveform::new(FS, 0.0, vec![0.0; 500]).unwrap();
        assert!(mix_and_filter(&z, 5e7, 0.3, 2.5e7).unwrap().samples.iter().all(|&v| v == 0.0));
        let a = tone(4.3e7, 1.0, 700);
        let b = Waveform::from_fn(FS, 0.0, 700, |t| (t * 1e7).sin()).unwrap();
        let sum = Waveform::new(
            FS,
            0.0,
            a.samples.iter().zip(&b.samples).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
        )
        .unwrap();
        let fa = mix_and_filter(&a, 5e7, 0.3, 2.5e7).unwrap();
        let fb = mix_and_filter(&b, 5e7, 0.3, 2.5e7).unwrap();
        let fs = mix_and_filter(&sum, 5e7, 0.3, 2.5e7).unwrap();
        for i in 0..700 {
            assert!((fs.samples[i] - (2.0 * fa.samples[i] - 0.5 * fb.samples[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_carrier_above_nyquist() {
        assert!(mix_and_filter(&tone(1e7, 1.0, 10), 2.5e8, 0.0, 2.5e7).is_err());
    }

    #[test]
    fn decimation() {
        let w = Waveform::new(FS, 1e-6, (0..80).map(f64::from).collect()).unwrap();
        let d = downsample(&w, 5e7).unwrap();
        assert_eq!(d.samples, (0..10).map(|i| f64::from(8 * i)).collect::<Vec<_>>());
        assert_eq!((d.t0, d.sample_rate), (1e-6, 5e7));
        assert_eq!(downsample(&w, FS).unwrap(), w);
        assert!(downsample(&w, 3e7).is_err());
        assert!(downsample(&w, 8e8).is_err());
    }

    #[test]
    fn decimated_tone_matches_samples() {
        let f = 7.3e6;
        let d = downsample(&tone(f, 1.0, 800), 5e7).unwrap();
        for (i, v) in d.samples.iter().enumerate() {
            assert!((v - (2.0 * PI * f * i as f64 / 5e7).cos()).abs() < 1e-9);
        }
    }
}
