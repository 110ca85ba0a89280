//! Physical parameter sets. All noise figures are in shot-noise units
//! (vacuum quadrature variance = 1); rates are in Hz.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn finite(field: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(field, format!("{v} is not finite")))
    }
}

/// Modulation variance, reconciliation efficiency and symbol rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Modulation variance `V_A = 2·alpha²`.
    pub v_a: f64,
    /// Reconciliation efficiency in (0, 1].
    pub beta: f64,
    /// Symbols per second.
    pub encoding_rate: f64,
}

impl ProtocolParams {
    pub fn new(v_a: f64, beta: f64, encoding_rate: f64) -> Result<Self> {
        let p = Self {
            v_a,
            beta,
            encoding_rate,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if finite("v_a", self.v_a)? <= 0.0 {
            return Err(Error::domain("v_a", "modulation variance must be > 0"));
        }
        let beta = finite("beta", self.beta)?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::domain("beta", "reconciliation efficiency must lie in (0, 1]"));
        }
        if finite("encoding_rate", self.encoding_rate)? <= 0.0 {
            return Err(Error::domain("encoding_rate", "must be > 0"));
        }
        Ok(())
    }
}

/// Physical channel: transmittance and excess noise referred to the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub t0: f64,
    pub eps0: f64,
}

impl ChannelParams {
    pub fn new(t0: f64, eps0: f64) -> Result<Self> {
        let c = Self { t0, eps0 };
        c.validate()?;
        Ok(c)
    }

    /// Channel from a loss figure in dB: `T0 = 10^(-dB/10)`.
    pub fn from_loss_db(loss_db: f64, eps0: f64) -> Result<Self> {
        if finite("loss_db", loss_db)? < 0.0 {
            return Err(Error::domain("loss_db", "loss must be >= 0 dB"));
        }
        Self::new(10f64.powf(-loss_db / 10.0), eps0)
    }

    pub fn validate(&self) -> Result<()> {
        let t0 = finite("t0", self.t0)?;
        if !(t0 > 0.0 && t0 <= 1.0) {
            return Err(Error::domain("t0", "transmittance must lie in (0, 1]"));
        }
        if finite("eps0", self.eps0)? < 0.0 {
            return Err(Error::domain("eps0", "excess noise must be >= 0"));
        }
        Ok(())
    }
}

/// Source excess noise, equal on both quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceNoise {
    pub delta_eps: f64,
}

impl SourceNoise {
    pub fn new(delta_eps: f64) -> Result<Self> {
        let s = Self { delta_eps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if finite("delta_eps", self.delta_eps)? < 0.0 {
            return Err(Error::domain("delta_eps", "source noise must be >= 0"));
        }
        Ok(())
    }
}

/// Heterodyne detector: quantum efficiency and electronic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub eta: f64,
    pub upsilon: f64,
}

impl DetectorParams {
    pub fn new(eta: f64, upsilon: f64) -> Result<Self> {
        let d = Self { eta, upsilon };
        d.validate()?;
        Ok(d)
    }

    pub fn ideal() -> Self {
        Self {
            eta: 1.0,
            upsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta = finite("eta", self.eta)?;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain("eta", "efficiency must lie in (0, 1]"));
        }
        if finite("upsilon", self.upsilon)? < 0.0 {
            return Err(Error::domain("upsilon", "electronic noise must be >= 0"));
        }
        Ok(())
    }
}

/// Everything needed to evaluate one point of the key-rate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub protocol: ProtocolParams,
    pub channel: ChannelParams,
    pub source: SourceNoise,
    pub detector: DetectorParams,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        self.channel.validate()?;
        self.source.validate()?;
        self.detector.validate()
    }

    /// The 90 %-loss operating point used throughout the guide:
    /// `T0 = 0.1`, noiseless channel, `eta = 0.8`, `beta = 0.8`, 10 MHz.
    pub fn reference(v_a: f64, upsilon: f64) -> Self {
        Self {
            protocol: ProtocolParams {
                v_a,
                beta: 0.8,
                encoding_rate: 1e7,
            },
            channel: ChannelParams { t0: 0.1, eps0: 0.0 },
            source: SourceNoise::default(),
            detector: DetectorParams { eta: 0.8, upsilon },
        }
    }

    pub fn with_v_a(mut self, v_a: f64) -> Self {
        self.protocol.v_a = v_a;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_db_conversion() {
        let c = ChannelParams::from_loss_db(10.0, 0.0).unwrap();
        assert!((c.t0 - 0.1).abs() < 1e-15);
        assert_eq!(ChannelParams::from_loss_db(0.0, 0.0).unwrap().t0, 1.0);
        assert!(ChannelParams::from_loss_db(-1.0, 0.0).is_err());
    }

    #[test]
    fn domain_errors_name_the_field() {
        let e = DetectorParams::new(1.2, 0.0).unwrap_err();
        assert!(e.to_string().contains("eta"));
        let e = ProtocolParams::new(0.3, 0.0, 1e7).unwrap_err();
        assert!(e.to_string().contains("beta"));
        assert!(ChannelParams::new(f64::NAN, 0.0).is_err());
        assert!(SourceNoise::new(-0.1).is_err());
    }
}
