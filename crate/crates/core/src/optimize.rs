//! Maximizing the key rate over the modulation variance, parameter sweeps,
//! and calibration of the information-counting convention.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ChannelParams, LinkParams};
use crate::security::{key_rate_with, ConditionalMethod, Convention, SecurityReport};

const COARSE_POINTS: usize = 64;
const FINE_POINTS: usize = 4096;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Search interval and stopping width for the modulation variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub bounds: (f64, f64),
    pub tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        // discrete modulation only pays off at small variance
        Self {
            bounds: (1e-3, 2.0),
            tol: 1e-4,
        }
    }
}

impl OptimizeOptions {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::domain("bounds", format!("need 0 < lo < hi, got ({lo}, {hi})")));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::domain("tol", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub v_a_star: f64,
    pub key_rate_star: f64,
    /// Golden-section iterations.
    pub iterations: usize,
    /// Key-rate evaluations in total, scan included.
    pub evaluations: usize,
    pub bracket: (f64, f64),
    /// Whether the coarse scan looked unimodal (otherwise a fine scan ran).
    pub unimodal: bool,
    /// False when no positive key rate exists in the bounds; the optimum is
    /// then the least negative point.
    pub positive: bool,
}

/// Maximizes the key rate over `v_a` for fixed channel, detector and `beta`
/// (`link.protocol.v_a` is ignored).
///
/// A 64-point scan brackets the maximum; if the scan's discrete slope
/// changes sign more than once, a 4096-point scan is used instead. The
/// bracket is then refined by golden-section search to width `tol`.
pub fn optimal_modulation(
    link: &LinkParams,
    opts: &OptimizeOptions,
    convention: Convention,
    method: ConditionalMethod,
) -> Result<Optimum> {
    opts.validate()?;
    link.with_v_a(opts.bounds.0).validate()?;
    let mut evaluations = 0usize;
    let mut eval = |v: f64| {
        evaluations += 1;
        key_rate_with(&link.with_v_a(v), convention, method)
            .map(|r| r.key_rate_per_symbol)
            .unwrap_or(f64::NEG_INFINITY)
    };

    let (lo, hi) = opts.bounds;
    let scan = |n: usize, eval: &mut dyn FnMut(f64) -> f64| {
        let xs = linspace(lo, hi, n);
        let ys: Vec<f64> = xs.iter().map(|&x| eval(x)).collect();
        (xs, ys)
    };
    let (mut xs, mut ys) = scan(COARSE_POINTS, &mut eval);
    let unimodal = is_unimodal(&ys);
    if !unimodal {
        (xs, ys) = scan(FINE_POINTS, &mut eval);
    }
    let j = argmax(&ys);
    let (mut a, mut b) = (xs[j.saturating_sub(1)], xs[(j + 1).min(xs.len() - 1)]);
    let (mut best_x, mut best_y) = (xs[j], ys[j]);

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    let mut iterations = 0;
    while b - a > opts.tol {
        iterations += 1;
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
    }
    let ends = [(a, eval(a)), (b, eval(b)), (c, fc), (d, fd)];
    if !(xs[j] >= a && xs[j] <= b) {
        (best_x, best_y) = (c, fc);
    }
    for (x, y) in ends {
        if y > best_y {
            (best_x, best_y) = (x, y);
        }
    }
    if !best_y.is_finite() {
        return Err(Error::NumericalDomain(
            "key rate could not be evaluated anywhere in the bounds".into(),
        ));
    }
    Ok(Optimum {
        v_a_star: best_x,
        key_rate_star: best_y,
        iterations,
        evaluations,
        bracket: (a, b),
        unimodal,
        positive: best_y > 0.0,
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn argmax(ys: &[f64]) -> usize {
    ys.iter()
        .enumerate()
        .fold(0, |best, (i, &y)| if y > ys[best] { i } else { best })
}

/// Rises then falls (either part may be empty).
fn is_unimodal(ys: &[f64]) -> bool {
    if ys.iter().any(|y| !y.is_finite()) {
        return false;
    }
    let mut falling = false;
    for w in ys.windows(2) {
        let slope = w[1] - w[0];
        if slope < 0.0 {
            falling = true;
        } else if slope > 0.0 && falling {
            return false;
        }
    }
    true
}

/// Quantity varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    VA,
    LossDb,
    Upsilon,
    Beta,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::VA => "v_a",
            SweepVariable::LossDb => "loss_db",
            SweepVariable::Upsilon => "upsilon",
            SweepVariable::Beta => "beta",
        })
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "v_a" => Ok(SweepVariable::VA),
            "loss_db" => Ok(SweepVariable::LossDb),
            "upsilon" => Ok(SweepVariable::Upsilon),
            "beta" => Ok(SweepVariable::Beta),
            other => Err(Error::Config(format!(
                "unknown sweep variable `{other}` (expected v_a|loss_db|upsilon|beta)"
            ))),
        }
    }
}

impl SweepVariable {
    /// `fixed` with this variable set to `value`.
    pub fn apply(self, fixed: &LinkParams, value: f64) -> Result<LinkParams> {
        let mut link = *fixed;
        match self {
            SweepVariable::VA => link.protocol.v_a = value,
            SweepVariable::LossDb => {
                link.channel = ChannelParams::from_loss_db(value, fixed.channel.eps0)?
            }
            SweepVariable::Upsilon => link.detector.upsilon = value,
            SweepVariable::Beta => link.protocol.beta = value,
        }
        Ok(link)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub fixed: LinkParams,
    pub convention: Convention,
    pub method: ConditionalMethod,
    /// When set, each row reports the optimum over `v_a` instead of the
    /// rate at `fixed.protocol.v_a`. Not allowed for `v_a` sweeps.
    pub optimize_v_a: Option<OptimizeOptions>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("grid", "values must be strictly increasing"));
        }
        for &v in &self.grid {
            let mut link = self.variable.apply(&self.fixed, v)?;
            if self.optimize_v_a.is_some() {
                if self.variable == SweepVariable::VA {
                    return Err(Error::Config("cannot optimize v_a while sweeping it".into()));
                }
                link.protocol.v_a = 1.0;
            }
            link.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub v_a: f64,
    pub key_rate_per_symbol: f64,
    pub key_rate_per_second: f64,
    pub i_ab: f64,
    pub holevo: f64,
    pub valid: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_report(value: f64, r: &SecurityReport) -> Self {
        Self {
            value,
            v_a: r.v_a,
            key_rate_per_symbol: r.key_rate_per_symbol,
            key_rate_per_second: r.key_rate_per_second,
            i_ab: r.i_ab,
            holevo: r.holevo,
            valid: true,
            error: None,
        }
    }

    fn failed(value: f64, v_a: f64, e: &Error) -> Self {
        Self {
            value,
            v_a,
            key_rate_per_symbol: f64::NAN,
            key_rate_per_second: f64::NAN,
            i_ab: f64::NAN,
            holevo: f64::NAN,
            valid: false,
            error: Some(e.to_string()),
        }
    }
}

fn sweep_point(spec: &SweepSpec, value: f64) -> SweepRow {
    let link = match spec.variable.apply(&spec.fixed, value) {
        Ok(l) => l,
        Err(e) => return SweepRow::failed(value, spec.fixed.protocol.v_a, &e),
    };
    let v_a = match &spec.optimize_v_a {
        Some(opts) => match optimal_modulation(&link, opts, spec.convention, spec.method) {
            Ok(o) => o.v_a_star,
            Err(e) => return SweepRow::failed(value, f64::NAN, &e),
        },
        None => link.protocol.v_a,
    };
    match key_rate_with(&link.with_v_a(v_a), spec.convention, spec.method) {
        Ok(r) => SweepRow::from_report(value, &r),
        Err(e) => SweepRow::failed(value, v_a, &e),
    }
}

/// One row per grid point, in grid order. Rows are evaluated in parallel on
/// the current rayon pool; each row depends only on its own grid value.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    Ok(spec
        .grid
        .par_iter()
        .map(|&v| sweep_point(spec, v))
        .collect())
}

/// Reference point and target for choosing the counting convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub link: LinkParams,
    /// Optimal key rate per symbol the convention should reproduce.
    pub target_key_rate: f64,
    pub options: OptimizeOptions,
}

impl Default for CalibrationTarget {
    /// The zero-electronic-noise optimum at the 90 %-loss reference point.
    fn default() -> Self {
        Self {
            link: LinkParams::reference(0.29, 0.0),
            target_key_rate: 5.02e-3,
            options: OptimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionCandidate {
    pub convention: Convention,
    pub optimum: Optimum,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub convention: Convention,
    pub target: CalibrationTarget,
    pub method: ConditionalMethod,
    pub candidates: Vec<ConventionCandidate>,
}

/// Optimizes the reference point under each convention and keeps the one
/// whose optimum is closest (relatively) to the target.
pub fn calibrate_convention(
    target: &CalibrationTarget,
    method: ConditionalMethod,
) -> Result<CalibrationReport> {
    if !(target.target_key_rate.is_finite() && target.target_key_rate > 0.0) {
        return Err(Error::domain("target_key_rate", "must be > 0"));
    }
    let candidates = Convention::ALL
        .iter()
        .map(|&convention| {
            let optimum = optimal_modulation(&target.link, &target.options, convention, method)?;
            let relative_error =
                (optimum.key_rate_star - target.target_key_rate).abs() / target.target_key_rate;
            Ok(ConventionCandidate {
                convention,
                optimum,
                relative_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = candidates
        .iter()
        .min_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
        .map(|c| c.convention)
        .unwrap_or(Convention::Single);
    Ok(CalibrationReport {
        convention: best,
        target: target.clone(),
        method,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(upsilon: f64) -> Optimum {
        optimal_modulation(
            &LinkParams::reference(1.0, upsilon),
            &OptimizeOptions::default(),
            Convention::Single,
            ConditionalMethod::Oracle,
        )
        .unwrap()
    }

    #[test]
    fn optimum_at_reference_point() {
        let o = reference(0.12);
        assert!((o.v_a_star - 0.29).abs() < 0.05, "{o:?}");
        assert!((o.key_rate_star - 4.68e-3).abs() < 0.1 * 4.68e-3);
        assert!(o.bracket.1 - o.bracket.0 <= 1e-4);
        assert!(o.v_a_star >= o.bracket.0 && o.v_a_star <= o.bracket.1);
        assert!(o.unimodal && o.positive);
    }

    #[test]
    fn optima_order_with_electronic_noise() {
        let k: Vec<f64> = [0.0, 0.12, 1.2].iter().map(|&u| reference(u).key_rate_star).collect();
        assert!(k[0] > k[1] && k[1] > k[2]);
        assert!((k[2] - 2.43e-3).abs() < 0.1 * 2.43e-3);
    }

    #[test]
    fn unimodality_detection() {
        assert!(is_unimodal(&[1.0, 2.0, 3.0, 2.0, 1.0]));
        assert!(is_unimodal(&[3.0, 2.0, 1.0]));
        assert!(is_unimodal(&[1.0, 2.0, 2.0, 3.0]));
        assert!(!is_unimodal(&[1.0, 3.0, 2.0, 4.0, 1.0]));
        assert!(!is_unimodal(&[1.0, f64::NEG_INFINITY, 1.0]));
    }

    #[test]
    fn no_positive_rate_is_flagged() {
        let mut link = LinkParams::reference(1.0, 0.12);
        link.channel.eps0 = 0.5;
        let o = optimal_modulation(
            &link,
            &OptimizeOptions::default(),
            Convention::Single,
            ConditionalMethod::ClosedForm,
        )
        .unwrap();
        assert!(!o.positive && o.key_rate_star <= 0.0);
    }

    #[test]
    fn bad_bounds_rejected() {
        let opts = OptimizeOptions {
            bounds: (2.0, 1.0),
            tol: 1e-4,
        };
        let r = optimal_modulation(
            &LinkParams::reference(1.0, 0.12),
            &opts,
            Convention::Single,
            ConditionalMethod::Oracle,
        );
        assert!(r.is_err());
    }

    fn spec(variable: SweepVariable, grid: Vec<f64>) -> SweepSpec {
        SweepSpec {
            variable,
            grid,
            fixed: LinkParams::reference(0.29, 0.12),
            convention: Convention::Single,
            method: ConditionalMethod::Oracle,
            optimize_v_a: None,
        }
    }

    #[test]
    fn loss_sweep_at_zero_db_is_lossless_reference() {
        let rows = sweep(&spec(SweepVariable::LossDb, vec![0.0, 10.0])).unwrap();
        let mut lossless = LinkParams::reference(0.29, 0.12);
        lossless.channel.t0 = 1.0;
        let r = key_rate_with(&lossless, Convention::Single, ConditionalMethod::Oracle).unwrap();
        assert_eq!(rows[0].key_rate_per_symbol, r.key_rate_per_symbol);
        assert!(rows[1].valid);
    }

    #[test]
    fn sweep_validation() {
        assert!(sweep(&spec(SweepVariable::VA, vec![])).is_err());
        assert!(sweep(&spec(SweepVariable::VA, vec![0.2, 0.1])).is_err());
        assert!(sweep(&spec(SweepVariable::Beta, vec![0.5, 1.5])).is_err());
        assert_eq!(sweep(&spec(SweepVariable::Upsilon, vec![0.1])).unwrap().len(), 1);
        let mut s = spec(SweepVariable::VA, vec![0.1]);
        s.optimize_v_a = Some(OptimizeOptions::default());
        assert!(sweep(&s).is_err());
    }

    #[test]
    fn calibration_prefers_single_counting() {
        let r = calibrate_convention(&CalibrationTarget::default(), ConditionalMethod::Oracle).unwrap();
        assert_eq!(r.convention, Convention::Single);
        assert_eq!(r.candidates.len(), 2);
    }
}
