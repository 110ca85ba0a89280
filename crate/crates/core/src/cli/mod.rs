//! Command-line front end: config resolution, the six commands, output
//! writing and run manifests.

mod config;
mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{Config, KNOWN_KEYS};
pub use manifest::{manifest_path, RunManifest};

use crate::dsp::sidecar_path;
use crate::error::{Error, Result};
use crate::estimate::{backout_detector_noise, estimate_channel, raw_key_bits, DetectorBackout, EstimationResult};
use crate::optimize::{
    calibrate_convention, optimal_modulation, sweep, CalibrationReport, CalibrationTarget,
    OptimizeOptions, SweepRow, SweepSpec, SweepVariable,
};
use crate::params::{ChannelParams, DetectorParams, LinkParams, ProtocolParams, SourceNoise};
use crate::security::{key_rate_with, ConditionalMethod, Convention, SecurityReport};
use crate::simulate::{
    read_records, symbol_level_run, waveform_level_run, write_records, Fidelity, RunConfig,
    SourceNoiseProfile, WaveformOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qpsk-cvqkd", version, about = "Four-state CV-QKD key rates, simulation and estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Config file (`key = value` lines) or a run manifest to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output file; stdout when absent. A manifest is written next to it.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Key rate at one operating point.
    Keyrate,
    /// Key rate maximised over the modulation variance.
    Optimize,
    /// Key rate along a grid of one parameter.
    Sweep,
    /// Monte Carlo records at symbol or waveform fidelity.
    Simulate,
    /// Channel and detector estimates from a record file.
    Estimate,
    /// Pick the information-counting convention against the reference optimum.
    Calibrate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Keyrate => "keyrate",
            Command::Optimize => "optimize",
            Command::Sweep => "sweep",
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Where the convention came from.
#[derive(Debug, Clone, Copy)]
enum ConventionSource {
    Config,
    CalibrationFile,
    AutoCalibrated,
}

impl ConventionSource {
    fn name(self) -> &'static str {
        match self {
            ConventionSource::Config => "config",
            ConventionSource::CalibrationFile => "calibration_file",
            ConventionSource::AutoCalibrated => "auto_calibrated",
        }
    }
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: Config,
    convention: Option<(Convention, ConventionSource)>,
    outputs: Vec<PathBuf>,
    format: Format,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        None => Config::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            match RunManifest::sniff(&text) {
                Some(m) => {
                    let m = m?;
                    if m.command != cli.command.name() {
                        return Err(Error::Config(format!(
                            "manifest records command `{}`, not `{}`",
                            m.command,
                            cli.command.name()
                        )));
                    }
                    Config::from_map(m.parameters)?
                }
                None => Config::parse(&text)?,
            }
        }
    };
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let started = manifest::unix_now();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let default_format = match cli.command {
        Command::Sweep | Command::Simulate => Format::Csv,
        _ => Format::Json,
    };
    let mut run = Run {
        cli,
        cfg: load_config(cli)?,
        convention: None,
        outputs: Vec::new(),
        format: cli.format.unwrap_or(default_format),
    };
    match cli.command {
        Command::Keyrate => run.keyrate()?,
        Command::Optimize => run.optimize()?,
        Command::Sweep => run.sweep()?,
        Command::Simulate => run.simulate()?,
        Command::Estimate => run.estimate()?,
        Command::Calibrate => run.calibrate()?,
    }
    if let Some(out) = &cli.output {
        let manifest = RunManifest {
            command: cli.command.name().into(),
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            parameters: run.cfg.values().clone(),
            seed: run.cfg.get("seed")?,
            convention: run.convention.map(|(c, _)| c.to_string()),
            convention_source: run.convention.map(|(_, s)| s.name().to_string()),
            format: run.format.name().into(),
            outputs: run.outputs.clone(),
            started_unix: started,
            finished_unix: manifest::unix_now(),
        };
        manifest.write(&manifest_path(out))?;
    }
    Ok(())
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(v)?;
    buf.push(b'\n');
    Ok(buf)
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

/// A two-column `field,value` table.
fn csv_fields(fields: &[(&str, String)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["field", "value"])?;
        for (k, v) in fields {
            w.write_record([*k, v.as_str()])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

impl Run<'_> {
    fn emit(&mut self, bytes: &[u8]) -> Result<()> {
        match &self.cli.output {
            Some(path) => {
                fs::write(path, bytes)?;
                self.outputs.push(path.clone());
            }
            None => io::stdout().write_all(bytes)?,
        }
        Ok(())
    }

    /// Extra output derived from the main output path, skipped on stdout.
    fn emit_side(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes)?;
        self.outputs.push(path);
        Ok(())
    }

    fn side_path(&self, suffix: &str) -> Option<PathBuf> {
        self.cli.output.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        })
    }

    fn method(&mut self) -> Result<ConditionalMethod> {
        let raw = self.cfg.get_or("conditional", ConditionalMethod::Oracle.to_string())?;
        raw.parse()
    }

    /// Explicit `convention`, else the one stored in a `calibration` file,
    /// else a fresh calibration.
    fn convention(&mut self, method: ConditionalMethod) -> Result<Convention> {
        let resolved = if let Some(c) = self.cfg.get::<String>("convention")? {
            (c.parse()?, ConventionSource::Config)
        } else if let Some(path) = self.cfg.get::<String>("calibration")? {
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read calibration {path}: {e}")))?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let c = v
                .get("convention")
                .and_then(|c| c.as_str())
                .ok_or_else(|| Error::Config(format!("{path} has no `convention` field")))?;
            (c.parse()?, ConventionSource::CalibrationFile)
        } else {
            let report = calibrate_convention(&CalibrationTarget::default(), method)?;
            self.cfg.set("convention", &report.convention.to_string())?;
            (report.convention, ConventionSource::AutoCalibrated)
        };
        self.convention = Some(resolved);
        Ok(resolved.0)
    }

    /// Link parameters; `v_a` may be absent for commands that choose it.
    fn link(&mut self, need_v_a: bool, need_beta: bool) -> Result<LinkParams> {
        let cfg = &mut self.cfg;
        let v_a = if need_v_a { cfg.require("v_a")? } else { 1.0 };
        let beta = if need_beta {
            cfg.require("beta")?
        } else {
            cfg.get("beta")?.unwrap_or(1.0)
        };
        let encoding_rate = cfg.get_or("encoding_rate", 1e7)?;
        let eps0 = cfg.get_or("eps0", 0.0)?;
        let channel = match (cfg.get::<f64>("t0")?, cfg.get::<f64>("loss_db")?) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either `t0` or `loss_db`, not both".into()))
            }
            (Some(t0), None) => ChannelParams { t0, eps0 },
            (None, Some(db)) => ChannelParams::from_loss_db(db, eps0)?,
            (None, None) => return Err(Error::Config("missing required field `t0` (or `loss_db`)".into())),
        };
        let link = LinkParams {
            protocol: ProtocolParams {
                v_a,
                beta,
                encoding_rate,
            },
            channel,
            source: SourceNoise {
                delta_eps: cfg.get_or("delta_eps", 0.0)?,
            },
            detector: DetectorParams {
                eta: cfg.require("eta")?,
                upsilon: cfg.require("upsilon")?,
            },
        };
        if need_v_a && v_a == 0.0 {
            // unmodulated simulation runs
            link.with_v_a(1.0).validate()?;
        } else {
            link.validate()?;
        }
        Ok(link)
    }

    fn optimize_options(&mut self) -> Result<OptimizeOptions> {
        let d = OptimizeOptions::default();
        Ok(OptimizeOptions {
            bounds: (self.cfg.get_or("v_a_min", d.bounds.0)?, self.cfg.get_or("v_a_max", d.bounds.1)?),
            tol: self.cfg.get_or("tol", d.tol)?,
        })
    }

    fn keyrate(&mut self) -> Result<()> {
        let link = self.link(true, true)?;
        let method = self.method()?;
        let convention = self.convention(method)?;
        let report = key_rate_with(&link, convention, method)?;
        let bytes = match (self.cli.format, self.cli.output.is_some()) {
            (None, false) => keyrate_table(&report).into_bytes(),
            _ if self.format == Format::Csv => csv_fields(&report_fields(&report))?,
            _ => to_json(&report)?,
        };
        self.emit(&bytes)
    }

    fn optimize(&mut self) -> Result<()> {
        let link = self.link(false, true)?;
        let method = self.method()?;
        let convention = self.convention(method)?;
        let opts = self.optimize_options()?;
        let optimum = optimal_modulation(&link, &opts, convention, method)?;
        let doc = OptimizeDoc {
            convention,
            conditional_method: method,
            optimum: optimum.clone(),
        };
        match self.format {
            Format::Json => self.emit(&to_json(&doc)?),
            Format::Csv => {
                let points: usize = self.cfg.get_or("curve_points", 64)?;
                if points == 0 {
                    return Err(Error::Config("curve_points must be > 0".into()));
                }
                let (lo, hi) = opts.bounds;
                let grid = if points == 1 {
                    vec![optimum.v_a_star]
                } else {
                    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
                };
                let rows = sweep(&SweepSpec {
                    variable: SweepVariable::VA,
                    grid,
                    fixed: link,
                    convention,
                    method,
                    optimize_v_a: None,
                })?;
                self.emit(&sweep_csv(&rows)?)?;
                if let Some(p) = self.side_path(".optimum.json") {
                    self.emit_side(p, &to_json(&doc)?)?;
                }
                Ok(())
            }
        }
    }

    fn sweep_grid(&mut self) -> Result<Vec<f64>> {
        if let Some(values) = self.cfg.get_list("sweep_values")? {
            if values.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
            return Ok(values);
        }
        let start: f64 = self.cfg.require("sweep_start")?;
        let stop: f64 = self.cfg.require("sweep_stop")?;
        let points: usize = self.cfg.require("sweep_points")?;
        match points {
            0 => Err(Error::Config("sweep grid is empty".into())),
            1 => Ok(vec![start]),
            n => Ok((0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect()),
        }
    }

    fn sweep(&mut self) -> Result<()> {
        let variable: SweepVariable = self.cfg.require::<String>("sweep_variable")?.parse()?;
        let optimize_v_a = self.cfg.get_or("sweep_optimize_v_a", false)?;
        let needs_v_a = variable != SweepVariable::VA && !optimize_v_a;
        if variable == SweepVariable::VA && !self.cfg.contains("v_a") {
            self.cfg.set("v_a", "1")?;
        }
        let (needs_t0, needs_ups, needs_beta) = (
            variable != SweepVariable::LossDb,
            variable != SweepVariable::Upsilon,
            variable != SweepVariable::Beta,
        );
        // placeholders for the swept quantity; the grid overrides them
        if !needs_t0 && !self.cfg.contains("t0") && !self.cfg.contains("loss_db") {
            self.cfg.set("loss_db", "0")?;
        }
        if !needs_ups && !self.cfg.contains("upsilon") {
            self.cfg.set("upsilon", "0")?;
        }
        if !needs_beta && !self.cfg.contains("beta") {
            self.cfg.set("beta", "1")?;
        }
        let link = self.link(needs_v_a || variable == SweepVariable::VA, true)?;
        let method = self.method()?;
        let convention = self.convention(method)?;
        let opt = if optimize_v_a { Some(self.optimize_options()?) } else { None };
        let spec = SweepSpec {
            variable,
            grid: self.sweep_grid()?,
            fixed: link,
            convention,
            method,
            optimize_v_a: opt,
        };
        let rows = sweep(&spec)?;
        let bytes = match self.format {
            Format::Csv => sweep_csv(&rows)?,
            Format::Json => to_json(&rows)?,
        };
        self.emit(&bytes)
    }

    fn run_config(&mut self) -> Result<RunConfig> {
        let link = self.link(true, false)?;
        let n_symbols = self.cfg.require("n_symbols")?;
        let seed = self.cfg.get_or("seed", 0u64)?;
        let mut rc = RunConfig::new(n_symbols, seed, link);
        rc.fidelity = self.cfg.get_or("fidelity", Fidelity::Symbol.to_string())?.parse()?;
        if rc.fidelity == Fidelity::Waveform {
            let wd = WaveformOptions::default();
            let sd = SourceNoiseProfile::default();
            rc.carrier_hz = self.cfg.get_or("carrier_hz", rc.carrier_hz)?;
            rc.adc_rate = self.cfg.get_or("adc_rate", rc.adc_rate)?;
            rc.internal_rate = self.cfg.get_or("internal_rate", rc.internal_rate)?;
            rc.cutoff_hz = self.cfg.get_or("cutoff_hz", rc.cutoff_hz)?;
            rc.waveform = WaveformOptions {
                x0: self.cfg.get_or("x0", wd.x0)?,
                source_noise: SourceNoiseProfile {
                    amp_rms: self.cfg.get_or("source_amp_rms", sd.amp_rms)?,
                    phase_rms: self.cfg.get_or("source_phase_rms", sd.phase_rms)?,
                    bandwidth_hz: self.cfg.get_or("source_bandwidth_hz", sd.bandwidth_hz)?,
                },
                shot_noise_amplitude: self.cfg.get_or("shot_noise_amplitude", wd.shot_noise_amplitude)?,
                guard_symbols: self.cfg.get_or("guard_symbols", wd.guard_symbols)?,
            };
        }
        rc.validate()?;
        Ok(rc)
    }

    fn simulate(&mut self) -> Result<()> {
        let rc = self.run_config()?;
        let (records, diag) = match rc.fidelity {
            Fidelity::Symbol => (symbol_level_run(&rc)?, None),
            Fidelity::Waveform => {
                let (r, d) = waveform_level_run(&rc)?;
                (r, Some(d))
            }
        };
        let bytes = match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_records(&mut buf, &records)?;
                buf
            }
            Format::Json => to_json(&records)?,
        };
        self.emit(&bytes)?;
        if let (Some(d), Some(_)) = (diag, &self.cli.output) {
            for (suffix, w) in [(".x.f64", &d.adc_x), (".p.f64", &d.adc_p)] {
                let path = self.side_path(suffix).expect("output set");
                w.write_binary(&path)?;
                self.outputs.push(sidecar_path(&path));
                self.outputs.push(path);
            }
            let path = self.side_path(".diagnostics.json").expect("output set");
            self.emit_side(path, &to_json(&d)?)?;
        }
        Ok(())
    }

    fn estimate(&mut self) -> Result<()> {
        let input: String = self.cfg.require("input")?;
        let file = fs::File::open(&input)
            .map_err(|e| Error::Config(format!("cannot open input {input}: {e}")))?;
        let records = read_records(io::BufReader::new(file))
            .map_err(|e| Error::Config(format!("cannot parse records in {input}: {e}")))?;
        let v_a: f64 = self.cfg.require("v_a")?;
        let eta: f64 = self.cfg.require("eta")?;
        let est = estimate_channel(&records, v_a, eta)?;
        let t: f64 = match self.cfg.get("t0")? {
            Some(t) => t,
            None => est.t_hat.min(1.0),
        };
        let eps: f64 = self.cfg.get_or("eps0", 0.0)?;
        let backout = backout_detector_noise(est.chi_t_hat, t, eps, eta)?;
        let key = raw_key_bits(&records);
        let doc = EstimateDoc {
            input,
            estimation: est,
            backout_t: t,
            backout_eps: eps,
            backout,
            raw_key_mismatch: key.mismatch_rate,
        };
        let bytes = match self.format {
            Format::Json => to_json(&doc)?,
            Format::Csv => csv_fields(&[
                ("n_used", doc.estimation.n_used.to_string()),
                ("gain_sq", doc.estimation.gain_sq.to_string()),
                ("chi_t_hat", doc.estimation.chi_t_hat.to_string()),
                ("t_hat", doc.estimation.t_hat.to_string()),
                ("snr_hat", doc.estimation.snr_hat.to_string()),
                ("i_ab_hat", doc.estimation.i_ab_hat.to_string()),
                ("upsilon", doc.backout.upsilon.to_string()),
                ("raw_key_mismatch", doc.raw_key_mismatch.to_string()),
            ])?,
        };
        self.emit(&bytes)
    }

    fn calibrate(&mut self) -> Result<()> {
        let method = self.method()?;
        let mut target = CalibrationTarget::default();
        target.target_key_rate = self.cfg.get_or("target_key_rate", target.target_key_rate)?;
        let report = calibrate_convention(&target, method)?;
        self.convention = Some((report.convention, ConventionSource::AutoCalibrated));
        let bytes = match self.format {
            Format::Json => to_json(&CalibrationDoc::from(&report))?,
            Format::Csv => {
                let mut buf = Vec::new();
                {
                    let mut w = csv_writer(&mut buf);
                    w.write_record(["convention", "v_a_star", "key_rate_star", "relative_error", "selected"])?;
                    for c in &report.candidates {
                        w.write_record([
                            c.convention.to_string(),
                            c.optimum.v_a_star.to_string(),
                            c.optimum.key_rate_star.to_string(),
                            c.relative_error.to_string(),
                            (c.convention == report.convention).to_string(),
                        ])?;
                    }
                    w.flush()?;
                }
                buf
            }
        };
        self.emit(&bytes)
    }
}

#[derive(Serialize)]
struct OptimizeDoc {
    convention: Convention,
    conditional_method: ConditionalMethod,
    optimum: crate::optimize::Optimum,
}

#[derive(Serialize)]
struct EstimateDoc {
    input: String,
    estimation: EstimationResult,
    backout_t: f64,
    backout_eps: f64,
    backout: DetectorBackout,
    raw_key_mismatch: f64,
}

/// Calibration output; its `convention` field is what later runs read.
#[derive(Serialize)]
struct CalibrationDoc<'a> {
    convention: Convention,
    report: &'a CalibrationReport,
}

impl<'a> From<&'a CalibrationReport> for CalibrationDoc<'a> {
    fn from(report: &'a CalibrationReport) -> Self {
        Self {
            convention: report.convention,
            report,
        }
    }
}

fn report_fields(r: &SecurityReport) -> Vec<(&'static str, String)> {
    vec![
        ("v_a", r.v_a.to_string()),
        ("beta", r.beta.to_string()),
        ("t_equivalent", r.equivalent.t.to_string()),
        ("eps_equivalent", r.equivalent.eps.to_string()),
        ("chi_t", r.budget.chi_t.to_string()),
        ("i_ab", r.i_ab.to_string()),
        ("lambda1", r.lambda[0].to_string()),
        ("lambda2", r.lambda[1].to_string()),
        ("lambda3", r.lambda[2].to_string()),
        ("lambda4", r.lambda[3].to_string()),
        ("holevo", r.holevo.to_string()),
        ("key_rate_per_symbol", r.key_rate_per_symbol.to_string()),
        ("key_rate_per_second", r.key_rate_per_second.to_string()),
        ("convention", r.convention.to_string()),
        ("conditional_method", r.conditional_method.to_string()),
        ("secure", r.secure.to_string()),
    ]
}

fn keyrate_table(r: &SecurityReport) -> String {
    let mut s = String::new();
    for (k, v) in report_fields(r) {
        let _ = writeln!(s, "{k:<22} {v}");
    }
    s
}

fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record([
            "swept_value",
            "key_rate_per_symbol",
            "key_rate_per_second",
            "i_ab",
            "holevo",
            "valid_flag",
            "v_a",
        ])?;
        for r in rows {
            w.write_record([
                r.value.to_string(),
                r.key_rate_per_symbol.to_string(),
                r.key_rate_per_second.to_string(),
                r.i_ab.to_string(),
                r.holevo.to_string(),
                u8::from(r.valid).to_string(),
                r.v_a.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Reads a manifest written next to `output`.
pub fn read_manifest(output: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(manifest_path(output))?;
    Ok(serde_json::from_str(&text)?)
}
