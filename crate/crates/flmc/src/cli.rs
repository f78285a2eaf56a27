//! Command-line front end: config parsing, CSV emission, and dispatch.
//!
//! Config files are TOML. Every key is optional; an empty file resolves to
//! the desk-scale defaults in [`crate::harness::defaults`]. Unknown keys are
//! rejected. The resolved config round-trips through serialization, and a
//! one-line JSON manifest is echoed to stderr before every experiment for
//! provenance.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    defaults, resolve_gain, run_replications, run_sweep, ChannelParams, ExperimentConfig,
    PrivacyParams, Scheme, SweepAxis, SweepResult, SweepRow, SweepSpec,
};
use crate::model::{even_partition, ModelSpec};
use crate::power::PowerSolverConfig;
use crate::privacy::{estimate_delta_digital, TMode};
use crate::quantizer::{PhiFamily, QuantizerSpec};
use crate::rng::{substream, Stream};

// ---------------------------------------------------------------------------
// config files
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    scheme: Option<Scheme>,
    seed: Option<u64>,
    replications: Option<usize>,
    eta: Option<f64>,
    s_total: Option<usize>,
    s_burnin: Option<usize>,
    mode: Option<TMode>,
    freeze_dataset: Option<bool>,
    model: ModelSection,
    channel: ChannelSection,
    quantizer: QuantizerSection,
    privacy: PrivacySection,
    solver: SolverSection,
    sweep: Option<SweepSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    m: Option<usize>,
    theta_star: Option<Vec<f64>>,
    n_total: Option<usize>,
    k_devices: Option<usize>,
    partition_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChannelSection {
    h: Option<f64>,
    n0: Option<f64>,
    snr_db: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct QuantizerSection {
    a: Option<f64>,
    family: Option<PhiFamily>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PrivacySection {
    epsilon: Option<f64>,
    delta: Option<f64>,
    ell: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    n_mc: Option<usize>,
    bisection_tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    axis: SweepAxis,
    grid: Vec<f64>,
}

fn resolve(file: &ConfigFile, scheme: Scheme) -> Result<ExperimentConfig> {
    let m = file.model.m.unwrap_or(defaults::M);
    let theta_star = match &file.model.theta_star {
        Some(t) => t.clone(),
        None if m == defaults::M => defaults::THETA_STAR.to_vec(),
        None => {
            return Err(Error::Config(format!(
                "theta_star must be given explicitly when m = {m} (the default vector has length {})",
                defaults::M
            )))
        }
    };
    let n_total = file.model.n_total.unwrap_or(defaults::N_TOTAL);
    let k_devices = file.model.k_devices.unwrap_or(defaults::K_DEVICES);
    let partition_sizes = file
        .model
        .partition_sizes
        .clone()
        .unwrap_or_else(|| even_partition(n_total, k_devices));
    let quantizer = QuantizerSpec {
        a: file.quantizer.a.unwrap_or(defaults::A),
        family: file.quantizer.family.unwrap_or(PhiFamily::Sigmoid),
    };
    let solver_defaults = PowerSolverConfig::default();
    let cfg = ExperimentConfig {
        scheme,
        seed: file.seed.unwrap_or(defaults::SEED),
        replications: file.replications.unwrap_or(defaults::REPLICATIONS),
        eta: file.eta.unwrap_or_else(|| defaults::eta_for(scheme)),
        s_total: file.s_total.unwrap_or(defaults::S_TOTAL),
        s_burnin: file.s_burnin.unwrap_or(defaults::S_BURNIN),
        mode: file.mode.unwrap_or(TMode::Paper),
        freeze_dataset: file.freeze_dataset.unwrap_or(false),
        model: ModelSpec {
            m,
            theta_star,
            n_total,
            k_devices,
            partition_sizes,
        },
        channel: ChannelParams {
            h: file.channel.h.unwrap_or(defaults::H),
            n0: file.channel.n0.unwrap_or(defaults::N0),
            snr_db: file.channel.snr_db.unwrap_or(defaults::SNR_DB),
        },
        quantizer,
        privacy: PrivacyParams {
            epsilon: file.privacy.epsilon.unwrap_or(defaults::EPSILON),
            delta: file.privacy.delta.unwrap_or(defaults::DELTA),
            ell: file.privacy.ell.unwrap_or(defaults::ELL),
        },
        solver: PowerSolverConfig {
            n_mc: file.solver.n_mc.unwrap_or(solver_defaults.n_mc),
            bisection_tol: file
                .solver
                .bisection_tol
                .unwrap_or(solver_defaults.bisection_tol),
            max_iters: file.solver.max_iters.unwrap_or(solver_defaults.max_iters),
        },
        sweep: file.sweep.as_ref().map(|s| SweepSpec {
            axis: s.axis,
            grid: s.grid.clone(),
        }),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_config_str(text: &str, scheme_override: Option<Scheme>) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let scheme = scheme_override
        .or(file.scheme)
        .unwrap_or(Scheme::Digital);
    resolve(&file, scheme)
}

/// Parses a config file into a fully resolved experiment. Defaults are
/// filled, unknown keys rejected, and invariants checked with the offending
/// key named in the error.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, None)
}

/// Serializes a resolved config; `parse` of the output reproduces the input.
pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Parse(e.to_string()))
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:e}")
    }
}

/// Writes the CSV representation: fixed header, one line per row, floats in
/// full-precision scientific notation, `\n` line endings.
pub fn write_csv<W: Write>(result: &SweepResult, w: &mut W) -> io::Result<()> {
    writeln!(
        w,
        "sweep_axis,sweep_value,scheme,mean_mse,stderr_mse,gain_used,replications,seed"
    )?;
    for row in &result.rows {
        let axis = match row.sweep_axis {
            Some(a) => a.to_string(),
            None => "none".to_string(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            axis,
            fmt_float(row.sweep_value),
            row.scheme,
            fmt_float(row.mean_mse),
            fmt_float(row.stderr_mse),
            fmt_float(row.gain_used),
            row.replications,
            row.seed
        )?;
    }
    Ok(())
}

/// Writes the CSV to a file, creating parent directories if needed.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Contract("refusing to emit an empty result".into()));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut buf = Vec::new();
    write_csv(result, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// Provenance record echoed to stderr as one JSON line per experiment.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub config_path: Option<&'a Path>,
    pub output_path: &'a Path,
    pub config: &'a ExperimentConfig,
    pub version: &'a str,
}

fn echo_manifest(manifest: &RunManifest<'_>) {
    match serde_json::to_string(manifest) {
        Ok(line) => eprintln!("{line}"),
        Err(e) => eprintln!("manifest serialization failed: {e}"),
    }
}

// ---------------------------------------------------------------------------
// argument parsing and dispatch
// ---------------------------------------------------------------------------

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    match s {
        "digital" => Ok(Scheme::Digital),
        "analog" => Ok(Scheme::Analog),
        "digital_no_dp" => Ok(Scheme::DigitalNoDp),
        "analog_no_dp" => Ok(Scheme::AnalogNoDp),
        "centralized_lmc" => Ok(Scheme::CentralizedLmc),
        other => Err(format!(
            "unknown scheme `{other}` (expected digital, analog, digital_no_dp, analog_no_dp, centralized_lmc)"
        )),
    }
}

fn parse_mode(s: &str) -> std::result::Result<TMode, String> {
    match s {
        "paper" => Ok(TMode::Paper),
        "corrected" => Ok(TMode::Corrected),
        other => Err(format!("unknown mode `{other}` (expected paper or corrected)")),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "flmc",
    version,
    about = "Federated Langevin Monte Carlo over a simulated noisy uplink"
)]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, global = true, default_value = "results.csv")]
    out: PathBuf,
    /// Replication count override.
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Analog accountant mode override.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<TMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Comma-separated, strictly increasing grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Schemes to sweep, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
    schemes: Option<Vec<Scheme>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One experiment at the configured parameters; emits a single CSV row.
    Run,
    /// Sweep the maximum SNR (dB) over a grid.
    SweepSnr(GridArgs),
    /// Sweep the privacy level epsilon over a grid.
    SweepEpsilon(GridArgs),
    /// Sweep the quantizer sharpness a over a grid.
    SweepQuantizer(GridArgs),
    /// Solve the power gain for the configured scheme and print the
    /// binding constraint.
    SolveGain {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
    },
    /// Estimate the digital per-round delta at a given gain.
    DpCheck {
        #[arg(long)]
        gain: f64,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

/// Entry point behind the binary: parses `argv`, runs the command, and
/// returns the process exit code (0 success, 1 runtime failure, 2 usage).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_file(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
        }
        None => Ok(ConfigFile::default()),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = cli.replications {
        cfg.replications = reps;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = mode;
    }
}

fn resolved_for(cli: &Cli, file: &ConfigFile, scheme: Scheme) -> Result<ExperimentConfig> {
    let mut cfg = resolve(file, scheme)?;
    apply_overrides(&mut cfg, cli);
    cfg.validate()?;
    Ok(cfg)
}

fn run_command(cli: Cli) -> Result<()> {
    let file = load_file(cli.config.as_deref())?;
    let base_scheme = file.scheme.unwrap_or(Scheme::Digital);
    let version = env!("CARGO_PKG_VERSION");
    match &cli.command {
        Command::Run => {
            let cfg = resolved_for(&cli, &file, base_scheme)?;
            echo_manifest(&RunManifest {
                config_path: cli.config.as_deref(),
                output_path: &cli.out,
                config: &cfg,
                version,
            });
            let summary = run_replications(&cfg)?;
            if summary.starved {
                eprintln!(
                    "warning: solved gain {:e} fell below the bisection tolerance; the uplink is effectively silent",
                    summary.gain_used
                );
            }
            let result = SweepResult {
                rows: vec![SweepRow {
                    sweep_axis: None,
                    sweep_value: f64::NAN,
                    scheme: cfg.scheme,
                    mean_mse: summary.mean_mse,
                    stderr_mse: summary.stderr_mse,
                    gain_used: summary.gain_used,
                    replications: summary.replications,
                    seed: cfg.seed,
                }],
            };
            emit_csv(&result, &cli.out)?;
            println!(
                "scheme={} mean_mse={} stderr_mse={} gain_used={} binding={}",
                cfg.scheme,
                fmt_float(summary.mean_mse),
                fmt_float(summary.stderr_mse),
                fmt_float(summary.gain_used),
                summary.binding
            );
            Ok(())
        }
        Command::SweepSnr(grid) => sweep_command(&cli, &file, grid, SweepAxis::SnrDb, version),
        Command::SweepEpsilon(grid) => sweep_command(&cli, &file, grid, SweepAxis::Epsilon, version),
        Command::SweepQuantizer(grid) => sweep_command(&cli, &file, grid, SweepAxis::A, version),
        Command::SolveGain { scheme } => {
            let cfg = resolved_for(&cli, &file, scheme.unwrap_or(base_scheme))?;
            let solved = resolve_gain(&cfg)?;
            if solved.starved {
                eprintln!(
                    "warning: solved gain {:e} fell below the bisection tolerance",
                    solved.gain
                );
            }
            println!("A = {:e} (binding: {})", solved.gain, solved.binding);
            Ok(())
        }
        Command::DpCheck { gain, epsilon } => {
            let mut cfg = resolved_for(&cli, &file, base_scheme)?;
            if let Some(eps) = epsilon {
                cfg.privacy.epsilon = *eps;
            }
            let budget = cfg.privacy.budget()?;
            let bound = cfg.privacy.bound()?;
            let mut rng = substream(cfg.seed, 0, Stream::PrivacyMc);
            let est = estimate_delta_digital(
                *gain,
                cfg.model.k_devices,
                cfg.model.m,
                cfg.channel.n0,
                &bound,
                &cfg.quantizer,
                &budget,
                cfg.solver.n_mc,
                &mut rng,
            )?;
            println!(
                "delta_hat = {:e} (std_err = {:e}, n_mc = {})",
                est.delta_hat, est.std_err, est.n_samples
            );
            Ok(())
        }
    }
}

fn sweep_command(
    cli: &Cli,
    file: &ConfigFile,
    grid: &GridArgs,
    axis: SweepAxis,
    version: &str,
) -> Result<()> {
    let schemes = grid.schemes.clone().unwrap_or_else(|| match axis {
        SweepAxis::A => vec![Scheme::Digital],
        _ => vec![Scheme::Digital, Scheme::Analog],
    });
    if schemes.is_empty() {
        return Err(Error::Config("at least one scheme is required".into()));
    }
    let mut per_scheme = Vec::with_capacity(schemes.len());
    for &scheme in &schemes {
        let mut cfg = resolved_for(cli, file, scheme)?;
        cfg.sweep = Some(SweepSpec {
            axis,
            grid: grid.grid.clone(),
        });
        cfg.validate()?;
        echo_manifest(&RunManifest {
            config_path: cli.config.as_deref(),
            output_path: &cli.out,
            config: &cfg,
            version,
        });
        per_scheme.push(run_sweep(&cfg)?);
    }
    // grid-major ordering: all schemes for one value, then the next value
    let mut rows = Vec::with_capacity(grid.grid.len() * schemes.len());
    for v in 0..grid.grid.len() {
        for result in &per_scheme {
            rows.push(result.rows[v]);
        }
    }
    let result = SweepResult { rows };
    emit_csv(&result, &cli.out)?;
    for row in &result.rows {
        println!(
            "{}={} scheme={} mean_mse={} stderr_mse={} gain_used={}",
            axis,
            fmt_float(row.sweep_value),
            row.scheme,
            fmt_float(row.mean_mse),
            fmt_float(row.stderr_mse),
            fmt_float(row.gain_used)
        );
    }
    Ok(())
}
