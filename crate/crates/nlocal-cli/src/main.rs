//! Command-line front end for the detection toolkit.
//!
//! Each subcommand runs one pipeline and writes plot-ready CSV plus JSON
//! summaries into `--out-dir`, together with a `manifest.json` that echoes
//! the fully resolved configuration, the seed, and the library version, so
//! any output can be reproduced exactly. Frequencies cross this interface in
//! MHz or GHz and are converted to angular rad/ns once, on the way in.
//!
//! Exit codes: 0 success, 2 invalid configuration, 1 numerical or I/O
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use nlocal::dynamics::{
    detectability_criterion, evolve_lindblad, resonant_frequency, run_contrast_grid,
    wait_time_estimate, write_contrast_grid_csv, DriveSpec, IntegratorConfig, LindbladSpec,
};
use nlocal::fit::{fit_model, FitConfig};
use nlocal::hamiltonian::{
    default_spec, sample_spurious, SpinSystemSpec, SpuriousModel, DEFAULT_DELTA,
    DEFAULT_EPSILON_MAX, DEFAULT_ETA, DEFAULT_M,
};
use nlocal::pauli::{ProductXState, XSign};
use nlocal::seed;
use nlocal::spectroscopy::{generate_sweep, sigma_to_t2};
use nlocal::threshold::{
    analytic_bound, mean_cos_theta, scaling_study, spurious_sensitivity, threshold_scan,
    ScanConfig, ScanSettings,
};
use nlocal::units::{ghz, mhz, to_ghz, to_mhz};

/// Seed-derivation tags for CLI-owned draw sites. Register-size tags (2..=7)
/// are reserved for the per-system coupling draws, matching the library.
const TAG_SPURIOUS: u64 = 0x5350;
const TAG_NOISE: u64 = 0x4e4f;

/// A failure with its exit code already decided.
enum Failure {
    /// Schema or parameter problem; exit 2.
    Config(String),
    /// Numerical or I/O problem during a valid run; exit 1.
    Runtime(String),
}

impl From<nlocal::Error> for Failure {
    fn from(e: nlocal::Error) -> Self {
        use nlocal::Error::*;
        match e {
            InvalidSubset(_) | DimensionMismatch(_) | InvalidParameter(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "nlocal", version, about = "Decide whether an n-spin device carries a genuine n-local coupling", long_about = None)]
struct Cli {
    /// JSON config file; explicit flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Base seed; falls back to config file, then NLOCAL_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; default is the available parallelism. Results do not
    /// depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the gap-shift dataset over every field configuration.
    Sweep(SweepArgs),
    /// Fit locality-truncated models to a generated dataset.
    Fit(FitArgs),
    /// Scan noise amplitude and extract the critical sigma.
    Threshold(ThresholdArgs),
    /// Critical sigma as a function of register size.
    Scaling(ScalingArgs),
    /// Model separation as the spurious shift scale grows.
    Spurious(SpuriousArgs),
    /// Drive the n-local resonance under decoherence.
    Dynamics(DynamicsArgs),
    /// Closed-form detectability and deviation bounds.
    Bound(BoundArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sweep(_) => "sweep",
            Command::Fit(_) => "fit",
            Command::Threshold(_) => "threshold",
            Command::Scaling(_) => "scaling",
            Command::Spurious(_) => "spurious",
            Command::Dynamics(_) => "dynamics",
            Command::Bound(_) => "bound",
        }
    }
}

/// Spec-shaping flags shared by every pipeline that builds a system.
#[derive(Args)]
struct SpecArgs {
    /// Register size.
    #[arg(long)]
    n: Option<usize>,
    /// n-local coupling strength M in MHz.
    #[arg(long)]
    m_mhz: Option<f64>,
    /// Transverse field per spin in GHz.
    #[arg(long)]
    delta_ghz: Option<f64>,
    /// Longitudinal sweep ceiling in GHz.
    #[arg(long)]
    epsilon_max_ghz: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Spurious shift scale as a fraction of M; 0 disables the draw.
    #[arg(long)]
    eta: Option<f64>,
    /// Field grid points per configuration.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Gaussian measurement noise in MHz.
    #[arg(long)]
    noise_sigma_mhz: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Model locality to fit; default fits both n-1 and n.
    #[arg(long)]
    locality: Option<usize>,
    /// Optimizer starts per fit.
    #[arg(long)]
    multistart: Option<usize>,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Spurious shift scale as a fraction of M.
    #[arg(long)]
    eta: Option<f64>,
    /// Field grid points per configuration.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Noise realizations per sigma point.
    #[arg(long)]
    realizations: Option<usize>,
    /// Optimizer starts per fit.
    #[arg(long)]
    multistart: Option<usize>,
    /// Lowest noise amplitude in MHz.
    #[arg(long)]
    sigma_min_mhz: Option<f64>,
    /// Highest noise amplitude in MHz.
    #[arg(long)]
    sigma_max_mhz: Option<f64>,
    /// Log-spaced points between the two.
    #[arg(long)]
    sigma_points: Option<usize>,
    /// Leading points the sub-local line is fitted through.
    #[arg(long)]
    head_points: Option<usize>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Register sizes, comma separated (each in 2..=5).
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Spurious shift scale as a fraction of M.
    #[arg(long)]
    eta: Option<f64>,
    /// Field grid points per configuration.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Noise realizations per sigma point.
    #[arg(long)]
    realizations: Option<usize>,
    /// Optimizer starts per fit.
    #[arg(long)]
    multistart: Option<usize>,
    /// Lowest noise amplitude in MHz.
    #[arg(long)]
    sigma_min_mhz: Option<f64>,
    /// Highest noise amplitude in MHz.
    #[arg(long)]
    sigma_max_mhz: Option<f64>,
    /// Log-spaced points between the two.
    #[arg(long)]
    sigma_points: Option<usize>,
    /// Leading points the sub-local line is fitted through.
    #[arg(long)]
    head_points: Option<usize>,
}

#[derive(Args)]
struct SpuriousArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Shift scales to scan, comma separated, strictly ascending.
    #[arg(long, value_delimiter = ',')]
    eta_grid: Option<Vec<f64>>,
    /// Fixed measurement noise in MHz.
    #[arg(long)]
    sigma_mhz: Option<f64>,
    /// Noise realizations per eta point.
    #[arg(long)]
    realizations: Option<usize>,
    /// Field grid points per configuration.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Optimizer starts per fit.
    #[arg(long)]
    multistart: Option<usize>,
}

#[derive(Args)]
struct DynamicsArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Coherence time T2 in ns (both channels open at 1/T2).
    #[arg(long)]
    t2: Option<f64>,
    /// Turn decoherence off entirely.
    #[arg(long)]
    closed: bool,
    /// Evolution window in ns.
    #[arg(long)]
    t_end: Option<f64>,
    /// Population sampling interval in ns.
    #[arg(long)]
    sample_interval: Option<f64>,
    /// Drive amplitude in MHz; defaults to M.
    #[arg(long)]
    drive_mhz: Option<f64>,
    /// Run the (n, T2) contrast grid instead of one time series.
    #[arg(long)]
    grid: bool,
    /// Grid register sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Grid coherence times in ns, comma separated.
    #[arg(long, value_delimiter = ',')]
    t2_list: Option<Vec<f64>>,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Spurious drive amplitude uncertainty in MHz; defaults to M.
    #[arg(long)]
    delta_j_mhz: Option<f64>,
    /// Measurement precision for the wait-time estimate.
    #[arg(long)]
    xi: Option<f64>,
}

/// On-disk configuration; flags take precedence field by field. Unknown
/// keys are rejected so typos cannot silently fall back to defaults.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<String>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    jobs: Option<usize>,
    n: Option<usize>,
    m_mhz: Option<f64>,
    delta_ghz: Option<f64>,
    epsilon_max_ghz: Option<f64>,
    eta: Option<f64>,
    grid_points: Option<usize>,
    noise_sigma_mhz: Option<f64>,
    locality: Option<usize>,
    multistart: Option<usize>,
    realizations: Option<usize>,
    sigma_min_mhz: Option<f64>,
    sigma_max_mhz: Option<f64>,
    sigma_points: Option<usize>,
    head_points: Option<usize>,
    n_list: Option<Vec<usize>>,
    eta_grid: Option<Vec<f64>>,
    sigma_mhz: Option<f64>,
    t2: Option<f64>,
    closed: Option<bool>,
    t_end: Option<f64>,
    sample_interval: Option<f64>,
    drive_mhz: Option<f64>,
    grid: Option<bool>,
    t2_list: Option<Vec<f64>>,
    delta_j_mhz: Option<f64>,
    xi: Option<f64>,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    });
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    if let Some(cmd) = &file.command {
        if cmd != cli.command.name() {
            return Err(Failure::Config(format!(
                "config file is for command {cmd:?} but {:?} was invoked",
                cli.command.name()
            )));
        }
    }
    let seed = resolve_seed(cli.seed, file.seed)?;
    let out_dir = cli
        .out_dir
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let jobs = cli.jobs.or(file.jobs);
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Failure::Config("jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    fs::create_dir_all(&out_dir)?;

    let name = cli.command.name();
    let (config, artifacts) = match cli.command {
        Command::Sweep(args) => cmd_sweep(&args, &file, seed, &out_dir)?,
        Command::Fit(args) => cmd_fit(&args, &file, seed, &out_dir)?,
        Command::Threshold(args) => cmd_threshold(&args, &file, seed, &out_dir)?,
        Command::Scaling(args) => cmd_scaling(&args, &file, seed, &out_dir)?,
        Command::Spurious(args) => cmd_spurious(&args, &file, seed, &out_dir)?,
        Command::Dynamics(args) => cmd_dynamics(&args, &file, seed, &out_dir)?,
        Command::Bound(args) => cmd_bound(&args, &file, seed, &out_dir)?,
    };

    let manifest = json!({
        "command": name,
        "config": config,
        "seed": seed,
        "jobs": jobs,
        "library_version": nlocal::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "artifacts": artifacts,
    });
    write_json(&out_dir, "manifest.json", &manifest)
}

fn load_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{} is not a valid config: {e}", path.display())))
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var("NLOCAL_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::Config(format!("NLOCAL_SEED must be an unsigned integer, got {v:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Failure::Config(format!("NLOCAL_SEED: {e}"))),
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Build the seeded base system and apply the explicit overrides. The
/// coupling draw depends only on (seed, n), so changing M or the fields
/// keeps the same couplings.
fn build_spec(
    spec_args: &SpecArgs,
    file: &FileConfig,
    seed: u64,
    default_n: usize,
) -> Result<(SpinSystemSpec, Value), Failure> {
    let n = pick(spec_args.n, file.n, default_n);
    let m_mhz = pick(spec_args.m_mhz, file.m_mhz, to_mhz(DEFAULT_M));
    let delta_ghz = pick(spec_args.delta_ghz, file.delta_ghz, to_ghz(DEFAULT_DELTA));
    let epsilon_max_ghz = pick(
        spec_args.epsilon_max_ghz,
        file.epsilon_max_ghz,
        to_ghz(DEFAULT_EPSILON_MAX),
    );
    let mut spec = default_spec(n, seed::derive(seed, &[n as u64]))?;
    spec.m = mhz(m_mhz);
    spec.delta = vec![ghz(delta_ghz); n];
    spec.epsilon_max = ghz(epsilon_max_ghz);
    spec.validate()?;
    let echo = json!({
        "n": n,
        "m_MHz": m_mhz,
        "delta_GHz": delta_ghz,
        "epsilon_max_GHz": epsilon_max_ghz,
    });
    Ok((spec, echo))
}

/// The device under test: the base system plus a seeded spurious draw on
/// every non-n-local parameter.
fn apply_spurious(base: &SpinSystemSpec, eta: f64, seed: u64) -> Result<SpinSystemSpec, Failure> {
    if eta == 0.0 {
        return Ok(base.clone());
    }
    Ok(sample_spurious(
        base,
        &SpuriousModel::symmetric(eta, seed::derive(seed, &[TAG_SPURIOUS])),
    )?)
}

/// Fit settings whose search box keeps up with the configured shift scale.
fn fit_config(multistart: usize, eta: f64, m: f64) -> FitConfig {
    let mut cfg = FitConfig {
        multistart,
        ..FitConfig::default()
    };
    cfg.shift_bound = cfg.shift_bound.max(5.0 * eta * m.abs());
    cfg.start_scale = cfg.start_scale.max(eta * m.abs());
    cfg.m_bound = cfg.m_bound.max(10.0 * m.abs());
    cfg
}

fn log_grid(lo_ghz: f64, hi_ghz: f64, points: usize) -> Result<Vec<f64>, Failure> {
    if !lo_ghz.is_finite() || lo_ghz <= 0.0 || hi_ghz <= lo_ghz || points < 2 {
        return Err(Failure::Config(format!(
            "sigma grid needs 0 < min < max and at least 2 points, got [{lo_ghz}, {hi_ghz}] GHz x {points}"
        )));
    }
    let (a, b) = (lo_ghz.ln(), hi_ghz.ln());
    Ok((0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(dir.join(name), bytes)
        .map_err(|e| Failure::Runtime(format!("cannot write {name}: {e}")))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::Runtime(format!("cannot serialize {name}: {e}")))?;
    bytes.push(b'\n');
    write_file(dir, name, &bytes)
}

fn artifact_list(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn cmd_sweep(
    args: &SweepArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let (base, spec_echo) = build_spec(&args.spec, file, seed, 4)?;
    let eta = pick(args.eta, file.eta, DEFAULT_ETA);
    let grid_points = pick(args.grid_points, file.grid_points, 21);
    let noise_sigma_mhz = pick(args.noise_sigma_mhz, file.noise_sigma_mhz, 0.0);

    let device = apply_spurious(&base, eta, seed)?;
    let sweep = generate_sweep(
        &device,
        grid_points,
        mhz(noise_sigma_mhz),
        seed::derive(seed, &[TAG_NOISE]),
    )?;

    let mut csv = Vec::new();
    sweep.write_csv(&mut csv)?;
    write_file(out, "sweep.csv", &csv)?;

    let meta = json!({
        "n": sweep.n,
        "seed": seed,
        "noise_seed": sweep.seed,
        "noise_sigma_MHz": noise_sigma_mhz,
        "eta": eta,
        "grid_points": grid_points,
        "configurations": sweep.configurations.len(),
        "spec_internal_rad_per_ns": device,
    });
    write_json(out, "sweep_meta.json", &meta)?;

    let mut config = spec_echo;
    config["eta"] = json!(eta);
    config["grid_points"] = json!(grid_points);
    config["noise_sigma_MHz"] = json!(noise_sigma_mhz);
    Ok((config, artifact_list(&["sweep.csv", "sweep_meta.json"])))
}

fn cmd_fit(
    args: &FitArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let (base, spec_echo) = build_spec(&args.sweep.spec, file, seed, 4)?;
    let n = base.n;
    let eta = pick(args.sweep.eta, file.eta, DEFAULT_ETA);
    let grid_points = pick(args.sweep.grid_points, file.grid_points, 21);
    let noise_sigma_mhz = pick(args.sweep.noise_sigma_mhz, file.noise_sigma_mhz, 0.0);
    let multistart = pick(args.multistart, file.multistart, 4);
    let localities = match args.locality.or(file.locality) {
        Some(k) => vec![k],
        None => vec![n - 1, n],
    };

    let device = apply_spurious(&base, eta, seed)?;
    let sweep = generate_sweep(
        &device,
        grid_points,
        mhz(noise_sigma_mhz),
        seed::derive(seed, &[TAG_NOISE]),
    )?;
    let mut csv = Vec::new();
    sweep.write_csv(&mut csv)?;
    write_file(out, "sweep.csv", &csv)?;

    let cfg = fit_config(multistart, eta, base.m);
    let mut artifacts = vec!["sweep.csv".to_string()];
    let mut summary = Vec::new();
    for &k in &localities {
        let outcome = fit_model(&sweep, &base, k, &cfg)?;
        let name = format!("fit_locality_{k}.json");
        write_json(out, &name, &outcome.export_json())?;
        summary.push(json!({
            "model_locality": k,
            "deviation_vs_clean_MHz": to_mhz(outcome.deviation_vs_clean),
            "deviation_vs_noisy_MHz": to_mhz(outcome.deviation_vs_noisy),
            "converged": outcome.converged,
        }));
        artifacts.push(name);
    }
    write_json(out, "fit_summary.json", &json!({ "fits": summary }))?;
    artifacts.push("fit_summary.json".to_string());

    let mut config = spec_echo;
    config["eta"] = json!(eta);
    config["grid_points"] = json!(grid_points);
    config["noise_sigma_MHz"] = json!(noise_sigma_mhz);
    config["multistart"] = json!(multistart);
    config["localities"] = json!(localities);
    Ok((config, artifacts))
}

fn cmd_threshold(
    args: &ThresholdArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let (base, spec_echo) = build_spec(&args.spec, file, seed, 4)?;
    let eta = pick(args.eta, file.eta, DEFAULT_ETA);
    let grid_points = pick(args.grid_points, file.grid_points, 21);
    let realizations = pick(args.realizations, file.realizations, 10);
    let multistart = pick(args.multistart, file.multistart, 1);
    let head_points = pick(args.head_points, file.head_points, 5);
    let sigma_min = pick(args.sigma_min_mhz, file.sigma_min_mhz, 0.5);
    let sigma_max = pick(args.sigma_max_mhz, file.sigma_max_mhz, 50.0);
    let sigma_points = pick(args.sigma_points, file.sigma_points, 12);
    let sigma_grid = log_grid(sigma_min * 1e-3, sigma_max * 1e-3, sigma_points)?;

    let scan = ScanConfig {
        grid_points,
        eta,
        head_points,
        fit: fit_config(multistart, eta, base.m),
        ..ScanConfig::default()
    };
    let curve = threshold_scan(&base, &sigma_grid, realizations, seed, &scan)?;

    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    write_file(out, "threshold.csv", &csv)?;

    let summary = json!({
        "sigma_c_MHz": curve.sigma_c * 1e3,
        "sigma_c_GHz": curve.sigma_c,
        "sigma_c_in_range": curve.sigma_c_in_range,
        "equivalent_t2_ns": if curve.sigma_c > 0.0 {
            json!(sigma_to_t2(curve.sigma_c)?)
        } else {
            Value::Null
        },
        "realizations": curve.realizations,
        "linefit_full": curve.linefit_full,
        "linefit_head": curve.linefit_head,
        "curve": curve,
    });
    write_json(out, "threshold_summary.json", &summary)?;

    let mut config = spec_echo;
    config["eta"] = json!(eta);
    config["grid_points"] = json!(grid_points);
    config["realizations"] = json!(realizations);
    config["multistart"] = json!(multistart);
    config["head_points"] = json!(head_points);
    config["sigma_min_MHz"] = json!(sigma_min);
    config["sigma_max_MHz"] = json!(sigma_max);
    config["sigma_points"] = json!(sigma_points);
    Ok((
        config,
        artifact_list(&["threshold.csv", "threshold_summary.json"]),
    ))
}

fn cmd_scaling(
    args: &ScalingArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let n_list = pick(args.n_list.clone(), file.n_list.clone(), vec![2, 3, 4]);
    let eta = pick(args.eta, file.eta, DEFAULT_ETA);
    let grid_points = pick(args.grid_points, file.grid_points, 21);
    let realizations = pick(args.realizations, file.realizations, 10);
    let multistart = pick(args.multistart, file.multistart, 1);
    let head_points = pick(args.head_points, file.head_points, 5);
    let sigma_min = pick(args.sigma_min_mhz, file.sigma_min_mhz, 0.5);
    let sigma_max = pick(args.sigma_max_mhz, file.sigma_max_mhz, 50.0);
    let sigma_points = pick(args.sigma_points, file.sigma_points, 12);
    let sigma_grid = log_grid(sigma_min * 1e-3, sigma_max * 1e-3, sigma_points)?;

    // The scaling study fixes M and the fields at their defaults per n; only
    // the scan settings are configurable here.
    let settings = ScanSettings {
        sigma_grid,
        realizations,
        scan: ScanConfig {
            grid_points,
            eta,
            head_points,
            fit: fit_config(multistart, eta, DEFAULT_M),
            ..ScanConfig::default()
        },
    };
    let per_n = n_list
        .iter()
        .map(|&n| (n, settings.clone()))
        .collect::<std::collections::BTreeMap<_, _>>();
    let curves = scaling_study(&n_list, &per_n, seed)?;

    let mut csv = String::from("n,sigma_c_MHz\n");
    for (n, curve) in &curves {
        csv.push_str(&format!("{},{:.16e}\n", n, curve.sigma_c * 1e3));
    }
    write_file(out, "scaling.csv", csv.as_bytes())?;
    write_json(out, "scaling_curves.json", &json!(curves))?;

    let config = json!({
        "n_list": n_list,
        "eta": eta,
        "grid_points": grid_points,
        "realizations": realizations,
        "multistart": multistart,
        "head_points": head_points,
        "sigma_min_MHz": sigma_min,
        "sigma_max_MHz": sigma_max,
        "sigma_points": sigma_points,
    });
    Ok((
        config,
        artifact_list(&["scaling.csv", "scaling_curves.json"]),
    ))
}

fn cmd_spurious(
    args: &SpuriousArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let (base, spec_echo) = build_spec(&args.spec, file, seed, 4)?;
    let eta_grid = pick(
        args.eta_grid.clone(),
        file.eta_grid.clone(),
        vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
    );
    let sigma_mhz = pick(args.sigma_mhz, file.sigma_mhz, 15.0);
    let realizations = pick(args.realizations, file.realizations, 5);
    let grid_points = pick(args.grid_points, file.grid_points, 21);
    let multistart = pick(args.multistart, file.multistart, 1);

    let max_eta = eta_grid.iter().cloned().fold(0.0, f64::max);
    let scan = ScanConfig {
        grid_points,
        fit: fit_config(multistart, max_eta, base.m),
        ..ScanConfig::default()
    };
    let points = spurious_sensitivity(
        &base,
        &eta_grid,
        sigma_mhz * 1e-3,
        realizations,
        seed,
        &scan,
    )?;

    let mut csv = String::from("eta,dev_nlocal_MHz,dev_sublocal_MHz\n");
    for p in &points {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            p.eta, p.dev_nlocal_mhz, p.dev_sublocal_mhz
        ));
    }
    write_file(out, "spurious.csv", csv.as_bytes())?;

    let mut config = spec_echo;
    config["eta_grid"] = json!(eta_grid);
    config["sigma_MHz"] = json!(sigma_mhz);
    config["realizations"] = json!(realizations);
    config["grid_points"] = json!(grid_points);
    config["multistart"] = json!(multistart);
    Ok((config, artifact_list(&["spurious.csv"])))
}

fn cmd_dynamics(
    args: &DynamicsArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let t_end = pick(args.t_end, file.t_end, 1000.0);
    let sample_interval = pick(args.sample_interval, file.sample_interval, 1.0);
    let integrator = IntegratorConfig {
        sample_interval,
        ..IntegratorConfig::default()
    };

    if args.grid || file.grid.unwrap_or(false) {
        let n_list = pick(args.n_list.clone(), file.n_list.clone(), vec![2, 3, 4, 5, 6]);
        let t2_list = pick(
            args.t2_list.clone(),
            file.t2_list.clone(),
            vec![10.0, 30.0, 100.0, 300.0, 1000.0],
        );
        let rows = run_contrast_grid(&n_list, &t2_list, seed, t_end, &integrator)?;
        let mut csv = Vec::new();
        write_contrast_grid_csv(&rows, &mut csv)?;
        write_file(out, "dynamics_grid.csv", &csv)?;
        let config = json!({
            "grid": true,
            "n_list": n_list,
            "t2_list_ns": t2_list,
            "t_end_ns": t_end,
            "sample_interval_ns": sample_interval,
        });
        return Ok((config, artifact_list(&["dynamics_grid.csv"])));
    }

    let (spec, spec_echo) = build_spec(&args.spec, file, seed, 3)?;
    let closed = args.closed || file.closed.unwrap_or(false);
    let t2 = args.t2.or(file.t2);
    let lindblad = if closed {
        LindbladSpec::closed()
    } else {
        let t2 = t2.ok_or_else(|| {
            Failure::Config("dynamics needs --t2 (ns) unless --closed or --grid is set".into())
        })?;
        LindbladSpec::both(t2)?
    };
    let drive_mhz = pick(args.drive_mhz, file.drive_mhz, to_mhz(spec.m));
    let omega = resonant_frequency(&spec)?;
    let drive = DriveSpec::coupler_only(mhz(drive_mhz), omega);
    let initial = ProductXState::uniform(XSign::Minus, spec.n)?;

    let report = evolve_lindblad(&spec, &drive, &lindblad, t_end, initial.into(), &integrator)?;
    let mut csv = Vec::new();
    report.write_timeseries_csv(&mut csv)?;
    write_file(out, "dynamics.csv", &csv)?;

    let summary = json!({
        "contrast": report.contrast,
        "target_index": report.target_index,
        "excluded_index": report.excluded_index,
        "trace_error": report.trace_error,
        "hermiticity_error": report.hermiticity_error,
        "positive": report.positive,
        "step_ns": report.step,
        "samples": report.time_grid.len(),
        "drive_GHz": to_ghz(omega),
    });
    write_json(out, "dynamics_summary.json", &summary)?;

    let mut config = spec_echo;
    config["t2_ns"] = match (closed, t2) {
        (true, _) => Value::Null,
        (false, Some(t)) => json!(t),
        (false, None) => Value::Null,
    };
    config["closed"] = json!(closed);
    config["t_end_ns"] = json!(t_end);
    config["sample_interval_ns"] = json!(sample_interval);
    config["drive_MHz"] = json!(drive_mhz);
    Ok((
        config,
        artifact_list(&["dynamics.csv", "dynamics_summary.json"]),
    ))
}

fn cmd_bound(
    args: &BoundArgs,
    file: &FileConfig,
    seed: u64,
    out: &Path,
) -> Result<(Value, Vec<String>), Failure> {
    let (spec, spec_echo) = build_spec(&args.spec, file, seed, 4)?;
    let m_mhz = to_mhz(spec.m);
    let delta_j_mhz = pick(args.delta_j_mhz, file.delta_j_mhz, m_mhz);
    let xi = pick(args.xi, file.xi, 0.01);
    if !xi.is_finite() || xi <= 0.0 {
        return Err(Failure::Config(format!(
            "measurement precision must be positive, got {xi}"
        )));
    }

    let cos = mean_cos_theta(spec.delta[0], spec.epsilon_max)?;
    let bound_mhz = to_mhz(analytic_bound(spec.n, spec.m, spec.delta[0], spec.epsilon_max)?);
    let omega = resonant_frequency(&spec)?;
    let (dominates, margin) = detectability_criterion(spec.m, mhz(delta_j_mhz), spec.delta[0], spec.n);
    let wait = wait_time_estimate(spec.m, xi);

    let report = json!({
        "n": spec.n,
        "mean_cos_theta": cos,
        "sublocal_deviation_bound_MHz": bound_mhz,
        "resonance_GHz": to_ghz(omega),
        "first_order_dominates": dominates,
        "detectability_margin": if margin.is_finite() { json!(margin) } else { json!("infinite") },
        "wait_time_ns": wait,
    });
    write_json(out, "bound.json", &report)?;

    let mut config = spec_echo;
    config["delta_j_MHz"] = json!(delta_j_mhz);
    config["xi"] = json!(xi);
    Ok((config, artifact_list(&["bound.json"])))
}
