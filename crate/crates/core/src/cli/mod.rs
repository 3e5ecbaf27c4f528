//! Batch front end behind the `cvdecouple` binary.
//!
//! Exit codes: 0 success, 1 a group check found a nonzero residual,
//! 2 bad arguments or configuration, 3 simulation failure, 4 I/O failure.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::engine::{self, logistic_fit, run_ensemble, sweep_interventions, SimConfig};
use crate::filter::{self, Filter, Kernel, SwitchingFunction};
use crate::fock::{gaussian_mixture_state, FockSpace};
use crate::noise::{self, KernelTable, KernelUnits, NoiseKind};
use crate::protocol::{self, ControlGroup, GroupLabel, ProtocolKind};
use crate::wigner::{wigner_of_state, PhaseSpaceField};

pub use config::{ConfigError, FilterKernelChoice, RunConfig, KEYS};

/// Residual above which a group check fails.
pub const GROUP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "cvdecouple",
    version,
    about = "Noise decoupling simulations for continuous-variable state transfer"
)]
pub struct Cli {
    /// Worker threads for trajectory parallelism (0 = all cores).
    #[arg(long, global = true, env = "CVDD_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `sim.protocol`.
    #[arg(long)]
    pub protocol: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one ensemble: fidelity curves, summary, initial and final Wigner functions.
    Simulate(RunArgs),
    /// Mean final fidelity against the number of interventions.
    Sweep(RunArgs),
    /// Gaussian filter prediction of the averaged output Wigner function.
    Filter(RunArgs),
    /// Wigner function of the configured initial state.
    Wigner(RunArgs),
    /// Group-average residuals of a control group against its noise generators.
    CheckGroup {
        /// parity | squeeze_set | gaussian | cyclic(m)
        #[arg(long)]
        group: String,
        /// Order for `--group cyclic`.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 40)]
        fock_dim: usize,
        /// Check `a^P` and `a†^P` instead of the designed generators.
        #[arg(long)]
        power: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Simulation(crate::Error),
    Io(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Simulation(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Simulation(e) => write!(f, "simulation error: {e}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Simulation(e)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| match cli.command {
        Command::Simulate(a) => with_manifest("simulate", &a, threads, cmd_simulate),
        Command::Sweep(a) => with_manifest("sweep", &a, threads, cmd_sweep),
        Command::Filter(a) => with_manifest("filter", &a, threads, cmd_filter),
        Command::Wigner(a) => with_manifest("wigner", &a, threads, cmd_wigner),
        Command::CheckGroup {
            group,
            m,
            fock_dim,
            power,
            out,
        } => cmd_check_group(&group, m, fock_dim, power, out.as_deref()),
    })
}

/// Load a config file and apply the command-line overrides.
pub fn load_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(p) = &args.protocol {
        cfg.sim.protocol = p
            .parse::<ProtocolKind>()
            .map_err(|e| CliError::Config(format!("--protocol: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Provenance record written to `manifest.json` before a run and rewritten
/// when it ends. `config` holds the fully resolved configuration text.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    pub config: String,
    pub seed: u64,
    pub threads: usize,
    pub status: String,
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Output files and phase timings collected by a command.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.timings
            .insert(phase.to_string(), t.elapsed().as_secs_f64());
        v
    }

    fn csv(&mut self, name: &str) -> Result<(csv::Writer<BufWriter<File>>, PathBuf), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok((csv::Writer::from_writer(BufWriter::new(file)), path))
    }

    fn field(&mut self, name: &str, field: &PhaseSpaceField) -> Result<(), CliError> {
        let path = self.path(name);
        field.save_csv(&path).map_err(|e| io_err(&path, e))
    }
}

fn with_manifest(
    command: &str,
    args: &RunArgs,
    threads: usize,
    body: fn(&RunConfig, &mut Outputs) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_path: args.config.display().to_string(),
        config: cfg.to_toml_string(),
        seed: cfg.sim.seed,
        threads,
        status: "running".to_string(),
        error: None,
        outputs: Vec::new(),
        started_unix_ms: now_ms(),
        finished_unix_ms: None,
        timings_s: BTreeMap::new(),
    };
    manifest.save(&args.out)?;
    let mut outputs = Outputs {
        dir: args.out.clone(),
        files: Vec::new(),
        timings: BTreeMap::new(),
    };
    let started = Instant::now();
    let result = body(&cfg, &mut outputs);
    outputs
        .timings
        .insert("total".to_string(), started.elapsed().as_secs_f64());
    manifest.outputs = outputs.files;
    manifest.timings_s = outputs.timings;
    manifest.finished_unix_ms = Some(now_ms());
    match &result {
        Ok(()) => manifest.status = "ok".to_string(),
        Err(e) => {
            manifest.status = "failed".to_string();
            manifest.error = Some(e.to_string());
        }
    }
    manifest.save(&args.out)?;
    result
}

fn fmt(v: f64) -> String {
    format!("{v:.15e}")
}

fn flush<W: Write>(w: csv::Writer<W>, path: &Path) -> Result<(), CliError> {
    w.into_inner()
        .map_err(|e| io_err(path, e.error()))?
        .flush()
        .map_err(|e| io_err(path, e))
}

macro_rules! row {
    ($w:expr, $path:expr, [$($f:expr),* $(,)?]) => {
        $w.write_record([$($f),*]).map_err(|e| io_err(&$path, e))?
    };
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let sim = &cfg.sim;
    let result = out.timed("ensemble", || run_ensemble(sim))?;

    let (mut w, path) = out.csv("fidelity.csv")?;
    row!(w, path, ["traj_id", "segment", "ell", "fidelity"]);
    for (id, curve) in result.curve_ids.iter().zip(&result.fidelity_curves) {
        for (k, f) in curve.iter().enumerate() {
            row!(
                w,
                path,
                [id.to_string(), k.to_string(), fmt(result.ells[k]), fmt(*f)]
            );
        }
    }
    flush(w, &path)?;

    write_summary(
        out,
        &[(
            result.interventions,
            result.final_fidelity.mean,
            result.final_fidelity.stderr,
        )],
    )?;

    let (mut w, path) = out.csv("mean_curve.csv")?;
    row!(w, path, ["segment", "ell", "mean_fidelity"]);
    for (k, f) in result.mean_curve.iter().enumerate() {
        row!(w, path, [k.to_string(), fmt(result.ells[k]), fmt(*f)]);
    }
    flush(w, &path)?;

    if !result.leaked.is_empty() {
        let (mut w, path) = out.csv("leaked.csv")?;
        row!(w, path, ["traj_id", "segment", "message"]);
        for l in &result.leaked {
            row!(
                w,
                path,
                [
                    l.trajectory.to_string(),
                    l.segment.to_string(),
                    l.message.clone()
                ]
            );
        }
        flush(w, &path)?;
    }

    let path = out.path("schedule.csv");
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    sim.schedule()?.write_csv(BufWriter::new(file))?;

    let space = sim.space()?;
    let rho0 = gaussian_mixture_state(&sim.initial_state, &space)?;
    let w0 = out.timed("wigner", || wigner_of_state(&rho0, &sim.grid))?;
    out.field("wigner_initial.csv", &w0)?;
    out.field("wigner_final.csv", &result.averaged_wigner)?;
    println!(
        "n = {}  M = {}  mean final fidelity = {:.6} ± {:.2e}  leaked = {}",
        result.interventions,
        sim.trajectories,
        result.final_fidelity.mean,
        result.final_fidelity.stderr,
        result.leaked.len()
    );
    Ok(())
}

fn write_summary(out: &mut Outputs, rows: &[(usize, f64, f64)]) -> Result<(), CliError> {
    let (mut w, path) = out.csv("summary.csv")?;
    row!(
        w,
        path,
        ["n_interventions", "mean_final_fidelity", "stderr"]
    );
    for (n, mean, se) in rows {
        row!(w, path, [n.to_string(), fmt(*mean), fmt(*se)]);
    }
    flush(w, &path)
}

fn cmd_sweep(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let n_values = &cfg.sweep.n_values;
    if n_values.is_empty() {
        return Err(ConfigError {
            key: Some("sweep.n_values".into()),
            message: "must list at least one intervention count".into(),
        }
        .into());
    }
    let segments = cfg.sim.noise.segments;
    if let Some(bad) = n_values.iter().find(|&&n| segments % n != 0) {
        return Err(ConfigError {
            key: Some("sweep.n_values".into()),
            message: format!("{bad} does not divide noise.segments = {segments}"),
        }
        .into());
    }
    let m = cfg.sweep.trajectories.unwrap_or(cfg.sim.trajectories);
    let rows = out.timed("sweep", || sweep_interventions(&cfg.sim, n_values, m))?;
    let table: Vec<(usize, f64, f64)> = rows
        .iter()
        .map(|r| (r.interventions, r.mean_final_fidelity, r.stderr))
        .collect();
    write_summary(out, &table)?;

    let (mut w, path) = out.csv("trend.csv")?;
    row!(
        w,
        path,
        ["n_from", "n_to", "delta", "tolerance", "non_decreasing"]
    );
    let mut all = true;
    for pair in rows.windows(2) {
        let delta = pair[1].mean_final_fidelity - pair[0].mean_final_fidelity;
        let tol = 2.0 * pair[0].stderr.hypot(pair[1].stderr);
        let ok = delta >= -tol;
        all &= ok;
        row!(
            w,
            path,
            [
                pair[0].interventions.to_string(),
                pair[1].interventions.to_string(),
                fmt(delta),
                fmt(tol),
                ok.to_string(),
            ]
        );
    }
    flush(w, &path)?;

    for r in &rows {
        println!(
            "n = {:>4}  F = {:.6} ± {:.2e}  leaked = {}",
            r.interventions, r.mean_final_fidelity, r.stderr, r.leaked
        );
    }
    println!("non-decreasing within 2 stderr: {all}");

    if cfg.sweep.fit {
        let pts: Vec<(f64, f64)> = table.iter().map(|(n, f, _)| (*n as f64, *f)).collect();
        match logistic_fit(&pts) {
            Ok(fit) => {
                let (mut w, path) = out.csv("logistic_fit.csv")?;
                row!(w, path, ["L", "k", "n0", "rss", "converged", "degenerate"]);
                row!(
                    w,
                    path,
                    [
                        fmt(fit.l),
                        fmt(fit.k),
                        fmt(fit.n0),
                        fmt(fit.rss),
                        fit.converged.to_string(),
                        fit.degenerate.to_string()
                    ]
                );
                flush(w, &path)?;
                println!(
                    "logistic fit: L = {:.4}  k = {:.4}  n0 = {:.2}  converged = {}",
                    fit.l, fit.k, fit.n0, fit.converged
                );
            }
            Err(e) => log::warn!("logistic fit skipped: {e}"),
        }
    }
    Ok(())
}

/// Covariance matrix and filter implied by the filter settings.
pub fn build_filter(cfg: &RunConfig) -> Result<(filter::CovarianceSpec, Filter), CliError> {
    let sim = &cfg.sim;
    let noise_cfg = sim.noise_config();
    let schedule = sim.schedule()?;
    let n = schedule.segments();
    let switching = |delta_ell: f64| SwitchingFunction::from_schedule(&schedule, delta_ell);
    let (f, kernel) = match cfg.filter.kernel {
        FilterKernelChoice::IidDensity => (
            switching(cfg.filter.delta_ell)?,
            filter::iid_kernel(n, cfg.filter.variance),
        ),
        choice => {
            if !matches!(
                noise_cfg.kind,
                NoiseKind::Displacement | NoiseKind::Polynomial { m: 1 }
            ) {
                return Err(ConfigError {
                    key: Some("noise.kind".into()),
                    message: "filter functions cover displacement noise only".into(),
                }
                .into());
            }
            // Kick kernels live on noise steps; expand the interval signs onto them.
            let steps = noise_cfg.segments;
            let per = steps / n;
            let coarse = switching(1.0)?;
            let signs = (0..steps).map(|j| coarse.signs()[j / per]).collect();
            let fine = SwitchingFunction::new((0..=steps).map(|j| j as f64).collect(), signs)?;
            let var = noise_cfg.sigma_disp * noise_cfg.sigma_disp;
            let table = match choice {
                FilterKernelChoice::Empirical => {
                    let trajs = (0..cfg.filter.empirical_trajectories as u64)
                        .map(|id| noise::sample_trajectory(&noise_cfg, id))
                        .collect::<crate::Result<Vec<_>>>()?;
                    noise::empirical_covariance(&trajs)?
                }
                _ if noise_cfg.static_noise => {
                    KernelTable::constant(steps, var, KernelUnits::Amplitude)
                }
                _ => KernelTable::cpp(steps, var, noise_cfg.eta, KernelUnits::Amplitude),
            };
            (fine, Kernel::Kicks(table))
        }
    };
    let spec = filter::sigma_matrix(&f, &kernel)?;
    let scale = spec.a.abs().max(spec.b.abs()).max(spec.c.abs());
    if scale <= 1e-14 {
        return Ok((spec, Filter::Identity));
    }
    let field = filter::gaussian_filter(&spec, &sim.grid)?;
    Ok((spec, Filter::Field(field)))
}

fn cmd_filter(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let sim = &cfg.sim;
    let (spec, filt) = build_filter(cfg)?;
    let n = sim.interventions();

    let (mut w, path) = out.csv("filter_summary.csv")?;
    row!(
        w,
        path,
        [
            "n_interventions",
            "sigma_xx",
            "sigma_pp",
            "sigma_xp",
            "det",
            "identity"
        ]
    );
    row!(
        w,
        path,
        [
            n.to_string(),
            fmt(spec.a),
            fmt(spec.b),
            fmt(spec.c),
            fmt(spec.det()),
            filt.is_identity().to_string()
        ]
    );
    flush(w, &path)?;
    if let Filter::Field(f) = &filt {
        out.field("filter.csv", f)?;
    }

    let space = sim.space()?;
    let rho0 = gaussian_mixture_state(&sim.initial_state, &space)?;
    let w0 = wigner_of_state(&rho0, &sim.grid)?;
    out.field("wigner_initial.csv", &w0)?;
    let prediction = out.timed("convolution", || filter::convolve(&filt, &w0))?;
    out.field("prediction.csv", &prediction)?;
    println!(
        "Σ = [[{:.6e}, {:.6e}], [{:.6e}, {:.6e}]]  identity = {}",
        spec.a,
        spec.c,
        spec.c,
        spec.b,
        filt.is_identity()
    );

    let f = &cfg.filter;
    if f.mc_trajectories > 0 {
        let mc_cfg = SimConfig {
            trajectories: f.mc_trajectories,
            batches: f.mc_batches,
            ..sim.clone()
        };
        let r = out.timed("monte_carlo", || run_ensemble(&mc_cfg))?;
        let (_, stderr) = engine::batch_wigner_stats(&r.batch_states, &sim.grid)?;
        let l1 = prediction.l1_distance(&r.averaged_wigner)?;
        let se_l1 = stderr.abs_integral();
        let threshold = (3.0 * se_l1).max(5e-3);
        out.field("mc_wigner.csv", &r.averaged_wigner)?;
        let (mut w, path) = out.csv("mc_report.csv")?;
        row!(
            w,
            path,
            ["trajectories", "l1", "mc_stderr_l1", "threshold", "pass"]
        );
        row!(
            w,
            path,
            [
                f.mc_trajectories.to_string(),
                fmt(l1),
                fmt(se_l1),
                fmt(threshold),
                (l1 <= threshold).to_string()
            ]
        );
        flush(w, &path)?;
        println!("Monte Carlo L1 = {l1:.3e}  (threshold {threshold:.3e})");
    }
    Ok(())
}

fn cmd_wigner(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let sim = &cfg.sim;
    let rho0 = gaussian_mixture_state(&sim.initial_state, &sim.space()?)?;
    let w = out.timed("wigner", || wigner_of_state(&rho0, &sim.grid))?;
    out.field("wigner.csv", &w)?;
    let (x, p) = w.mean();
    println!(
        "∬W = {:.8}  ⟨x⟩ = {x:.6}  ⟨p⟩ = {p:.6}  purity = {:.6}",
        w.integral(),
        w.purity()
    );
    Ok(())
}

fn cmd_check_group(
    group: &str,
    m: Option<usize>,
    fock_dim: usize,
    power: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let label = match (group.trim(), m) {
        ("cyclic", Some(m)) => GroupLabel::Cyclic(m),
        ("cyclic", None) => return Err(CliError::Config("--group cyclic needs --m".into())),
        (g, None) => g
            .parse::<GroupLabel>()
            .map_err(|e| CliError::Config(format!("--group: {e}")))?,
        (_, Some(_)) => {
            return Err(CliError::Config(
                "--m only applies to --group cyclic".into(),
            ))
        }
    };
    let group =
        ControlGroup::from_label(label).map_err(|e| CliError::Config(format!("--group: {e}")))?;
    let space =
        FockSpace::new(fock_dim).map_err(|e| CliError::Config(format!("--fock-dim: {e}")))?;
    let generators = match power {
        None => group.designed_generators(&space),
        Some(0) => return Err(CliError::Config("--power must be >= 1".into())),
        Some(p) => {
            let a = crate::fock::annihilation_power(&space, p);
            vec![
                (protocol::power_label("a", p), a.clone()),
                (protocol::power_label("a†", p), a.adjoint()),
            ]
        }
    };
    let mut rows = Vec::new();
    for (name, g) in &generators {
        let r = protocol::group_average_residual(&group, g)?;
        println!("{}\t{name}\t{r:.3e}", group.label);
        rows.push((name.clone(), r));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("residuals.csv");
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        row!(w, path, ["group", "generator", "residual"]);
        for (name, r) in &rows {
            row!(w, path, [group.label.to_string(), name.clone(), fmt(*r)]);
        }
        flush(w, &path)?;
    }
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if worst > GROUP_TOLERANCE {
        return Err(CliError::CheckFailed(format!(
            "largest residual {worst:.3e} exceeds {GROUP_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}
