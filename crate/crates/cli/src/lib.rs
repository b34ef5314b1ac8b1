//! Configuration, validation and the four subcommands behind the `fsdde` binary.
//!
//! Exit codes: 1 for unreadable or malformed configuration, 2 for values that
//! parse but violate an invariant, 3 for failures while running a study.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fsdde::delay::DelayMeasure;
use fsdde::grid::GridPath;
use fsdde::experiments::{
    convergence_study, nonrough_limit_study, rough_limit_study, sn_study, synthetic_study,
    SnConfig, StudyConfig,
};
use fsdde::lfsm::{default_past_window, LfsmParams, LfsmSimulator};
use fsdde::limits::{Regime, RateSpec, ZetaRule};
use fsdde::resolvent::{coefficient_path, phi_solve, resolvent_general};
use fsdde::sdde::{euler_scheme, reference_solution, Drift, InitialPath, SddeSpec};
use fsdde::stable_noise::{SeededStream, StableParams};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "fsdde", version, about = "Euler schemes for delay equations with fractional stable noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write scheme and reference paths for one noise draw.
    Simulate(CommonArgs),
    /// Coupled error-rate study with a log-log slope fit.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Replace the simulation by planted errors with this rate (harness self-test).
        #[arg(long)]
        synthetic_rate: Option<f64>,
    },
    /// Fundamental solution of the linearised delay equation.
    Resolvent(CommonArgs),
    /// Limit-law studies for the rescaled error or for `S_n`.
    Limit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, conflicts_with_all = ["rough", "sn"])]
        nonrough: bool,
        #[arg(long, conflicts_with = "sn")]
        rough: bool,
        #[arg(long)]
        sn: bool,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the Monte Carlo loops.
    #[arg(long, env = "FSDDE_JOBS")]
    pub jobs: Option<usize>,
    /// Output directory; overrides the directory in the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(m: impl Into<String>) -> Self {
        Self { code: 1, message: m.into() }
    }

    fn invalid(m: impl Into<String>) -> Self {
        Self { code: 2, message: m.into() }
    }

    fn runtime(m: impl Into<String>) -> Self {
        Self { code: 3, message: m.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn io_err(e: std::io::Error) -> CliError {
    CliError::runtime(format!("cannot write outputs: {e}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(rename = "H")]
    pub hurst: f64,
    #[serde(default)]
    pub past_window: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftBlock {
    Linear { c: f64, d: f64 },
    Tanh { amplitude: f64, rate: f64 },
    Sine { amplitude: f64, frequency: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaBlock {
    pub tau: f64,
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub density: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialBlock {
    #[default]
    Cosine,
    Constant(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub ns: Vec<usize>,
    pub n_ref: usize,
    /// Defaults to the horizon.
    #[serde(default)]
    pub t_eval: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into()]
}

/// Settings used only by `limit --sn`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnBlock {
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_fine_ratio")]
    pub fine_ratio: usize,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub rule: ZetaRule,
}

fn default_t() -> f64 {
    1.0
}

fn default_fine_ratio() -> usize {
    8
}

fn default_thetas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

impl Default for SnBlock {
    fn default() -> Self {
        Self {
            t: default_t(),
            fine_ratio: default_fine_ratio(),
            thetas: default_thetas(),
            rule: ZetaRule::default(),
        }
    }
}

/// The JSON configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub version: u32,
    pub noise: NoiseBlock,
    pub drift: DriftBlock,
    pub eta: EtaBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    pub grid: GridBlock,
    pub mc: McBlock,
    #[serde(default)]
    pub output: Option<OutputBlock>,
    #[serde(default)]
    pub sn: Option<SnBlock>,
}

impl CliConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical serialisation, recorded next to every output.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Rebuilds every domain object, so that invariant violations surface before any work starts.
    pub fn validated(&self) -> CliResult<Validated> {
        let field = |name: &str, e: fsdde::Error| CliError::invalid(format!("{name}: {e}"));
        if self.version != CONFIG_VERSION {
            return Err(CliError::invalid(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        if let Some(out) = &self.output {
            if let Some(f) = out.formats.iter().find(|f| f.as_str() != "csv") {
                return Err(CliError::invalid(format!("output.formats: unsupported format {f}")));
            }
        }
        let stable = StableParams::new(self.noise.alpha, self.noise.sigma)
            .map_err(|e| field("noise", e))?;
        let noise = LfsmParams::new(stable, self.noise.hurst).map_err(|e| field("noise.H", e))?;
        let eta = DelayMeasure::new(self.eta.tau, self.eta.atoms.clone(), self.eta.density.clone())
            .map_err(|e| field("eta", e))?;
        let drift = match self.drift {
            DriftBlock::Linear { c, d } => Drift::linear(c, d),
            DriftBlock::Tanh { amplitude, rate } => Drift::Tanh { amplitude, rate },
            DriftBlock::Sine { amplitude, frequency } => Drift::Sine { amplitude, frequency },
        };
        let x0 = match self.initial {
            InitialBlock::Cosine => InitialPath::cosine(),
            InitialBlock::Constant(c) => InitialPath::constant(c),
        };
        let spec = SddeSpec::new(drift, eta, x0, noise, self.grid.t_end)
            .map_err(|e| field("grid.T", e))?;
        if self.grid.ns.is_empty() {
            return Err(CliError::invalid("grid.ns: must not be empty"));
        }
        for &n in &self.grid.ns {
            if n == 0 || self.grid.n_ref % n != 0 {
                return Err(CliError::invalid(format!(
                    "grid.ns: {n} does not divide grid.n_ref = {}",
                    self.grid.n_ref
                )));
            }
            spec.steps(n).map_err(|e| field("grid.ns", e))?;
        }
        spec.steps(self.grid.n_ref).map_err(|e| field("grid.n_ref", e))?;
        if let Some(w) = self.noise.past_window {
            if !(w >= 0.0) {
                return Err(CliError::invalid("noise.past_window: must be non-negative"));
            }
        }
        if self.mc.count == 0 {
            return Err(CliError::invalid("mc.count: must be positive"));
        }
        Ok(Validated {
            spec,
            t_eval: self
                .grid
                .t_eval
                .clone()
                .unwrap_or_else(|| vec![self.grid.t_end]),
        })
    }
}

/// Domain objects built from a configuration.
#[derive(Debug, Clone)]
pub struct Validated {
    pub spec: SddeSpec,
    pub t_eval: Vec<f64>,
}

/// Resolved run settings shared by the subcommands.
struct Run {
    config: CliConfig,
    checked: Validated,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: PathBuf,
    digest: String,
}

impl Run {
    fn new(args: &CommonArgs) -> CliResult<Self> {
        let config = CliConfig::load(&args.config)?;
        let checked = config.validated()?;
        let out = args
            .out
            .clone()
            .or_else(|| config.output.as_ref().and_then(|o| o.directory.clone()))
            .ok_or_else(|| CliError::invalid("output.directory: no output directory (use --out)"))?;
        if args.jobs == Some(0) {
            return Err(CliError::invalid("--jobs: must be at least 1"));
        }
        let digest = config.digest();
        Ok(Self {
            seed: args.seed.or(config.mc.seed),
            jobs: args.jobs,
            checked,
            out,
            digest,
            config,
        })
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::invalid("mc.seed: no seed in the configuration and no --seed"))
    }

    fn prepare_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(io_err)
    }

    fn header(&self, seed: Option<u64>) -> Vec<String> {
        let mut h = vec![format!("config_sha256={}", self.digest)];
        if let Some(s) = seed {
            h.push(format!("seed={s}"));
        }
        h
    }

    fn study(&self, ns: Vec<usize>) -> CliResult<StudyConfig> {
        let c = StudyConfig {
            spec: self.checked.spec.clone(),
            ns,
            n_ref: self.config.grid.n_ref,
            mc_count: self.config.mc.count,
            t_eval: self.checked.t_eval.clone(),
            master_seed: self.seed()?,
            past_window: self.config.noise.past_window,
            jobs: self.jobs,
            outputs: Some(self.out.clone()),
        };
        c.validate().map_err(|e| CliError::invalid(e.to_string()))?;
        Ok(c)
    }

    fn append_summary(&self, seed: u64) -> CliResult<()> {
        let path = self.out.join("summary.txt");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        for line in self.header(Some(seed)) {
            writeln!(f, "{line}").map_err(io_err)?;
        }
        Ok(())
    }
}

// Configurations are validated before any study starts, so what remains is a runtime failure.
fn runtime(e: fsdde::Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn write_path(path: &Path, grid: &GridPath, header: &[String]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(io_err)?;
    grid.write_csv(BufWriter::new(file), header).map_err(io_err)
}

/// `path_n{N}.csv` for every `n` and `path_ref.csv` for the reference, all on one noise draw.
pub fn cmd_simulate(args: &CommonArgs) -> CliResult<Vec<PathBuf>> {
    let run = Run::new(args)?;
    let seed = run.seed()?;
    let spec = &run.checked.spec;
    let n_ref = run.config.grid.n_ref;
    let past = run
        .config
        .noise
        .past_window
        .unwrap_or_else(|| default_past_window(spec.t_end));
    let sim = LfsmSimulator::new(spec.noise, spec.t_end, spec.tau() / n_ref as f64, past)
        .map_err(runtime)?;
    let stream = SeededStream::new(seed, 0);
    let (_, z) = sim.simulate(stream).map_err(runtime)?;
    run.prepare_out()?;
    let header = run.header(Some(seed));
    let mut written = Vec::new();
    for &n in &run.config.grid.ns {
        let x = euler_scheme(spec, n, &z, stream.into()).map_err(runtime)?;
        let p = run.out.join(format!("path_n{n}.csv"));
        write_path(&p, &x.path, &header)?;
        written.push(p);
    }
    let r = reference_solution(spec, n_ref, &z, stream.into()).map_err(runtime)?;
    let p = run.out.join("path_ref.csv");
    write_path(&p, &r.path, &header)?;
    written.push(p);
    let p = run.out.join("noise.csv");
    write_path(&p, &z, &header)?;
    written.push(p);
    Ok(written)
}

/// Runs the convergence study (or its planted-rate self-test) and returns the summary line.
pub fn cmd_convergence(args: &CommonArgs, synthetic_rate: Option<f64>) -> CliResult<String> {
    let run = Run::new(args)?;
    let seed = run.seed()?;
    run.prepare_out()?;
    let report = match synthetic_rate {
        Some(rate) => {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(CliError::invalid("--synthetic-rate: must be positive"));
            }
            let r = synthetic_study(
                &run.config.grid.ns,
                run.checked.spec.tau(),
                rate,
                run.config.mc.count,
                seed,
            )
            .map_err(runtime)?;
            r.write_outputs(&run.out).map_err(io_err)?;
            r
        }
        None => convergence_study(&run.study(run.config.grid.ns.clone())?).map_err(runtime)?,
    };
    run.append_summary(seed)?;
    Ok(report.summary_line())
}

/// `phi.csv` for a linear drift; `resolvent.csv` along a seeded reference path otherwise.
pub fn cmd_resolvent(args: &CommonArgs) -> CliResult<PathBuf> {
    let run = Run::new(args)?;
    let spec = &run.checked.spec;
    let n = *run.config.grid.ns.iter().max().expect("validated non-empty");
    let dt = spec.tau() / n as f64;
    run.prepare_out()?;
    if let Some(c) = spec.drift.linear_slope() {
        let phi = phi_solve(&spec.eta, c, spec.t_end, dt).map_err(runtime)?;
        let p = run.out.join("phi.csv");
        let file = fs::File::create(&p).map_err(io_err)?;
        phi.write_csv(BufWriter::new(file)).map_err(io_err)?;
        return Ok(p);
    }
    let seed = run.seed()?;
    let past = run
        .config
        .noise
        .past_window
        .unwrap_or_else(|| default_past_window(spec.t_end));
    let sim = LfsmSimulator::new(spec.noise, spec.t_end, dt, past).map_err(runtime)?;
    let stream = SeededStream::new(seed, 0);
    let (_, z) = sim.simulate(stream).map_err(runtime)?;
    let x = euler_scheme(spec, n, &z, stream.into()).map_err(runtime)?;
    let psi = coefficient_path(spec, &x);
    let r = resolvent_general(&psi, &spec.eta, spec.t_end, dt).map_err(runtime)?;
    let p = run.out.join("resolvent.csv");
    let mut out = BufWriter::new(fs::File::create(&p).map_err(io_err)?);
    for line in run.header(Some(seed)) {
        writeln!(out, "# {line}").map_err(io_err)?;
    }
    writeln!(out, "t,s,R").map_err(io_err)?;
    for i in 0..r.size() {
        for j in 0..=i {
            writeln!(out, "{},{},{}", i as f64 * dt, j as f64 * dt, r.get(i, j)).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)?;
    Ok(p)
}

/// Which limit study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    NonRough,
    Rough,
    Sn,
}

/// Runs the selected limit study; without a selection the regime of the noise decides.
pub fn cmd_limit(args: &CommonArgs, kind: Option<LimitKind>) -> CliResult<String> {
    let run = Run::new(args)?;
    let seed = run.seed()?;
    let noise = run.checked.spec.noise;
    let regime = RateSpec::new(noise.hurst(), noise.alpha())
        .map_err(|e| CliError::invalid(format!("noise.H: {e}")))?
        .regime;
    let kind = kind.unwrap_or(match regime {
        Regime::NonRough => LimitKind::NonRough,
        Regime::Rough => LimitKind::Rough,
    });
    run.prepare_out()?;
    let line = match kind {
        LimitKind::NonRough => nonrough_limit_study(&run.study(run.config.grid.ns.clone())?)
            .map_err(runtime)?
            .summary_line(),
        LimitKind::Rough => {
            let n = *run.config.grid.ns.iter().max().expect("validated non-empty");
            rough_limit_study(&run.study(vec![n])?)
                .map_err(runtime)?
                .summary_line()
        }
        LimitKind::Sn => {
            let block = run.config.sn.clone().unwrap_or_default();
            let cfg = SnConfig {
                noise,
                tau: run.checked.spec.tau(),
                ns: run.config.grid.ns.clone(),
                fine_ratio: block.fine_ratio,
                t: block.t,
                mc_count: run.config.mc.count,
                thetas: block.thetas,
                rule: block.rule,
                master_seed: seed,
                past_window: run.config.noise.past_window,
                jobs: run.jobs,
                outputs: Some(run.out.clone()),
            };
            cfg.validate().map_err(|e| CliError::invalid(e.to_string()))?;
            sn_study(&cfg).map_err(runtime)?.summary_line()
        }
    };
    run.append_summary(seed)?;
    Ok(line)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(common) => {
            for p in cmd_simulate(common)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Convergence {
            common,
            synthetic_rate,
        } => println!("{}", cmd_convergence(common, *synthetic_rate)?),
        Command::Resolvent(common) => {
            let p = cmd_resolvent(common)?;
            log::info!("wrote {}", p.display());
        }
        Command::Limit {
            common,
            nonrough,
            rough,
            sn,
        } => {
            let kind = match (nonrough, rough, sn) {
                (true, _, _) => Some(LimitKind::NonRough),
                (_, true, _) => Some(LimitKind::Rough),
                (_, _, true) => Some(LimitKind::Sn),
                _ => None,
            };
            println!("{}", cmd_limit(common, kind)?);
        }
    }
    Ok(())
}
