//! Command-line front end.
//!
//! Every flag mirrors a config key. A run starts from the `--config` file (or
//! nothing), overlays the flags given on the command line and then parses the
//! result exactly as a config file would be parsed, so any invocation can be
//! replayed from the config dumped into the `.meta.json` file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{parse_config, run_experiment, write_results, ExperimentConfig, ExperimentKind};

#[derive(Debug, Parser)]
#[command(name = "attnsphere", version, about = "Attention dynamics on the unit sphere")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and record every diagnostic.
    Simulate(SimulateArgs),
    /// Synchronization probability over a (beta, t) grid.
    Sweep(SweepArgs),
    /// Scalar equiangular reduction: rho(t) and the threshold crossing time.
    Equiangular(EquiangularArgs),
    /// Output correlation of one long-context attention layer.
    Longcontext(LongContextArgs),
    /// Mode counts of one-dimensional kernel density estimates.
    Modes(ModesArgs),
    /// Order parameter of the noisy flow across noise strengths.
    Noisy(NoisyArgs),
    /// Energy plateaus and jumps from a multi-cluster start.
    Staircase(StaircaseArgs),
    /// Cosine similarity under Post-LN, Pre-LN and Peri-LN.
    Norms(NormsArgs),
    /// Per-seed synchronization times from random starts.
    Validate(ValidateArgs),
}

/// Keys shared by every experiment.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Main CSV path (`output`); siblings share its stem.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Base seed (`seed`); replicate r uses seed + r. Drops any `seeds` list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of replicates (`replicates`).
    #[arg(long)]
    pub replicates: Option<u64>,
    /// Explicit seed list (`seeds`), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Cluster and synchronization threshold (`tau`).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// `integrator.method`: projected_euler or projected_rk4.
    #[arg(long)]
    pub method: Option<String>,
    /// `integrator.dt`.
    #[arg(long)]
    pub dt: Option<f64>,
    /// `integrator.record_every` (steps between records).
    #[arg(long)]
    pub record_every: Option<u64>,
    /// `integrator.max_rotation_per_step` (chord length, radians).
    #[arg(long)]
    pub max_rotation_per_step: Option<f64>,
    /// Print nothing on success.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// sa, usa, kuramoto, hardmax or normalized_attention.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    /// Final time.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// uniform, equiangular or points.
    #[arg(long)]
    pub init: Option<String>,
    /// Common inner product for init = equiangular.
    #[arg(long, allow_negative_numbers = true)]
    pub rho0: Option<f64>,
    /// Unit vectors for init = points, e.g. "1,0,0;0,1,0".
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// Token masses, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub masses: Option<Vec<f64>>,
    /// post_ln, pre_ln or peri_ln for normalized attention.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Inverse noise strength; switches to the noisy flow.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// frozen or tracking; switches to SA in rescaled time.
    #[arg(long)]
    pub rescale: Option<String>,
    /// none, diagnostics or full.
    #[arg(long)]
    pub snapshots: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Last grid time when `times` is not given.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of evenly spaced grid times on [0, t_max].
    #[arg(long)]
    pub t_points: Option<u64>,
    /// Explicit time grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EquiangularArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// sa or usa.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub t_points: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LongContextArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input correlations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Temperature exponents, beta = gamma ln n.
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Sequence lengths (reals, e.g. 1e8).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Sample size.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct NoisyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub kappas: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Records before this time are excluded from the average.
    #[arg(long)]
    pub burn_in: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StaircaseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Cluster directions, e.g. "1,0,0;0,1,0".
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub masses: Option<Vec<f64>>,
    /// Plateau window as a fraction of the horizon.
    #[arg(long)]
    pub window_fraction: Option<f64>,
    /// Largest relative energy variation inside a plateau.
    #[arg(long)]
    pub rel_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct NormsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Subset of post_ln, pre_ln, peri_ln.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Exponential fit window for Post-LN, "start,end".
    #[arg(long, value_delimiter = ',')]
    pub post_window: Option<Vec<f64>>,
    /// Power-law fit window for Pre-LN, "start,end".
    #[arg(long, value_delimiter = ',')]
    pub pre_window: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Gap range of the exponential fit, "low,high".
    #[arg(long, value_delimiter = ',')]
    pub fit_gaps: Option<Vec<f64>>,
}

/// Collects `(key, value)` pairs for the flags that were given.
#[derive(Default)]
struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    fn float(&mut self, key: &'static str, v: Option<f64>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, Value::Float(v)));
        }
        self
    }

    fn int(&mut self, key: &'static str, v: Option<u64>) -> &mut Self {
        if let Some(v) = v {
            // Out-of-range values surface as type errors naming the key.
            let value = i64::try_from(v).map_or(Value::Float(v as f64), Value::Integer);
            self.0.push((key, value));
        }
        self
    }

    fn text(&mut self, key: &'static str, v: &Option<String>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, Value::String(v.clone())));
        }
        self
    }

    fn floats(&mut self, key: &'static str, v: &Option<Vec<f64>>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, Value::Array(v.iter().map(|x| Value::Float(*x)).collect())));
        }
        self
    }

    fn texts(&mut self, key: &'static str, v: &Option<Vec<String>>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, Value::Array(v.iter().cloned().map(Value::String).collect())));
        }
        self
    }

    fn points(&mut self, key: &'static str, v: &Option<String>) -> Result<&mut Self> {
        if let Some(text) = v {
            let rows = text
                .split(';')
                .map(|row| {
                    row.split(',')
                        .map(|c| {
                            c.trim().parse::<f64>().map(Value::Float).map_err(|e| {
                                Error::Config(format!("`{key}`: cannot parse {c:?}: {e}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                        .map(Value::Array)
                })
                .collect::<Result<Vec<_>>>()?;
            self.0.push((key, Value::Array(rows)));
        }
        Ok(self)
    }
}

impl Command {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Command::Simulate(_) => ExperimentKind::Simulate,
            Command::Sweep(_) => ExperimentKind::Sweep,
            Command::Equiangular(_) => ExperimentKind::Equiangular,
            Command::Longcontext(_) => ExperimentKind::Longcontext,
            Command::Modes(_) => ExperimentKind::Modes,
            Command::Noisy(_) => ExperimentKind::Noisy,
            Command::Staircase(_) => ExperimentKind::Staircase,
            Command::Norms(_) => ExperimentKind::Norms,
            Command::Validate(_) => ExperimentKind::Validate,
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Equiangular(a) => &a.common,
            Command::Longcontext(a) => &a.common,
            Command::Modes(a) => &a.common,
            Command::Noisy(a) => &a.common,
            Command::Staircase(a) => &a.common,
            Command::Norms(a) => &a.common,
            Command::Validate(a) => &a.common,
        }
    }

    fn section_overrides(&self) -> Result<Overrides> {
        let mut o = Overrides::default();
        match self {
            Command::Simulate(a) => {
                o.text("model", &a.model)
                    .float("beta", a.beta)
                    .int("n", a.n)
                    .int("d", a.d)
                    .float("horizon", a.horizon)
                    .text("init", &a.init)
                    .float("rho0", a.rho0)
                    .points("points", &a.points)?
                    .floats("masses", &a.masses)
                    .text("scheme", &a.scheme)
                    .float("kappa", a.kappa)
                    .text("rescale", &a.rescale)
                    .text("snapshots", &a.snapshots);
            }
            Command::Sweep(a) => {
                o.text("model", &a.model)
                    .int("n", a.n)
                    .int("d", a.d)
                    .floats("betas", &a.betas)
                    .float("t_max", a.t_max)
                    .int("t_points", a.t_points)
                    .floats("times", &a.times);
            }
            Command::Equiangular(a) => {
                o.text("model", &a.model)
                    .int("n", a.n)
                    .float("beta", a.beta)
                    .float("rho0", a.rho0)
                    .float("t_final", a.t_final)
                    .int("t_points", a.t_points);
            }
            Command::Longcontext(a) => {
                o.floats("rho", &a.rho).floats("gamma", &a.gamma).floats("n", &a.n);
            }
            Command::Modes(a) => {
                o.int("n", a.n).floats("betas", &a.betas);
            }
            Command::Noisy(a) => {
                o.int("n", a.n)
                    .int("d", a.d)
                    .float("beta", a.beta)
                    .floats("kappas", &a.kappas)
                    .float("horizon", a.horizon)
                    .float("burn_in", a.burn_in);
            }
            Command::Staircase(a) => {
                o.float("beta", a.beta)
                    .float("horizon", a.horizon)
                    .points("points", &a.points)?
                    .floats("masses", &a.masses)
                    .float("window_fraction", a.window_fraction)
                    .float("rel_threshold", a.rel_threshold);
            }
            Command::Norms(a) => {
                o.int("n", a.n)
                    .int("d", a.d)
                    .float("rho0", a.rho0)
                    .float("beta", a.beta)
                    .texts("schemes", &a.schemes)
                    .float("horizon", a.horizon)
                    .floats("post_window", &a.post_window)
                    .floats("pre_window", &a.pre_window);
            }
            Command::Validate(a) => {
                o.text("model", &a.model)
                    .int("n", a.n)
                    .int("d", a.d)
                    .float("beta", a.beta)
                    .float("horizon", a.horizon)
                    .floats("fit_gaps", &a.fit_gaps);
            }
        }
        Ok(o)
    }
}

const KINDS: [&str; 9] = [
    "simulate",
    "sweep",
    "equiangular",
    "longcontext",
    "modes",
    "noisy",
    "staircase",
    "norms",
    "validate",
];

/// The effective config: file contents with the flags laid over them.
pub fn effective_config(command: &Command) -> Result<ExperimentConfig> {
    let common = command.common();
    let kind = command.kind().name();
    let mut doc: Table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            text.parse::<Table>()
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => Table::new(),
    };
    let at_path = |msg: String| match &common.config {
        Some(p) => Error::Config(format!("{}: {msg}", p.display())),
        None => Error::Config(msg),
    };
    if let Some(other) = KINDS.iter().find(|k| **k != kind && doc.contains_key(**k)) {
        return Err(at_path(format!("config has a [{other}] section but the subcommand is `{kind}`")));
    }

    let mut top = Overrides::default();
    top.int("seed", common.seed)
        .int("replicates", common.replicates)
        .float("tau", common.tau);
    if let Some(seeds) = &common.seeds {
        top.0.push(("seeds", Value::Array(seeds.iter().map(|s| Value::Integer(*s as i64)).collect())));
    } else if common.seed.is_some() {
        doc.remove("seeds");
    }
    if let Some(out) = &common.output {
        top.0.push(("output", Value::String(out.display().to_string())));
    }
    for (k, v) in top.0 {
        doc.insert(k.into(), v);
    }

    let mut integ = Overrides::default();
    integ
        .text("method", &common.method)
        .float("dt", common.dt)
        .int("record_every", common.record_every)
        .float("max_rotation_per_step", common.max_rotation_per_step);
    merge_section(&mut doc, "integrator", integ, false).map_err(at_path)?;
    merge_section(&mut doc, kind, command.section_overrides()?, true).map_err(at_path)?;

    let text = toml::to_string(&doc).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => at_path(msg),
        other => other,
    })
}

fn merge_section(
    doc: &mut Table,
    name: &str,
    o: Overrides,
    always: bool,
) -> std::result::Result<(), String> {
    if o.0.is_empty() && !always {
        return Ok(());
    }
    let entry = doc.entry(name.to_string()).or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(section) = entry else {
        return Err(format!("`{name}` must be a table"));
    };
    for (k, v) in o.0 {
        section.insert(k.into(), v);
    }
    Ok(())
}

/// Runs one parsed invocation, writing human-facing output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(&cli.command)?;
    let common = cli.command.common();
    let kind = cli.command.kind();
    let start = std::time::Instant::now();
    let result = run_experiment(&cfg, common.jobs)?;
    let elapsed = start.elapsed().as_secs_f64();
    // The cheap reductions only print unless an output path is given.
    let path = match (&cfg.output, kind) {
        (Some(p), _) => Some(p.clone()),
        (None, ExperimentKind::Equiangular | ExperimentKind::Longcontext) => None,
        (None, k) => Some(PathBuf::from(format!("{}.csv", k.name()))),
    };
    let written = match &path {
        Some(p) => Some(write_results(&result, &cfg, p, elapsed)?),
        None => None,
    };
    if common.quiet {
        return Ok(());
    }
    let io = |e| Error::io(Path::new("<stdout>"), e);
    if matches!(
        kind,
        ExperimentKind::Equiangular | ExperimentKind::Longcontext | ExperimentKind::Modes | ExperimentKind::Noisy
    ) {
        write!(out, "{}", result.main().to_csv(&cfg.digest()?, &cfg.seed_list())?).map_err(io)?;
    }
    writeln!(out, "# summary: {}", serde_json::to_string(&result.summary)?).map_err(io)?;
    if let Some(files) = written {
        for f in files.all() {
            writeln!(out, "# wrote {}", f.display()).map_err(io)?;
        }
    }
    Ok(())
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_config_error() {
        2
    } else {
        1
    }
}

/// Parses `argv`, runs it and maps the outcome to a process exit status.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
