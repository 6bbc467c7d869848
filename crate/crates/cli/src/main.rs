use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use augbin::infer::{self, DeltaOptions, ResultRow};
use augbin::modelfit;
use augbin::respprob::{EndpointKind, EndpointSpec, Method, QuadratureConfig};
use augbin::simharness::{self, HarnessOptions, Scenario};
use augbin::trialdata::{self, Arm, DatasetConfig, TrialDataset};
use augbin::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Augmented binary estimation of tumour-response probabilities.
#[derive(Parser, Debug)]
#[command(name = "augbin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the models to a dataset and report response estimates and, for
    /// two-arm data, difference tests.
    Analyze(AnalyzeArgs),
    /// Operating characteristics (mean estimate, coverage, CI-width reduction)
    /// of a single-arm scenario.
    Simulate(SimulateArgs),
    /// Power curve of the two-arm difference tests over a grid of effects.
    Power(PowerArgs),
    /// Permutation test of no arm difference.
    Permtest(PermtestArgs),
    /// List the bundled scenario presets, or print one.
    Presets {
        /// Print this preset in scenario-file format.
        name: Option<String>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Significance level; intervals have coverage 1 − alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Random seed (quadrature, replicates, permutations).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EndpointArgs {
    /// Response endpoint.
    #[arg(long, value_enum)]
    endpoint: Option<EndpointArg>,
    /// Endpoint horizon (last visit assessed).
    #[arg(long)]
    time: Option<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EndpointArg {
    Fixed,
    Bor,
    BorConfirmed,
}

impl From<EndpointArg> for EndpointKind {
    fn from(e: EndpointArg) -> Self {
        match e {
            EndpointArg::Fixed => EndpointKind::FixedTime,
            EndpointArg::Bor => EndpointKind::BorUnconfirmed,
            EndpointArg::BorConfirmed => EndpointKind::BorConfirmed,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Bundled scenario preset (see `augbin presets`); a unique prefix is enough.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Long-format CSV: patient_id, arm, visit, size_mm, new_lesion.
    data: PathBuf,
    /// Dataset configuration (horizon, thresholds); defaults to `<stem>.cfg`
    /// next to the CSV when present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Methods: `all` or a comma-separated list of bin, eaugbin, maug.
    #[arg(long, default_value = "all")]
    method: String,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Number of replicates.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Methods: `all` or a comma-separated list of bin, eaugbin, maug.
    #[arg(long, default_value = "bin,maug")]
    method: String,
    /// Monte-Carlo patients for the true response probability.
    #[arg(long, default_value_t = simharness::DEFAULT_TRUE_SAMPLES)]
    true_samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Effect grid: `start:stop:step` or a comma-separated list of tau values.
    #[arg(long, default_value = "0:0.5:0.1")]
    tau_grid: String,
    /// Replicates per grid point.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Methods: `all` or a comma-separated list of bin, eaugbin, maug.
    #[arg(long, default_value = "bin,maug")]
    method: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PermtestArgs {
    /// Two-arm dataset CSV; alternatively simulate one with --preset/--scenario.
    data: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Replicate index of the simulated dataset.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Effect tau of the simulated dataset.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Number of permutations.
    #[arg(long, default_value_t = infer::DEFAULT_PERMUTATIONS)]
    nperm: usize,
    /// Method: bin, eaugbin or maug.
    #[arg(long, default_value = "maug")]
    method: String,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TooManyFailures { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(a) => with_pool(&a.common, || analyze(&a)),
        Command::Simulate(a) => with_pool(&a.common, || simulate(&a)),
        Command::Power(a) => with_pool(&a.common, || power(&a)),
        Command::Permtest(a) => with_pool(&a.common, || permtest(&a)),
        Command::Presets { name } => presets(name.as_deref()),
    }
}

fn with_pool(common: &Common, f: impl FnOnce() -> CliResult<()> + Send) -> CliResult<()> {
    if !(common.alpha > 0.0 && common.alpha < 0.5) {
        return Err(Failure::Usage(format!("--alpha must lie in (0, 0.5), got {}", common.alpha)));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(f)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn schema_line(w: &mut dyn Write, command: &str, schema: &str) -> io::Result<()> {
    writeln!(w, "# augbin {VERSION} {command} schema={schema}/1")
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut out: Vec<Method> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("no methods selected".into()));
    }
    Ok(out)
}

fn quadrature(seed: Option<u64>) -> QuadratureConfig {
    let q = QuadratureConfig::default();
    seed.map_or(q, |s| q.with_seed(s))
}

fn delta_options(seed: Option<u64>) -> DeltaOptions {
    DeltaOptions {
        quad: quadrature(seed),
        ..DeltaOptions::default()
    }
}

fn endpoint_for(args: &EndpointArgs, data: &TrialDataset, default: Option<EndpointSpec>) -> CliResult<EndpointSpec> {
    let base = default.unwrap_or_else(|| EndpointSpec::fixed(data.horizon));
    let kind = args.endpoint.map(EndpointKind::from).unwrap_or(base.kind);
    let time = args.time.unwrap_or(if default.is_some() { base.horizon } else { data.horizon });
    if time == 0 || time > data.horizon {
        return Err(Failure::Usage(format!("--time must lie in 1..={}, got {time}", data.horizon)));
    }
    let spec = EndpointSpec::new(kind, time).with_thresholds(&data.thresholds);
    spec.validate()?;
    Ok(spec)
}

fn load_scenario(args: &ScenarioArgs, seed: Option<u64>, arms: Option<usize>) -> CliResult<Scenario> {
    let mut s = match (&args.preset, &args.scenario) {
        (Some(name), _) => Scenario::preset(name, arms)?,
        (None, Some(path)) => Scenario::load(path)?,
        (None, None) => return Err(Failure::Usage("give --preset or --scenario".into())),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let cfg = a.config.as_ref().map(DatasetConfig::load).transpose()?;
    let data = trialdata::load_csv(&a.data, cfg.as_ref())?;
    let spec = endpoint_for(&a.endpoint, &data, None)?;
    let methods = parse_methods(&a.method)?;
    let opts = delta_options(a.common.seed);
    let two_arm = data.is_two_arm();
    let model = if methods.iter().any(|&m| m != Method::Bin) {
        Some(modelfit::assemble(&data, two_arm)?)
    } else {
        None
    };
    if let Some(m) = &model {
        for w in &m.warnings {
            log::warn!("{w}");
        }
    }
    let arms: Vec<Option<Arm>> = if two_arm {
        vec![Some(Arm::Control), Some(Arm::Experimental)]
    } else {
        vec![None]
    };
    let mut rows = Vec::new();
    for &method in &methods {
        for &arm in &arms {
            let e = match (&model, method) {
                (_, Method::Bin) => infer::bin_estimate(&data, &spec, a.common.alpha, arm)?,
                (Some(m), _) => infer::ci_logit_delta(&data, m, &spec, method, a.common.alpha, arm, &opts)?,
                (None, _) => unreachable!("model fitted for model-based methods"),
            };
            rows.push(ResultRow::estimate(&e, arm));
        }
        if two_arm {
            let t = match (&model, method) {
                (_, Method::Bin) => infer::bin_two_arm_test(&data, &spec, a.common.alpha)?,
                (Some(m), _) => infer::wald_difference_test(&data, m, &spec, method, a.common.alpha, &opts)?,
                (None, _) => unreachable!("model fitted for model-based methods"),
            };
            rows.push(ResultRow::test(&t));
        }
    }
    let mut w = output(a.common.out.as_deref())?;
    match a.format {
        Format::Csv => {
            schema_line(&mut w, "analyze", "results")?;
            let mut csv = csv::Writer::from_writer(&mut w);
            for r in &rows {
                csv.serialize(r).map_err(Error::from)?;
            }
            csv.flush()?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "tool": "augbin",
                "version": VERSION,
                "schema": "results/1",
                "endpoint": spec.kind.to_string(),
                "time": spec.horizon,
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Failure::Core(Error::Io(e.into())))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let s = load_scenario(&a.scenario, a.common.seed, Some(1))?;
    let methods = parse_methods(&a.method)?;
    if a.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let opts = HarnessOptions {
        alpha: a.common.alpha,
        true_samples: a.true_samples,
        ..HarnessOptions::default()
    };
    eprintln!("{}: estimating the true response probability", s.name);
    let truth = simharness::true_probability(&s, None, a.true_samples.max(1));
    eprintln!("{}: true = {:.4}; running {} replicates", s.name, truth.0, a.reps);
    let oc = simharness::run_single_arm(&s, &methods, a.reps, Some(truth), &opts)?;
    eprintln!("{}: done ({} failed)", s.name, oc.failures);
    let mut w = output(a.common.out.as_deref())?;
    schema_line(&mut w, "simulate", "operating-characteristics")?;
    oc.write_csv(&mut w, true)?;
    w.flush()?;
    Ok(())
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad number `{t}` in --tau-grid")));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(Failure::Usage("--tau-grid needs start <= stop and step > 0".into()));
            }
            let k = ((b - a) / step + 1e-9).floor() as usize;
            (0..=k).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
        }
        [_] => s.split(',').map(num).collect::<CliResult<Vec<f64>>>()?,
        _ => return Err(Failure::Usage(format!("cannot parse --tau-grid `{s}`"))),
    };
    if grid.is_empty() {
        return Err(Failure::Usage("empty --tau-grid".into()));
    }
    Ok(grid)
}

fn power(a: &PowerArgs) -> CliResult<()> {
    let s = load_scenario(&a.scenario, a.common.seed, Some(2))?;
    let methods = parse_methods(&a.method)?;
    let grid = parse_grid(&a.tau_grid)?;
    if a.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let opts = HarnessOptions {
        alpha: a.common.alpha,
        ..HarnessOptions::default()
    };
    eprintln!("{}: {} grid points x {} replicates", s.name, grid.len(), a.reps);
    let rows = simharness::run_two_arm_power(&s, &grid, &methods, a.reps, &opts)?;
    let mut w = output(a.common.out.as_deref())?;
    schema_line(&mut w, "power", "power-curve")?;
    simharness::write_power_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn permtest(a: &PermtestArgs) -> CliResult<()> {
    let (data, default_spec) = match &a.data {
        Some(path) => (trialdata::load_csv(path, None)?, None),
        None => {
            let s = load_scenario(&a.scenario, a.common.seed, Some(2))?.with_tau(a.tau);
            (simharness::generate(&s, a.replicate), Some(s.endpoint_spec()))
        }
    };
    let spec = endpoint_for(&a.endpoint, &data, default_spec)?;
    let method: Method = a.method.parse()?;
    let seed = a.common.seed.unwrap_or(1);
    let opts = delta_options(a.common.seed);
    eprintln!("permutation test: {} permutations", a.nperm);
    let r = infer::permutation_test(&data, &spec, method, a.nperm, seed, &opts)?;
    let mut w = output(a.common.out.as_deref())?;
    schema_line(&mut w, "permtest", "permutation")?;
    writeln!(w, "kind,index,value")?;
    writeln!(w, "observed,0,{}", r.observed)?;
    writeln!(w, "p_value,0,{}", r.p_value)?;
    writeln!(w, "failures,0,{}", r.failures)?;
    for (i, s) in r.distribution.iter().enumerate() {
        writeln!(w, "permutation,{},{}", i + 1, s)?;
    }
    w.flush()?;
    Ok(())
}

fn presets(name: Option<&str>) -> CliResult<()> {
    let mut w = output(None)?;
    match name {
        Some(n) => write!(w, "{}", Scenario::preset(n, None)?.to_text())?,
        None => {
            for n in simharness::preset_names() {
                let s = Scenario::preset(n, None)?;
                writeln!(w, "{n}\t{}-arm {} T={} n={} (alpha, gamma) = ({}, {})", s.arms, s.endpoint, s.time, s.n, s.alpha, s.gamma)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
