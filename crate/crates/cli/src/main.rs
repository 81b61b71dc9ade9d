use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use j2r_core::ate_analysis::estimate;
use j2r_core::sim_bench::write_records_csv;
use j2r_core::{
    load_csv, reproduce, run_mc, Error, Form, ImputationConfig, LoadOptions, LossSpec, McConfig,
    Method, NuPolicy, PipelineConfig, Scenario, TableId, VarianceMethod, WeightMode,
};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "j2r", version, about = "Robust jump-to-reference treatment effect estimation")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the treatment effect on a trial CSV.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study for one scenario.
    Simulate(SimulateArgs),
    /// Rerun the scenarios behind a published table and check tolerance bands.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LossArg {
    Ls,
    Huber,
    Abs,
    Eps,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormArg {
    Interaction,
    Main,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Interaction => Form::Interaction,
            FormArg::Main => Form::MainEffects,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum VarianceArg {
    Linearized,
    Bootstrap,
    Both,
}

impl From<VarianceArg> for VarianceMethod {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Linearized => VarianceMethod::Linearized,
            VarianceArg::Bootstrap => VarianceMethod::Bootstrap,
            VarianceArg::Both => VarianceMethod::Both,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Analysis-model loss.
    #[arg(long, value_enum, default_value = "huber")]
    loss: LossArg,
    /// Huber threshold multiplier on the robust scale.
    #[arg(long, default_value_t = 1.345)]
    huber_l: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Covariate-weight tuning: `fixed:<v>` (`fixed:inf` for no weighting) or `cv`.
    #[arg(long, default_value = "fixed:10")]
    nu: String,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    #[arg(long, value_enum, default_value = "interaction")]
    form: FormArg,
    #[arg(long, value_enum, default_value = "linearized")]
    variance: VarianceArg,
    #[arg(long, default_value_t = 200)]
    bootstrap_b: usize,
    /// Truncate non-monotone rows at the first missing visit instead of failing.
    #[arg(long)]
    force_monotone: bool,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Scenario name, e.g. `h1-normal-both`.
    #[arg(long, conflicts_with = "scenario_file")]
    scenario: Option<String>,
    /// Scenario definition in TOML.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 10)]
    mi_m: usize,
    /// Per-replicate results as CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReproduceArgs {
    /// One of 1b, 1c, S1, S2, S3.
    table: String,
    /// Defaults to the replicate count the tolerance bands were set for.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 10)]
    mi_m: usize,
}

fn parse_nu(s: &str, folds: usize, seed: u64) -> Result<NuPolicy, Error> {
    if s == "cv" {
        return Ok(match NuPolicy::default_cv(seed) {
            NuPolicy::Cv { grid, seed, .. } => NuPolicy::Cv { grid, folds, seed },
            fixed => fixed,
        });
    }
    let v = s
        .strip_prefix("fixed:")
        .ok_or_else(|| Error::Config(format!("--nu must be `fixed:<v>` or `cv`, got `{s}`")))?;
    let nu: f64 = match v {
        "inf" | "infinity" => f64::INFINITY,
        _ => v
            .parse()
            .map_err(|_| Error::Config(format!("invalid --nu value `{v}`")))?,
    };
    if !(nu > 0.0) {
        return Err(Error::Config(format!("--nu must be positive, got {nu}")));
    }
    Ok(NuPolicy::Fixed(nu))
}

fn loss_spec(a: &AnalyzeArgs) -> LossSpec {
    match a.loss {
        LossArg::Ls => LossSpec::least_squares(),
        LossArg::Huber => LossSpec::huber(a.huber_l),
        LossArg::Abs => LossSpec::absolute(),
        LossArg::Eps => LossSpec::eps_insensitive(a.eps),
    }
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn analyze(a: &AnalyzeArgs, seed: u64) -> Result<(Value, bool), Error> {
    let loss = loss_spec(a);
    loss.validate()?;
    let cfg = PipelineConfig {
        imputation: ImputationConfig {
            loss: LossSpec::huber(a.huber_l),
            nu: parse_nu(&a.nu, a.cv_folds, seed)?,
            mode: WeightMode::Normalized,
        },
        analysis_loss: loss,
        form: a.form.into(),
    };
    let d = load_csv(&a.input, None, LoadOptions { force_monotone: a.force_monotone })?;
    log::info!("loaded {} subjects, {} visits, {} baseline columns", d.n(), d.t(), d.p());
    let est = estimate(&d, &cfg, a.variance.into(), a.bootstrap_b, seed)?;
    let report = json!({
        "command": "analyze",
        "args": a,
        "pipeline": cfg,
        "n": d.n(),
        "visits": d.t(),
        "estimate": est,
    });
    Ok((report, true))
}

fn load_scenario(a: &SimulateArgs) -> Result<Scenario, Error> {
    match (&a.scenario, &a.scenario_file) {
        (Some(name), None) => Scenario::preset(name),
        (None, Some(path)) => Scenario::load(path),
        _ => Err(Error::Config("give either --scenario or --scenario-file".into())),
    }
}

fn simulate(a: &SimulateArgs, seed: u64) -> Result<(Value, bool), Error> {
    let sc = load_scenario(a)?;
    let cfg = McConfig {
        reps: a.reps,
        bootstrap_b: a.bootstrap_b,
        mi_m: a.mi_m,
        seed,
        methods: Method::ALL.to_vec(),
        ..McConfig::default()
    };
    let run = run_mc(&sc, &cfg)?;
    if let Some(path) = &a.records {
        write_records_csv(&run.records, path)?;
    }
    Ok((json!({ "command": "simulate", "args": a, "report": run.report }), true))
}

fn reproduce_table(a: &ReproduceArgs, seed: u64) -> Result<(Value, bool), Error> {
    let table: TableId = a.table.parse()?;
    let cfg = McConfig {
        reps: a.reps.unwrap_or(table.default_reps()),
        bootstrap_b: a.bootstrap_b,
        mi_m: a.mi_m,
        seed,
        ..McConfig::default()
    };
    let (report, _) = reproduce(table, &cfg)?;
    for c in &report.comparisons {
        eprintln!(
            "{} {:<22} {:<48} published={:<10} reproduced={:<10.4} band={}",
            if c.pass { "PASS" } else { "FAIL" },
            c.scenario,
            c.metric,
            c.published.map(|p| format!("{p:.4}")).unwrap_or_else(|| "-".into()),
            c.reproduced,
            c.tolerance
        );
    }
    let pass = report.all_pass;
    Ok((json!({ "command": "reproduce", "args": a, "report": report }), pass))
}

fn emit(value: &Value, out: Option<&PathBuf>) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(path) => std::fs::write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("J2R_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let result = match &cli.command {
        Command::Analyze(a) => analyze(a, seed),
        Command::Simulate(a) => simulate(a, seed),
        Command::Reproduce(a) => reproduce_table(a, seed),
    };
    let (mut value, code) = match result {
        Ok((v, pass)) => (v, if pass { 0 } else { 1 }),
        Err(e) => {
            log::error!("{e}");
            let err = json!({
                "error": {
                    "kind": e.root().kind(),
                    "context": (e.root().kind() != e.kind()).then(|| e.kind()),
                    "message": e.to_string(),
                }
            });
            (err, 2)
        }
    };
    let obj = value.as_object_mut().expect("report is an object");
    obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    obj.insert("seed".into(), json!(seed));
    obj.insert("threads".into(), json!(cli.threads));
    obj.insert("timestamp".into(), json!(timestamp()));
    if let Err(e) = emit(&value, cli.out.as_ref()) {
        eprintln!("cannot write report: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
