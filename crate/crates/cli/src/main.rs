use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use incpca::estimators::{InitMode, Rule};
use incpca::harness::{self, CounterexampleConfig, ExperimentConfig};
use incpca::theory::{BoundParams, RateConstants};
use incpca::verify::{self, SuiteScale};

/// Incremental PCA experiments: convergence runs, slopes, bounds and checks.
#[derive(Debug, Parser)]
#[command(name = "incpca", version)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output file; defaults to a file under $INCPCA_OUT_DIR (or ./out).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    /// Write the CSV to stdout instead of a file.
    #[arg(long, global = true)]
    stdout: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Multi-trial convergence experiment; writes per-grid-point Psi summaries.
    Run(Box<RunArgs>),
    /// Log-log slope of a column of a trace CSV.
    Slope(SlopeArgs),
    /// Orthogonality-trap experiment on the coordinate distribution.
    Counterexample(CounterexampleArgs),
    /// Epoch schedule table with its audit.
    Schedule(ScheduleArgs),
    /// Rate bound as a CSV of (n, bound).
    Bound(BoundArgs),
    /// Lemma-level verification suite; exits nonzero if any check fails.
    Verify(VerifyArgs),
}

/// Flags override values from `--config`.
#[derive(Debug, Args)]
struct RunArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// coordinate | gaussian | csv
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    d: Option<String>,
    /// Comma-separated spectrum for the gaussian source.
    #[arg(long)]
    eigenvalues: Option<String>,
    #[arg(long)]
    rotate: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    /// Data file for the csv source.
    #[arg(long)]
    path: Option<String>,
    #[arg(long)]
    center: Option<String>,
    /// krasulina | oja | block_oja_<p>
    #[arg(long)]
    rule: Option<String>,
    /// random_unit | first_point | average_<k>
    #[arg(long)]
    init: Option<String>,
    #[arg(long, conflicts_with = "c_o")]
    c: Option<String>,
    #[arg(long = "c-o")]
    c_o: Option<String>,
    #[arg(long = "n-o")]
    n_o: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Number of log-spaced recording points.
    #[arg(long)]
    grid: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(path) => harness::parse_kv_file(path)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("source", &self.source),
            ("p", &self.p),
            ("sigma", &self.sigma),
            ("d", &self.d),
            ("eigenvalues", &self.eigenvalues),
            ("rotate", &self.rotate),
            ("clip", &self.clip),
            ("path", &self.path),
            ("center", &self.center),
            ("rule", &self.rule),
            ("init", &self.init),
            ("c", &self.c),
            ("c_o", &self.c_o),
            ("n_o", &self.n_o),
            ("horizon", &self.horizon),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("grid", &self.grid),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                // A rate flag replaces whichever rate the file gave.
                if key == "c" {
                    map.remove("c_o");
                } else if key == "c_o" {
                    map.remove("c");
                }
                map.insert(key.to_string(), v.clone());
            }
        }
        Ok(ExperimentConfig::from_map(&map)?)
    }
}

#[derive(Debug, Args)]
struct SlopeArgs {
    /// Trace CSV with an `n` column.
    input: PathBuf,
    #[arg(long, default_value = "mean_psi")]
    column: String,
    /// Window start; defaults to a tenth of the last n.
    #[arg(long)]
    n_min: Option<u64>,
    #[arg(long)]
    n_max: Option<u64>,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    #[arg(long, default_value_t = 0.2)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value = "first_point")]
    init: InitMode,
    #[arg(long, default_value = "oja")]
    rule: Rule,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    horizon: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long = "c-o", default_value_t = 4.0)]
    c_o: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Start time; defaults to the smallest admissible one.
    #[arg(long = "n-o")]
    n_o: Option<u64>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long = "c-o", default_value_t = 4.0)]
    c_o: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    /// Start time; defaults to the theorem's prescription.
    #[arg(long = "n-o")]
    n_o: Option<u64>,
    /// Last n; defaults to 1000 n_o.
    #[arg(long)]
    n_max: Option<u64>,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample-size multiplier; 1 is the full suite.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

fn emit(cli: &Cli, default_name: &str, csv: &str) -> Result<()> {
    if cli.stdout {
        print!("{csv}");
        return Ok(());
    }
    let path = match &cli.output {
        Some(p) => p.clone(),
        None => harness::default_out_dir().join(default_name),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let agg = harness::run_experiment(&cfg)?;
            if !agg.failed.is_empty() {
                eprintln!("{} of {} trials failed", agg.failed.len(), cfg.trials);
            }
            emit(
                cli,
                &harness::output_file_name(&cfg),
                &harness::write_aggregate_csv(&cfg, &agg),
            )?;
        }
        Command::Slope(args) => {
            let points = harness::read_trace_csv(&args.input, &args.column)?;
            let Some(&(last, _)) = points.last() else {
                bail!("{} has no data rows", args.input.display());
            };
            let fit = harness::estimate_slope(&points, args.n_min.unwrap_or(last / 10), args.n_max.unwrap_or(last))?;
            if fit.shrunk {
                eprintln!("window cut at the first nonpositive value");
            }
            let csv = format!(
                "# input={}\n# column={}\nslope,r_squared,points_used,shrunk\n{},{},{},{}\n",
                args.input.display(),
                args.column,
                fit.slope,
                fit.r_squared,
                fit.points_used,
                fit.shrunk
            );
            emit(cli, "slope.csv", &csv)?;
        }
        Command::Counterexample(a) => {
            let cfg = CounterexampleConfig {
                p: a.p,
                sigma: a.sigma,
                d: a.d,
                init: a.init,
                rule: a.rule,
                c: a.c,
                trials: a.trials,
                horizon: a.horizon,
                master_seed: a.seed,
            };
            let r = harness::counterexample_experiment(&cfg)?;
            emit(
                cli,
                &format!("counterexample_{}.csv", a.init),
                &harness::write_counterexample_csv(&cfg, &r),
            )?;
        }
        Command::Schedule(a) => {
            let csv = harness::emit_schedule(a.delta, a.d, a.c_o, a.c, a.b, a.n_o)?;
            emit(cli, "schedule.csv", &csv)?;
        }
        Command::Bound(a) => {
            let n_o = match a.n_o {
                Some(n) => n,
                None => RateConstants::new(a.delta).n_o(a.b, a.c, a.d, a.delta).ceil() as u64,
            };
            let params = BoundParams::with_c(a.c_o, a.c, a.b, a.d, a.delta, n_o);
            let n_max = a.n_max.unwrap_or(n_o.saturating_mul(1000));
            emit(cli, "bound.csv", &harness::emit_bound(&params, n_max, a.points)?)?;
        }
        Command::Verify(a) => {
            let reports = verify::run_suite(a.seed, SuiteScale(a.scale))?;
            for r in &reports {
                eprintln!("{r}");
            }
            emit(cli, "verify.csv", &verify::suite_csv(a.seed, &reports))?;
            return Ok(reports.iter().all(|r| r.pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
