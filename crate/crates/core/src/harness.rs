//! Multi-trial experiments, log-log slope fits and CSV emission.
//!
//! Output of every entry point here is a pure function of its configuration
//! (master seed included): trials run in parallel but each owns its RNG
//! stream, and results are reduced in trial-index order.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::distributions::{
    random_rotation, CoordinateDistribution, DatasetStream, EmpiricalDistribution, GaussianSpectrum, SampleStats,
    Source,
};
use crate::error::{Error, Result};
use crate::estimators::{init, BlockState, EstimatorState, InitMode, LearningRate, Rule};
use crate::linalg::{self, dot, GroundTruth, Vector};
use crate::rng::{aux_rng, trial_rng};
use crate::theory::{self, BoundParams};

pub const DEFAULT_GRID_POINTS: usize = 200;
/// Final potential above which a trial counts as converged to the wrong direction.
pub const WRONG_CONVERGENCE: f64 = 0.99;
/// Overrides the default output directory of the CLI.
pub const OUT_DIR_ENV: &str = "INCPCA_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Coordinate {
        p: f64,
        sigma: f64,
        d: usize,
    },
    /// Clipped Gaussian; `rotate` draws a random eigenbasis from the master seed.
    Gaussian {
        eigenvalues: Vec<f64>,
        rotate: bool,
        clip: Option<f64>,
    },
    /// Rows of a CSV file, resampled uniformly with replacement.
    Csv {
        path: PathBuf,
        d: usize,
        center: bool,
    },
}

impl SourceSpec {
    pub fn build(&self, master_seed: u64) -> Result<Source> {
        Ok(match self {
            SourceSpec::Coordinate { p, sigma, d } => Source::Coordinate(CoordinateDistribution::new(*p, *sigma, *d)?),
            SourceSpec::Gaussian {
                eigenvalues,
                rotate,
                clip,
            } => {
                let rotation = rotate.then(|| random_rotation(eigenvalues.len(), &mut aux_rng(master_seed, 1)));
                Source::Gaussian(GaussianSpectrum::new(eigenvalues.clone(), rotation, *clip)?)
            }
            SourceSpec::Csv { path, d, center } => {
                let mut stream = DatasetStream::open(path, *d, *center)?;
                Source::Empirical(EmpiricalDistribution::from_stream(&mut stream)?)
            }
        })
    }

    fn write_kv(&self, out: &mut String) {
        match self {
            SourceSpec::Coordinate { p, sigma, d } => {
                let _ = write!(out, "source=coordinate\np={p}\nsigma={sigma}\nd={d}\n");
            }
            SourceSpec::Gaussian {
                eigenvalues,
                rotate,
                clip,
            } => {
                let eigs: Vec<String> = eigenvalues.iter().map(f64::to_string).collect();
                let _ = write!(
                    out,
                    "source=gaussian\neigenvalues={}\nrotate={rotate}\n",
                    eigs.join(",")
                );
                if let Some(c) = clip {
                    let _ = writeln!(out, "clip={c}");
                }
            }
            SourceSpec::Csv { path, d, center } => {
                let _ = write!(out, "source=csv\npath={}\nd={d}\ncenter={center}\n", path.display());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSpec {
    Single(Rule),
    /// Top-`p` subspace tracking; the recorded potential is that of the first column.
    BlockOja(usize),
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSpec::Single(r) => write!(f, "{r}"),
            RuleSpec::BlockOja(p) => write!(f, "block_oja_{p}"),
        }
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if let Some(p) = lower.strip_prefix("block_oja_") {
            return match p.parse::<usize>() {
                Ok(p) if p >= 1 => Ok(RuleSpec::BlockOja(p)),
                _ => Err(Error::Config(format!("bad block size in {s:?}"))),
            };
        }
        Ok(RuleSpec::Single(lower.parse()?))
    }
}

/// Learning-rate constant, either directly or as `c_o = 2c(lambda1 - lambda2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSpec {
    C(f64),
    CO(f64),
}

impl RateSpec {
    pub fn resolve(&self, truth: &GroundTruth) -> Result<f64> {
        match *self {
            RateSpec::C(c) => Ok(c),
            RateSpec::CO(c_o) => theory::c_from_c_o(c_o, truth.lambda1, truth.lambda2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceSpec,
    pub rule: RuleSpec,
    pub init: InitMode,
    pub rate: RateSpec,
    pub n_o: u64,
    pub horizon: u64,
    pub trials: usize,
    pub master_seed: u64,
    pub grid_points: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.n_o {
            return Err(Error::Config(format!(
                "horizon {} must exceed n_o {}",
                self.horizon, self.n_o
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        Ok(())
    }

    /// Recording times: `grid_points` log-spaced values in `[n_o + 1, horizon]`,
    /// rounded and deduplicated.
    pub fn grid(&self) -> Vec<u64> {
        log_grid(self.n_o + 1, self.horizon, self.grid_points)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        self.source.write_kv(&mut out);
        let _ = writeln!(out, "rule={}", self.rule);
        let _ = writeln!(out, "init={}", self.init);
        let _ = match self.rate {
            RateSpec::C(c) => writeln!(out, "c={c}"),
            RateSpec::CO(c_o) => writeln!(out, "c_o={c_o}"),
        };
        let _ = write!(
            out,
            "n_o={}\nhorizon={}\ntrials={}\nseed={}\ngrid={}\n",
            self.n_o, self.horizon, self.trials, self.master_seed, self.grid_points
        );
        out
    }

    /// Builds a config from `key=value` pairs. Unset keys take the defaults of
    /// the reference experiment (coordinate source, p=0.2, sigma=0.5, d=10, Oja,
    /// random start, c_o=4, n_o=0, N=1e5, 100 trials).
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let known = [
            "source",
            "p",
            "sigma",
            "d",
            "eigenvalues",
            "rotate",
            "clip",
            "path",
            "center",
            "rule",
            "init",
            "c",
            "c_o",
            "n_o",
            "horizon",
            "trials",
            "seed",
            "grid",
        ];
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let d = parse_opt::<usize>(map, "d")?;
        let source = match get("source").unwrap_or("coordinate") {
            "coordinate" => SourceSpec::Coordinate {
                p: parse_opt(map, "p")?.unwrap_or(0.2),
                sigma: parse_opt(map, "sigma")?.unwrap_or(0.5),
                d: d.unwrap_or(10),
            },
            "gaussian" => {
                let eigenvalues = get("eigenvalues")
                    .ok_or_else(|| Error::Config("gaussian source needs eigenvalues".into()))?
                    .split(',')
                    .map(|t| parse_value::<f64>("eigenvalues", t.trim()))
                    .collect::<Result<Vec<_>>>()?;
                SourceSpec::Gaussian {
                    eigenvalues,
                    rotate: parse_opt(map, "rotate")?.unwrap_or(false),
                    clip: parse_opt(map, "clip")?,
                }
            }
            "csv" => SourceSpec::Csv {
                path: PathBuf::from(get("path").ok_or_else(|| Error::Config("csv source needs path".into()))?),
                d: d.ok_or_else(|| Error::Config("csv source needs d".into()))?,
                center: parse_opt(map, "center")?.unwrap_or(true),
            },
            other => return Err(Error::Config(format!("unknown source {other:?}"))),
        };
        let rate = match (parse_opt::<f64>(map, "c")?, parse_opt::<f64>(map, "c_o")?) {
            (Some(_), Some(_)) => return Err(Error::Config("give either c or c_o, not both".into())),
            (Some(c), None) => RateSpec::C(c),
            (None, Some(c_o)) => RateSpec::CO(c_o),
            (None, None) => RateSpec::CO(4.0),
        };
        let cfg = ExperimentConfig {
            source,
            rule: parse_opt(map, "rule")?.unwrap_or(RuleSpec::Single(Rule::Oja)),
            init: parse_opt(map, "init")?.unwrap_or(InitMode::RandomUnit),
            rate,
            n_o: parse_opt(map, "n_o")?.unwrap_or(0),
            horizon: parse_opt(map, "horizon")?.unwrap_or(100_000),
            trials: parse_opt(map, "trials")?.unwrap_or(100),
            master_seed: parse_opt(map, "seed")?.unwrap_or(0),
            grid_points: parse_opt(map, "grid")?.unwrap_or(DEFAULT_GRID_POINTS),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={raw:?}")))
}

fn parse_opt<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key).map(|v| parse_value(key, v)).transpose()
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut map = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: "expected key=value".into(),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// `points` log-spaced integers in `[lo, hi]`, strictly increasing.
pub fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let lo = lo.max(1);
    if hi <= lo || points < 2 {
        return vec![hi.max(lo)];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<u64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .map(|n| n.clamp(lo, hi))
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trial_id: usize,
    pub points: Vec<(u64, f64)>,
    /// Set when the trial could not run (e.g. a zero initial vector).
    pub failure: Option<String>,
    /// Draws accepted and rejected by the source's clip (Gaussian only).
    pub samples: SampleStats,
}

impl Trace {
    pub fn final_psi(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// A configured experiment with its source and ground truth materialized.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub source: Source,
    pub truth: GroundTruth,
    pub c: f64,
    grid: Vec<u64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let source = config.source.build(config.master_seed)?;
        let truth = source.ground_truth();
        let c = config.rate.resolve(&truth)?;
        let grid = config.grid();
        if let RuleSpec::BlockOja(p) = config.rule {
            if p > source.dim() {
                return Err(Error::Config(format!("block size {p} exceeds d = {}", source.dim())));
            }
        }
        Ok(Experiment {
            config,
            source,
            truth,
            c,
            grid,
        })
    }

    pub fn grid(&self) -> &[u64] {
        &self.grid
    }

    pub fn run_trial(&self, trial_id: usize) -> Trace {
        let mut samples = SampleStats::default();
        match self.try_trial(trial_id, &mut samples) {
            Ok(points) => Trace {
                trial_id,
                points,
                failure: None,
                samples,
            },
            Err(e) => Trace {
                trial_id,
                points: Vec::new(),
                failure: Some(e.to_string()),
                samples,
            },
        }
    }

    fn try_trial(&self, trial_id: usize, stats: &mut SampleStats) -> Result<Vec<(u64, f64)>> {
        let cfg = &self.config;
        let d = self.source.dim();
        let mut rng = trial_rng(cfg.master_seed, trial_id as u64);
        let lr = LearningRate::new(self.c, cfg.n_o)?;
        let v0 = init(cfg.init, d, &self.source, &mut rng, stats)?;
        let v_star = &self.truth.v_star;
        let mut points = Vec::with_capacity(self.grid.len());
        let mut next = self.grid.iter().copied().peekable();
        match cfg.rule {
            RuleSpec::Single(rule) => {
                let mut state = EstimatorState::new(v0, rule, lr)?;
                while let Some(&n) = next.peek() {
                    while state.n() < n {
                        let x = self.source.sample_tracked(&mut rng, stats)?;
                        state.step(&x)?;
                    }
                    points.push((n, state.potential(v_star)?));
                    next.next();
                }
            }
            RuleSpec::BlockOja(p) => {
                let mut state = BlockState::new(complete_frame(v0, p, &mut rng)?, lr)?;
                while let Some(&n) = next.peek() {
                    while state.n() < n {
                        let x = self.source.sample_tracked(&mut rng, stats)?;
                        state.step(&x, &mut rng)?;
                    }
                    points.push((n, linalg::potential(&state.columns()[0], v_star)?));
                    next.next();
                }
            }
        }
        Ok(points)
    }

    pub fn run_traces(&self) -> Vec<Trace> {
        (0..self.config.trials)
            .into_par_iter()
            .map(|id| self.run_trial(id))
            .collect()
    }

    pub fn run(&self) -> Result<Aggregate> {
        aggregate(&self.grid, &self.run_traces())
    }
}

/// Orthonormal `p`-frame whose first column is `v0 / |v0|`.
fn complete_frame<R: rand::Rng + ?Sized>(v0: Vector, p: usize, rng: &mut R) -> Result<Vec<Vector>> {
    let d = v0.dim();
    let mut cols = vec![v0.normalized()?];
    while cols.len() < p {
        let mut w = crate::distributions::random_unit_vector(d, rng).into_inner();
        linalg::orthogonalize_against(&mut w, &cols);
        linalg::orthogonalize_against(&mut w, &cols);
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-6 {
            cols.push(Vector::new(w.iter().map(|x| x / norm).collect())?);
        }
    }
    Ok(cols)
}

pub fn run_trial(config: &ExperimentConfig, trial_id: usize) -> Result<Trace> {
    Ok(Experiment::new(config.clone())?.run_trial(trial_id))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Aggregate> {
    Experiment::new(config.clone())?.run()
}

/// Per-grid-point summaries of Psi over the trials that ran.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub grid: Vec<u64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q10: Vec<f64>,
    pub q90: Vec<f64>,
    pub trials_ok: usize,
    /// `(trial_id, reason)` for every trial that failed.
    pub failed: Vec<(usize, String)>,
    /// Sample tallies summed over all trials.
    pub samples: SampleStats,
}

impl Aggregate {
    pub fn mean_points(&self) -> Vec<(u64, f64)> {
        self.grid.iter().copied().zip(self.mean.iter().copied()).collect()
    }

    pub fn median_points(&self) -> Vec<(u64, f64)> {
        self.grid.iter().copied().zip(self.median.iter().copied()).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn aggregate(grid: &[u64], traces: &[Trace]) -> Result<Aggregate> {
    let ok: Vec<&Trace> = traces.iter().filter(|t| t.failure.is_none()).collect();
    if ok.is_empty() {
        return Err(Error::AllTrialsFailed(traces.len()));
    }
    let failed = traces
        .iter()
        .filter_map(|t| t.failure.clone().map(|f| (t.trial_id, f)))
        .collect();
    let mut out = Aggregate {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        median: Vec::with_capacity(grid.len()),
        q10: Vec::with_capacity(grid.len()),
        q90: Vec::with_capacity(grid.len()),
        trials_ok: ok.len(),
        failed,
        samples: traces.iter().fold(SampleStats::default(), |acc, t| SampleStats {
            accepted: acc.accepted + t.samples.accepted,
            rejected: acc.rejected + t.samples.rejected,
        }),
    };
    for i in 0..grid.len() {
        let mut col: Vec<f64> = ok.iter().map(|t| t.points[i].1).collect();
        // Summed in trial order so the mean does not depend on scheduling.
        out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        col.sort_by(f64::total_cmp);
        out.median.push(quantile(&col, 0.5));
        out.q10.push(quantile(&col, 0.1));
        out.q90.push(quantile(&col, 0.9));
    }
    Ok(out)
}

pub fn write_aggregate_csv(cfg: &ExperimentConfig, agg: &Aggregate) -> String {
    let mut out = String::new();
    for line in cfg.to_kv().lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "# failed_trials={}", agg.failed.len());
    if let SourceSpec::Gaussian { .. } = cfg.source {
        let _ = writeln!(
            out,
            "# clip_rejection_rate={} ({} of {} draws)",
            agg.samples.rejection_rate(),
            agg.samples.rejected,
            agg.samples.accepted + agg.samples.rejected
        );
    }
    for (id, why) in &agg.failed {
        let _ = writeln!(out, "# failed trial {id}: {why}");
    }
    out.push_str("n,mean_psi,median_psi,q10_psi,q90_psi,trials_ok\n");
    for i in 0..agg.grid.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            agg.grid[i], agg.mean[i], agg.median[i], agg.q10[i], agg.q90[i], agg.trials_ok
        );
    }
    out
}

/// File name for an experiment's output: one file per (rule, rate) pair.
pub fn output_file_name(cfg: &ExperimentConfig) -> String {
    match cfg.rate {
        RateSpec::C(c) => format!("{}_c{c}.csv", cfg.rule),
        RateSpec::CO(c_o) => format!("{}_co{c_o}.csv", cfg.rule),
    }
}

/// Reads column `column` of a CSV written by [`write_aggregate_csv`] (or any
/// comma-separated table with an `n` column) as `(n, value)` points.
pub fn read_trace_csv(path: impl AsRef<Path>, column: &str) -> Result<Vec<(u64, f64)>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("no column {name:?}"),
        })
    };
    let (ni, vi) = (find("n")?, find(column)?);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let n = rec[ni].parse::<u64>().map_err(|e| bad(format!("n: {e}")))?;
        let v = rec[vi].parse::<f64>().map_err(|e| bad(format!("{column}: {e}")))?;
        points.push((n, v));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// The window was cut short at the first nonpositive value.
    pub shrunk: bool,
}

pub const MIN_SLOPE_POINTS: usize = 5;

/// Least-squares slope of `ln psi` against `ln n` over `n_min <= n <= n_max`.
pub fn estimate_slope(points: &[(u64, f64)], n_min: u64, n_max: u64) -> Result<SlopeFit> {
    let window: Vec<(u64, f64)> = points
        .iter()
        .copied()
        .filter(|&(n, _)| n >= n_min && n <= n_max && n > 0)
        .collect();
    let usable = window.iter().take_while(|p| p.1 > 0.0).count();
    let shrunk = usable < window.len();
    if usable < MIN_SLOPE_POINTS {
        return Err(Error::EmptyWindow {
            needed: MIN_SLOPE_POINTS,
            found: usable,
        });
    }
    let xs: Vec<f64> = window[..usable].iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = window[..usable].iter().map(|p| p.1.ln()).collect();
    let m = usable as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::EmptyWindow {
            needed: MIN_SLOPE_POINTS,
            found: 1,
        });
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        r_squared,
        points_used: usable,
        shrunk,
    })
}

/// Slope over the last decade `[N/10, N]` of a curve.
pub fn last_decade_slope(points: &[(u64, f64)]) -> Result<SlopeFit> {
    let n_max = points.last().map_or(0, |p| p.0);
    estimate_slope(points, n_max / 10, n_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleConfig {
    pub p: f64,
    pub sigma: f64,
    pub d: usize,
    pub init: InitMode,
    pub rule: Rule,
    pub c: f64,
    pub trials: usize,
    pub horizon: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleResult {
    pub wrong_fraction: f64,
    pub std_error: f64,
    pub wrong: usize,
    pub trials_ok: usize,
}

/// Fraction of trials whose final potential exceeds [`WRONG_CONVERGENCE`].
pub fn counterexample_experiment(cfg: &CounterexampleConfig) -> Result<CounterexampleResult> {
    let exp = Experiment::new(ExperimentConfig {
        source: SourceSpec::Coordinate {
            p: cfg.p,
            sigma: cfg.sigma,
            d: cfg.d,
        },
        rule: RuleSpec::Single(cfg.rule),
        init: cfg.init,
        rate: RateSpec::C(cfg.c),
        n_o: 0,
        horizon: cfg.horizon,
        trials: cfg.trials,
        master_seed: cfg.master_seed,
        grid_points: 2,
    })?;
    let traces = exp.run_traces();
    let finals: Vec<f64> = traces.iter().filter_map(Trace::final_psi).collect();
    if finals.is_empty() {
        return Err(Error::AllTrialsFailed(traces.len()));
    }
    let wrong = finals.iter().filter(|&&psi| psi > WRONG_CONVERGENCE).count();
    let m = finals.len() as f64;
    let frac = wrong as f64 / m;
    Ok(CounterexampleResult {
        wrong_fraction: frac,
        std_error: (frac * (1.0 - frac) / m).sqrt(),
        wrong,
        trials_ok: finals.len(),
    })
}

pub fn write_counterexample_csv(cfg: &CounterexampleConfig, r: &CounterexampleResult) -> String {
    format!(
        "# p={}\n# sigma={}\n# d={}\n# init={}\n# rule={}\n# c={}\n# horizon={}\n# seed={}\n\
         trials_ok,wrong,wrong_fraction,std_error\n{},{},{},{}\n",
        cfg.p,
        cfg.sigma,
        cfg.d,
        cfg.init,
        cfg.rule,
        cfg.c,
        cfg.horizon,
        cfg.master_seed,
        r.trials_ok,
        r.wrong,
        r.wrong_fraction,
        r.std_error
    )
}

/// Epoch table `j, n_j, eps_j` with the audit result as a trailing comment.
pub fn emit_schedule(delta: f64, d: usize, c_o: f64, c: f64, b: f64, n_o: Option<u64>) -> Result<String> {
    let s = theory::epoch_schedule_from(delta, d, c_o, c, b, n_o)?;
    let mut out = format!(
        "# delta={delta}\n# d={d}\n# c_o={c_o}\n# c={c}\n# B={b}\n# n_o_min={}\n",
        s.n_o_min
    );
    out.push_str("j,n_j,eps_j\n");
    for (j, (n, eps)) in s.pairs.iter().enumerate() {
        let _ = writeln!(out, "{j},{n},{eps}");
    }
    let audit = s.audit();
    if audit.passed() {
        out.push_str("# audit: pass\n");
    } else {
        let failed: Vec<&str> = audit.failures().map(|f| f.condition.as_str()).collect();
        let _ = writeln!(out, "# audit: FAIL ({})", failed.join("; "));
    }
    Ok(out)
}

/// The rate bound on a log grid of `points` times in `[n_o, n_max]`.
pub fn emit_bound(params: &BoundParams, n_max: u64, points: usize) -> Result<String> {
    let mut out = format!(
        "# c_o={}\n# c={}\n# B={}\n# d={}\n# delta={}\n# n_o={}\n",
        params.c_o, params.c, params.b, params.d, params.delta, params.n_o
    );
    let grid = log_grid(params.n_o.max(1), n_max, points);
    let first = theory::krasulina_bound(params, grid[0])?;
    let _ = writeln!(out, "# n_J={}\n# within_hypotheses_from=n_J", first.n_last);
    out.push_str("n,bound\n");
    for n in grid {
        let _ = writeln!(out, "{n},{}", theory::krasulina_bound(params, n)?.value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            source: SourceSpec::Coordinate {
                p: 0.2,
                sigma: 0.5,
                d: 10,
            },
            rule: RuleSpec::Single(Rule::Oja),
            init: InitMode::RandomUnit,
            rate: RateSpec::CO(4.0),
            n_o: 0,
            horizon: 2000,
            trials,
            master_seed: 11,
            grid_points: 20,
        }
    }

    #[test]
    fn grid_is_strictly_increasing() {
        let g = log_grid(1, 100_000, 200);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((g[0], *g.last().unwrap()), (1, 100_000));
        assert_eq!(log_grid(5, 5, 10), vec![5]);
    }

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(u64, f64)> = (1..=50).map(|i| (i * 100, 9.0 / (i * 100) as f64)).collect();
        let fit = estimate_slope(&pts, 0, u64::MAX).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        let half: Vec<(u64, f64)> = pts.iter().map(|&(n, _)| (n, 9.0 / (n as f64).sqrt())).collect();
        assert_abs_diff_eq!(estimate_slope(&half, 0, u64::MAX).unwrap().slope, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn slope_window_shrinks_and_errors() {
        let mut pts: Vec<(u64, f64)> = (1..=10).map(|i| (i * 10, 1.0 / i as f64)).collect();
        pts[7].1 = 0.0;
        let fit = estimate_slope(&pts, 0, 1000).unwrap();
        assert!(fit.shrunk);
        assert_eq!(fit.points_used, 7);
        assert!(matches!(
            estimate_slope(&pts, 500, 1000),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn single_trial_aggregate_is_the_trace() {
        let cfg = small(1);
        let exp = Experiment::new(cfg).unwrap();
        let t = exp.run_trial(0);
        let agg = exp.run().unwrap();
        let psi: Vec<f64> = t.points.iter().map(|p| p.1).collect();
        assert_eq!(agg.mean, psi);
        assert_eq!(agg.median, psi);
        assert_eq!(agg.q10, psi);
    }

    #[test]
    fn mean_between_quantile_bands_and_bounded() {
        let agg = run_experiment(&small(40)).unwrap();
        assert_eq!(agg.trials_ok, 40);
        for i in 0..agg.grid.len() {
            assert!((0.0..=1.0).contains(&agg.mean[i]));
            assert!(agg.q10[i] <= agg.median[i] && agg.median[i] <= agg.q90[i]);
        }
    }

    #[test]
    fn trapped_start_stays_orthogonal() {
        // Start exactly on e2: every sample is orthogonal or parallel to it.
        let exp = Experiment::new(small(1)).unwrap();
        let mut state =
            EstimatorState::new(Vector::basis(10, 1), Rule::Oja, LearningRate::new(exp.c, 0).unwrap()).unwrap();
        let mut rng = trial_rng(3, 0);
        for _ in 0..5000 {
            state.step(&exp.source.sample(&mut rng)).unwrap();
        }
        assert_eq!(state.potential(&exp.truth.v_star).unwrap(), 1.0);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = small(3);
        let map: BTreeMap<String, String> = cfg
            .to_kv()
            .lines()
            .map(|l| {
                let (k, v) = l.split_once('=').unwrap();
                (k.to_string(), v.to_string())
            })
            .collect();
        assert_eq!(ExperimentConfig::from_map(&map).unwrap(), cfg);
        let mut bad = map.clone();
        bad.insert("colour".into(), "red".into());
        assert!(ExperimentConfig::from_map(&bad).is_err());
        let mut both = map.clone();
        both.insert("c".into(), "1".into());
        assert!(ExperimentConfig::from_map(&both).is_err());
        let mut short = map;
        short.insert("horizon".into(), "0".into());
        assert!(ExperimentConfig::from_map(&short).is_err());
        assert_eq!("block_oja_3".parse::<RuleSpec>().unwrap(), RuleSpec::BlockOja(3));
        assert!("block_oja_0".parse::<RuleSpec>().is_err());
    }

    #[test]
    fn failed_inits_are_reported() {
        let traces = vec![
            Trace {
                trial_id: 0,
                points: vec![],
                failure: Some("zero".into()),
                samples: SampleStats::default(),
            },
            Trace {
                trial_id: 1,
                points: vec![(1, 0.5)],
                failure: None,
                samples: SampleStats::default(),
            },
        ];
        let agg = aggregate(&[1], &traces).unwrap();
        assert_eq!(agg.trials_ok, 1);
        assert_eq!(agg.failed.len(), 1);
        assert!(matches!(aggregate(&[1], &traces[..1]), Err(Error::AllTrialsFailed(1))));
    }

    #[test]
    fn schedule_table_shape() {
        let csv = emit_schedule(0.1, 10, 4.0, 1.0, 1.0, None).unwrap();
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "j,n_j,eps_j");
        assert_eq!(rows.len(), 1 + 15);
        assert!(csv.trim_end().ends_with("# audit: pass"));
        let eps0: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
        assert!((eps0 - 4.5989e-5).abs() < 1e-8);
    }
}
