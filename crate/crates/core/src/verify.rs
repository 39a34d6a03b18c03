//! Monte Carlo and numeric checks of the per-step lemmas and the probability
//! bounds.
//!
//! Statistical checks pass within 3 standard errors. Every comparison also
//! carries a floating-point floor of `1e-12 * max(1, |reference|)` so that
//! zero-variance checks (a point mass, an exact identity) compare up to
//! rounding rather than bit-for-bit.

use std::fmt::{self, Write as _};

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::distributions::{random_unit_vector, SampleStats, Source};
use crate::error::{Error, Result};
use crate::estimators::{init, xi, z_increment, EstimatorState, InitMode, LearningRate, Rule};
use crate::linalg::{self, dot, rayleigh_gradient, rayleigh_quotient, SymMatrix, Vector};
use crate::rng::{aux_rng, trial_rng};
use crate::theory;

pub const SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    TwoSided,
    /// `empirical <= reference + 3 se`.
    AtMost,
    /// `empirical >= reference - 3 se`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub n_samples: u64,
    pub empirical: f64,
    pub reference: f64,
    pub std_error: f64,
    pub pass: bool,
    /// Signed distance from the reference in the failing direction, in units
    /// of the allowed tolerance: pass iff `slack_used <= 1`.
    pub slack_used: f64,
    pub kind: CheckKind,
    pub note: String,
}

impl CheckReport {
    pub fn new(
        name: impl Into<String>,
        kind: CheckKind,
        n_samples: u64,
        empirical: f64,
        reference: f64,
        std_error: f64,
    ) -> Self {
        let tol = SIGMAS * std_error + 1e-12 * reference.abs().max(1.0);
        let excess = match kind {
            CheckKind::TwoSided => (empirical - reference).abs(),
            CheckKind::AtMost => empirical - reference,
            CheckKind::AtLeast => reference - empirical,
        };
        let slack_used = excess / tol;
        CheckReport {
            name: name.into(),
            n_samples,
            empirical,
            reference,
            std_error,
            pass: slack_used <= 1.0,
            slack_used,
            kind,
            note: String::new(),
        }
    }

    /// A vacuous bound: recorded, flagged, and passed.
    pub fn vacuous(mut self) -> Self {
        self.pass = true;
        self.note = "vacuous bound".into();
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        if self.note.is_empty() {
            self.note = note;
        } else {
            self.note = format!("{}; {note}", self.note);
        }
        self
    }

    pub fn csv_header() -> &'static str {
        "name,n_samples,empirical,reference,std_error,pass,slack"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.name, self.n_samples, self.empirical, self.reference, self.std_error, self.pass, self.slack_used
        )
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: empirical {:.6e} vs reference {:.6e} (se {:.2e}, n {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.empirical,
            self.reference,
            self.std_error,
            self.n_samples
        )?;
        if !self.note.is_empty() {
            write!(f, " [{}]", self.note)?;
        }
        Ok(())
    }
}

pub fn reports_csv(reports: &[CheckReport]) -> String {
    let mut out = String::from(CheckReport::csv_header());
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Welford's running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Empirical `E[xi(v, X)]` against `A v - G(v) v`, one report per coordinate.
pub fn check_xi_expectation(source: &Source, v: &Vector, n_samples: u64, seed: u64) -> Result<Vec<CheckReport>> {
    let a = source.covariance();
    let g = rayleigh_quotient(&a, v)?;
    let av = a.mul_vec(v);
    let reference: Vec<f64> = av.iter().zip(v.iter()).map(|(x, vi)| x - g * vi).collect();
    let mut stats = vec![RunningStats::default(); v.dim()];
    let mut rng = aux_rng(seed, 0x5851);
    for _ in 0..n_samples {
        let s = xi(v, &source.sample(&mut rng))?;
        for (st, x) in stats.iter_mut().zip(s.iter()) {
            st.push(*x);
        }
    }
    Ok(stats
        .iter()
        .zip(&reference)
        .enumerate()
        .map(|(i, (st, r))| {
            CheckReport::new(
                format!("xi_mean[{i}]"),
                CheckKind::TwoSided,
                n_samples,
                st.mean(),
                *r,
                st.std_error(),
            )
        })
        .collect())
}

/// Empirical `E[Z]` against its closed form, and against the lower bound
/// `2 gamma (lambda1 - lambda2) Psi (1 - Psi)`.
pub fn check_z_expectation(
    source: &Source,
    v: &Vector,
    gamma: f64,
    n_samples: u64,
    seed: u64,
) -> Result<(CheckReport, CheckReport)> {
    let a = source.covariance();
    let truth = source.ground_truth();
    let v_star = &truth.v_star;
    let g = rayleigh_quotient(&a, v)?;
    let cos2 = dot(v, v_star).powi(2) / v.norm_sq();
    let closed = 2.0 * gamma * cos2 * (truth.lambda1 - g);
    let psi = linalg::potential(v, v_star)?;
    let lower = 2.0 * gamma * truth.gap() * psi * (1.0 - psi);
    let mut st = RunningStats::default();
    let mut rng = aux_rng(seed, 0x5a);
    for _ in 0..n_samples {
        st.push(z_increment(v, &source.sample(&mut rng), gamma, v_star)?);
    }
    Ok((
        CheckReport::new(
            "z_mean",
            CheckKind::TwoSided,
            n_samples,
            st.mean(),
            closed,
            st.std_error(),
        ),
        CheckReport::new(
            "z_mean_lower_bound",
            CheckKind::AtLeast,
            n_samples,
            st.mean(),
            lower,
            st.std_error(),
        ),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwiseConfig {
    pub rule: Rule,
    pub c: f64,
    pub n_o: u64,
    pub init: InitMode,
    pub steps: u64,
    pub trials: usize,
    pub seed: u64,
}

/// One step's worth of state, kept for violation reports.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub trial: usize,
    pub n: u64,
    pub gamma: f64,
    pub v_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub v_next: Vec<f64>,
    pub psi_prev: f64,
    pub psi_next: f64,
    pub z: f64,
    pub beta: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial={} n={} gamma={:e} v_prev={:?} x={:?} v_next={:?} psi_prev={:e} psi_next={:e} z={:e} beta={:e}",
            self.trial,
            self.n,
            self.gamma,
            self.v_prev,
            self.x,
            self.v_next,
            self.psi_prev,
            self.psi_next,
            self.z,
            self.beta
        )
    }
}

/// Checks every pathwise invariant of a single update `v_prev -> v_next` on
/// input `x` with step `gamma`. Returns the names of violated invariants.
///
/// `renormalized` marks a Krasulina step whose overflow guard rescaled the
/// iterate, which suspends the norm-monotonicity check for that step.
pub fn audit_step(
    rule: Rule,
    v_prev: &Vector,
    x: &[f64],
    v_next: &Vector,
    gamma: f64,
    v_star: &[f64],
    b: f64,
    renormalized: bool,
) -> Result<(Vec<&'static str>, f64, f64)> {
    let mut bad = Vec::new();
    let psi_prev = linalg::potential(v_prev, v_star)?;
    let psi_next = linalg::potential(v_next, v_star)?;
    let s = xi(v_prev, x)?;
    let z = z_increment(v_prev, x, gamma, v_star)?;
    let beta = theory::beta_step(rule, gamma, b);
    let vn = v_prev.norm();

    if psi_next > psi_prev + beta - z + 1e-12 * psi_prev.max(1.0) {
        bad.push("potential inequality");
    }
    if dot(&s, v_prev).abs() > 1e-10 * s.norm() * vn {
        bad.push("xi orthogonal to v");
    }
    if s.norm_sq() > b * b * v_prev.norm_sq() / 4.0 * (1.0 + 1e-12) {
        bad.push("|xi|^2 <= B^2 |v|^2 / 4");
    }
    if z.abs() > 4.0 * gamma * b * (1.0 + 1e-12) {
        bad.push("|Z| <= 4 gamma B");
    }
    match rule {
        Rule::Krasulina if !renormalized && v_next.norm() < vn * (1.0 - 1e-12) => bad.push("Krasulina norm monotone"),
        Rule::Oja if (v_next.norm() - 1.0).abs() > 1e-12 => bad.push("Oja unit norm"),
        _ => {}
    }
    if dot(v_prev, x) == 0.0 && v_next != v_prev {
        bad.push("orthogonal input is a no-op");
    }
    // v_next must lie in span{v_prev, x} (up to the Krasulina rescale).
    let mut basis: Vec<Vector> = Vec::with_capacity(2);
    for w in [v_prev.as_slice(), x] {
        let mut w = w.to_vec();
        linalg::orthogonalize_against(&mut w, &basis);
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-12 * vn.max(1.0) {
            basis.push(Vector::from_raw(w.iter().map(|t| t / norm).collect()));
        }
    }
    let mut r = v_next.as_slice().to_vec();
    linalg::orthogonalize_against(&mut r, &basis);
    linalg::orthogonalize_against(&mut r, &basis);
    if dot(&r, &r).sqrt() > 1e-10 * v_next.norm() {
        bad.push("span containment");
    }
    Ok((bad, z, beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseOutcome {
    pub steps: u64,
    pub violations: u64,
    /// First violation of each failing trial, with the step's full state.
    pub details: Vec<(StepRecord, Vec<&'static str>)>,
    pub failed_inits: usize,
}

/// Runs full trajectories and audits every step; a trial stops at its first
/// violation.
pub fn run_pathwise(source: &Source, cfg: &PathwiseConfig) -> Result<PathwiseOutcome> {
    let truth = source.ground_truth();
    let b = source.norm_bound();
    let lr = LearningRate::new(cfg.c, cfg.n_o)?;
    let per_trial: Vec<Result<(u64, Option<(StepRecord, Vec<&'static str>)>, bool)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(cfg.seed, trial as u64);
            let mut stats = SampleStats::default();
            let v0 = match init(cfg.init, source.dim(), source, &mut rng, &mut stats) {
                Ok(v) => v,
                Err(Error::ZeroInit) => return Ok((0, None, true)),
                Err(e) => return Err(e),
            };
            let mut state = EstimatorState::new(v0, cfg.rule, lr)?;
            for k in 0..cfg.steps {
                let x = source.sample_tracked(&mut rng, &mut stats)?;
                let prev = state.v().clone();
                let renorms = state.renormalizations();
                let gamma = state.step(&x)?;
                let (bad, z, beta) = audit_step(
                    cfg.rule,
                    &prev,
                    &x,
                    state.v(),
                    gamma,
                    &truth.v_star,
                    b,
                    state.renormalizations() != renorms,
                )?;
                if !bad.is_empty() {
                    let rec = StepRecord {
                        trial,
                        n: state.n(),
                        gamma,
                        psi_prev: linalg::potential(&prev, &truth.v_star)?,
                        psi_next: state.potential(&truth.v_star)?,
                        v_prev: prev.into_inner(),
                        x: x.into_inner(),
                        v_next: state.v().as_slice().to_vec(),
                        z,
                        beta,
                    };
                    return Ok((k + 1, Some((rec, bad)), false));
                }
            }
            Ok((cfg.steps, None, false))
        })
        .collect();
    let mut out = PathwiseOutcome {
        steps: 0,
        violations: 0,
        details: Vec::new(),
        failed_inits: 0,
    };
    for r in per_trial {
        let (steps, violation, failed_init) = r?;
        out.steps += steps;
        out.failed_inits += failed_init as usize;
        if let Some(v) = violation {
            out.violations += 1;
            out.details.push(v);
        }
    }
    Ok(out)
}

pub fn check_pathwise(source: &Source, cfg: &PathwiseConfig) -> Result<CheckReport> {
    let out = run_pathwise(source, cfg)?;
    let name = format!("pathwise[{},c={},init={}]", cfg.rule, cfg.c, cfg.init);
    let mut report = CheckReport::new(name, CheckKind::AtMost, out.steps, out.violations as f64, 0.0, 0.0)
        .with_note(format!("{} failed inits", out.failed_inits));
    if let Some((rec, bad)) = out.details.first() {
        report = report.with_note(format!("{}: {rec}", bad.join(", ")));
    }
    Ok(report)
}

/// `E[exp(t Y)]`, `Y = 1 - V_1^2`, over uniform unit vectors, against the
/// moment bound. The bound is vacuous once it reaches `e^t >= exp(tY)`.
pub fn check_mgf(d: usize, t: f64, n_samples: u64, seed: u64) -> Result<CheckReport> {
    let bound = theory::mgf_bound(d, t)?;
    let mut rng = aux_rng(seed, 0x36f);
    let mut st = RunningStats::default();
    for _ in 0..n_samples {
        let v = random_unit_vector(d, &mut rng);
        st.push((t * (1.0 - v[0] * v[0])).exp());
    }
    let r = CheckReport::new(
        format!("mgf[d={d},t={t}]"),
        CheckKind::AtMost,
        n_samples,
        st.mean(),
        bound,
        st.std_error(),
    );
    Ok(if bound >= t.exp() { r.vacuous() } else { r })
}

/// Mean potential of a uniform random start, against `1 - 1/d`.
pub fn check_init_potential(d: usize, n_samples: u64, seed: u64) -> Result<CheckReport> {
    let mut rng = aux_rng(seed, 0x1417);
    let e1 = Vector::basis(d, 0);
    let mut st = RunningStats::default();
    for _ in 0..n_samples {
        st.push(linalg::potential(&random_unit_vector(d, &mut rng), &e1)?);
    }
    Ok(CheckReport::new(
        format!("init_potential[d={d}]"),
        CheckKind::TwoSided,
        n_samples,
        st.mean(),
        1.0 - 1.0 / d as f64,
        st.std_error(),
    ))
}

/// Above this, `ln Gamma(z + 1/2) - ln Gamma(z)` is taken from its
/// asymptotic series: differencing two large log-gamma values loses the
/// `1/(8z)` gap to cancellation.
pub const GAMMA_SERIES_FROM: f64 = 10.0;

/// `ln Gamma(z + 1/2) - ln Gamma(z) - ln(z)/2`, which is negative exactly
/// when `Gamma(z + 1/2) < sqrt(z) Gamma(z)`.
pub fn log_gamma_ratio_excess(z: f64) -> f64 {
    if z < GAMMA_SERIES_FROM {
        ln_gamma(z + 0.5) - ln_gamma(z) - 0.5 * z.ln()
    } else {
        let w = 1.0 / z;
        let w2 = w * w;
        w * (-1.0 / 8.0 + w2 * (1.0 / 192.0 + w2 * (-1.0 / 640.0 + w2 * (17.0 / 14336.0 - w2 * 31.0 / 18432.0))))
    }
}

/// `Gamma(z + 1/2) <= sqrt(z) Gamma(z)` at every grid point; the reported
/// value is the largest ratio `Gamma(z + 1/2) / (sqrt(z) Gamma(z))`.
pub fn check_gamma_inequality(z_grid: &[f64]) -> Result<CheckReport> {
    if let Some(z) = z_grid.iter().find(|z| !(**z > 0.0)) {
        return Err(Error::InvalidParameter(format!("gamma grid needs z > 0, got {z}")));
    }
    let (worst_z, worst) =
        z_grid
            .iter()
            .map(|&z| (z, log_gamma_ratio_excess(z)))
            .fold(
                (f64::NAN, f64::NEG_INFINITY),
                |acc, p| if p.1 > acc.1 { p } else { acc },
            );
    Ok(CheckReport::new(
        "gamma_inequality",
        CheckKind::AtMost,
        z_grid.len() as u64,
        worst.exp(),
        1.0,
        0.0,
    )
    .with_note(format!("max ratio at z={worst_z}")))
}

/// Fraction of trials that ever come within `eps/d` of orthogonal on
/// `[n_o, horizon]`, against `sqrt(2 e eps)`. Starts are uniform random
/// unit vectors at `n_o`, which defaults to the theorem's minimum.
pub fn check_always_good(
    source: &Source,
    rule: Rule,
    c: f64,
    eps: f64,
    n_o: Option<u64>,
    horizon: u64,
    trials: usize,
    seed: u64,
) -> Result<CheckReport> {
    let bound = theory::always_good_bound(eps)?;
    let d = source.dim();
    let truth = source.ground_truth();
    let n_o = n_o.unwrap_or_else(|| bound.n_o_min(source.norm_bound(), c, d));
    if horizon <= n_o {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must exceed n_o {n_o}"
        )));
    }
    let threshold = 1.0 - eps / d as f64;
    let lr = LearningRate::new(c, n_o)?;
    let hits: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial as u64);
            let mut state = EstimatorState::new(random_unit_vector(d, &mut rng), rule, lr)?;
            let mut sup = state.potential(&truth.v_star)?;
            while state.n() < horizon && sup < threshold {
                state.step(&source.sample(&mut rng))?;
                sup = sup.max(state.potential(&truth.v_star)?);
            }
            Ok(sup >= threshold)
        })
        .collect();
    let mut hit = 0usize;
    for h in hits {
        hit += h? as usize;
    }
    let frac = hit as f64 / trials as f64;
    let se = (frac * (1.0 - frac) / trials as f64).sqrt();
    let r = CheckReport::new(
        format!("always_good[eps={eps},n_o={n_o},horizon={horizon}]"),
        CheckKind::AtMost,
        trials as u64,
        frac,
        bound.prob_bound,
        se,
    );
    Ok(if bound.vacuous { r.vacuous() } else { r })
}

/// Largest deviation of the analytic gradient from central differences at `v`,
/// relative to `max(|grad|, 1e-2)`: this is at most `1e-6` exactly when the
/// relative error is at most `1e-6` or the absolute error at most `1e-8`.
pub fn gradient_error(a: &SymMatrix, v: &Vector, h: f64) -> Result<f64> {
    let g = rayleigh_gradient(a, v)?;
    let mut diff2 = 0.0;
    for i in 0..v.dim() {
        let mut plus = v.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = v.clone();
        minus.as_mut_slice()[i] -= h;
        let fd = (rayleigh_quotient(a, &plus)? - rayleigh_quotient(a, &minus)?) / (2.0 * h);
        diff2 += (fd - g[i]).powi(2);
    }
    Ok(diff2.sqrt() / g.norm().max(1e-2))
}

/// Gradient check at `n_points` random unit vectors.
pub fn check_gradient(a: &SymMatrix, n_points: u64, h: f64, seed: u64) -> Result<CheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
    }
    let mut rng = aux_rng(seed, 0x96ad);
    let mut worst = 0.0_f64;
    for _ in 0..n_points {
        worst = worst.max(gradient_error(a, &random_unit_vector(a.dim(), &mut rng), h)?);
    }
    Ok(CheckReport::new(
        "gradient",
        CheckKind::AtMost,
        n_points,
        worst,
        1e-6,
        0.0,
    ))
}

/// Gradient check over random diagonal matrices of random size.
pub fn check_gradient_random(draws: u64, h: f64, seed: u64) -> Result<CheckReport> {
    let mut rng = aux_rng(seed, 0x96ae);
    let mut worst = 0.0_f64;
    for _ in 0..draws {
        let d = rng.random_range(2..=12);
        let eigs: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..4.0)).collect();
        let a = SymMatrix::diag(&eigs)?;
        let v = random_unit_vector(d, &mut rng).scaled(rng.random_range(0.5..2.0));
        worst = worst.max(gradient_error(&a, &v, h)?);
    }
    Ok(CheckReport::new(
        "gradient_random_diag",
        CheckKind::AtMost,
        draws,
        worst,
        1e-6,
        0.0,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalEpochConfig {
    pub c: f64,
    pub t0: u64,
    pub horizon: u64,
    pub trials: usize,
    pub grid_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalEpochOutcome {
    pub retained: usize,
    pub trials: usize,
    /// `(n, filtered mean Psi_n, its standard error, recurrence solution)`.
    pub curve: Vec<(u64, f64, f64, f64)>,
}

/// Krasulina in its final epoch. Random starts at `t0` are kept only while the
/// potential stays at most 1/2 over the whole window, the observable stand-in
/// for the restricted sample space. On that event the mean obeys
/// `u_n <= (1 - a/n) u_{n-1} + b/n^2` with `a = c (lambda1 - lambda2)` and
/// `b = c^2 B^2 / 4`, whose solution must dominate the filtered mean.
pub fn run_final_epoch(source: &Source, cfg: &FinalEpochConfig) -> Result<FinalEpochOutcome> {
    let truth = source.ground_truth();
    let lr = LearningRate::new(cfg.c, cfg.t0)?;
    let grid = crate::harness::log_grid(cfg.t0 + 1, cfg.horizon, cfg.grid_points);
    let runs: Vec<Result<Option<(f64, Vec<f64>)>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(cfg.seed, trial as u64);
            let mut state = EstimatorState::new(random_unit_vector(source.dim(), &mut rng), Rule::Krasulina, lr)?;
            let psi0 = state.potential(&truth.v_star)?;
            if psi0 > 0.5 {
                return Ok(None);
            }
            let mut points = Vec::with_capacity(grid.len());
            for &n in &grid {
                while state.n() < n {
                    state.step(&source.sample(&mut rng))?;
                    if state.n() < cfg.horizon && state.potential(&truth.v_star)? > 0.5 {
                        return Ok(None);
                    }
                }
                points.push(state.potential(&truth.v_star)?);
            }
            Ok(Some((psi0, points)))
        })
        .collect();
    let mut kept = Vec::new();
    for r in runs {
        if let Some(t) = r? {
            kept.push(t);
        }
    }
    if kept.is_empty() {
        return Err(Error::AllTrialsFailed(cfg.trials));
    }
    let a = cfg.c * truth.gap();
    let b = cfg.c * cfg.c * source.norm_bound().powi(2) / 4.0;
    let u0 = kept.iter().map(|k| k.0).sum::<f64>() / kept.len() as f64;
    let mut curve = Vec::with_capacity(grid.len());
    for (i, &n) in grid.iter().enumerate() {
        let mut st = RunningStats::default();
        kept.iter().for_each(|k| st.push(k.1[i]));
        curve.push((
            n,
            st.mean(),
            st.std_error(),
            theory::solve_recurrence(u0, cfg.t0, a, b, n)?,
        ));
    }
    Ok(FinalEpochOutcome {
        retained: kept.len(),
        trials: cfg.trials,
        curve,
    })
}

pub fn check_final_epoch(source: &Source, cfg: &FinalEpochConfig) -> Result<CheckReport> {
    let out = run_final_epoch(source, cfg)?;
    let worst = out
        .curve
        .iter()
        .map(|&(n, m, se, r)| (n, CheckReport::new("", CheckKind::AtMost, 0, m, r, se)))
        .max_by(|x, y| x.1.slack_used.total_cmp(&y.1.slack_used))
        .expect("nonempty grid");
    let (n, r) = worst;
    Ok(CheckReport {
        name: format!("final_epoch_recurrence[c={},t0={}]", cfg.c, cfg.t0),
        n_samples: out.retained as u64,
        ..r
    }
    .with_note(format!(
        "tightest at n={n}; retained {}/{} trials",
        out.retained, out.trials
    )))
}

/// Scale of the default verification suite; 1.0 is the full acceptance size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteScale(pub f64);

impl SuiteScale {
    fn n(&self, full: u64) -> u64 {
        ((full as f64 * self.0).round() as u64).max(10)
    }
}

/// The lemma-level checks on the reference coordinate distribution.
pub fn run_suite(seed: u64, scale: SuiteScale) -> Result<Vec<CheckReport>> {
    use crate::distributions::CoordinateDistribution;
    let source = Source::Coordinate(CoordinateDistribution::new(0.2, 0.5, 10)?);
    let mut reports = Vec::new();
    let mut rng = aux_rng(seed, 0xc0de);
    for k in 0..4 {
        let v = random_unit_vector(10, &mut rng);
        for r in check_xi_expectation(&source, &v, scale.n(100_000), seed + k)? {
            reports.push(r);
        }
        let (eq, lower) = check_z_expectation(&source, &v, 0.1, scale.n(100_000), seed + k)?;
        reports.push(eq);
        reports.push(lower);
    }
    for rule in [Rule::Krasulina, Rule::Oja] {
        for c in [0.5, 5.0] {
            reports.push(check_pathwise(
                &source,
                &PathwiseConfig {
                    rule,
                    c,
                    n_o: 0,
                    init: InitMode::RandomUnit,
                    steps: scale.n(10_000),
                    trials: 10,
                    seed,
                },
            )?);
        }
    }
    reports.push(check_mgf(10, 5.0, scale.n(1_000_000), seed)?);
    reports.push(check_init_potential(10, scale.n(100_000), seed)?);
    let grid: Vec<f64> = (0..=90).map(|i| 10f64.powf(-3.0 + i as f64 / 10.0)).collect();
    reports.push(check_gamma_inequality(&grid)?);
    reports.push(check_gradient_random(scale.n(1000), 1e-5, seed)?);
    Ok(reports)
}

pub fn suite_csv(seed: u64, reports: &[CheckReport]) -> String {
    let mut out = format!("# seed={seed}\n");
    let failed = reports.iter().filter(|r| !r.pass).count();
    let _ = writeln!(out, "# checks={} failed={failed}", reports.len());
    out.push_str(&reports_csv(reports));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{CoordinateDistribution, EmpiricalDistribution};
    use crate::linalg::GroundTruth;
    use approx::assert_abs_diff_eq;

    fn coord() -> Source {
        Source::Coordinate(CoordinateDistribution::new(0.2, 0.5, 10).unwrap())
    }

    #[test]
    fn report_pass_rule() {
        assert!(CheckReport::new("a", CheckKind::TwoSided, 1, 1.0, 1.2, 0.1).pass);
        assert!(!CheckReport::new("a", CheckKind::TwoSided, 1, 1.0, 1.4, 0.1).pass);
        assert!(CheckReport::new("a", CheckKind::AtMost, 1, 0.0, -0.25, 0.1).pass);
        assert!(!CheckReport::new("a", CheckKind::AtLeast, 1, 0.0, 0.35, 0.1).pass);
        let r = CheckReport::new("x", CheckKind::AtMost, 5, 0.5, 0.25, 0.01);
        assert_eq!(r.csv_row(), format!("x,5,0.5,0.25,0.01,false,{}", r.slack_used));
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 9.0, 16.0, 25.0];
        let mut st = RunningStats::default();
        xs.iter().for_each(|&x| st.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(st.mean(), mean, epsilon = 1e-14);
        assert_abs_diff_eq!(st.variance(), var, epsilon = 1e-12);
    }

    #[test]
    fn xi_at_the_target_is_zero_in_mean() {
        let reps = check_xi_expectation(&coord(), &Vector::basis(10, 0), 1000, 1).unwrap();
        assert!(reps.iter().all(|r| r.reference == 0.0 && r.pass));
    }

    #[test]
    fn point_mass_is_exact_in_one_sample() {
        let x = Vector::new(vec![0.6, 0.8, 0.0]).unwrap();
        let truth = GroundTruth::new(x.clone(), 1.0, 0.0, 1.0).unwrap();
        let src = Source::Empirical(EmpiricalDistribution::new(vec![x], truth).unwrap());
        let v = Vector::new(vec![1.0, -0.5, 2.0]).unwrap();
        let reps = check_xi_expectation(&src, &v, 1, 0).unwrap();
        assert!(reps.iter().all(|r| r.pass && r.std_error == 0.0), "{reps:?}");
    }

    #[test]
    fn z_trivial_cases() {
        let (eq, lo) = check_z_expectation(&coord(), &Vector::basis(10, 0), 0.1, 100, 0).unwrap();
        assert_eq!((eq.reference, lo.reference, eq.empirical), (0.0, 0.0, 0.0));
        let (eq, _) = check_z_expectation(&coord(), &Vector::basis(10, 3), 0.1, 100, 0).unwrap();
        assert_eq!((eq.reference, eq.empirical), (0.0, 0.0));
    }

    #[test]
    fn crafted_steps() {
        let e1 = [1.0, 0.0];
        // Orthogonal input: nothing moves and the inequality is tight.
        let v = Vector::basis(2, 0);
        let x = [0.0, 1.0];
        let (bad, z, _) = audit_step(Rule::Krasulina, &v, &x, &v, 0.1, &[0.0, 1.0], 1.0, false).unwrap();
        assert!(bad.is_empty());
        assert_eq!(z, 0.0);

        let v = Vector::new(vec![1.0, 1.0]).unwrap();
        let x = [1.0, 0.0];
        let next = crate::estimators::krasulina_update(&v, &x, 0.1).unwrap();
        let (bad, z, beta) = audit_step(Rule::Krasulina, &v, &x, &next, 0.1, &e1, 1.0, false).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
        assert_abs_diff_eq!(next[0], 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 0.95, epsilon = 1e-15);
        let psi = linalg::potential(&next, &e1).unwrap();
        assert_abs_diff_eq!(
            psi,
            0.95f64.powi(2) / (1.05f64.powi(2) + 0.95f64.powi(2)),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(psi, 0.4500, epsilon = 2e-4);
        assert_abs_diff_eq!(z, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(beta, 0.0025, epsilon = 1e-15);
        assert!(psi <= 0.5 + beta - z);
    }

    #[test]
    fn audit_catches_a_wrong_step() {
        let v = Vector::new(vec![1.0, 1.0, 0.0]).unwrap();
        let x = [1.0, 0.0, 0.0];
        let wrong = Vector::new(vec![1.0, 1.0, 0.1]).unwrap();
        let (bad, _, _) = audit_step(Rule::Krasulina, &v, &x, &wrong, 0.1, &x, 1.0, false).unwrap();
        assert!(bad.contains(&"span containment"));
        assert!(bad.contains(&"potential inequality"));
    }

    #[test]
    fn mgf_examples() {
        // At d=3, t=1 the bound equals e^t, the largest value exp(tY) can take.
        let r = check_mgf(3, 1.0, 20_000, 2).unwrap();
        assert_abs_diff_eq!(r.reference, std::f64::consts::E, epsilon = 1e-12);
        assert!(r.pass && r.empirical <= r.reference);
        let r = check_mgf(10, 5.0, 20_000, 2).unwrap();
        assert!(r.pass && r.note.is_empty());
        let tiny = check_mgf(10, 1e-3, 1000, 2).unwrap();
        assert!(tiny.pass && tiny.note == "vacuous bound");
        assert_abs_diff_eq!(tiny.empirical, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn gamma_values() {
        // Gamma(1.5) = sqrt(pi)/2, Gamma(0.5) = sqrt(pi).
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(log_gamma_ratio_excess(1.0).exp(), sqrt_pi / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            log_gamma_ratio_excess(0.5).exp(),
            1.0 / (0.5f64.sqrt() * sqrt_pi),
            epsilon = 1e-12
        );
        let r = check_gamma_inequality(&[1.0, 0.5, 1e6]).unwrap();
        assert!(r.pass && r.empirical < 1.0);
        assert!(log_gamma_ratio_excess(1e6) < 0.0);
        assert!(check_gamma_inequality(&[0.0]).is_err());
    }

    #[test]
    fn gamma_series_agrees_with_direct_evaluation() {
        for z in [10.0, 12.5, 20.0, 35.0, 50.0] {
            let direct = ln_gamma(z + 0.5) - ln_gamma(z) - 0.5 * f64::ln(z);
            assert_abs_diff_eq!(log_gamma_ratio_excess(z), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_example() {
        let a = SymMatrix::diag(&[2.0, 1.0]).unwrap();
        let v = Vector::new(vec![1.0, 1.0]).unwrap();
        let g = rayleigh_gradient(&a, &v).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-15);
        assert!(gradient_error(&a, &v, 1e-5).unwrap() <= 1e-6);
        assert!(gradient_error(&a, &Vector::basis(2, 0), 1e-5).unwrap() <= 1e-6);
        assert!(check_gradient(&a, 10, 0.0, 0).is_err());
    }

    #[test]
    fn always_good_vacuous_flag() {
        let src = Source::Coordinate(CoordinateDistribution::new(0.2, 0.5, 3).unwrap());
        let r = check_always_good(&src, Rule::Krasulina, 1.0, 0.5, Some(10), 20, 4, 0).unwrap();
        assert!(r.pass && r.note == "vacuous bound");
        assert_abs_diff_eq!(r.reference, 1.6487, epsilon = 1e-4);
    }

    #[test]
    fn reports_replay_bitwise() {
        let a = run_suite(5, SuiteScale(0.01)).unwrap();
        let b = run_suite(5, SuiteScale(0.01)).unwrap();
        assert_eq!(a, b);
    }
}
