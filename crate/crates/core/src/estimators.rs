//! Krasulina, Oja, and block-Oja updates with the `c/n` learning rate.
//!
//! The clock starts at `n_o`: the first update is step `n_o + 1` with
//! `gamma = c / (n_o + 1)`. No data is consumed before `n_o`.
//!
//! Exact zero inner products are preserved exactly. When `V . x == 0` both
//! rules leave `V` bit-for-bit unchanged, so an estimate that is exactly
//! orthogonal to a coordinate direction stays orthogonal to it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::distributions::{random_unit_vector, SampleStats, Source};
use crate::error::{Error, Result};
use crate::linalg::{self, dot, Vector};

/// Krasulina iterates are rescaled to unit length once their norm exceeds this.
pub const KRASULINA_RENORM_THRESHOLD: f64 = 1e100;

/// Columns shorter than this after orthogonalization count as collapsed.
pub const COLLAPSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Krasulina,
    Oja,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Krasulina => "krasulina",
            Rule::Oja => "oja",
        })
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "krasulina" => Ok(Rule::Krasulina),
            "oja" => Ok(Rule::Oja),
            other => Err(Error::Config(format!("unknown update rule {other:?}"))),
        }
    }
}

/// `gamma_n = c / n` for `n > n_o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    c: f64,
    n_o: u64,
}

impl LearningRate {
    pub fn new(c: f64, n_o: u64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning-rate constant must be positive, got {c}"
            )));
        }
        Ok(LearningRate { c, n_o })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_o(&self) -> u64 {
        self.n_o
    }

    /// Step size at time `n`; `n` must be at least 1.
    pub fn gamma(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        self.c / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    RandomUnit,
    FirstPoint,
    AverageK(usize),
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitMode::RandomUnit => f.write_str("random_unit"),
            InitMode::FirstPoint => f.write_str("first_point"),
            InitMode::AverageK(k) => write!(f, "average_{k}"),
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "random_unit" | "random" => Ok(InitMode::RandomUnit),
            "first_point" | "first" => Ok(InitMode::FirstPoint),
            _ => lower
                .strip_prefix("average_")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(InitMode::AverageK)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown init mode {s:?} (random_unit, first_point, average_<k>)"
                    ))
                }),
        }
    }
}

/// Initial estimate from already-drawn data points. `RandomUnit` ignores them.
pub fn init_from_points(mode: InitMode, points: &[Vector]) -> Result<Vector> {
    match mode {
        InitMode::RandomUnit => Err(Error::InvalidParameter("random_unit init needs an rng".into())),
        InitMode::FirstPoint => {
            let x = points.first().ok_or(Error::EndOfStream)?;
            if x.is_zero() {
                return Err(Error::ZeroInit);
            }
            Ok(x.clone())
        }
        InitMode::AverageK(k) => {
            if points.len() < k {
                return Err(Error::EndOfStream);
            }
            let mut sum = Vector::zeros(points[0].dim());
            for x in &points[..k] {
                sum.axpy(1.0, x);
            }
            let avg = sum.scaled(1.0 / k as f64);
            if avg.is_zero() {
                return Err(Error::ZeroInit);
            }
            Ok(avg)
        }
    }
}

/// Initial estimate `V_{n_o}`: a uniform random unit vector, the first data
/// point, or the mean of the first `k` points drawn from `source`.
pub fn init<R: Rng + ?Sized>(
    mode: InitMode,
    d: usize,
    source: &Source,
    rng: &mut R,
    stats: &mut SampleStats,
) -> Result<Vector> {
    if source.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: source.dim(),
        });
    }
    match mode {
        InitMode::RandomUnit => Ok(random_unit_vector(d, rng)),
        InitMode::FirstPoint => init_from_points(mode, &[source.sample_tracked(rng, stats)?]),
        InitMode::AverageK(k) => {
            let points = (0..k)
                .map(|_| source.sample_tracked(rng, stats))
                .collect::<Result<Vec<_>>>()?;
            init_from_points(mode, &points)
        }
    }
}

/// Krasulina's increment direction `(x x^T - (v_hat . x)^2 I) v`.
pub fn xi(v: &Vector, x: &[f64]) -> Result<Vector> {
    v.check_dim(x.len())?;
    let nsq = v.norm_sq();
    if nsq == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(Vector::from_raw(xi_raw(v, x, nsq)))
}

/// `xi = (v . x) r` with `r` the part of `x` orthogonal to `v`. Near
/// convergence `r` is the small difference of nearly parallel vectors, so it
/// gets a second projection: one pass leaves a rounding residue along `v` of
/// order `eps |x|`, which can dwarf `|r|` itself.
fn xi_raw(v: &[f64], x: &[f64], nsq: f64) -> Vec<f64> {
    let vx = dot(v, x);
    if vx == 0.0 {
        return vec![0.0; v.len()];
    }
    let t = vx / nsq;
    let mut r: Vec<f64> = v.iter().zip(x).map(|(vi, xi)| xi - t * vi).collect();
    let t2 = dot(&r, v) / nsq;
    r.iter_mut().zip(v).for_each(|(ri, vi)| *ri = vx * (*ri - t2 * vi));
    r
}

/// `Z = 2 gamma (v . v*)(xi . v*) / |v|^2`, the stochastic decrease term in
/// the per-step potential bound.
pub fn z_increment(v: &Vector, x: &[f64], gamma: f64, v_star: &[f64]) -> Result<f64> {
    let step = xi(v, x)?;
    v.check_dim(v_star.len())?;
    Ok(2.0 * gamma * dot(v, v_star) * dot(&step, v_star) / v.norm_sq())
}

/// `v + gamma xi(v, x)` without any rescaling.
pub fn krasulina_update(v: &Vector, x: &[f64], gamma: f64) -> Result<Vector> {
    v.check_dim(x.len())?;
    let nsq = v.norm_sq();
    if nsq == 0.0 {
        return Err(Error::ZeroVector);
    }
    if dot(v, x) == 0.0 {
        return Ok(v.clone());
    }
    let step = xi_raw(v, x, nsq);
    Ok(Vector::from_raw(
        v.iter().zip(&step).map(|(vi, si)| vi + gamma * si).collect(),
    ))
}

/// `(v + gamma x x^T v) / |v + gamma x x^T v|`.
pub fn oja_update(v: &Vector, x: &[f64], gamma: f64) -> Result<Vector> {
    v.check_dim(x.len())?;
    let vx = dot(v, x);
    if vx == 0.0 {
        return Ok(v.clone());
    }
    let mut w: Vec<f64> = v.iter().zip(x).map(|(vi, xi)| vi + gamma * vx * xi).collect();
    normalize_checked(&mut w)?;
    Ok(Vector::from_raw(w))
}

fn normalize_checked(w: &mut [f64]) -> Result<()> {
    let norm = dot(w, w).sqrt();
    if !(norm >= 1e-300) || !norm.is_finite() {
        return Err(Error::Numeric(format!("Oja normalization denominator {norm}")));
    }
    w.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Single-vector estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    v: Vector,
    n: u64,
    rule: Rule,
    lr: LearningRate,
    renormalizations: u64,
}

impl EstimatorState {
    /// Starts the clock at `lr.n_o()`. Oja estimates are normalized here.
    pub fn new(v: Vector, rule: Rule, lr: LearningRate) -> Result<Self> {
        if v.is_zero() {
            return Err(Error::ZeroInit);
        }
        let v = match rule {
            Rule::Oja => v.normalized()?,
            Rule::Krasulina => v,
        };
        Ok(EstimatorState {
            v,
            n: lr.n_o(),
            rule,
            lr,
            renormalizations: 0,
        })
    }

    pub fn v(&self) -> &Vector {
        &self.v
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn learning_rate(&self) -> LearningRate {
        self.lr
    }

    /// Number of overflow-guard rescalings applied to a Krasulina iterate.
    pub fn renormalizations(&self) -> u64 {
        self.renormalizations
    }

    /// Step size the next update will use.
    pub fn next_gamma(&self) -> f64 {
        self.lr.gamma(self.n + 1)
    }

    pub fn potential(&self, v_star: &[f64]) -> Result<f64> {
        linalg::potential(&self.v, v_star)
    }

    /// Applies this state's rule to `x` and returns the step size used.
    pub fn step(&mut self, x: &[f64]) -> Result<f64> {
        match self.rule {
            Rule::Krasulina => self.krasulina_step(x),
            Rule::Oja => self.oja_step(x),
        }
    }

    pub fn krasulina_step(&mut self, x: &[f64]) -> Result<f64> {
        if self.rule != Rule::Krasulina {
            return Err(Error::InvalidParameter("krasulina_step on an Oja state".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let gamma = self.next_gamma();
        let mut v = krasulina_update(&self.v, x, gamma)?;
        let norm = v.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric("Krasulina iterate overflowed".into()));
        }
        if norm > KRASULINA_RENORM_THRESHOLD {
            v = v.scaled(1.0 / norm);
            self.renormalizations += 1;
        }
        self.v = v;
        self.n += 1;
        Ok(gamma)
    }

    pub fn oja_step(&mut self, x: &[f64]) -> Result<f64> {
        if self.rule != Rule::Oja {
            return Err(Error::InvalidParameter("oja_step on a Krasulina state".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let gamma = self.next_gamma();
        self.v = oja_update(&self.v, x, gamma)?;
        self.n += 1;
        Ok(gamma)
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockStep {
    pub gamma: f64,
    /// Columns replaced by random orthogonal directions after collapsing.
    pub collapsed: usize,
}

/// Top-`p` estimator: a `d x p` frame with orthonormal columns, updated by
/// `W = V + gamma x x^T V` followed by modified Gram-Schmidt.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    columns: Vec<Vector>,
    n: u64,
    lr: LearningRate,
    collapses: u64,
}

impl BlockState {
    pub fn new(columns: Vec<Vector>, lr: LearningRate) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidParameter("block estimator needs p >= 1 columns".into()));
        }
        let d = columns[0].dim();
        if columns.len() > d {
            return Err(Error::InvalidParameter(format!(
                "p = {} exceeds d = {d}",
                columns.len()
            )));
        }
        for c in &columns {
            c.check_dim(d)?;
        }
        // Normalized as Oja normalizes its start, so p = 1 matches it bit for bit.
        let columns = columns
            .into_iter()
            .map(|c| c.normalized())
            .collect::<Result<Vec<_>>>()?;
        let state = BlockState {
            columns,
            n: lr.n_o(),
            lr,
            collapses: 0,
        };
        if state.orthonormality_error() > 1e-10 {
            return Err(Error::InvalidParameter("initial columns are not orthonormal".into()));
        }
        Ok(state)
    }

    /// Random orthonormal start: Gram-Schmidt on random unit vectors.
    pub fn random<R: Rng + ?Sized>(d: usize, p: usize, lr: LearningRate, rng: &mut R) -> Result<Self> {
        if p == 0 || p > d {
            return Err(Error::InvalidParameter(format!("need 1 <= p <= d, got p={p}, d={d}")));
        }
        let mut columns: Vec<Vector> = Vec::with_capacity(p);
        while columns.len() < p {
            let mut w = random_unit_vector(d, rng).into_inner();
            linalg::orthogonalize_against(&mut w, &columns);
            let norm = dot(&w, &w).sqrt();
            if norm > 1e-6 {
                w.iter_mut().for_each(|x| *x /= norm);
                columns.push(Vector::from_raw(w));
            }
        }
        BlockState::new(columns, lr)
    }

    pub fn columns(&self) -> &[Vector] {
        &self.columns
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn collapses(&self) -> u64 {
        self.collapses
    }

    /// `max |V^T V - I|` entrywise.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, a) in self.columns.iter().enumerate() {
            for (j, b) in self.columns.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((a.dot(b) - target).abs());
            }
        }
        worst
    }

    /// `p - |V*^T V|_F^2` for an orthonormal target frame `V*`. A diagnostic
    /// only: zero iff the spans coincide.
    pub fn subspace_potential(&self, target: &[Vector]) -> f64 {
        let overlap: f64 = target
            .iter()
            .flat_map(|t| self.columns.iter().map(move |c| t.dot(c).powi(2)))
            .sum();
        (self.columns.len() as f64 - overlap).max(0.0)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, x: &[f64], rng: &mut R) -> Result<BlockStep> {
        let d = self.columns[0].dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let gamma = self.lr.gamma(self.n + 1);
        self.n += 1;
        let projections: Vec<f64> = self.columns.iter().map(|c| c.dot(x)).collect();
        if projections.iter().all(|&p| p == 0.0) {
            return Ok(BlockStep { gamma, collapsed: 0 });
        }
        let mut finished: Vec<Vector> = Vec::with_capacity(self.columns.len());
        let mut collapsed = 0;
        for (col, vx) in self.columns.iter().zip(&projections) {
            let mut w: Vec<f64> = col.iter().zip(x).map(|(vi, xi)| vi + gamma * vx * xi).collect();
            linalg::orthogonalize_against(&mut w, &finished);
            let norm = dot(&w, &w).sqrt();
            if !(norm >= COLLAPSE_TOL) {
                w = loop {
                    let mut r = random_unit_vector(d, rng).into_inner();
                    linalg::orthogonalize_against(&mut r, &finished);
                    linalg::orthogonalize_against(&mut r, &finished);
                    if dot(&r, &r).sqrt() > 1e-6 {
                        break r;
                    }
                };
                collapsed += 1;
            }
            normalize_checked(&mut w)?;
            finished.push(Vector::from_raw(w));
        }
        self.columns = finished;
        self.collapses += collapsed as u64;
        Ok(BlockStep { gamma, collapsed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::CoordinateDistribution;
    use crate::rng::trial_rng;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn learning_rate() {
        let lr = LearningRate::new(2.0, 10).unwrap();
        assert_eq!(lr.gamma(11), 2.0 / 11.0);
        assert!(lr.gamma(12) < lr.gamma(11));
        assert!(LearningRate::new(0.0, 0).is_err());
    }

    #[test]
    fn parse_modes() {
        assert_eq!("oja".parse::<Rule>().unwrap(), Rule::Oja);
        assert_eq!("average_3".parse::<InitMode>().unwrap(), InitMode::AverageK(3));
        assert_eq!("first_point".parse::<InitMode>().unwrap(), InitMode::FirstPoint);
        assert!("average_0".parse::<InitMode>().is_err());
        assert_eq!(InitMode::AverageK(4).to_string(), "average_4");
    }

    #[test]
    fn xi_examples() {
        let r = xi(&v(&[1.0, 1.0]), &[1.0, 0.0]).unwrap();
        assert_eq!(r.as_slice(), &[0.5, -0.5]);
        assert!(xi(&v(&[1.0, 0.0]), &[1.0, 0.0]).unwrap().is_zero());
        assert!(xi(&v(&[1.0, 0.0]), &[0.0, 1.0]).unwrap().is_zero());
        assert!(matches!(xi(&v(&[0.0, 0.0]), &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn z_examples() {
        let e1 = [1.0, 0.0];
        assert_eq!(z_increment(&v(&[1.0, 0.0]), &[0.3, 0.7], 0.1, &e1).unwrap(), 0.0);
        let z = z_increment(&v(&[1.0, 1.0]), &[1.0, 0.0], 0.1, &e1).unwrap();
        assert_abs_diff_eq!(z, 0.05, epsilon = 1e-15);
        assert!(z_increment(&v(&[0.0, 0.0]), &e1, 0.1, &e1).is_err());
    }

    #[test]
    fn krasulina_examples() {
        let lr = LearningRate::new(0.1, 0).unwrap();
        let mut s = EstimatorState::new(v(&[1.0, 0.0]), Rule::Krasulina, lr).unwrap();
        s.krasulina_step(&[0.0, 1.0]).unwrap();
        assert_eq!(s.v().as_slice(), &[1.0, 0.0]);

        let out = krasulina_update(&v(&[1.0, 1.0]), &[1.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(out[0], 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.95, epsilon = 1e-15);

        for gamma in [0.01, 1.0, 7.5] {
            let out = krasulina_update(&v(&[1.0, 0.0]), &[1.0, 0.0], gamma).unwrap();
            assert_eq!(out.as_slice(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn oja_examples() {
        let e1 = v(&[1.0, 0.0]);
        assert_eq!(oja_update(&e1, &[0.0, 1.0], 0.3).unwrap(), e1);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let out = oja_update(&v(&[h, h]), &[1.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(out[0], 1.1 / 2.21_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.0 / 2.21_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[0], 0.73994, epsilon = 1e-5);
        assert_abs_diff_eq!(out[1], 0.67267, epsilon = 1e-5);
        assert_eq!(oja_update(&e1, &[1.0, 0.0], 0.5).unwrap(), e1);
    }

    #[test]
    fn oja_denominator_guard() {
        // gamma = -1 with x = v sends the iterate to zero.
        let e1 = v(&[1.0, 0.0]);
        assert!(matches!(oja_update(&e1, &[1.0, 0.0], -1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn rule_mismatch_is_rejected() {
        let lr = LearningRate::new(1.0, 0).unwrap();
        let mut s = EstimatorState::new(v(&[1.0, 0.0]), Rule::Oja, lr).unwrap();
        assert!(s.krasulina_step(&[1.0, 0.0]).is_err());
        assert!(EstimatorState::new(v(&[0.0, 0.0]), Rule::Oja, lr).is_err());
    }

    #[test]
    fn clock_starts_at_n_o() {
        let lr = LearningRate::new(3.0, 5).unwrap();
        let mut s = EstimatorState::new(v(&[1.0, 1.0]), Rule::Krasulina, lr).unwrap();
        assert_eq!(s.n(), 5);
        let gamma = s.step(&[1.0, 0.0]).unwrap();
        assert_eq!(gamma, 0.5);
        assert_eq!(s.n(), 6);
    }

    #[test]
    fn krasulina_renormalizes_huge_iterates() {
        let lr = LearningRate::new(1.0, 0).unwrap();
        let mut s = EstimatorState::new(v(&[1e100, 1e100]), Rule::Krasulina, lr).unwrap();
        s.step(&[0.6, 0.8]).unwrap();
        assert_eq!(s.renormalizations(), 1);
        assert_abs_diff_eq!(s.v().norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_modes() {
        assert_eq!(
            init_from_points(InitMode::AverageK(2), &[v(&[1.0, 0.0]), v(&[-1.0, 0.0])])
                .unwrap_err()
                .to_string(),
            Error::ZeroInit.to_string()
        );
        let avg = init_from_points(InitMode::AverageK(2), &[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(avg.as_slice(), &[0.5, 0.5]);

        let src = Source::Coordinate(CoordinateDistribution::new(0.2, 0.5, 10).unwrap());
        let mut rng = trial_rng(1, 0);
        let mut stats = SampleStats::default();
        let r = init(InitMode::RandomUnit, 10, &src, &mut rng, &mut stats).unwrap();
        assert_abs_diff_eq!(r.norm(), 1.0, epsilon = 1e-12);
        let f = init(InitMode::FirstPoint, 10, &src, &mut rng, &mut stats).unwrap();
        assert_eq!(f.iter().filter(|x| **x != 0.0).count(), 1);
        assert_eq!(stats.accepted, 1);
        assert!(init(InitMode::RandomUnit, 3, &src, &mut rng, &mut stats).is_err());
    }

    #[test]
    fn block_examples() {
        let lr = LearningRate::new(0.2, 0).unwrap();
        let e = |i| Vector::basis(3, i);
        let mut b = BlockState::new(vec![e(0), e(1)], lr).unwrap();
        let mut rng = trial_rng(0, 0);
        b.step(&[0.0, 0.0, 1.0], &mut rng).unwrap();
        assert_eq!(b.columns(), &[e(0), e(1)]);

        // W = V + 0.2 x x^T V with x = (1,1,0)/sqrt2: columns (1.1, 0.1, 0) and (0.1, 1.1, 0).
        let mut b = BlockState::new(vec![e(0), e(1)], LearningRate::new(0.4, 1).unwrap()).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        b.step(&[h, h, 0.0], &mut rng).unwrap();
        let n1 = (1.1_f64 * 1.1 + 0.01).sqrt();
        let q1 = [1.1 / n1, 0.1 / n1, 0.0];
        let w2 = [0.1, 1.1, 0.0];
        let c = q1[0] * w2[0] + q1[1] * w2[1];
        let r = [w2[0] - c * q1[0], w2[1] - c * q1[1], 0.0];
        let rn = (r[0] * r[0] + r[1] * r[1]).sqrt();
        for i in 0..3 {
            assert_abs_diff_eq!(b.columns()[0][i], q1[i], epsilon = 1e-12);
            assert_abs_diff_eq!(b.columns()[1][i], r[i] / rn, epsilon = 1e-12);
        }
        assert!(b.orthonormality_error() < 1e-12);
    }

    #[test]
    fn block_p1_matches_oja_bitwise() {
        let lr = LearningRate::new(2.0, 0).unwrap();
        let mut rng = trial_rng(4, 0);
        let start = random_unit_vector(5, &mut rng);
        let mut single = EstimatorState::new(start.clone(), Rule::Oja, lr).unwrap();
        let mut block = BlockState::new(vec![single.v().clone()], lr).unwrap();
        let src = CoordinateDistribution::new(0.3, 0.5, 5).unwrap();
        for _ in 0..1000 {
            let x = src.sample(&mut rng);
            single.step(&x).unwrap();
            block.step(&x, &mut rng).unwrap();
            assert_eq!(single.v(), &block.columns()[0]);
        }
    }

    #[test]
    fn block_collapse_is_repaired() {
        // gamma = -1 along x = e1 annihilates the first column.
        let lr = LearningRate::new(1.0, 0).unwrap();
        let mut b = BlockState::new(vec![Vector::basis(3, 0), Vector::basis(3, 1)], lr).unwrap();
        b.lr = LearningRate { c: -1.0, n_o: 0 };
        let mut rng = trial_rng(8, 0);
        let out = b.step(&[1.0, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(out.collapsed, 1);
        assert_eq!(b.collapses(), 1);
        assert!(b.orthonormality_error() < 1e-12);
    }

    #[test]
    fn subspace_potential_diagnostic() {
        let lr = LearningRate::new(1.0, 0).unwrap();
        let b = BlockState::new(vec![Vector::basis(4, 0), Vector::basis(4, 1)], lr).unwrap();
        assert_eq!(b.subspace_potential(&[Vector::basis(4, 1), Vector::basis(4, 0)]), 0.0);
        assert_eq!(b.subspace_potential(&[Vector::basis(4, 2), Vector::basis(4, 3)]), 2.0);
    }
}
