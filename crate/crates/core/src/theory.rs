//! Closed-form rate expressions, bounds and the epoch schedule.
//!
//! The Krasulina rate bound is evaluated through its explicit final-epoch
//! form: with `a = c_o/2` and `b = c^2 B^2 / 4`,
//!
//! ```text
//! E[Psi_n] <= 1/2 ((n_o+1)/(n+1))^a (4ed/delta^2)^(5/(2 ln 2))
//!           + b/(a-1) exp((a+1)/(n_J+1)) / (n+1)            (a > 1)
//! ```
//!
//! For `a < 1` the second term becomes `4 b zeta(2-a) / (n+1)^a`.

use std::f64::consts::{E, LN_2};

use crate::error::{Error, Result};
use crate::estimators::Rule;

/// Exponent of the `d/delta^2` factor in the explicit bound, `5/(2 ln 2)`.
pub fn bound_exponent() -> f64 {
    5.0 / (2.0 * LN_2)
}

/// Per-step additive slack in `Psi_n <= Psi_{n-1} + beta_n - Z_n`.
pub fn beta_step(rule: Rule, gamma: f64, b: f64) -> f64 {
    match rule {
        Rule::Krasulina => gamma * gamma * b * b / 4.0,
        Rule::Oja => 5.0 * gamma * gamma * b * b + 2.0 * gamma.powi(3) * b.powi(3),
    }
}

/// Reference curve `(d-1) / n^(2c(lambda1-lambda2))`.
pub fn heuristic_rate(c: f64, lambda1: f64, lambda2: f64, d: usize, n: u64) -> f64 {
    (d as f64 - 1.0) / (n as f64).powf(heuristic_exponent(c, lambda1, lambda2))
}

/// `2 c (lambda1 - lambda2)`, the log-log slope magnitude of [`heuristic_rate`].
pub fn heuristic_exponent(c: f64, lambda1: f64, lambda2: f64) -> f64 {
    2.0 * c * (lambda1 - lambda2)
}

/// `c = c_o / (2 (lambda1 - lambda2))`.
pub fn c_from_c_o(c_o: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    let gap = lambda1 - lambda2;
    if !(gap > 0.0) {
        return Err(Error::InvalidParameter(format!("eigengap must be positive, got {gap}")));
    }
    Ok(c_o / (2.0 * gap))
}

/// Upper bound `e^t sqrt((d-1)/(2t))` on the moment generating function of
/// `Y = 1 - V_1^2` for `V` uniform on the sphere.
pub fn mgf_bound(d: usize, t: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("mgf bound needs d >= 3, got {d}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("mgf bound needs t > 0, got {t}")));
    }
    Ok(t.exp() * ((d as f64 - 1.0) / (2.0 * t)).sqrt())
}

/// Probability bound on ever returning close to orthogonal after a random
/// start: `Pr(sup Psi_n >= 1 - eps/d) <= sqrt(2 e eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlwaysGood {
    pub eps: f64,
    pub prob_bound: f64,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
}

impl AlwaysGood {
    /// Smallest start time `ceil(2 B^2 c^2 d^2 / eps^2)` for which the bound applies.
    pub fn n_o_min(&self, b: f64, c: f64, d: usize) -> u64 {
        let d = d as f64;
        (2.0 * b * b * c * c * d * d / (self.eps * self.eps)).ceil() as u64
    }
}

pub fn always_good_bound(eps: f64) -> Result<AlwaysGood> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0,1), got {eps}")));
    }
    let prob_bound = (2.0 * E * eps).sqrt();
    Ok(AlwaysGood {
        eps,
        prob_bound,
        vacuous: prob_bound >= 1.0,
    })
}

/// Riemann zeta for real `s > 1`: direct summation of the first terms plus an
/// Euler-Maclaurin tail. Absolute error well below `1e-10` on `s in (1, 64]`.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("zeta(s) needs finite s > 1, got {s}")));
    }
    const N: usize = 32;
    // B_{2j} / (2j)!
    const COEFFS: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
    ];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // Rising factorial s (s+1) ... (s+2j-2) and power N^{-s-2j+1}.
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, coeff) in COEFFS.iter().enumerate() {
        sum += coeff * rising * power;
        let k = 2.0 * j as f64;
        rising *= (s + k + 1.0) * (s + k + 2.0);
        power /= n * n;
    }
    Ok(sum)
}

/// Closed-form solution bound for `u_t <= (1 - a/t) u_{t-1} + b/t^2`:
///
/// * `a > 1`: `((t0+1)/(t+1))^a u_t0 + b/(a-1) (1 + 1/(t0+1))^(a+1) / (t+1)`
/// * `a < 1`: `((t0+1)/(t+1))^a u_t0 + 4 b zeta(2-a) / (t+1)^a`
///
/// The bound presumes every factor `1 - a/i` with `i > t0` is nonnegative,
/// i.e. `t0 + 1 >= a`.
pub fn solve_recurrence(u_t0: f64, t0: u64, a: f64, b: f64, t: u64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("recurrence needs a > 0, got {a}")));
    }
    if a == 1.0 {
        return Err(Error::Unsupported("recurrence bound excludes a = 1".into()));
    }
    if !(b >= 0.0) {
        return Err(Error::InvalidParameter(format!("recurrence needs b >= 0, got {b}")));
    }
    if t < t0 {
        return Err(Error::InvalidParameter(format!("need t >= t0, got t={t}, t0={t0}")));
    }
    if (t0 as f64 + 1.0) < a {
        // Some factor (1 - a/i) would be negative and the solution would not bound the sequence.
        return Err(Error::InvalidParameter(format!("need t0 + 1 >= a, got t0={t0}, a={a}")));
    }
    let (t0f, tf) = (t0 as f64, t as f64);
    let decay = ((t0f + 1.0) / (tf + 1.0)).powf(a) * u_t0;
    let noise = if a > 1.0 {
        b / (a - 1.0) * (1.0 + 1.0 / (t0f + 1.0)).powf(a + 1.0) / (tf + 1.0)
    } else {
        4.0 * b * zeta(2.0 - a)? / (tf + 1.0).powf(a)
    };
    Ok(decay + noise)
}

/// The `(n_j, eps_j)` ladder along which `1 - Psi` doubles from `eps_o` to 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSchedule {
    pub pairs: Vec<(u64, f64)>,
    pub delta: f64,
    pub d: usize,
    pub c_o: f64,
    pub c: f64,
    pub b: f64,
    /// `ceil((20 c^2 B^2 / eps_o^2) ln(4/delta))`.
    pub n_o_min: u64,
}

/// One inequality checked by [`EpochSchedule::audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditItem {
    pub condition: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub items: Vec<AuditItem>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.holds)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditItem> {
        self.items.iter().filter(|i| !i.holds)
    }
}

/// `eps_o = delta^2 / (8 e d)`.
pub fn initial_epsilon(delta: f64, d: usize) -> f64 {
    delta * delta / (8.0 * E * d as f64)
}

/// `ceil((20 c^2 B^2 / eps_o^2) ln(4/delta))`.
pub fn epochs_n_o_min(delta: f64, d: usize, c: f64, b: f64) -> u64 {
    let eps_o = initial_epsilon(delta, d);
    (20.0 * c * c * b * b / (eps_o * eps_o) * (4.0 / delta).ln()).ceil() as u64
}

/// Epoch schedule starting at the smallest admissible `n_o`.
pub fn epoch_schedule(delta: f64, d: usize, c_o: f64, c: f64, b: f64) -> Result<EpochSchedule> {
    epoch_schedule_from(delta, d, c_o, c, b, None)
}

/// Epoch schedule starting at `n_o` (default: the smallest admissible start).
/// A start below the minimum is accepted and reported by the audit.
pub fn epoch_schedule_from(delta: f64, d: usize, c_o: f64, c: f64, b: f64, n_o: Option<u64>) -> Result<EpochSchedule> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
    }
    if d < 3 {
        return Err(Error::InvalidParameter(format!("epoch schedule needs d >= 3, got {d}")));
    }
    if !(c_o > 0.0 && c > 0.0 && b > 0.0) {
        return Err(Error::InvalidParameter("c_o, c and B must be positive".into()));
    }
    let eps_o = initial_epsilon(delta, d);
    if eps_o >= 0.5 {
        return Err(Error::InvalidParameter(format!(
            "eps_o = {eps_o} >= 1/2: delta too large for d"
        )));
    }
    let eps = epsilon_ladder(eps_o)?;
    let n_o_min = epochs_n_o_min(delta, d, c, b);
    let start = n_o.unwrap_or(n_o_min);
    let growth = (5.0 / c_o).exp();
    let mut times = Vec::with_capacity(eps.len());
    times.push(start);
    for _ in 1..eps.len() {
        let prev = *times.last().expect("nonempty");
        let next = (growth * (prev as f64 + 1.0)).ceil();
        if !(next < 9.0e18) {
            return Err(Error::InvalidParameter(format!(
                "epoch times overflow u64 (growth factor {growth} per epoch)"
            )));
        }
        times.push(next as u64 - 1);
    }
    Ok(EpochSchedule {
        pairs: times.into_iter().zip(eps).collect(),
        delta,
        d,
        c_o,
        c,
        b,
        n_o_min,
    })
}

/// `eps_o, ..., 1/4, 1/2`, doubling while possible. The step into 1/4 may
/// need a few factors in `[3/2, 2]`; those are placed last.
fn epsilon_ladder(eps_o: f64) -> Result<Vec<f64>> {
    // Smallest k with eps_o 2^k >= 1/4. Scaling by powers of two is exact.
    let mut k = 0usize;
    while eps_o * 2f64.powi(k as i32) < 0.25 {
        k += 1;
    }
    if k == 0 {
        if eps_o == 0.25 {
            return Ok(vec![0.25, 0.5]);
        }
        return Err(Error::InvalidParameter(format!(
            "eps_o = {eps_o} cannot reach 1/4 with factors in [3/2, 2]"
        )));
    }
    for trailing in 1..=k {
        let doubled = eps_o * 2f64.powi((k - trailing) as i32);
        let factor = (0.25 / doubled).powf(1.0 / trailing as f64);
        if factor < 1.5 {
            continue;
        }
        let mut ladder: Vec<f64> = (0..=(k - trailing)).map(|j| eps_o * 2f64.powi(j as i32)).collect();
        for i in 1..trailing {
            ladder.push(doubled * factor.powi(i as i32));
        }
        ladder.push(0.25);
        ladder.push(0.5);
        if ladder_ok(&ladder) {
            return Ok(ladder);
        }
    }
    Err(Error::InvalidParameter(format!(
        "no admissible epsilon ladder from eps_o = {eps_o}"
    )))
}

fn ladder_ok(eps: &[f64]) -> bool {
    eps.windows(2).all(|w| 1.5 * w[0] <= w[1] && w[1] <= 2.0 * w[0])
}

impl EpochSchedule {
    /// Number of epochs `J`; the ladder has `J + 1` entries.
    pub fn j(&self) -> usize {
        self.pairs.len() - 1
    }

    pub fn n_o(&self) -> u64 {
        self.pairs[0].0
    }

    pub fn n_last(&self) -> u64 {
        self.pairs[self.j()].0
    }

    pub fn eps_o(&self) -> f64 {
        self.pairs[0].1
    }

    /// Re-checks every condition of the schedule theorem on the stored values.
    pub fn audit(&self) -> Audit {
        let mut items = Vec::new();
        let mut push = |condition: String, holds: bool| items.push(AuditItem { condition, holds });
        let j_max = self.j();
        push(
            "eps_0 = delta^2/(8ed)".into(),
            self.pairs[0].1 == initial_epsilon(self.delta, self.d),
        );
        for j in 0..j_max {
            let (n_j, e_j) = self.pairs[j];
            let (n_next, e_next) = self.pairs[j + 1];
            push(
                format!("3/2 eps_{j} <= eps_{} <= 2 eps_{j}", j + 1),
                1.5 * e_j <= e_next && e_next <= 2.0 * e_j,
            );
            push(
                format!("n_{} + 1 >= e^(5/c_o) (n_{j} + 1)", j + 1),
                (n_next as f64 + 1.0) >= (5.0 / self.c_o).exp() * (n_j as f64 + 1.0),
            );
            push(format!("n_{j} < n_{}", j + 1), n_j < n_next);
        }
        push(
            format!("eps_{} <= 1/4", j_max.saturating_sub(1)),
            j_max >= 1 && self.pairs[j_max - 1].1 <= 0.25,
        );
        push(format!("eps_{j_max} = 1/2"), self.pairs[j_max].1 == 0.5);
        let eps_o = self.eps_o();
        let required = 20.0 * self.c * self.c * self.b * self.b / (eps_o * eps_o) * (4.0 / self.delta).ln();
        push(
            "n_o >= (20 c^2 B^2 / eps_o^2) ln(4/delta)".into(),
            self.n_o() as f64 >= required,
        );
        let constants = RateConstants::new(self.delta);
        let rate_start = constants.n_o(self.b, self.c, self.d, self.delta);
        push(
            "A_o B^2 c^2 d^2 / delta^4 ln(1/delta) >= epoch start requirement".into(),
            rate_start >= required * (1.0 - 1e-12),
        );
        Audit { items }
    }
}

/// The constants of the headline rate theorem, pinned to its explicit
/// final-epoch derivation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// Start-time constant. Depends on `delta`: `1280 e^2 ln(4/delta) / ln(1/delta)`.
    pub a_o: f64,
    /// `(1/2) (4e)^(5/(2 ln 2))`.
    pub a_1: f64,
    /// `5 / (2 ln 2)`, inside `(1, 4)`.
    pub a: f64,
}

impl RateConstants {
    pub fn new(delta: f64) -> Self {
        let a = bound_exponent();
        RateConstants {
            a_o: 1280.0 * E * E * (4.0 / delta).ln() / (1.0 / delta).ln(),
            a_1: 0.5 * (4.0 * E).powf(a),
            a,
        }
    }

    /// `(A_o B^2 c^2 d^2 / delta^4) ln(1/delta)`.
    pub fn n_o(&self, b: f64, c: f64, d: usize, delta: f64) -> f64 {
        let d = d as f64;
        self.a_o * b * b * c * c * d * d / delta.powi(4) * (1.0 / delta).ln()
    }
}

/// Hypotheses of the rate theorem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub c_o: f64,
    pub c: f64,
    pub b: f64,
    pub d: usize,
    pub delta: f64,
    pub n_o: u64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl BoundParams {
    /// Derives `c = c_o / (2 (lambda1 - lambda2))`.
    pub fn new(c_o: f64, b: f64, d: usize, delta: f64, n_o: u64, lambda1: f64, lambda2: f64) -> Result<Self> {
        let c = c_from_c_o(c_o, lambda1, lambda2)?;
        Ok(BoundParams {
            c_o,
            c,
            b,
            d,
            delta,
            n_o,
            lambda1,
            lambda2,
        })
    }

    /// Uses `c` directly; `lambda1`/`lambda2` are set so that the gap matches.
    pub fn with_c(c_o: f64, c: f64, b: f64, d: usize, delta: f64, n_o: u64) -> Self {
        BoundParams {
            c_o,
            c,
            b,
            d,
            delta,
            n_o,
            lambda1: c_o / (2.0 * c),
            lambda2: 0.0,
        }
    }

    pub fn schedule(&self) -> Result<EpochSchedule> {
        epoch_schedule_from(self.delta, self.d, self.c_o, self.c, self.b, Some(self.n_o))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrasulinaBound {
    pub value: f64,
    /// `n_J` of the epoch schedule started at `n_o`; kept in floating point
    /// because slow growth factors push it past `u64` within a few epochs.
    pub n_last: f64,
    /// `n >= n_J` and `n_o` meets the theorem's minimum start time.
    pub within_hypotheses: bool,
}

fn last_epoch_time(params: &BoundParams) -> Result<f64> {
    if !(params.delta > 0.0 && params.delta < 1.0) || params.d < 3 {
        return Err(Error::InvalidParameter("bound needs delta in (0,1) and d >= 3".into()));
    }
    if !(params.c_o > 0.0 && params.c > 0.0 && params.b > 0.0) {
        return Err(Error::InvalidParameter("c_o, c and B must be positive".into()));
    }
    let epochs = epsilon_ladder(initial_epsilon(params.delta, params.d))?.len();
    let growth = (5.0 / params.c_o).exp();
    let mut t = params.n_o as f64;
    for _ in 1..epochs {
        t = (growth * (t + 1.0)).ceil() - 1.0;
    }
    Ok(t)
}

/// Upper bound on the restricted expectation `E_n[Psi_n]`.
pub fn krasulina_bound(params: &BoundParams, n: u64) -> Result<KrasulinaBound> {
    if params.c_o == 2.0 {
        return Err(Error::Unsupported("the rate bound excludes c_o = 2".into()));
    }
    if n < params.n_o {
        return Err(Error::InvalidParameter(format!(
            "n = {n} precedes the start time {}",
            params.n_o
        )));
    }
    let n_last = last_epoch_time(params)?;
    let a = params.c_o / 2.0;
    let b = params.c * params.c * params.b * params.b / 4.0;
    let nf = n as f64;
    let ratio = (params.n_o as f64 + 1.0) / (nf + 1.0);
    let d = params.d as f64;
    let startup = 0.5 * ratio.powf(a) * (4.0 * E * d / (params.delta * params.delta)).powf(bound_exponent());
    let noise = if a > 1.0 {
        b / (a - 1.0) * ((a + 1.0) / (n_last + 1.0)).exp() / (nf + 1.0)
    } else {
        4.0 * b * zeta(2.0 - a)? / (nf + 1.0).powf(a)
    };
    Ok(KrasulinaBound {
        value: startup + noise,
        n_last,
        within_hypotheses: nf >= n_last && params.n_o >= epochs_n_o_min(params.delta, params.d, params.c, params.b),
    })
}
