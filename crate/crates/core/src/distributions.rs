//! Data sources with known (or oracle-computed) ground truth.
//!
//! All sources emit samples with `|X|^2 <= B`. The coordinate distribution
//! satisfies this by construction; Gaussian sources reject draws outside the
//! clip radius; file-backed sources take `B` as the largest observed norm.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, top_eigs, GroundTruth, SymMatrix, Vector};

/// Uniform draw from the unit sphere: normalize a standard Gaussian vector.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    assert!(d >= 1, "dimension must be at least 1");
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = linalg::dot(&z, &z).sqrt();
        if norm > 0.0 {
            return Vector::from_raw(z.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// Random orthogonal matrix, returned as its columns. Gram-Schmidt applied
/// to a Gaussian matrix.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vector> {
    let mut cols: Vec<Vector> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        linalg::orthogonalize_against(&mut w, &cols);
        linalg::orthogonalize_against(&mut w, &cols);
        let norm = linalg::dot(&w, &w).sqrt();
        if norm > 1e-6 {
            cols.push(Vector::from_raw(w.into_iter().map(|x| x / norm).collect()));
        }
    }
    cols
}

/// The `2d`-point distribution on `{±e_1, ±σe_2, ..., ±σe_d}`:
/// `Pr(±e_1) = p/2` each and `Pr(±σe_i) = (1-p)/(2(d-1))` each for `i > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateDistribution {
    p: f64,
    sigma: f64,
    d: usize,
}

impl CoordinateDistribution {
    pub fn new(p: f64, sigma: f64, d: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("p must lie in (0,1), got {p}")));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::InvalidParameter(format!("sigma must lie in (0,1), got {sigma}")));
        }
        if d < 2 {
            return Err(Error::InvalidParameter(format!("d must be at least 2, got {d}")));
        }
        let dist = CoordinateDistribution { p, sigma, d };
        if !(p > dist.tail_eigenvalue()) {
            return Err(Error::InvalidParameter(format!(
                "need p > sigma^2 (1-p)/(d-1) = {}",
                dist.tail_eigenvalue()
            )));
        }
        Ok(dist)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `sigma^2 (1-p)/(d-1)`, the common variance of coordinates 2..d.
    pub fn tail_eigenvalue(&self) -> f64 {
        self.sigma * self.sigma * (1.0 - self.p) / (self.d - 1) as f64
    }

    pub fn covariance(&self) -> SymMatrix {
        let mut diag = vec![self.tail_eigenvalue(); self.d];
        diag[0] = self.p;
        SymMatrix::diag(&diag).expect("finite diagonal")
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(Vector::basis(self.d, 0), self.p, self.tail_eigenvalue(), 1.0)
            .expect("validated at construction")
    }

    /// The support with probabilities, in the order `+e1, -e1, +σe2, -σe2, ...`.
    pub fn support(&self) -> Vec<(Vector, f64)> {
        let mut out = Vec::with_capacity(2 * self.d);
        let tail = (1.0 - self.p) / (2.0 * (self.d - 1) as f64);
        for i in 0..self.d {
            let (scale, prob) = if i == 0 {
                (1.0, self.p / 2.0)
            } else {
                (self.sigma, tail)
            };
            for sign in [1.0, -1.0] {
                out.push((Vector::basis(self.d, i).scaled(sign * scale), prob));
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let u: f64 = rng.random();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut x = vec![0.0; self.d];
        if u < self.p {
            x[0] = sign;
        } else {
            let i = rng.random_range(1..self.d);
            x[i] = sign * self.sigma;
        }
        Vector::from_raw(x)
    }
}

/// Zero-mean Gaussian with covariance `Q diag(eigenvalues) Q^T`, truncated
/// to the ball `|X|^2 <= clip_radius` by rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpectrum {
    eigenvalues: Vec<f64>,
    rotation: Option<Vec<Vector>>,
    clip_radius: f64,
}

impl GaussianSpectrum {
    /// `clip_radius` defaults to ten times the trace of the covariance.
    pub fn new(eigenvalues: Vec<f64>, rotation: Option<Vec<Vector>>, clip_radius: Option<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        if d < 2 {
            return Err(Error::InvalidParameter("need at least two eigenvalues".into()));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(
                "eigenvalues must be positive and finite".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter("eigenvalues must be sorted descending".into()));
        }
        if !(eigenvalues[0] > eigenvalues[1]) {
            return Err(Error::InvalidParameter(
                "top eigenvalue must be strictly largest".into(),
            ));
        }
        if let Some(q) = &rotation {
            if q.len() != d || q.iter().any(|c| c.dim() != d) {
                return Err(Error::InvalidParameter("rotation must be d columns of length d".into()));
            }
            for i in 0..d {
                for j in 0..=i {
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (q[i].dot(&q[j]) - target).abs() > 1e-10 {
                        return Err(Error::InvalidParameter("rotation columns not orthonormal".into()));
                    }
                }
            }
        }
        let trace: f64 = eigenvalues.iter().sum();
        let clip_radius = clip_radius.unwrap_or(10.0 * trace);
        if !(clip_radius > 0.0 && clip_radius.is_finite()) {
            return Err(Error::InvalidParameter("clip radius must be positive".into()));
        }
        Ok(GaussianSpectrum {
            eigenvalues,
            rotation,
            clip_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn clip_radius(&self) -> f64 {
        self.clip_radius
    }

    /// Covariance of the untruncated Gaussian.
    pub fn covariance(&self) -> SymMatrix {
        let d = self.dim();
        match &self.rotation {
            Some(q) => SymMatrix::from_eigen(&self.eigenvalues, q).expect("validated rotation"),
            None => SymMatrix::diag(&self.eigenvalues).unwrap_or_else(|_| SymMatrix::identity(d)),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let v_star = match &self.rotation {
            Some(q) => q[0].normalized().expect("unit column"),
            None => Vector::basis(self.dim(), 0),
        };
        GroundTruth::new(v_star, self.eigenvalues[0], self.eigenvalues[1], self.clip_radius)
            .expect("validated at construction")
    }

    /// One accepted draw plus the number of draws rejected before it.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector, u64) {
        let d = self.dim();
        let mut rejected = 0;
        loop {
            let z: Vec<f64> = self
                .eigenvalues
                .iter()
                .map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x = match &self.rotation {
                Some(q) => {
                    let mut x = vec![0.0; d];
                    for (zj, col) in z.iter().zip(q) {
                        for (xi, ci) in x.iter_mut().zip(col.iter()) {
                            *xi += zj * ci;
                        }
                    }
                    x
                }
                None => z,
            };
            if linalg::dot(&x, &x) <= self.clip_radius {
                return (Vector::from_raw(x), rejected);
            }
            rejected += 1;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        self.sample_counted(rng).0
    }
}

/// Uniform resampling (with replacement) from a finite set of records. Its
/// covariance is the records' second-moment matrix, so the eigen-oracle
/// result is exact ground truth for it.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    records: Vec<Vector>,
    truth: GroundTruth,
}

impl EmpiricalDistribution {
    pub fn new(records: Vec<Vector>, truth: GroundTruth) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParameter("empirical distribution needs records".into()));
        }
        let d = truth.dim();
        for r in &records {
            r.check_dim(d)?;
        }
        Ok(EmpiricalDistribution { records, truth })
    }

    /// Loads all records of `stream` and computes their ground truth.
    pub fn from_stream(stream: &mut DatasetStream) -> Result<Self> {
        let truth = empirical_ground_truth(stream, 2)?;
        stream.rewind()?;
        let mut records = Vec::new();
        loop {
            match stream.next_record() {
                Ok(x) => records.push(x),
                Err(Error::EndOfStream) => break,
                Err(e) => return Err(e),
            }
        }
        EmpiricalDistribution::new(records, truth.truth)
    }

    pub fn dim(&self) -> usize {
        self.truth.dim()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// `(1/n) sum x x^T` over the stored records: the exact covariance of
    /// the resampling distribution.
    pub fn second_moment(&self) -> SymMatrix {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        for r in &self.records {
            for i in 0..d {
                for j in i..d {
                    m[i * d + j] += r[i] * r[j];
                }
            }
        }
        let n = self.records.len() as f64;
        for i in 0..d {
            for j in i..d {
                m[i * d + j] /= n;
                m[j * d + i] = m[i * d + j];
            }
        }
        SymMatrix::new(d, m).expect("symmetric by construction")
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        self.records[rng.random_range(0..self.records.len())].clone()
    }
}

/// A CSV file read one record at a time: one sample per row, `d` columns,
/// optional header row. With `center`, a preliminary pass computes the mean
/// and every emitted record has it subtracted.
#[derive(Debug)]
pub struct DatasetStream {
    path: PathBuf,
    d: usize,
    mean: Option<Vec<f64>>,
    reader: csv::Reader<BufReader<File>>,
    first_row: bool,
}

impl DatasetStream {
    pub fn open(path: impl AsRef<Path>, d: usize, center: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dataset dimension must be positive".into()));
        }
        let path = path.as_ref().to_path_buf();
        let mut stream = DatasetStream {
            reader: Self::reader(&path)?,
            path,
            d,
            mean: None,
            first_row: true,
        };
        if center {
            let mut sum = vec![0.0; d];
            let mut count = 0usize;
            loop {
                match stream.next_record() {
                    Ok(x) => {
                        x.iter().zip(sum.iter_mut()).for_each(|(xi, s)| *s += xi);
                        count += 1;
                    }
                    Err(Error::EndOfStream) => break,
                    Err(e) => return Err(e),
                }
            }
            if count > 0 {
                stream.mean = Some(sum.into_iter().map(|s| s / count as f64).collect());
            }
            stream.rewind()?;
        }
        Ok(stream)
    }

    fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
        let file = File::open(path)?;
        Ok(csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(BufReader::new(file)))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn rewind(&mut self) -> Result<()> {
        self.reader = Self::reader(&self.path)?;
        self.first_row = true;
        Ok(())
    }

    /// Next record, or [`Error::EndOfStream`] once the file is exhausted.
    pub fn next_record(&mut self) -> Result<Vector> {
        let mut record = csv::StringRecord::new();
        loop {
            if !self.reader.read_record(&mut record)? {
                return Err(Error::EndOfStream);
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let first = std::mem::replace(&mut self.first_row, false);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                // A non-numeric first row is a header.
                Err(_) if first => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        path: self.path.clone(),
                        line,
                        message: format!("malformed value: {e}"),
                    })
                }
            };
            if values.len() != self.d {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line,
                    message: format!("expected {} columns, found {}", self.d, values.len()),
                });
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line,
                    message: "non-finite value".into(),
                });
            }
            let values = match &self.mean {
                Some(mu) => values.iter().zip(mu).map(|(x, m)| x - m).collect(),
                None => values,
            };
            return Ok(Vector::from_raw(values));
        }
    }

    pub fn sample(&mut self) -> Result<Vector> {
        self.next_record()
    }
}

/// Ground truth computed from data, with diagnostics about its reliability.
#[derive(Debug, Clone)]
pub struct EmpiricalTruth {
    pub truth: GroundTruth,
    pub records: usize,
    /// Fewer than `d + 1` records: the covariance cannot have full rank.
    pub rank_deficient: bool,
    /// Rank deficiency or an eigengap below `1e-9 * lambda1`.
    pub degenerate_gap: bool,
}

/// Covariance (one pass, normalized by the record count) followed by the top
/// two eigenpairs from [`top_eigs`]. `B` is the largest observed `|X|^2`.
pub fn empirical_ground_truth(stream: &mut DatasetStream, pass_budget: usize) -> Result<EmpiricalTruth> {
    let needed = if stream.is_centered() { 2 } else { 1 };
    if pass_budget < 2 || pass_budget < needed {
        return Err(Error::InvalidParameter(format!(
            "pass budget must be at least 2, got {pass_budget}"
        )));
    }
    stream.rewind()?;
    let d = stream.dim();
    let mut cov = vec![0.0; d * d];
    let mut count = 0usize;
    let mut b = 0.0_f64;
    loop {
        let x = match stream.next_record() {
            Ok(x) => x,
            Err(Error::EndOfStream) => break,
            Err(e) => return Err(e),
        };
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += x[i] * x[j];
            }
        }
        b = b.max(x.norm_sq());
        count += 1;
    }
    stream.rewind()?;
    if count == 0 {
        return Err(Error::InvalidParameter(format!(
            "{}: no records",
            stream.path.display()
        )));
    }
    cov.iter_mut().for_each(|c| *c /= count as f64);
    let cov = SymMatrix::new(d, cov)?;
    let k = d.min(2);
    let eig = top_eigs(&cov, k, 1e-12, 100_000)?;
    let lambda1 = eig.values[0];
    let lambda2 = if k > 1 { eig.values[1].max(0.0) } else { 0.0 };
    let rank_deficient = count < d + 1;
    let degenerate_gap = rank_deficient || lambda1 - lambda2 <= 1e-9 * lambda1.abs();
    let truth = GroundTruth::new(eig.vectors[0].clone(), lambda1, lambda2, b)?;
    Ok(EmpiricalTruth {
        truth,
        records: count,
        rank_deficient,
        degenerate_gap,
    })
}

/// Writes `(v*, lambda1, lambda2, B)` as a small key/value CSV.
pub fn write_ground_truth<W: Write>(truth: &GroundTruth, mut out: W) -> Result<()> {
    writeln!(out, "lambda1,{}", truth.lambda1)?;
    writeln!(out, "lambda2,{}", truth.lambda2)?;
    writeln!(out, "b,{}", truth.b)?;
    let coords: Vec<String> = truth.v_star.iter().map(|x| x.to_string()).collect();
    writeln!(out, "v_star,{}", coords.join(","))?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let (mut l1, mut l2, mut b, mut v) = (None, None, None, None);
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let key = rec.get(0).unwrap_or("");
        let values: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
        let values = values.map_err(|e| bad(format!("malformed value: {e}")))?;
        let scalar = || {
            values
                .first()
                .copied()
                .ok_or_else(|| bad(format!("{key}: missing value")))
        };
        match key {
            "lambda1" => l1 = Some(scalar()?),
            "lambda2" => l2 = Some(scalar()?),
            "b" => b = Some(scalar()?),
            "v_star" => v = Some(Vector::new(values.clone())?),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Config(format!("{}: missing {k}", path.display()));
    GroundTruth::new(
        v.ok_or_else(|| missing("v_star"))?,
        l1.ok_or_else(|| missing("lambda1"))?,
        l2.ok_or_else(|| missing("lambda2"))?,
        b.ok_or_else(|| missing("b"))?,
    )
}

/// Running tally of samples drawn by a trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub accepted: u64,
    pub rejected: u64,
}

impl SampleStats {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.accepted + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }
}

/// An i.i.d. source usable by the estimators and the verification suite.
#[derive(Debug, Clone)]
pub enum Source {
    Coordinate(CoordinateDistribution),
    Gaussian(GaussianSpectrum),
    Empirical(EmpiricalDistribution),
}

impl Source {
    pub fn dim(&self) -> usize {
        match self {
            Source::Coordinate(c) => c.dim(),
            Source::Gaussian(g) => g.dim(),
            Source::Empirical(e) => e.dim(),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        match self {
            Source::Coordinate(c) => c.ground_truth(),
            Source::Gaussian(g) => g.ground_truth(),
            Source::Empirical(e) => e.ground_truth().clone(),
        }
    }

    /// Covariance of the sampling distribution (untruncated for Gaussians).
    pub fn covariance(&self) -> SymMatrix {
        match self {
            Source::Coordinate(c) => c.covariance(),
            Source::Gaussian(g) => g.covariance(),
            Source::Empirical(e) => e.second_moment(),
        }
    }

    pub fn norm_bound(&self) -> f64 {
        match self {
            Source::Coordinate(_) => 1.0,
            Source::Gaussian(g) => g.clip_radius(),
            Source::Empirical(e) => e.ground_truth().b,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            Source::Coordinate(c) => c.sample(rng),
            Source::Gaussian(g) => g.sample(rng),
            Source::Empirical(e) => e.sample(rng),
        }
    }

    /// Draws one sample, tallies it, and asserts `|X|^2 <= B`.
    pub fn sample_tracked<R: Rng + ?Sized>(&self, rng: &mut R, stats: &mut SampleStats) -> Result<Vector> {
        let x = match self {
            Source::Gaussian(g) => {
                let (x, rejected) = g.sample_counted(rng);
                stats.rejected += rejected;
                x
            }
            other => other.sample(rng),
        };
        stats.accepted += 1;
        let b = self.norm_bound();
        if x.norm_sq() > b * (1.0 + 1e-12) {
            return Err(Error::Numeric(format!(
                "sample violates |X|^2 <= B: {} > {b}",
                x.norm_sq()
            )));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn coordinate_ground_truth_values() {
        let dist = CoordinateDistribution::new(0.2, 0.5, 10).unwrap();
        let gt = dist.ground_truth();
        assert_eq!(gt.v_star, Vector::basis(10, 0));
        assert_eq!(gt.lambda1, 0.2);
        assert_abs_diff_eq!(gt.lambda2, 0.25 * 0.8 / 9.0, epsilon = 1e-17);
        assert_eq!(gt.b, 1.0);

        let tiny = CoordinateDistribution::new(0.5, 1e-9, 3).unwrap();
        assert!(tiny.ground_truth().lambda2 < 1e-18);
    }

    #[test]
    fn coordinate_rejects_bad_params() {
        assert!(CoordinateDistribution::new(0.0, 0.5, 10).is_err());
        assert!(CoordinateDistribution::new(0.2, 1.0, 10).is_err());
        assert!(CoordinateDistribution::new(0.2, 0.5, 1).is_err());
        // p must exceed the tail eigenvalue: d=2, sigma=0.9, p=0.3 -> 0.567 > 0.3.
        assert!(CoordinateDistribution::new(0.3, 0.9, 2).is_err());
    }

    #[test]
    fn coordinate_samples_lie_on_support() {
        let dist = CoordinateDistribution::new(0.2, 0.5, 10).unwrap();
        let mut rng = trial_rng(1, 0);
        for _ in 0..10_000 {
            let x = dist.sample(&mut rng);
            let nsq = x.norm_sq();
            assert!(nsq == 1.0 || nsq == 0.25);
            assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn coordinate_support_probabilities_sum_to_one() {
        let dist = CoordinateDistribution::new(0.3, 0.4, 5).unwrap();
        let total: f64 = dist.support().iter().map(|(_, p)| p).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
        assert_eq!(dist.support().len(), 10);
    }

    #[test]
    fn gaussian_ground_truth_uses_first_column() {
        let mut rng = trial_rng(3, 0);
        let q = random_rotation(2, &mut rng);
        let g = GaussianSpectrum::new(vec![2.0, 1.0], Some(q.clone()), Some(100.0)).unwrap();
        let gt = g.ground_truth();
        assert_eq!(gt.lambda1, 2.0);
        assert_eq!(gt.lambda2, 1.0);
        assert_eq!(gt.b, 100.0);
        assert_abs_diff_eq!(gt.v_star[0], q[0][0], epsilon = 1e-15);
        assert!(GaussianSpectrum::new(vec![1.0, 1.0], None, None).is_err());
        assert!(GaussianSpectrum::new(vec![1.0, 2.0], None, None).is_err());
    }

    #[test]
    fn gaussian_clip_is_enforced() {
        let g = GaussianSpectrum::new(vec![1.0, 0.5, 0.25], None, Some(1.0)).unwrap();
        let src = Source::Gaussian(g);
        let mut rng = trial_rng(5, 0);
        let mut stats = SampleStats::default();
        for _ in 0..5_000 {
            let x = src.sample_tracked(&mut rng, &mut stats).unwrap();
            assert!(x.norm_sq() <= 1.0);
        }
        assert!(stats.rejected > 0);
        assert!(stats.rejection_rate() > 0.1 && stats.rejection_rate() < 0.9);
    }

    #[test]
    fn random_unit_vector_is_unit() {
        let mut rng = trial_rng(9, 1);
        for d in [1, 2, 10, 100] {
            let v = random_unit_vector(d, &mut rng);
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = trial_rng(11, 0);
        let q = random_rotation(6, &mut rng);
        for i in 0..6 {
            for j in 0..6 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(q[i].dot(&q[j]), target, epsilon = 1e-12);
            }
        }
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn stream_reads_with_header_and_ends() {
        let f = write_csv("a,b\n1,2\n3,4\n");
        let mut s = DatasetStream::open(f.path(), 2, false).unwrap();
        assert_eq!(s.next_record().unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(s.next_record().unwrap().as_slice(), &[3.0, 4.0]);
        assert!(matches!(s.next_record(), Err(Error::EndOfStream)));
    }

    #[test]
    fn stream_centers() {
        let f = write_csv("1,2\n3,6\n");
        let mut s = DatasetStream::open(f.path(), 2, true).unwrap();
        assert_eq!(s.mean().unwrap(), &[2.0, 4.0]);
        assert_eq!(s.next_record().unwrap().as_slice(), &[-1.0, -2.0]);
        assert_eq!(s.next_record().unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn stream_parse_error_has_line_number() {
        let f = write_csv("1,2\n3,x\n");
        let mut s = DatasetStream::open(f.path(), 2, false).unwrap();
        s.next_record().unwrap();
        match s.next_record() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_csv("1,2,3\n");
        let mut s = DatasetStream::open(f.path(), 2, false).unwrap();
        assert!(matches!(s.next_record(), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empirical_truth_matches_coordinate_support() {
        // Each support point with multiplicity proportional to its probability.
        let dist = CoordinateDistribution::new(0.2, 0.5, 10).unwrap();
        let mut text = String::new();
        for (x, prob) in dist.support() {
            let copies = (prob * 1800.0).round() as usize;
            let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            for _ in 0..copies {
                text.push_str(&row.join(","));
                text.push('\n');
            }
        }
        let f = write_csv(&text);
        let mut s = DatasetStream::open(f.path(), 10, false).unwrap();
        let emp = empirical_ground_truth(&mut s, 2).unwrap();
        let gt = dist.ground_truth();
        assert_abs_diff_eq!(emp.truth.lambda1, gt.lambda1, epsilon = 1e-10);
        assert_abs_diff_eq!(emp.truth.lambda2, gt.lambda2, epsilon = 1e-10);
        assert_abs_diff_eq!(emp.truth.v_star[0], 1.0, epsilon = 1e-10);
        assert_eq!(emp.truth.b, 1.0);
        assert!(!emp.degenerate_gap);
    }

    #[test]
    fn empirical_truth_single_record() {
        let f = write_csv("3,4,0\n");
        let mut s = DatasetStream::open(f.path(), 3, false).unwrap();
        let emp = empirical_ground_truth(&mut s, 2).unwrap();
        assert_abs_diff_eq!(emp.truth.lambda1, 25.0, epsilon = 1e-9);
        assert_abs_diff_eq!(emp.truth.lambda2, 0.0, epsilon = 1e-9);
        assert!(emp.degenerate_gap);
        assert!(emp.rank_deficient);
    }

    #[test]
    fn empirical_truth_empty_stream_errors() {
        let f = write_csv("");
        let mut s = DatasetStream::open(f.path(), 3, false).unwrap();
        assert!(empirical_ground_truth(&mut s, 2).is_err());
        let f = write_csv("1,2\n");
        let mut s = DatasetStream::open(f.path(), 2, false).unwrap();
        assert!(empirical_ground_truth(&mut s, 1).is_err());
    }

    #[test]
    fn ground_truth_cache_round_trip() {
        let gt = CoordinateDistribution::new(0.2, 0.5, 4).unwrap().ground_truth();
        let mut buf = Vec::new();
        write_ground_truth(&gt, &mut buf).unwrap();
        let f = write_csv(std::str::from_utf8(&buf).unwrap());
        assert_eq!(read_ground_truth(f.path()).unwrap(), gt);
    }
}
