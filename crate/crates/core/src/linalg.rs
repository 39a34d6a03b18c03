//! Dense vectors and symmetric matrices, the Rayleigh quotient and its
//! gradient, the potential function, and a power-iteration eigen-oracle.
//!
//! Everything here is a pure function of its inputs. Dimensions are small
//! (tens to a few hundred), so plain `Vec<f64>` storage is used throughout.

use std::ops::{Deref, Index};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense real vector with at least one entry, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("vector must have d >= 1".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Vector(entries))
    }

    /// Builds a vector without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        debug_assert!(!entries.is_empty());
        Vector(entries)
    }

    pub fn zeros(d: usize) -> Self {
        Vector(vec![0.0; d])
    }

    /// The `i`-th coordinate direction in `d` dimensions.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|x| alpha * x).collect())
    }

    /// Unit vector in the direction of `self`.
    pub fn normalized(&self) -> Result<Vector> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Vector(self.0.iter().map(|x| x / norm).collect()))
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(x) {
            *a += alpha * b;
        }
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense symmetric `d x d` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Validates finiteness and symmetry (to [`SYMMETRY_TOL`] relative to the
    /// largest entry), then stores the exactly symmetrized matrix.
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() != d * d {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries for a {d}x{d} matrix, got {}",
                d * d,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = data.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        let mut sym = data;
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (sym[i * d + j], sym[j * d + i]);
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidParameter(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                let m = 0.5 * (a + b);
                sym[i * d + j] = m;
                sym[j * d + i] = m;
            }
        }
        Ok(SymMatrix { d, data: sym })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter("rows must form a square matrix".into()));
        }
        SymMatrix::new(d, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let d = values.len();
        let mut data = vec![0.0; d * d];
        for (i, &v) in values.iter().enumerate() {
            data[i * d + i] = v;
        }
        SymMatrix::new(d, data)
    }

    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        SymMatrix { d, data }
    }

    /// `Q diag(values) Q^T` for a square `q` given as columns.
    pub fn from_eigen(values: &[f64], columns: &[Vector]) -> Result<Self> {
        let d = values.len();
        if columns.len() != d || columns.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidParameter(
                "eigenbasis must be d columns of length d".into(),
            ));
        }
        let mut data = vec![0.0; d * d];
        for (lambda, q) in values.iter().zip(columns) {
            for i in 0..d {
                for j in 0..d {
                    data[i * d + j] += lambda * q[i] * q[j];
                }
            }
        }
        SymMatrix::new(d, data)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.d).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    /// Quadratic form `v^T A v`.
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }
}

fn nonzero_check(v: &Vector) -> Result<f64> {
    let nsq = v.norm_sq();
    if nsq == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(nsq)
}

/// `G(v) = v^T A v / v^T v`.
pub fn rayleigh_quotient(a: &SymMatrix, v: &Vector) -> Result<f64> {
    v.check_dim(a.dim())?;
    let nsq = nonzero_check(v)?;
    Ok(a.quadratic(v) / nsq)
}

/// Gradient of the Rayleigh quotient, `(2/|v|^2)(A - G(v) I) v`.
pub fn rayleigh_gradient(a: &SymMatrix, v: &Vector) -> Result<Vector> {
    v.check_dim(a.dim())?;
    let nsq = nonzero_check(v)?;
    let av = a.mul_vec(v);
    let g = dot(v, &av) / nsq;
    let scale = 2.0 / nsq;
    Ok(Vector::from_raw(
        av.iter()
            .zip(v.iter())
            .map(|(avi, vi)| scale * (avi - g * vi))
            .collect(),
    ))
}

/// Squared sine of the angle between `v` and the unit target `v_star`:
/// `1 - (v . v*)^2 / |v|^2`, clamped to `[0, 1]`.
pub fn potential(v: &[f64], v_star: &[f64]) -> Result<f64> {
    if v.len() != v_star.len() {
        return Err(Error::DimensionMismatch {
            expected: v_star.len(),
            found: v.len(),
        });
    }
    let nsq = dot(v, v);
    if nsq == 0.0 {
        return Err(Error::ZeroVector);
    }
    let proj = dot(v, v_star);
    Ok((1.0 - proj * proj / nsq).clamp(0.0, 1.0))
}

/// Target eigenvector and spectrum summary for a data source.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub v_star: Vector,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Bound on `|X|^2`.
    pub b: f64,
}

impl GroundTruth {
    pub fn new(v_star: Vector, lambda1: f64, lambda2: f64, b: f64) -> Result<Self> {
        if (v_star.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "target vector must be unit norm, got |v*| = {}",
                v_star.norm()
            )));
        }
        if !(lambda2 >= 0.0 && lambda1 > lambda2) {
            return Err(Error::InvalidParameter(format!(
                "need lambda1 > lambda2 >= 0, got {lambda1}, {lambda2}"
            )));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "norm bound B must be positive, got {b}"
            )));
        }
        Ok(GroundTruth {
            v_star,
            lambda1,
            lambda2,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.v_star.dim()
    }

    pub fn gap(&self) -> f64 {
        self.lambda1 - self.lambda2
    }
}

/// Result of [`top_eigs`].
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Descending by magnitude (algebraically descending for PSD input).
    pub values: Vec<f64>,
    pub vectors: Vec<Vector>,
    /// Power iterations spent on each pair.
    pub iterations: Vec<usize>,
}

/// Modified Gram-Schmidt projection of `w` off the orthonormal `basis`.
pub(crate) fn orthogonalize_against(w: &mut [f64], basis: &[Vector]) {
    for q in basis {
        let c = dot(w, q);
        for (wi, qi) in w.iter_mut().zip(q.iter()) {
            *wi -= c * qi;
        }
    }
}

fn normalize_in_place(w: &mut [f64]) -> f64 {
    let norm = dot(w, w).sqrt();
    if norm > 0.0 {
        for x in w.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Flips `v` so its first non-negligible coordinate is positive.
pub(crate) fn canonical_sign(v: &mut [f64]) {
    // Entries below this fraction of the largest count as zero: converged
    // power iterates carry residue of order tol / gap in null coordinates.
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top `k` eigenpairs of a symmetric (positive semidefinite) matrix by power
/// iteration with Hotelling deflation.
///
/// Each pair is accepted once `|Av - lambda v| <= tol * |A|_F`, measured on
/// the original matrix. Vectors are re-orthogonalized against the pairs
/// already found on every iteration and returned with their first nonzero
/// coordinate positive.
pub fn top_eigs(a: &SymMatrix, k: usize, tol: f64, max_iter: usize) -> Result<Eigenpairs> {
    let d = a.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let fro = a.frobenius_norm();
    let threshold = tol * fro;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e16e);
    let mut values = Vec::with_capacity(k);
    let mut vectors: Vec<Vector> = Vec::with_capacity(k);
    let mut iterations = Vec::with_capacity(k);

    for index in 0..k {
        let mut v = loop {
            let mut w: Vec<f64> = (0..d)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            orthogonalize_against(&mut w, &vectors);
            if normalize_in_place(&mut w) > 1e-8 {
                break w;
            }
        };
        let mut converged = None;
        for iter in 1..=max_iter {
            let av = a.mul_vec(&v);
            let lambda = dot(&v, &av);
            let residual = av
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - lambda * y).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= threshold {
                converged = Some((lambda, iter));
                break;
            }
            // Hotelling deflation: (A - sum lambda_i q_i q_i^T) v.
            let mut w = av;
            for (lam, q) in values.iter().zip(&vectors) {
                let c = lam * dot(q, &v);
                for (wi, qi) in w.iter_mut().zip(q.iter()) {
                    *wi -= c * qi;
                }
            }
            orthogonalize_against(&mut w, &vectors);
            if normalize_in_place(&mut w) == 0.0 {
                // v spans a null direction of the deflated matrix: eigenvalue 0.
                converged = Some((0.0, iter));
                break;
            }
            v = w;
        }
        let Some((lambda, iter)) = converged else {
            return Err(Error::NotConverged {
                what: format!("eigenpair {index}"),
                iterations: max_iter,
            });
        };
        canonical_sign(&mut v);
        values.push(lambda);
        vectors.push(Vector::from_raw(v));
        iterations.push(iter);
    }
    Ok(Eigenpairs {
        values,
        vectors,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn rayleigh_quotient_examples() {
        let a = SymMatrix::diag(&[2.0, 1.0]).unwrap();
        assert_eq!(rayleigh_quotient(&a, &v(&[1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(rayleigh_quotient(&a, &v(&[1.0, 1.0])).unwrap(), 1.5);
        assert_eq!(rayleigh_quotient(&a, &v(&[3.0, 0.0])).unwrap(), 2.0);
        assert!(matches!(rayleigh_quotient(&a, &v(&[0.0, 0.0])), Err(Error::ZeroVector)));
    }

    #[test]
    fn rayleigh_gradient_examples() {
        let a = SymMatrix::diag(&[2.0, 1.0]).unwrap();
        let g = rayleigh_gradient(&a, &v(&[1.0, 0.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let g = rayleigh_gradient(&a, &v(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(g[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-15);
        assert!(rayleigh_gradient(&a, &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn potential_examples() {
        let e1 = v(&[1.0, 0.0]);
        assert_eq!(potential(&e1, &e1).unwrap(), 0.0);
        assert_eq!(potential(&[0.0, 2.0], &e1).unwrap(), 1.0);
        assert_abs_diff_eq!(potential(&[1.0, 1.0], &e1).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(
            potential(&[1.0, 1.0], &[-1.0, 0.0]).unwrap(),
            potential(&[1.0, 1.0], &e1).unwrap()
        );
        assert!(potential(&[0.0, 0.0], &e1).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Vector::new(vec![]).is_err());
        assert!(matches!(Vector::new(vec![f64::NAN]), Err(Error::NonFinite)));
        assert!(SymMatrix::new(2, vec![1.0, 2.0, 2.5, 1.0]).is_err());
        assert!(SymMatrix::new(2, vec![1.0, 2.0, 2.0]).is_err());
        assert!(GroundTruth::new(v(&[1.0, 0.0]), 1.0, 1.0, 1.0).is_err());
        assert!(GroundTruth::new(v(&[2.0, 0.0]), 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn top_eigs_diagonal() {
        let a = SymMatrix::diag(&[3.0, 2.0, 1.0]).unwrap();
        let eig = top_eigs(&a, 2, 1e-10, 10_000).unwrap();
        assert_abs_diff_eq!(eig.values[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.vectors[0][0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.vectors[1][1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn top_eigs_identity_is_flagged_or_converges() {
        let a = SymMatrix::identity(4);
        let eig = top_eigs(&a, 1, 1e-10, 100).unwrap();
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-12);
        let r: f64 = a
            .mul_vec(&eig.vectors[0])
            .iter()
            .zip(eig.vectors[0].iter())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(r <= 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn top_eigs_coordinate_covariance() {
        // Covariance of the coordinate distribution with p=0.2, sigma=0.5, d=10.
        let tail = 0.25 * 0.8 / 9.0;
        let mut diag = vec![tail; 10];
        diag[0] = 0.2;
        let a = SymMatrix::diag(&diag).unwrap();
        let eig = top_eigs(&a, 2, 1e-10, 10_000).unwrap();
        assert_abs_diff_eq!(eig.values[0], 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(eig.values[1], 0.022_222_222_222_222_22, epsilon = 1e-10);
        assert_abs_diff_eq!(eig.vectors[0][0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn top_eigs_reports_non_convergence() {
        // Nearly degenerate top pair with a tiny iteration budget.
        let a = SymMatrix::diag(&[1.0, 1.0 - 1e-9, 0.5]).unwrap();
        assert!(matches!(top_eigs(&a, 1, 1e-14, 3), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn sign_convention() {
        let a = SymMatrix::diag(&[1.0, 4.0]).unwrap();
        let eig = top_eigs(&a, 2, 1e-12, 1000).unwrap();
        for q in &eig.vectors {
            let first = q.iter().find(|x| x.abs() > 1e-6).unwrap();
            assert!(*first > 0.0);
        }
    }
}
