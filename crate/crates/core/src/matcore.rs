//! Dense matrix primitives: column-stacking `vec`, Kronecker products, the
//! commutation matrix, a thin SVD with explicit rank bookkeeping, the
//! Moore-Penrose inverse and seeded generators for test instances.
//!
//! Matrices are plain `nalgebra::DMatrix<f64>` values. Empty blocks
//! (zero rows or columns) are allowed; they show up as the off-diagonal
//! blocks of full-rank charts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Minimum separation between retained singular values, relative to D₁.
pub const DISTINCT_GAP: f64 = 1e-10;

/// Minimum relative gap accepted by [`random_rank_q`] for requested spectra.
pub const MIN_REQUESTED_GAP: f64 = 1e-6;

/// Column-stacking vectorisation: entry (i, j) lands at `j * rows + i`.
pub fn vec(a: &Matrix) -> DVector<f64> {
    // nalgebra stores column-major, so the raw slice is already vec(A)
    DVector::from_column_slice(a.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::shape(
            format!("vector of length {}", rows * cols),
            format!("length {}", v.len()),
        ));
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product: block (i, j) of the result is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = a.shape();
    let (r, s) = b.shape();
    let mut out = Matrix::zeros(p * r, q * s);
    for j in 0..q {
        for i in 0..p {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * r, j * s), (r, s));
            block.zip_apply(b, |o, bv| *o = aij * bv);
        }
    }
    out
}

/// The `mn × mn` permutation `K` with `K · vec(A) = vec(Aᵀ)` for every
/// `n × m` matrix `A`.
pub fn commutation_matrix(m: usize, n: usize) -> Matrix {
    let mut k = Matrix::zeros(m * n, m * n);
    for i in 0..n {
        for j in 0..m {
            // A[i,j] sits at j*n + i in vec(A) and at i*m + j in vec(Aᵀ)
            k[(i * m + j, j * n + i)] = 1.0;
        }
    }
    k
}

/// Thin SVD factors `X = H1 · diag(D) · P1ᵀ` over the retained rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    #[serde(rename = "H1", with = "matrix_json")]
    pub h1: Matrix,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(rename = "P1", with = "matrix_json")]
    pub p1: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.h1.clone();
        for (j, dj) in self.d.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*dj);
        }
        scaled * self.p1.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    /// Absolute threshold: singular values strictly above it count.
    pub tolerance_used: f64,
    pub singular_values: Vec<f64>,
}

/// Default relative rank tolerance, `max(n, m) · ε`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

struct FullSvd {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
/// Columns are rotated pairwise until mutually orthogonal; the column norms
/// are then the singular values, to high relative accuracy.
fn jacobi_tall(a: &Matrix) -> FullSvd {
    let (rows, cols) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(cols, cols);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u = Matrix::zeros(rows, cols);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
    }
    FullSvd {
        u,
        s: order.iter().map(|&j| norms[j]).collect(),
        v: Matrix::from_fn(cols, cols, |i, k| v[(i, order[k])]),
    }
}

fn full_svd(x: &Matrix) -> FullSvd {
    let (rows, cols) = x.shape();
    if rows.min(cols) == 0 {
        return FullSvd {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            v: Matrix::zeros(cols, 0),
        };
    }
    if rows >= cols {
        jacobi_tall(x)
    } else {
        let t = jacobi_tall(&x.transpose());
        FullSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    }
}

fn truncate(full: &FullSvd, q: usize) -> SvdFactors {
    SvdFactors {
        h1: full.u.columns(0, q).into_owned(),
        d: full.s[..q].to_vec(),
        p1: full.v.columns(0, q).into_owned(),
    }
}

fn rank_from(full: &FullSvd, rows: usize, cols: usize, tol: Option<f64>) -> RankInfo {
    let rel = tol.unwrap_or_else(|| default_rank_tol(rows, cols));
    let top = full.s.first().copied().unwrap_or(0.0);
    let threshold = rel * top;
    RankInfo {
        rank: full.s.iter().filter(|&&s| s > threshold).count(),
        tolerance_used: threshold,
        singular_values: full.s.clone(),
    }
}

/// Numerical rank with a tolerance relative to the largest singular value.
pub fn rank_info(x: &Matrix, tol: Option<f64>) -> RankInfo {
    rank_from(&full_svd(x), x.nrows(), x.ncols(), tol)
}

pub fn numerical_rank(x: &Matrix) -> usize {
    rank_info(x, None).rank
}

pub fn singular_values(x: &Matrix) -> Vec<f64> {
    full_svd(x).s
}

/// Thin SVD keeping the singular values above `tol · D₁`.
///
/// Retained singular values must be pairwise separated by at least
/// `DISTINCT_GAP · D₁`; the density of the spectral measure vanishes on ties.
pub fn svd_thin(x: &Matrix, tol: Option<f64>) -> Result<(SvdFactors, RankInfo)> {
    let (factors, info) = svd_thin_unchecked(x, tol);
    if let Some(&top) = factors.d.first() {
        for w in factors.d.windows(2) {
            if w[0] - w[1] < DISTINCT_GAP * top {
                return Err(Error::DegenerateSpectrum(w[0], w[1]));
            }
        }
    }
    Ok((factors, info))
}

/// Same as [`svd_thin`] without the distinct-spectrum requirement.
pub fn svd_thin_unchecked(x: &Matrix, tol: Option<f64>) -> (SvdFactors, RankInfo) {
    let full = full_svd(x);
    let info = rank_from(&full, x.nrows(), x.ncols(), tol);
    (truncate(&full, info.rank), info)
}

fn pinv_from_factors(f: &SvdFactors) -> Matrix {
    let mut scaled = f.p1.clone();
    for (j, dj) in f.d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / dj);
    }
    scaled * f.h1.transpose()
}

/// Moore-Penrose inverse `P1 · diag(1/D) · H1ᵀ`.
///
/// Repeated singular values are fine here: the pseudoinverse is well
/// defined on them even though the spectral density is not.
pub fn pinv(x: &Matrix, tol: Option<f64>) -> Matrix {
    let (factors, _) = svd_thin_unchecked(x, tol);
    pinv_from_factors(&factors)
}

/// Pseudoinverse of the best rank-`q` approximation of `x`.
pub fn pinv_rank(x: &Matrix, q: usize) -> Matrix {
    let full = full_svd(x);
    let q = q.min(full.s.len());
    pinv_from_factors(&truncate(&full, q))
}

fn rel_residual(diff: &Matrix, reference: &Matrix) -> f64 {
    let scale = reference.norm();
    if scale > 0.0 {
        diff.norm() / scale
    } else {
        diff.norm()
    }
}

/// Relative Frobenius residuals of `XYX = X`, `YXY = Y`, `(XY)ᵀ = XY`,
/// `(YX)ᵀ = YX`, in that order.
pub fn penrose_residuals(x: &Matrix, y: &Matrix) -> Result<[f64; 4]> {
    if y.shape() != (x.ncols(), x.nrows()) {
        return Err(Error::shape(
            format!("{}x{}", x.ncols(), x.nrows()),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    let xy = x * y;
    let yx = y * x;
    Ok([
        rel_residual(&(&xy * x - x), x),
        rel_residual(&(&yx * y - y), y),
        rel_residual(&(xy.transpose() - &xy), &xy),
        rel_residual(&(yx.transpose() - &yx), &yx),
    ])
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    rel_residual(&(a - b), b)
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    if b != 0.0 {
        ((a - b) / b).abs()
    } else {
        a.abs()
    }
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn all_finite(a: &Matrix) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Seeded generator. Identical seeds and streams give identical draws on
/// every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for sub-task `stream` under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        // fill column by column so the draw order matches vec()
        let data: Vec<f64> = (0..rows * cols).map(|_| self.normal()).collect();
        Matrix::from_column_slice(rows, cols, &data)
    }
}

/// `n × q` matrix with orthonormal columns: Gaussian draw, Householder QR,
/// column signs fixed so that `diag(R) > 0`.
pub fn random_stiefel(n: usize, q: usize, rng: &mut Rng) -> Result<Matrix> {
    if q == 0 || q > n {
        return Err(Error::InvalidConfig(format!(
            "Stiefel frame needs 1 <= q <= n, got n = {n}, q = {q}"
        )));
    }
    let g = rng.normal_matrix(n, q);
    let qr = g.qr();
    let mut frame = qr.q();
    let r = qr.r();
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            frame.column_mut(j).neg_mut();
        }
    }
    Ok(frame)
}

/// Random orthogonal `n × n` matrix.
pub fn random_orthogonal(n: usize, rng: &mut Rng) -> Result<Matrix> {
    random_stiefel(n, n, rng)
}

/// How [`random_rank_q`] picks the singular values.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    Explicit(Vec<f64>),
    /// Uniform draws in `[lo, hi)`, sorted decreasing.
    Range {
        lo: f64,
        hi: f64,
    },
}

impl Default for Spectrum {
    fn default() -> Self {
        Spectrum::Range { lo: 0.5, hi: 3.0 }
    }
}

pub fn check_spectrum(d: &[f64], min_rel_gap: f64) -> Result<()> {
    if d.is_empty() {
        return Err(Error::BadSpectrum("empty spectrum".into()));
    }
    if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::BadSpectrum(format!(
            "entries must be finite and positive: {d:?}"
        )));
    }
    for w in d.windows(2) {
        if w[0] - w[1] < min_rel_gap * w[0] {
            return Err(Error::BadSpectrum(format!(
                "entries must be strictly decreasing with relative gap >= {min_rel_gap:e}: {d:?}"
            )));
        }
    }
    Ok(())
}

pub fn random_spectrum(q: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::BadSpectrum(format!("invalid range [{lo}, {hi})")));
    }
    let mut d: Vec<f64> = (0..q).map(|_| rng.uniform(lo, hi)).collect();
    d.sort_by(|a, b| b.total_cmp(a));
    Ok(d)
}

/// Random `n × m` matrix `H1 · diag(D) · P1ᵀ` of rank `q` with Haar frames.
pub fn random_rank_q(
    n: usize,
    m: usize,
    q: usize,
    spectrum: &Spectrum,
    rng: &mut Rng,
) -> Result<Matrix> {
    if q == 0 || q > n.min(m) {
        return Err(Error::InvalidConfig(format!(
            "rank q = {q} outside 1..={} for a {n}x{m} matrix",
            n.min(m)
        )));
    }
    let d = match spectrum {
        Spectrum::Explicit(d) => {
            if d.len() != q {
                return Err(Error::BadSpectrum(format!(
                    "expected {q} singular values, got {}",
                    d.len()
                )));
            }
            d.clone()
        }
        Spectrum::Range { lo, hi } => random_spectrum(q, *lo, *hi, rng)?,
    };
    check_spectrum(&d, MIN_REQUESTED_GAP)?;
    let h1 = random_stiefel(n, q, rng)?;
    let p1 = random_stiefel(m, q, rng)?;
    Ok(SvdFactors { h1, d, p1 }.reconstruct())
}

/// JSON encoding `{rows, cols, data}` with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(a: &Matrix) -> Self {
        let data = (0..a.nrows())
            .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect();
        MatrixJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixJson> for Matrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Matrix> {
        if j.data.len() != j.rows * j.cols {
            return Err(Error::shape(
                format!("{} entries for {}x{}", j.rows * j.cols, j.rows, j.cols),
                format!("{} entries", j.data.len()),
            ));
        }
        if j.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadSpectrum("matrix entries must be finite".into()));
        }
        Ok(Matrix::from_row_slice(j.rows, j.cols, &j.data))
    }
}

pub fn matrix_to_json(a: &Matrix) -> String {
    serde_json::to_string(&MatrixJson::from(a)).expect("matrix encoding is infallible")
}

pub fn matrix_from_json(s: &str) -> Result<Matrix> {
    let j: MatrixJson = serde_json::from_str(s)?;
    Matrix::try_from(j)
}

/// `#[serde(with = "matrix_json")]` adapter for `Matrix` fields.
pub mod matrix_json {
    use super::{Matrix, MatrixJson};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        Matrix::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn vec_stacks_columns() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&a).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        let col = m(3, 1, &[5.0, 6.0, 7.0]);
        assert_eq!(vec(&col).as_slice(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn unvec_roundtrip_and_shape_error() {
        let a = Rng::new(1).normal_matrix(3, 2);
        assert_eq!(unvec(&vec(&a), 3, 2).unwrap(), a);
        assert!(matches!(
            unvec(&vec(&a), 2, 2),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn kron_scalar_and_identity() {
        let b = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(kron(&m(1, 1, &[2.0]), &b), &b * 2.0);
        let k = kron(&Matrix::identity(2, 2), &b);
        assert_eq!(k.view((0, 0), (2, 3)), b);
        assert_eq!(k.view((2, 3), (2, 3)), b);
        assert!(k.view((0, 3), (2, 3)).iter().all(|v| *v == 0.0));
        assert!(k.view((2, 0), (2, 3)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kron_vec_identity() {
        let mut rng = Rng::new(11);
        let a = rng.normal_matrix(2, 2);
        let b = rng.normal_matrix(3, 2);
        let x = rng.normal_matrix(2, 2);
        let lhs = vec(&(&b * &x * a.transpose()));
        let rhs = kron(&a, &b) * vec(&x);
        assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn commutation_small_cases() {
        assert_eq!(commutation_matrix(1, 1), m(1, 1, &[1.0]));
        // brute force over the four basis matrices of a 2x2
        let k = commutation_matrix(2, 2);
        let expected = m(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(k, expected);
    }

    #[test]
    fn commutation_on_basis_matrices() {
        let (n, m_) = (3, 2);
        let k = commutation_matrix(m_, n);
        for i in 0..n {
            for j in 0..m_ {
                let mut e = Matrix::zeros(n, m_);
                e[(i, j)] = 1.0;
                assert_eq!(&k * vec(&e), vec(&e.transpose()));
            }
        }
    }

    #[test]
    fn svd_diag() {
        let x = m(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let (f, info) = svd_thin(&x, None).unwrap();
        assert_eq!(info.rank, 2);
        assert!((f.d[0] - 3.0).abs() < 1e-14 && (f.d[1] - 2.0).abs() < 1e-14);
        assert!((f.h1.abs() - Matrix::identity(2, 2)).amax() < 1e-14);
        assert!((f.p1.abs() - Matrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn svd_rank_one() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let (f, info) = svd_thin(&x, None).unwrap();
        assert_eq!(info.rank, 1);
        assert!((f.d[0] - 50f64.sqrt()).abs() < 1e-13);
        assert!(rel_err(&f.reconstruct(), &x) < 1e-14);
    }

    #[test]
    fn svd_accurate_near_rank_deficiency() {
        // a rank-one matrix moved off the rank-one set by O(h²); power-of-two
        // steps keep z and its 2x2 determinant exact
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let dx = m(2, 2, &[1.0, 0.0, 0.0, -6.0]);
        for k in [10, 17, 23] {
            let h = 0.5f64.powi(k);
            let z = &x + &dx * h;
            let (f, _) = svd_thin_unchecked(&z, Some(0.0));
            assert_eq!(f.rank(), 2);
            assert!(
                rel_err(&f.reconstruct(), &z) < 4.0 * f64::EPSILON,
                "h = {h}"
            );
            // the smallest singular value is |det| / σ₁
            let det = z[(0, 0)] * z[(1, 1)] - z[(0, 1)] * z[(1, 0)];
            assert_eq!(det, -6.0 * h * h);
            // backward stable: absolute error in σ₂ of order eps·σ₁
            let err = (f.d[1] - det.abs() / f.d[0]).abs();
            assert!(err <= 8.0 * f64::EPSILON * f.d[0], "h = {h}: {err:e}");
        }
    }

    #[test]
    fn svd_wide_matches_transpose() {
        let a = Rng::new(4).normal_matrix(3, 5);
        let (f, _) = svd_thin(&a, None).unwrap();
        let (ft, _) = svd_thin(&a.transpose(), None).unwrap();
        assert_eq!(f.d, ft.d);
        assert!(rel_err(&f.reconstruct(), &a) < 1e-14);
    }

    #[test]
    fn svd_zero_matrix_has_rank_zero() {
        let (f, info) = svd_thin(&Matrix::zeros(3, 2), None).unwrap();
        assert_eq!(info.rank, 0);
        assert!(f.d.is_empty());
        assert_eq!(f.h1.shape(), (3, 0));
        assert_eq!(f.p1.shape(), (2, 0));
    }

    #[test]
    fn svd_rejects_ties() {
        let err = svd_thin(&Matrix::identity(3, 3), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum(..)));
    }

    #[test]
    fn svd_factor_invariants() {
        let mut rng = Rng::new(5);
        let x = random_rank_q(6, 4, 3, &Spectrum::default(), &mut rng).unwrap();
        let (f, info) = svd_thin(&x, None).unwrap();
        assert_eq!(info.rank, 3);
        assert_eq!(
            info.rank,
            info.singular_values
                .iter()
                .filter(|s| **s > info.tolerance_used)
                .count()
        );
        let eye = Matrix::identity(3, 3);
        assert!((f.h1.transpose() * &f.h1 - &eye).amax() <= 1e-12);
        assert!((f.p1.transpose() * &f.p1 - &eye).amax() <= 1e-12);
        assert!(rel_err(&f.reconstruct(), &x) <= 1e-10);
    }

    #[test]
    fn pinv_examples() {
        let eye = Matrix::identity(3, 3);
        assert!((pinv(&eye, None) - &eye).amax() < 1e-15);
        let y = pinv(&m(2, 2, &[2.0, 0.0, 0.0, 0.0]), None);
        assert!((y - m(2, 2, &[0.5, 0.0, 0.0, 0.0])).amax() < 1e-15);
        let y = pinv(&m(2, 2, &[1.0, 2.0, 3.0, 6.0]), None);
        let expected = m(2, 2, &[0.02, 0.06, 0.04, 0.12]);
        assert!(rel_err(&y, &expected) < 1e-14);
    }

    #[test]
    fn penrose_examples() {
        let eye = Matrix::identity(2, 2);
        assert_eq!(penrose_residuals(&eye, &eye).unwrap(), [0.0; 4]);

        let mut rng = Rng::new(8);
        let x = random_rank_q(5, 3, 2, &Spectrum::default(), &mut rng).unwrap();
        let r = penrose_residuals(&x, &pinv(&x, None)).unwrap();
        assert!(r.iter().all(|v| *v <= 1e-10), "{r:?}");

        let x = m(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let r = penrose_residuals(&x, &x.transpose()).unwrap();
        // XYX = diag(8, 0) against X = diag(2, 0)
        assert!((r[0] - 3.0).abs() < 1e-15);
        assert!(r[0] > 0.0);

        assert!(matches!(
            penrose_residuals(&x, &Matrix::zeros(3, 2)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn stiefel_frames() {
        let mut rng = Rng::new(3);
        let q = random_stiefel(3, 3, &mut rng).unwrap();
        assert!((q.determinant().abs() - 1.0).abs() <= 1e-12);
        let h = random_stiefel(5, 2, &mut rng).unwrap();
        assert!((h.transpose() * &h - Matrix::identity(2, 2)).amax() <= 1e-12);
        let a = random_stiefel(5, 2, &mut Rng::new(42)).unwrap();
        let b = random_stiefel(5, 2, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
        assert!(random_stiefel(2, 3, &mut rng).is_err());
    }

    #[test]
    fn random_rank_q_examples() {
        let mut rng = Rng::new(9);
        let x = random_rank_q(2, 2, 1, &Spectrum::Explicit(vec![2.0]), &mut rng).unwrap();
        assert_eq!(numerical_rank(&x), 1);
        assert!((singular_values(&x)[0] - 2.0).abs() < 1e-14);

        let x = random_rank_q(4, 3, 2, &Spectrum::Explicit(vec![3.0, 1.0]), &mut rng).unwrap();
        let (f, _) = svd_thin(&x, None).unwrap();
        assert!(rel_err_scalar(f.d[0], 3.0) <= 1e-10 && rel_err_scalar(f.d[1], 1.0) <= 1e-10);

        let x = random_rank_q(5, 3, 3, &Spectrum::default(), &mut rng).unwrap();
        assert!((pinv(&x, None) * &x - Matrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn random_rank_q_rejects_bad_spectra() {
        let mut rng = Rng::new(1);
        for bad in [
            vec![1.0, 2.0],
            vec![2.0, 2.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0 - 1e-9],
        ] {
            let err = random_rank_q(3, 3, 2, &Spectrum::Explicit(bad), &mut rng).unwrap_err();
            assert!(matches!(err, Error::BadSpectrum(_)));
        }
        assert!(random_rank_q(3, 3, 4, &Spectrum::default(), &mut rng).is_err());
    }

    #[test]
    fn matrix_json_is_row_major_and_exact() {
        let a = m(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        let s = matrix_to_json(&a);
        assert!(s.starts_with(r#"{"rows":2,"cols":2,"data":[0.1,"#));
        let back = matrix_from_json(&s).unwrap();
        assert!(a
            .iter()
            .zip(back.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(matrix_from_json(r#"{"rows":2,"cols":2,"data":[1.0]}"#).is_err());
    }
}
