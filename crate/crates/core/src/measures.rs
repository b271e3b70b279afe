//! Measure factors for `Y = X⁺`.
//!
//! On rank-`q` matrices with thin SVD `X = H1 · diag(D) · P1ᵀ` the volume
//! element factors as
//!
//! ```text
//! (dX) = 2^{-q} |D|^{n+m-2q} ∏_{i<j} (D_i² − D_j²) (dD) (H1ᵀ dH1) (P1ᵀ dP1)
//! ```
//!
//! and the pseudoinverse transforms it by `∏ D_i^{-2(n+m-q)}`. The frame
//! measures are invariant and coincide for `X` and `Y`, so the identity can be
//! checked on the spectral factors alone: the density at the reciprocal
//! spectrum, times the Jacobian `∏ D_i⁻²` of `D ↦ 1/D`, divided by the density
//! at `D`.
//!
//! The module also covers the symmetric-inverse Jacobian `(dA) = |B|^{-(m+1)}
//! (dB)` for `A = B⁻¹`, the full-rank chain through `A = Y Yᵀ`, `B = XᵀX`, and
//! the orthogonal-invariance experiment for chart volume elements.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{chart_positions, decompose, COND_CAP};
use crate::differential::{
    chart_jacobian_det, fd_chart_jacobian, jacobian_det_operator, FdConfig, MatrixMap,
};
use crate::error::{Error, Result};
use crate::matcore::{numerical_rank, pinv, rel_err, rel_err_scalar, singular_values, Matrix};
use crate::report::VerificationReport;

pub const CHAIN_INVERSE_TOL: f64 = 1e-10;
pub const CHAIN_ALGEBRA_TOL: f64 = 1e-12;
pub const CHAIN_OPERATOR_TOL: f64 = 1e-8;
pub const INVARIANCE_TOL: f64 = 1e-6;
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

fn validate_spectrum(n: usize, m: usize, d: &[f64]) -> Result<()> {
    if d.is_empty() || d.len() > n.min(m) {
        return Err(Error::BadSpectrum(format!(
            "need 1 <= q <= min(n, m) = {}, got q = {}",
            n.min(m),
            d.len()
        )));
    }
    if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::BadSpectrum(format!("non-positive entry in {d:?}")));
    }
    if d.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::BadSpectrum(format!(
            "spectrum must be strictly decreasing: {d:?}"
        )));
    }
    Ok(())
}

/// `2^{-q} (∏ D_i)^{n+m-2q} ∏_{i<j} (D_i² − D_j²)`.
pub fn hausdorff_density(n: usize, m: usize, d: &[f64]) -> Result<f64> {
    validate_spectrum(n, m, d)?;
    let q = d.len();
    let exponent = (n + m) as i32 - 2 * q as i32;
    let det_power: f64 = d.iter().map(|v| v.powi(exponent)).product();
    let mut vandermonde = 1.0;
    for i in 0..q {
        for j in i + 1..q {
            vandermonde *= d[i] * d[i] - d[j] * d[j];
        }
    }
    Ok(0.5_f64.powi(q as i32) * det_power * vandermonde)
}

/// Singular values of `X⁺`: reciprocals, listed in decreasing order.
pub fn pinv_spectrum(d: &[f64]) -> Vec<f64> {
    d.iter().rev().map(|v| 1.0 / v).collect()
}

/// `∏ D_i^{-2(n+m-q)}`.
pub fn nonfullrank_jacobian_factor(n: usize, m: usize, d: &[f64]) -> Result<f64> {
    validate_spectrum(n, m, d)?;
    let exponent = -2 * ((n + m) as i32 - d.len() as i32);
    Ok(d.iter().map(|v| v.powi(exponent)).product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFactorReport {
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub density_x: f64,
    pub density_y: f64,
    /// Jacobian `∏ D_i⁻²` of the spectral map `D ↦ 1/D`.
    pub spectral_jacobian: f64,
    pub chain: f64,
    pub jacobian_factor: f64,
    pub identity_residual: f64,
}

pub fn hausdorff_ratio_check(n: usize, m: usize, d: &[f64]) -> Result<SpectrumFactorReport> {
    let density_x = hausdorff_density(n, m, d)?;
    // Y = X⁺ is m × n
    let density_y = hausdorff_density(m, n, &pinv_spectrum(d))?;
    let spectral_jacobian: f64 = d.iter().map(|v| v.powi(-2)).product();
    let chain = density_y * spectral_jacobian / density_x;
    let jacobian_factor = nonfullrank_jacobian_factor(n, m, d)?;
    Ok(SpectrumFactorReport {
        d: d.to_vec(),
        n,
        m,
        q: d.len(),
        density_x,
        density_y,
        spectral_jacobian,
        chain,
        jacobian_factor,
        identity_residual: ((chain - jacobian_factor) / jacobian_factor).abs(),
    })
}

/// Symmetric matrix stored by its upper triangle, row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    order: usize,
    upper: Vec<f64>,
}

fn upper_index(order: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * order - i * (i + 1) / 2 + j
}

impl SymmetricMatrix {
    pub fn from_upper(order: usize, upper: Vec<f64>) -> Result<Self> {
        if order == 0 || upper.len() != order * (order + 1) / 2 {
            return Err(Error::shape(
                format!("{} upper-triangle entries", order * (order + 1) / 2),
                format!("{}", upper.len()),
            ));
        }
        Ok(SymmetricMatrix { order, upper })
    }

    /// Take the upper triangle of a square matrix.
    pub fn from_matrix_upper(a: &Matrix) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::shape(
                "non-empty square matrix",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        let order = a.nrows();
        let upper = (0..order)
            .flat_map(|i| (i..order).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect();
        Ok(SymmetricMatrix { order, upper })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[upper_index(self.order, i, j)]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }

    /// Half-vectorisation: entries `(i, j)` with `i >= j`, column by column.
    pub fn half_vec(&self) -> Vec<f64> {
        let k = self.order;
        (0..k)
            .flat_map(|j| (j..k).map(move |i| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    pub fn from_half_vec(order: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != order * (order + 1) / 2 {
            return Err(Error::shape(
                format!("{} coordinates", order * (order + 1) / 2),
                format!("{}", coords.len()),
            ));
        }
        let mut upper = vec![0.0; coords.len()];
        let mut idx = 0;
        for j in 0..order {
            for i in j..order {
                upper[upper_index(order, i, j)] = coords[idx];
                idx += 1;
            }
        }
        Ok(SymmetricMatrix { order, upper })
    }

    fn checked_inverse(&self) -> Result<SymmetricMatrix> {
        let a = self.to_matrix();
        let s = singular_values(&a);
        let (hi, lo) = (s[0], s[s.len() - 1]);
        if !(lo > 0.0 && hi / lo <= COND_CAP) {
            return Err(Error::SingularInput);
        }
        let inv = a.try_inverse().ok_or(Error::SingularInput)?;
        // symmetrise away rounding before dropping the lower triangle
        SymmetricMatrix::from_matrix_upper(&((&inv + inv.transpose()) * 0.5))
    }

    pub fn inverse(&self) -> Result<SymmetricMatrix> {
        self.checked_inverse()
    }
}

/// `|det S|^{-(m+1)}`, the Jacobian of `S ↦ S⁻¹` on symmetric matrices.
pub fn symmetric_inverse_jacobian_formula(s: &SymmetricMatrix) -> Result<f64> {
    s.checked_inverse()?;
    let det = s.to_matrix().determinant().abs();
    Ok(det.powi(-(s.order() as i32 + 1)))
}

/// Central-difference Jacobian of `S ↦ S⁻¹` in half-vectorised coordinates.
pub fn fd_symmetric_inverse_jacobian(s: &SymmetricMatrix, cfg: &FdConfig) -> Result<Matrix> {
    cfg.validate()?;
    let coords = s.half_vec();
    let magnitude = coords.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let h = if cfg.scale_by_entries && magnitude > 0.0 {
        cfg.step * magnitude
    } else {
        cfg.step
    };
    let k = coords.len();
    let mut jac = DMatrix::zeros(k, k);
    let mut c = coords.clone();
    for col in 0..k {
        c[col] = coords[col] + h;
        let plus = SymmetricMatrix::from_half_vec(s.order(), &c)?
            .inverse()?
            .half_vec();
        c[col] = coords[col] - h;
        let minus = SymmetricMatrix::from_half_vec(s.order(), &c)?
            .inverse()?
            .half_vec();
        c[col] = coords[col];
        for row in 0..k {
            jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Full-rank chain through `A = Y Yᵀ` and `B = XᵀX`: checks `A = B⁻¹`, that
/// `|A|^{(n-m-1)/2} |B|^{-(m+1)} |B|^{-(n-m-1)/2}` equals `|XᵀX|⁻ⁿ`, and that
/// the same scalar equals the determinant of the Jacobian operator.
pub fn exterior_chain_check(x: &Matrix, tol: Option<f64>) -> Result<VerificationReport> {
    let (n, m) = x.shape();
    let rank = numerical_rank(x);
    if m > n || rank < m {
        return Err(Error::NotFullColumnRank { rank, cols: m });
    }
    let y = pinv(x, tol);
    // Y is m × n here, so the m × m Gram matrix is Y Yᵀ
    let a = &y * y.transpose();
    let b = x.transpose() * x;
    let b_inv = b.clone().try_inverse().ok_or(Error::SingularInput)?;
    let det_a = a.determinant().abs();
    let det_b = b.determinant().abs();
    let half = (n as f64 - m as f64 - 1.0) / 2.0;

    // (dY) = 2^{-m}|A|^{(n-m-1)/2}(dA)(H1ᵀdH1), (dX) likewise with B, and
    // (dA) = |B|^{-(m+1)}(dB); the 2^{±m} factors and the frame measures cancel.
    let assembled = det_a.powf(half) * det_b.powi(-(m as i32 + 1)) * det_b.powf(-half);
    let target = det_b.powi(-(n as i32));
    let operator_det = jacobian_det_operator(x, tol)?;

    Ok(VerificationReport::new("exterior-chain")
        .input("n", n as u64)
        .input("m", m as u64)
        .value("det_A", det_a)
        .value("det_B", det_b)
        .value("assembled", assembled)
        .value("gram_power", target)
        .value("operator_det", operator_det)
        .at_most("inverse_identity", rel_err(&a, &b_inv), CHAIN_INVERSE_TOL)
        .at_most(
            "determinant_algebra",
            rel_err_scalar(assembled, target),
            CHAIN_ALGEBRA_TOL,
        )
        .at_most(
            "operator_agreement",
            rel_err_scalar(assembled, operator_det),
            CHAIN_OPERATOR_TOL,
        ))
}

fn check_orthogonal(a: &Matrix, what: &str) -> Result<()> {
    let k = a.nrows();
    if !a.is_square() || (a.transpose() * a - Matrix::identity(k, k)).amax() > ORTHOGONALITY_TOL {
        return Err(Error::InvalidConfig(format!("{what} is not orthogonal")));
    }
    Ok(())
}

/// Chart-to-chart Jacobian determinant of `X ↦ H X Q`.
///
/// With a full chart (`q = min(n, m)`) the chart is all `nm` entries, the map
/// is linear with `|det(Qᵀ ⊗ H)| = 1`, and the report requires a deviation
/// `||det| − 1| <= 1e-6`. For `q < min(n, m)` the deviation is only recorded:
/// the volume element built from the free block entries is generically not
/// preserved by orthogonal transformations.
pub fn orthogonal_invariance_check(
    x: &Matrix,
    q: usize,
    h: &Matrix,
    qm: &Matrix,
    cfg: &FdConfig,
) -> Result<VerificationReport> {
    let (n, m) = x.shape();
    check_orthogonal(h, "H")?;
    check_orthogonal(qm, "Q")?;
    if h.nrows() != n || qm.nrows() != m {
        return Err(Error::shape(
            format!("H {n}x{n}, Q {m}x{m}"),
            format!(
                "H {}x{}, Q {}x{}",
                h.nrows(),
                h.ncols(),
                qm.nrows(),
                qm.ncols()
            ),
        ));
    }
    let in_blocks = decompose(x, q)?;
    let y = h * x * qm;
    let out_blocks = decompose(&y, q)?;
    let in_chart = chart_positions(&in_blocks);
    let out_chart = chart_positions(&out_blocks);
    let map = MatrixMap::OrthogonalSandwich {
        left: h.clone(),
        right: qm.clone(),
    };
    let jac = fd_chart_jacobian(&map, x, &in_chart, &out_chart, cfg)?;
    let det = chart_jacobian_det(&jac)?;
    let deviation = (det.abs() - 1.0).abs();

    let report = VerificationReport::new("invariance")
        .input("n", n as u64)
        .input("m", m as u64)
        .input("q", q as u64)
        .input("full_chart", q == n.min(m))
        .value("abs_det", det)
        .value("x11_condition_in", in_blocks.x11_condition())
        .value("x11_condition_out", out_blocks.x11_condition());
    Ok(if q == n.min(m) {
        report.at_most("deviation", deviation, INVARIANCE_TOL)
    } else {
        report.value("deviation", deviation)
    })
}
