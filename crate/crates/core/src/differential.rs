//! Differential of `Y = X⁺`, its vectorised Jacobian operator, determinant
//! formulas for the full-rank case, and central finite-difference oracles.
//!
//! With `Y = X⁺` (`X` is `n × m`),
//!
//! ```text
//! dY = −Y dX Y + Y Yᵀ dXᵀ (I_n − X Y) + (I_m − Y X) dXᵀ Yᵀ Y
//! ```
//!
//! which holds wherever the rank of `X` is locally constant. Vectorising
//! with `vec(A B C) = (Cᵀ ⊗ A) vec(B)` and `vec(dXᵀ) = K vec(dX)` gives
//!
//! ```text
//! d vec Y = { −Yᵀ ⊗ Y + [ (I_n − X Y) ⊗ Y Yᵀ + Yᵀ Y ⊗ (I_m − Y X) ] K } d vec X
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chart::{assemble, CoordinateChart};
use crate::error::{Error, Result};
use crate::matcore::{
    commutation_matrix, default_rank_tol, kron, max_abs, numerical_rank, pinv, pinv_rank,
    rank_info, Matrix, RankInfo,
};

/// Central-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub step: f64,
    /// Multiply `step` by the largest entry magnitude of the base point.
    pub scale_by_entries: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-5,
            scale_by_entries: true,
        }
    }
}

impl FdConfig {
    pub const MIN_STEP: f64 = 1e-9;
    pub const MAX_STEP: f64 = 1e-2;

    pub fn new(step: f64) -> Result<Self> {
        let cfg = FdConfig {
            step,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(Self::MIN_STEP..=Self::MAX_STEP).contains(&self.step) {
            return Err(Error::InvalidConfig(format!(
                "finite-difference step {} outside [{:e}, {:e}]",
                self.step,
                Self::MIN_STEP,
                Self::MAX_STEP
            )));
        }
        Ok(())
    }

    fn effective_step(&self, magnitude: f64) -> f64 {
        if self.scale_by_entries && magnitude > 0.0 {
            self.step * magnitude
        } else {
            self.step
        }
    }
}

fn check_same_shape(x: &Matrix, dx: &Matrix) -> Result<()> {
    if x.shape() != dx.shape() {
        return Err(Error::shape(
            format!("{}x{}", x.nrows(), x.ncols()),
            format!("{}x{}", dx.nrows(), dx.ncols()),
        ));
    }
    Ok(())
}

/// `dY` for `Y = X⁺` along `dX`.
pub fn pinv_differential(x: &Matrix, dx: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    check_same_shape(x, dx)?;
    let (n, m) = x.shape();
    let y = pinv(x, tol);
    let left_proj = Matrix::identity(n, n) - x * &y;
    let right_proj = Matrix::identity(m, m) - &y * x;
    let dxt = dx.transpose();
    Ok(-(&y * dx * &y)
        + &y * y.transpose() * &dxt * left_proj
        + right_proj * dxt * y.transpose() * &y)
}

/// The `nm × nm` matrix sending `vec(dX)` to `vec(dY)`.
#[derive(Debug, Clone)]
pub struct JacobianOperator {
    pub matrix: Matrix,
    pub n: usize,
    pub m: usize,
    pub rank_info: RankInfo,
}

impl JacobianOperator {
    pub fn rank(&self) -> usize {
        self.rank_info.rank
    }

    pub fn apply(&self, dx: &Matrix) -> Result<Matrix> {
        if dx.shape() != (self.n, self.m) {
            return Err(Error::shape(
                format!("{}x{}", self.n, self.m),
                format!("{}x{}", dx.nrows(), dx.ncols()),
            ));
        }
        let v = &self.matrix * crate::matcore::vec(dx);
        crate::matcore::unvec(&v, self.m, self.n)
    }
}

pub fn jacobian_operator(x: &Matrix, tol: Option<f64>) -> Result<JacobianOperator> {
    let (n, m) = x.shape();
    let y = pinv(x, tol);
    let left_proj = Matrix::identity(n, n) - x * &y;
    let right_proj = Matrix::identity(m, m) - &y * x;
    let yyt = &y * y.transpose();
    let yty = y.transpose() * &y;
    let transposed_part = kron(&left_proj, &yyt) + kron(&yty, &right_proj);
    let matrix = -kron(&y.transpose(), &y) + transposed_part * commutation_matrix(m, n);
    let rank_info = rank_info(&matrix, None);
    Ok(JacobianOperator {
        matrix,
        n,
        m,
        rank_info,
    })
}

/// `|det|` of the Jacobian operator; exactly zero when the operator is
/// numerically singular, which happens whenever `rank(X) < min(n, m)`.
pub fn jacobian_det_operator(x: &Matrix, tol: Option<f64>) -> Result<f64> {
    let op = jacobian_operator(x, tol)?;
    if op.rank() < op.matrix.nrows() {
        return Ok(0.0);
    }
    Ok(op.matrix.determinant().abs())
}

/// `|XᵀX|⁻ⁿ` when `m ≤ n`, otherwise `|XXᵀ|⁻ᵐ`.
pub fn jacobian_det_full_rank(x: &Matrix) -> Result<f64> {
    let (n, m) = x.shape();
    let rank = numerical_rank(x);
    if rank < n.min(m) {
        return Err(Error::NotFullRank {
            rank,
            min_dim: n.min(m),
        });
    }
    let (gram, power) = if m <= n {
        (x.transpose() * x, n)
    } else {
        (x * x.transpose(), m)
    };
    Ok(gram.determinant().abs().powi(-(power as i32)))
}

/// Singular values beyond `rank` after a step of size `step_norm` along a
/// direction must stay below `step_norm · √step`: tangent directions move
/// them by `O(step²)`, transversal ones by `O(step)`.
fn perturbed_rank(x: &Matrix, step_norm: f64, step: f64) -> usize {
    let info = rank_info(x, None);
    let floor = default_rank_tol(x.nrows(), x.ncols())
        * info.singular_values.first().copied().unwrap_or(0.0);
    let threshold = floor.max(step_norm * step.sqrt());
    info.singular_values
        .iter()
        .filter(|&&s| s > threshold)
        .count()
}

/// Central difference `[pinv(X + h dX) − pinv(X − h dX)] / 2h` with both
/// evaluations truncated to the rank of `X`.
pub fn fd_pinv_differential(
    x: &Matrix,
    dx: &Matrix,
    cfg: &FdConfig,
    tol: Option<f64>,
) -> Result<Matrix> {
    check_same_shape(x, dx)?;
    cfg.validate()?;
    let base = rank_info(x, tol).rank;
    let h = cfg.effective_step(max_abs(x));
    let plus = x + dx * h;
    let minus = x - dx * h;
    let step_norm = h * dx.norm();
    let (rp, rm) = (
        perturbed_rank(&plus, step_norm, cfg.step),
        perturbed_rank(&minus, step_norm, cfg.step),
    );
    if rp != base || rm != base {
        return Err(Error::RankDrift {
            base,
            plus: rp,
            minus: rm,
        });
    }
    Ok((pinv_rank(&plus, base) - pinv_rank(&minus, base)) / (2.0 * h))
}

/// Maps available to [`fd_chart_jacobian`].
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixMap {
    Pinv,
    Scale(f64),
    /// `X ↦ H X Q`
    OrthogonalSandwich {
        left: Matrix,
        right: Matrix,
    },
}

impl MatrixMap {
    pub fn output_shape(&self, n: usize, m: usize) -> (usize, usize) {
        match self {
            MatrixMap::Pinv => (m, n),
            MatrixMap::Scale(_) => (n, m),
            MatrixMap::OrthogonalSandwich { left, right } => (left.nrows(), right.ncols()),
        }
    }

    /// Apply the map to a rank-`rank` input.
    pub fn apply(&self, x: &Matrix, rank: usize) -> Matrix {
        match self {
            MatrixMap::Pinv => pinv_rank(x, rank),
            MatrixMap::Scale(c) => x * *c,
            MatrixMap::OrthogonalSandwich { left, right } => left * x * right,
        }
    }
}

/// Partial derivatives of the output chart coordinates of `f(X)` with
/// respect to the input chart coordinates of `X`, by central differences.
/// Perturbing a coordinate moves `X22` through the block relation, so every
/// evaluation point stays on the rank-`q` set.
pub fn fd_chart_jacobian(
    f: &MatrixMap,
    x: &Matrix,
    in_chart: &CoordinateChart,
    out_chart: &CoordinateChart,
    cfg: &FdConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    if x.shape() != (in_chart.n, in_chart.m) {
        return Err(Error::shape(
            format!("{}x{}", in_chart.n, in_chart.m),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let out_shape = f.output_shape(in_chart.n, in_chart.m);
    if out_shape != (out_chart.n, out_chart.m) {
        return Err(Error::shape(
            format!("{}x{}", out_shape.0, out_shape.1),
            format!("output chart {}x{}", out_chart.n, out_chart.m),
        ));
    }
    let blocks = in_chart
        .blocks_of(x)
        .map_err(|e| Error::ChartInvalid(e.to_string()))?;
    let coords = blocks.coordinates();
    let magnitude = coords.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let h = cfg.effective_step(magnitude);

    let evaluate = |c: &[f64]| -> Result<Vec<f64>> {
        let b = blocks.with_coordinates(c)?;
        let xp = assemble(&b).map_err(|e| Error::ChartInvalid(e.to_string()))?;
        let r = numerical_rank(&xp);
        if r != in_chart.q {
            return Err(Error::RankDrift {
                base: in_chart.q,
                plus: r,
                minus: r,
            });
        }
        let y = f.apply(&xp, in_chart.q);
        let r = numerical_rank(&y);
        if r != out_chart.q {
            return Err(Error::RankDrift {
                base: out_chart.q,
                plus: r,
                minus: r,
            });
        }
        out_chart
            .blocks_of(&y)
            .map_err(|e| Error::ChartInvalid(e.to_string()))?;
        out_chart.read(&y)
    };

    let mut jac = DMatrix::zeros(out_chart.len(), in_chart.len());
    let mut c = coords.clone();
    for k in 0..coords.len() {
        c[k] = coords[k] + h;
        let plus = evaluate(&c)?;
        c[k] = coords[k] - h;
        let minus = evaluate(&c)?;
        c[k] = coords[k];
        for (i, (p, mi)) in plus.iter().zip(&minus).enumerate() {
            jac[(i, k)] = (p - mi) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `|det|` of a square chart Jacobian.
pub fn chart_jacobian_det(jac: &Matrix) -> Result<f64> {
    if !jac.is_square() {
        return Err(Error::shape(
            "square chart Jacobian",
            format!("{}x{}", jac.nrows(), jac.ncols()),
        ));
    }
    Ok(jac.determinant().abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{chart_positions, decompose, tangent_perturbation, BlockDecomposition};
    use crate::matcore::{random_rank_q, rel_err, rel_err_scalar, vec, Rng, Spectrum};

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn e(n: usize, m_: usize, i: usize, j: usize) -> Matrix {
        let mut a = Matrix::zeros(n, m_);
        a[(i, j)] = 1.0;
        a
    }

    #[test]
    fn differential_at_identity() {
        let dy = pinv_differential(&Matrix::identity(2, 2), &e(2, 2, 0, 0), None).unwrap();
        assert_eq!(dy, -e(2, 2, 0, 0));
        let fd = fd_pinv_differential(
            &Matrix::identity(2, 2),
            &e(2, 2, 0, 0),
            &FdConfig::default(),
            None,
        )
        .unwrap();
        assert!((fd + e(2, 2, 0, 0)).amax() < 1e-9);
    }

    #[test]
    fn differential_full_column_rank_matches_fd() {
        let mut rng = Rng::new(21);
        let x = random_rank_q(3, 2, 2, &Spectrum::default(), &mut rng).unwrap();
        let dx = rng.normal_matrix(3, 2);
        let analytic = pinv_differential(&x, &dx, None).unwrap();
        let fd = fd_pinv_differential(&x, &dx, &FdConfig::default(), None).unwrap();
        assert!(rel_err(&fd, &analytic) <= 1e-6);
    }

    #[test]
    fn differential_rank_one_along_chart_curve() {
        let b = BlockDecomposition::from_blocks(m(1, 1, &[1.0]), m(1, 1, &[2.0]), m(1, 1, &[3.0]))
            .unwrap();
        let x = assemble(&b).unwrap();
        let z = Matrix::zeros(1, 1);
        let dx = tangent_perturbation(&b, &m(1, 1, &[1.0]), &z, &z).unwrap();
        let analytic = pinv_differential(&x, &dx, None).unwrap();

        // oracle: central difference along t ↦ assemble(X11 + t, X12, X21)
        let h = 1e-5;
        let at = |t: f64| {
            let mut bt = b.clone();
            bt.x11[(0, 0)] += t;
            pinv(&assemble(&bt).unwrap(), None)
        };
        let curve = (at(h) - at(-h)) / (2.0 * h);
        assert!(rel_err(&curve, &analytic) <= 1e-6);

        let fd = fd_pinv_differential(&x, &dx, &FdConfig::default(), None).unwrap();
        assert!(rel_err(&fd, &analytic) <= 1e-6);
    }

    #[test]
    fn transversal_direction_drifts() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let err = fd_pinv_differential(&x, &e(2, 2, 1, 1), &FdConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::RankDrift { base: 1, .. }));
    }

    #[test]
    fn fd_config_bounds() {
        assert!(FdConfig::new(1e-5).is_ok());
        assert!(FdConfig::new(1e-10).is_err());
        assert!(FdConfig::new(0.1).is_err());
    }

    #[test]
    fn operator_scalar_case() {
        let op = jacobian_operator(&m(1, 1, &[1.0]), None).unwrap();
        assert_eq!(op.matrix, m(1, 1, &[-1.0]));
        let det = jacobian_det_operator(&m(1, 1, &[2.0]), None).unwrap();
        assert!((det - 0.25).abs() < 1e-15);
    }

    #[test]
    fn operator_matches_differential() {
        let mut rng = Rng::new(22);
        let x = random_rank_q(3, 2, 2, &Spectrum::default(), &mut rng).unwrap();
        let op = jacobian_operator(&x, None).unwrap();
        assert_eq!(op.matrix.shape(), (6, 6));
        for _ in 0..10 {
            let dx = rng.normal_matrix(3, 2);
            let direct = vec(&pinv_differential(&x, &dx, None).unwrap());
            let via_op = &op.matrix * vec(&dx);
            assert!((&via_op - &direct).norm() <= 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn operator_rank_one_example() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let op = jacobian_operator(&x, None).unwrap();
        assert_eq!(op.rank(), 3);
        assert_eq!(jacobian_det_operator(&x, None).unwrap(), 0.0);
    }

    #[test]
    fn full_rank_determinant_examples() {
        assert_eq!(
            jacobian_det_full_rank(&m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap(),
            1.0
        );
        let x = m(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let det = jacobian_det_full_rank(&x).unwrap();
        assert!(rel_err_scalar(det, 36f64.powi(-3)) < 1e-14);
        assert!(rel_err_scalar(jacobian_det_operator(&x, None).unwrap(), det) < 1e-12);

        let mut rng = Rng::new(23);
        let x = random_rank_q(3, 3, 3, &Spectrum::default(), &mut rng).unwrap();
        let expected = x.determinant().abs().powi(-6);
        assert!(rel_err_scalar(jacobian_det_full_rank(&x).unwrap(), expected) < 1e-12);
        let xt = x.transpose();
        assert!(rel_err_scalar(jacobian_det_full_rank(&xt).unwrap(), expected) < 1e-12);

        assert!(matches!(
            jacobian_det_full_rank(&m(2, 2, &[1.0, 2.0, 3.0, 6.0])),
            Err(Error::NotFullRank {
                rank: 1,
                min_dim: 2
            })
        ));
    }

    #[test]
    fn chart_jacobian_identity_and_scale() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let b = decompose(&x, 1).unwrap();
        let chart = chart_positions(&b);
        let cfg = FdConfig::default();
        let id = fd_chart_jacobian(&MatrixMap::Scale(1.0), &x, &chart, &chart, &cfg).unwrap();
        assert!((id - Matrix::identity(3, 3)).amax() < 1e-9);

        let out = chart_positions(&decompose(&(&x * 2.0), 1).unwrap());
        let jac = fd_chart_jacobian(&MatrixMap::Scale(2.0), &x, &chart, &out, &cfg).unwrap();
        assert!((chart_jacobian_det(&jac).unwrap() - 8.0).abs() < 1e-8);
    }

    #[test]
    fn chart_jacobian_pinv_full_rank() {
        let mut rng = Rng::new(24);
        let x = random_rank_q(3, 2, 2, &Spectrum::default(), &mut rng).unwrap();
        let in_chart = chart_positions(&decompose(&x, 2).unwrap());
        let out_chart = chart_positions(&decompose(&pinv(&x, None), 2).unwrap());
        let jac = fd_chart_jacobian(
            &MatrixMap::Pinv,
            &x,
            &in_chart,
            &out_chart,
            &FdConfig::default(),
        )
        .unwrap();
        let det = chart_jacobian_det(&jac).unwrap();
        assert!(rel_err_scalar(det, jacobian_det_full_rank(&x).unwrap()) <= 1e-4);
    }

    #[test]
    fn chart_jacobian_shape_errors() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 6.0]);
        let chart = chart_positions(&decompose(&x, 1).unwrap());
        let wide = Matrix::zeros(2, 3);
        assert!(fd_chart_jacobian(
            &MatrixMap::Pinv,
            &wide,
            &chart,
            &chart,
            &FdConfig::default()
        )
        .is_err());
        assert!(chart_jacobian_det(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn symmetric_projector_differential() {
        let mut rng = Rng::new(25);
        let x = random_rank_q(4, 3, 2, &Spectrum::default(), &mut rng).unwrap();
        let b = decompose(&x, 2).unwrap();
        let dx = tangent_perturbation(
            &b,
            &rng.normal_matrix(2, 2),
            &rng.normal_matrix(2, 1),
            &rng.normal_matrix(2, 2),
        )
        .unwrap();
        let y = pinv(&x, None);
        let dy = pinv_differential(&x, &dx, None).unwrap();
        let dproj = &dx * &y + &x * &dy;
        assert!((&dproj - dproj.transpose()).amax() <= 1e-10);
    }
}
