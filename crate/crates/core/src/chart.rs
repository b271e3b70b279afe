//! Block parameterisation of rank-`q` matrices.
//!
//! After row and column permutations a rank-`q` matrix reads
//!
//! ```text
//!     [ X11  X12 ]        X22 = X21 · X11⁻¹ · X12
//!     [ X21  X22 ]
//! ```
//!
//! with `X11` a well-conditioned `q × q` block. The entries of `X11`, `X12`
//! and `X21` are free coordinates (`nq + mq − q²` of them); `X22` is
//! determined by the others. Permutations are stored alongside the blocks and
//! never applied destructively, so every result maps back to the caller's
//! coordinates.

use nalgebra::linalg::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{matrix_json, numerical_rank, singular_values, Matrix};

/// Largest condition number accepted for the pivot block `X11`.
pub const COND_CAP: f64 = 1e8;

/// Free blocks of a rank-`q` matrix. Block entries are taken from the
/// permuted matrix `Xp[i][j] = X[row_perm[i]][col_perm[j]]` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub q: usize,
    #[serde(rename = "X11", with = "matrix_json")]
    pub x11: Matrix,
    #[serde(rename = "X12", with = "matrix_json")]
    pub x12: Matrix,
    #[serde(rename = "X21", with = "matrix_json")]
    pub x21: Matrix,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub n: usize,
    pub m: usize,
}

fn condition_number(a: &Matrix) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// Greedy complete pivoting: `q` steps of Gaussian elimination, each taking
/// the largest remaining entry as pivot. Returns the chosen rows and columns
/// followed by the unused ones in ascending order.
fn complete_pivoting(x: &Matrix, q: usize) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = x.shape();
    let mut work = x.clone();
    let mut rows_free: Vec<usize> = (0..n).collect();
    let mut cols_free: Vec<usize> = (0..m).collect();
    let mut rows = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(m);
    for _ in 0..q {
        let mut best = (0, 0, -1.0);
        for (ri, &i) in rows_free.iter().enumerate() {
            for (cj, &j) in cols_free.iter().enumerate() {
                let v = work[(i, j)].abs();
                if v > best.2 {
                    best = (ri, cj, v);
                }
            }
        }
        let pr = rows_free.remove(best.0);
        let pc = cols_free.remove(best.1);
        let pivot = work[(pr, pc)];
        if pivot != 0.0 {
            for &i in &rows_free {
                let factor = work[(i, pc)] / pivot;
                for &j in &cols_free {
                    work[(i, j)] -= factor * work[(pr, j)];
                }
            }
        }
        rows.push(pr);
        cols.push(pc);
    }
    rows.extend(rows_free);
    cols.extend(cols_free);
    (rows, cols)
}

/// Split `x` into blocks, choosing permutations by complete pivoting.
pub fn decompose(x: &Matrix, q: usize) -> Result<BlockDecomposition> {
    let found = numerical_rank(x);
    if found != q || q == 0 {
        return Err(Error::RankMismatch { expected: q, found });
    }
    let (row_perm, col_perm) = complete_pivoting(x, q);
    match BlockDecomposition::from_permutations(x, q, row_perm, col_perm) {
        Err(Error::SingularX11(cond)) => Err(Error::IllConditionedPivot {
            cond,
            cap: COND_CAP,
        }),
        other => other,
    }
}

impl BlockDecomposition {
    /// Read the free blocks of `x` under the given permutations. The `X22`
    /// block of `x` is ignored.
    pub fn from_permutations(
        x: &Matrix,
        q: usize,
        row_perm: Vec<usize>,
        col_perm: Vec<usize>,
    ) -> Result<Self> {
        let (n, m) = x.shape();
        if row_perm.len() != n || col_perm.len() != m {
            return Err(Error::shape(
                format!("permutations of length {n} and {m}"),
                format!("{} and {}", row_perm.len(), col_perm.len()),
            ));
        }
        if !is_permutation(&row_perm) || !is_permutation(&col_perm) {
            return Err(Error::InvalidConfig("invalid permutation".into()));
        }
        if q == 0 || q > n.min(m) {
            return Err(Error::RankMismatch {
                expected: q,
                found: n.min(m),
            });
        }
        let pick = |rows: &[usize], cols: &[usize]| {
            Matrix::from_fn(rows.len(), cols.len(), |i, j| x[(rows[i], cols[j])])
        };
        let (r1, r2) = row_perm.split_at(q);
        let (c1, c2) = col_perm.split_at(q);
        let b = BlockDecomposition {
            q,
            x11: pick(r1, c1),
            x12: pick(r1, c2),
            x21: pick(r2, c1),
            row_perm: row_perm.clone(),
            col_perm: col_perm.clone(),
            n,
            m,
        };
        b.x11_inverse()?;
        Ok(b)
    }

    /// Blocks with identity permutations.
    pub fn from_blocks(x11: Matrix, x12: Matrix, x21: Matrix) -> Result<Self> {
        let q = x11.nrows();
        if x11.ncols() != q || x12.nrows() != q || x21.ncols() != q {
            return Err(Error::shape(
                "X11 q×q, X12 q×(m−q), X21 (n−q)×q",
                format!("{:?}, {:?}, {:?}", x11.shape(), x12.shape(), x21.shape()),
            ));
        }
        let n = q + x21.nrows();
        let m = q + x12.ncols();
        Ok(BlockDecomposition {
            q,
            x11,
            x12,
            x21,
            row_perm: (0..n).collect(),
            col_perm: (0..m).collect(),
            n,
            m,
        })
    }

    pub fn x11_condition(&self) -> f64 {
        condition_number(&self.x11)
    }

    pub fn x11_inverse(&self) -> Result<Matrix> {
        let cond = self.x11_condition();
        if cond.is_nan() || cond > COND_CAP {
            return Err(Error::SingularX11(cond));
        }
        self.x11
            .clone()
            .try_inverse()
            .ok_or(Error::SingularX11(cond))
    }

    /// The dependent block `X21 · X11⁻¹ · X12`.
    pub fn x22(&self) -> Result<Matrix> {
        let inv = self.x11_inverse()?;
        Ok(&self.x21 * inv * &self.x12)
    }

    /// The matrix in permuted coordinates, `[X11 X12; X21 X22]`.
    pub fn permuted(&self) -> Result<Matrix> {
        let x22 = self.x22()?;
        let q = self.q;
        let mut xp = Matrix::zeros(self.n, self.m);
        xp.view_mut((0, 0), (q, q)).copy_from(&self.x11);
        xp.view_mut((0, q), (q, self.m - q)).copy_from(&self.x12);
        xp.view_mut((q, 0), (self.n - q, q)).copy_from(&self.x21);
        xp.view_mut((q, q), (self.n - q, self.m - q))
            .copy_from(&x22);
        Ok(xp)
    }

    /// Map a matrix in permuted coordinates back to the original ones.
    pub fn unpermute(&self, xp: &Matrix) -> Matrix {
        let mut x = Matrix::zeros(self.n, self.m);
        for i in 0..self.n {
            for j in 0..self.m {
                x[(self.row_perm[i], self.col_perm[j])] = xp[(i, j)];
            }
        }
        x
    }

    /// Number of free coordinates, `nq + mq − q²`.
    pub fn dimension(&self) -> usize {
        chart_dimension(self.n, self.m, self.q)
    }

    /// Free coordinates in chart order: X11, X12, X21, each column-major.
    pub fn coordinates(&self) -> Vec<f64> {
        self.x11
            .iter()
            .chain(self.x12.iter())
            .chain(self.x21.iter())
            .copied()
            .collect()
    }

    pub fn with_coordinates(&self, coords: &[f64]) -> Result<Self> {
        if coords.len() != self.dimension() {
            return Err(Error::shape(
                format!("{} coordinates", self.dimension()),
                format!("{}", coords.len()),
            ));
        }
        let (a, rest) = coords.split_at(self.x11.len());
        let (b, c) = rest.split_at(self.x12.len());
        let mut out = self.clone();
        out.x11.copy_from_slice(a);
        out.x12.copy_from_slice(b);
        out.x21.copy_from_slice(c);
        Ok(out)
    }
}

pub fn chart_dimension(n: usize, m: usize, q: usize) -> usize {
    n * q + m * q - q * q
}

/// `X21 · X11⁻¹ · X12`; empty when `q = n` or `q = m`.
pub fn x22_from_blocks(b: &BlockDecomposition) -> Result<Matrix> {
    b.x22()
}

/// Reassemble the full `n × m` matrix in original coordinates.
pub fn assemble(b: &BlockDecomposition) -> Result<Matrix> {
    Ok(b.unpermute(&b.permuted()?))
}

fn spd_inverse(a: Matrix) -> Result<Matrix> {
    let chol = Cholesky::new(a).ok_or(Error::SingularGram)?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::SingularGram)
    }
}

/// Pseudoinverse written only in terms of the free blocks:
///
/// ```text
/// Xp⁺ = [X11ᵀ; X12ᵀ] (X11 X11ᵀ + X12 X12ᵀ)⁻¹ X11 (X11ᵀ X11 + X21ᵀ X21)⁻¹ [X11ᵀ, X21ᵀ]
/// ```
///
/// returned in the original (unpermuted) coordinates, shape `m × n`.
pub fn pinv_from_blocks(b: &BlockDecomposition) -> Result<Matrix> {
    b.x11_inverse()?;
    let q = b.q;
    let mut top_row = Matrix::zeros(q, b.m);
    top_row.view_mut((0, 0), (q, q)).copy_from(&b.x11);
    top_row.view_mut((0, q), (q, b.m - q)).copy_from(&b.x12);
    let mut left_col = Matrix::zeros(b.n, q);
    left_col.view_mut((0, 0), (q, q)).copy_from(&b.x11);
    left_col.view_mut((q, 0), (b.n - q, q)).copy_from(&b.x21);

    let row_gram = spd_inverse(&top_row * top_row.transpose())?;
    let col_gram = spd_inverse(left_col.transpose() * &left_col)?;
    let yp = top_row.transpose() * row_gram * &b.x11 * col_gram * left_col.transpose();

    // Xp = Πr X Πcᵀ, so X⁺ = Πcᵀ Xp⁺ Πr
    let mut y = Matrix::zeros(b.m, b.n);
    for j in 0..b.m {
        for i in 0..b.n {
            y[(b.col_perm[j], b.row_perm[i])] = yp[(j, i)];
        }
    }
    Ok(y)
}

/// First-order rank-preserving perturbation: the block directions plus the
/// induced change of `X22`,
/// `dX21·X11⁻¹·X12 − X21·X11⁻¹·dX11·X11⁻¹·X12 + X21·X11⁻¹·dX12`.
pub fn tangent_perturbation(
    b: &BlockDecomposition,
    dx11: &Matrix,
    dx12: &Matrix,
    dx21: &Matrix,
) -> Result<Matrix> {
    if dx11.shape() != b.x11.shape()
        || dx12.shape() != b.x12.shape()
        || dx21.shape() != b.x21.shape()
    {
        return Err(Error::shape(
            format!(
                "{:?}, {:?}, {:?}",
                b.x11.shape(),
                b.x12.shape(),
                b.x21.shape()
            ),
            format!("{:?}, {:?}, {:?}", dx11.shape(), dx12.shape(), dx21.shape()),
        ));
    }
    let inv = b.x11_inverse()?;
    let left = &b.x21 * &inv;
    let right = &inv * &b.x12;
    let dx22 = dx21 * &right - &left * dx11 * &right + &left * dx12;
    let q = b.q;
    let mut dp = Matrix::zeros(b.n, b.m);
    dp.view_mut((0, 0), (q, q)).copy_from(dx11);
    dp.view_mut((0, q), (q, b.m - q)).copy_from(dx12);
    dp.view_mut((q, 0), (b.n - q, q)).copy_from(dx21);
    dp.view_mut((q, q), (b.n - q, b.m - q)).copy_from(&dx22);
    Ok(b.unpermute(&dp))
}

/// Ordered positions (0-based, original coordinates) of the free entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateChart {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub positions: Vec<(usize, usize)>,
}

/// Positions of the X11, X12 and X21 entries, each block column-major.
pub fn chart_positions(b: &BlockDecomposition) -> CoordinateChart {
    let q = b.q;
    let mut positions = Vec::with_capacity(b.dimension());
    let mut push_block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        for j in cols {
            for i in rows.clone() {
                positions.push((b.row_perm[i], b.col_perm[j]));
            }
        }
    };
    push_block(0..q, 0..q);
    push_block(0..q, q..b.m);
    push_block(q..b.n, 0..q);
    CoordinateChart {
        n: b.n,
        m: b.m,
        q,
        row_perm: b.row_perm.clone(),
        col_perm: b.col_perm.clone(),
        positions,
    }
}

impl CoordinateChart {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Chart coordinates of `x`, i.e. its entries at the chart positions.
    pub fn read(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.shape() != (self.n, self.m) {
            return Err(Error::shape(
                format!("{}x{}", self.n, self.m),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        Ok(self.positions.iter().map(|&(i, j)| x[(i, j)]).collect())
    }

    /// Blocks of `x` under this chart's permutations.
    pub fn blocks_of(&self, x: &Matrix) -> Result<BlockDecomposition> {
        BlockDecomposition::from_permutations(
            x,
            self.q,
            self.row_perm.clone(),
            self.col_perm.clone(),
        )
    }
}
