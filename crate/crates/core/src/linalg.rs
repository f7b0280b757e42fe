//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Relative symmetry tolerance: `max |X - X'| <= 1e-9 * (1 + max |X|)`.
pub const SYMMETRY_RTOL: f64 = 1e-9;

pub fn max_abs(x: &Mat) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(x: &Mat) -> bool {
    if !x.is_square() {
        return false;
    }
    let tol = SYMMETRY_RTOL * (1.0 + max_abs(x));
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (x[(i, j)] - x[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(x: &Mat) -> Mat {
    (x + x.transpose()) * 0.5
}

/// Checks symmetry within tolerance and returns the symmetrized matrix.
pub fn checked_symmetric(x: &Mat, name: &str) -> Result<Mat> {
    if !is_symmetric(x) {
        return Err(Error::NotSymmetric(name.to_string()));
    }
    Ok(symmetrize(x))
}

pub fn all_finite(x: &Mat) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Eigenvalues of a symmetric matrix (symmetrized first).
pub fn sym_eigenvalues(x: &Mat) -> Vec<f64> {
    if x.nrows() == 0 {
        return Vec::new();
    }
    let e = SymmetricEigen::new(symmetrize(x));
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for an empty matrix.
pub fn min_eig(x: &Mat) -> f64 {
    sym_eigenvalues(x).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eig(x: &Mat) -> f64 {
    sym_eigenvalues(x).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(x: &Mat) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, v| a.max(*v))
}

pub fn is_zero(x: &Mat) -> bool {
    x.iter().all(|v| *v == 0.0)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(x: &Mat) -> Option<Mat> {
    if x.nrows() == 0 {
        return Some(Mat::zeros(0, 0));
    }
    symmetrize(x).cholesky().map(|c| symmetrize(&c.inverse()))
}

/// General inverse through LU; `None` when numerically singular.
pub fn lu_inverse(x: &Mat) -> Option<Mat> {
    if x.nrows() == 0 {
        return Some(Mat::zeros(0, 0));
    }
    let inv = x.clone().lu().try_inverse()?;
    if all_finite(&inv) {
        Some(inv)
    } else {
        None
    }
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Dense assembly from a grid of blocks; `None` entries are zero blocks.
/// Row heights and column widths are given explicitly.
pub fn assemble(heights: &[usize], widths: &[usize], blocks: &[Vec<Option<Mat>>]) -> Mat {
    let rows: usize = heights.iter().sum();
    let cols: usize = widths.iter().sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for (bi, h) in heights.iter().enumerate() {
        let mut c = 0;
        for (bj, w) in widths.iter().enumerate() {
            if let Some(Some(b)) = blocks.get(bi).map(|row| row.get(bj).cloned().flatten()) {
                debug_assert_eq!((b.nrows(), b.ncols()), (*h, *w));
                out.view_mut((r, c), (*h, *w)).copy_from(&b);
            }
            c += w;
        }
        r += h;
    }
    out
}

/// Orthonormal basis of the null space of `a` (columns), using a relative
/// singular-value cutoff.
pub fn null_space(a: &Mat, rtol: f64) -> Mat {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Mat::identity(n, n);
    }
    // Pad to at least n rows so the SVD yields a full right basis.
    let padded = if a.nrows() < n {
        let mut p = Mat::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    let cutoff = rtol * smax.max(1.0);
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    let mut basis = Mat::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        for r in 0..n {
            basis[(r, c)] = v_t[(i, r)];
        }
    }
    basis
}

/// Moore–Penrose pseudo-inverse.
pub fn pinv(a: &Mat) -> Mat {
    if a.is_empty() {
        return Mat::zeros(a.ncols(), a.nrows());
    }
    a.clone()
        .pseudo_inverse(1e-12 * spectral_norm(a).max(1e-300))
        .unwrap_or_else(|_| Mat::zeros(a.ncols(), a.nrows()))
}

pub fn frob(x: &Mat) -> f64 {
    x.norm()
}

/// Builds a matrix from nested rows; all rows must share one length.
pub fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map(|v| v.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("`{name}` has ragged rows")));
    }
    let m = Mat::from_fn(r, c, |i, j| rows[i][j]);
    if !all_finite(&m) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serde adapter storing a matrix as nested row arrays.
pub mod rows {
    use super::Mat;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows, "matrix").map_err(D::Error::custom)
    }
}

/// Serde adapter for optional matrices.
pub mod opt_rows {
    use super::Mat;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(super::to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| super::from_rows(&r, "matrix").map_err(D::Error::custom)).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetry_tolerance_is_relative() {
        let mut x = Mat::from_row_slice(2, 2, &[1e6, 2.0, 2.0, 1.0]);
        x[(0, 1)] += 1e-4;
        assert!(is_symmetric(&x));
        x[(0, 1)] += 1e-2;
        assert!(!is_symmetric(&x));
    }

    #[test]
    fn null_space_of_row() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn assemble_places_blocks() {
        let one = Mat::from_element(1, 1, 1.0);
        let m = assemble(&[1, 1], &[1, 1], &[vec![Some(one.clone()), None], vec![None, Some(one * 2.0)]]);
        assert_eq!(m, Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }
}
