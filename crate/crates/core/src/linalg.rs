//! Small dense linear algebra for d×d contraction matrices.
//!
//! Only magnitudes of singular values are ever needed downstream, so they are
//! computed from the Gram matrix TᵀT (closed form for d ≤ 2, one-sided Jacobi
//! sweeps for larger d) rather than through a full SVD.

use smallvec::SmallVec;
use std::fmt;

use crate::error::LinalgError;

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 8;

/// Matrices with `|det| <= SINGULAR_DET` are rejected by [`singular_values`].
pub const SINGULAR_DET: f64 = 1e-14;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

pub(crate) type Entries = SmallVec<[f64; 9]>;

/// A real d×d matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    entries: Entries,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = self.entries.chunks(self.dim).collect();
        f.debug_tuple("Matrix").field(&rows).finish()
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries.
    pub fn new(dim: usize, entries: &[f64]) -> Result<Self, LinalgError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LinalgError::UnsupportedDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(LinalgError::EntryCount {
                dim,
                found: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Matrix {
            dim,
            entries: entries.iter().copied().collect(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `c·I` in dimension `dim`.
    pub fn scalar(dim: usize, c: f64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        let mut entries: Entries = SmallVec::from_elem(0.0, dim * dim);
        for i in 0..dim {
            entries[i * dim + i] = c;
        }
        Matrix { dim, entries }
    }

    pub fn diag(values: &[f64]) -> Self {
        let dim = values.len();
        let mut m = Self::scalar(dim, 0.0);
        for (i, v) in values.iter().enumerate() {
            m.entries[i * dim + i] = *v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.dim;
        let mut out = self.clone();
        for i in 0..d {
            for j in 0..d {
                out.entries[j * d + i] = self.entries[i * d + j];
            }
        }
        out
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..d).all(|j| i == j || self.entries[i * d + j] == 0.0))
    }

    /// True when the matrix equals `c·I` for some `c`.
    pub fn scalar_value(&self) -> Option<f64> {
        if !self.is_diagonal() {
            return None;
        }
        let c = self.entries[0];
        (0..self.dim)
            .all(|i| self.entries[i * self.dim + i] == c)
            .then_some(c)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn scale_in_place(&mut self, factor: f64) {
        for v in self.entries.iter_mut() {
            *v *= factor;
        }
    }

    /// `self · v` for a column vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        self.entries
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Determinant by LU with partial pivoting (closed form for d ≤ 2).
    pub fn det(&self) -> f64 {
        let d = self.dim;
        let e = &self.entries;
        match d {
            1 => e[0],
            2 => e[0] * e[3] - e[1] * e[2],
            _ => {
                let mut a = e.clone();
                let mut det = 1.0;
                for col in 0..d {
                    let pivot = (col..d)
                        .max_by(|&x, &y| a[x * d + col].abs().total_cmp(&a[y * d + col].abs()))
                        .unwrap();
                    let p = a[pivot * d + col];
                    if p == 0.0 {
                        return 0.0;
                    }
                    if pivot != col {
                        for j in 0..d {
                            a.swap(pivot * d + j, col * d + j);
                        }
                        det = -det;
                    }
                    det *= p;
                    for r in (col + 1)..d {
                        let f = a[r * d + col] / p;
                        if f != 0.0 {
                            for j in col..d {
                                a[r * d + j] -= f * a[col * d + j];
                            }
                        }
                    }
                }
                det
            }
        }
    }
}

/// Singular values sorted non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularValues(Vec<f64>);

impl SingularValues {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn largest(&self) -> f64 {
        self.0[0]
    }

    pub fn smallest(&self) -> f64 {
        *self.0.last().unwrap()
    }

    pub fn product(&self) -> f64 {
        self.0.iter().product()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_sorted(v: Vec<f64>) -> Self {
        SingularValues(v)
    }
}

/// Matrix product `a · b`.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.dim != b.dim {
        return Err(LinalgError::DimensionMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    Ok(mul_unchecked(a, b))
}

pub(crate) fn mul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let d = a.dim;
    let mut out: Entries = SmallVec::from_elem(0.0, d * d);
    for i in 0..d {
        for k in 0..d {
            let aik = a.entries[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b.entries[k * d + j];
            }
        }
    }
    Matrix {
        dim: d,
        entries: out,
    }
}

/// Singular values of a nonsingular matrix, descending.
pub fn singular_values(t: &Matrix) -> Result<SingularValues, LinalgError> {
    let det = t.det();
    if det.abs() <= SINGULAR_DET {
        return Err(LinalgError::Singular { det });
    }
    Ok(SingularValues(raw_singular_values(t)))
}

/// Largest singular value. Defined for every matrix, singular or not.
pub fn op_norm(t: &Matrix) -> f64 {
    raw_singular_values(t)[0]
}

/// Singular values without the nonsingularity guard.
pub(crate) fn raw_singular_values(t: &Matrix) -> Vec<f64> {
    let e = &t.entries;
    match t.dim {
        1 => vec![e[0].abs()],
        2 => {
            let (a, b, c, d) = (e[0], e[1], e[2], e[3]);
            // Gram matrix [[p, q], [q, r]].
            let p = a * a + c * c;
            let q = a * b + c * d;
            let r = b * b + d * d;
            let half_gap = 0.5 * (p - r);
            let rad = half_gap.hypot(q);
            let big = (0.5 * (p + r) + rad).max(0.0).sqrt();
            let det = (a * d - b * c).abs();
            // σ₂ = |det|/σ₁ keeps full relative accuracy for the small value.
            let small = if big > 0.0 { (det / big).min(big) } else { 0.0 };
            vec![big, small]
        }
        _ => jacobi_singular_values(t),
    }
}

/// One-sided (Hestenes) Jacobi: orthogonalises the columns of T, which is
/// the cyclic Jacobi eigen-iteration on TᵀT carried out implicitly.
fn jacobi_singular_values(t: &Matrix) -> Vec<f64> {
    let d = t.dim;
    // Column-major working copy.
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| t.entries[i * d + j]).collect())
        .collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let tan = if zeta == 0.0 { 1.0 } else { tan };
                let cos = 1.0 / (1.0 + tan * tan).sqrt();
                let sin = cos * tan;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (x0, y0) = (*x, *y);
                    *x = cos * x0 - sin * y0;
                    *y = sin * x0 + cos * y0;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn diagonal_product() {
        let a = Matrix::diag(&[1.0 / 9.0, 1.0 / 3.0]);
        let p = mat_mul(&a, &a).unwrap();
        assert!(close(p.get(0, 0), 1.0 / 81.0, 1e-15));
        assert!(close(p.get(1, 1), 1.0 / 9.0, 1e-15));
        assert_eq!(p.get(0, 1), 0.0);
    }

    #[test]
    fn identity_is_neutral() {
        let m = Matrix::new(2, &[0.3, -0.1, 0.2, 0.4]).unwrap();
        assert_eq!(mat_mul(&Matrix::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn shear_product_by_hand() {
        let a = Matrix::new(2, &[0.5, 0.5, 0.0, 0.5]).unwrap();
        let b = Matrix::new(2, &[0.5, 0.0, 0.5, 0.5]).unwrap();
        let p = mat_mul(&a, &b).unwrap();
        for (got, want) in p.entries().iter().zip([0.5, 0.25, 0.25, 0.25]) {
            assert!(close(*got, want, 1e-15));
        }
    }

    #[test]
    fn mismatched_dimensions() {
        let a = Matrix::identity(2);
        let b = Matrix::identity(3);
        assert!(matches!(
            mat_mul(&a, &b),
            Err(LinalgError::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn singular_values_examples() {
        let sv = singular_values(&Matrix::diag(&[1.0 / 9.0, 1.0 / 3.0])).unwrap();
        assert!(close(sv.values()[0], 1.0 / 3.0, 1e-15));
        assert!(close(sv.values()[1], 1.0 / 9.0, 1e-15));

        let sv = singular_values(&Matrix::scalar(2, 0.5)).unwrap();
        assert!(close(sv.values()[0], 0.5, 1e-15) && close(sv.values()[1], 0.5, 1e-15));

        // TᵀT = [[.25,.25],[.25,.5]]: λ = (0.75 ± sqrt(0.0625 + 0.25))/2.
        let lam_hi: f64 = (0.75 + (0.0625_f64 + 0.25).sqrt()) / 2.0;
        let lam_lo: f64 = (0.75 - (0.0625_f64 + 0.25).sqrt()) / 2.0;
        let t = Matrix::new(2, &[0.5, 0.5, 0.0, 0.5]).unwrap();
        let sv = singular_values(&t).unwrap();
        assert!(close(sv.values()[0], lam_hi.sqrt(), 1e-12));
        assert!(close(sv.values()[1], lam_lo.sqrt(), 1e-12));
        assert!(close(sv.values()[0], 0.809017, 1e-6));
        assert!(close(sv.values()[1], 0.309017, 1e-6));
        assert!(close(op_norm(&t), 0.809017, 1e-6));
    }

    #[test]
    fn op_norm_examples() {
        assert!(close(
            op_norm(&Matrix::diag(&[1.0 / 9.0, 1.0 / 3.0])),
            1.0 / 3.0,
            1e-15
        ));
        assert!(close(op_norm(&Matrix::scalar(2, 0.5)), 0.5, 1e-15));
    }

    #[test]
    fn rejects_singular() {
        let t = Matrix::new(2, &[0.0, 0.0, 0.0, 0.5]).unwrap();
        assert!(matches!(
            singular_values(&t),
            Err(LinalgError::Singular { .. })
        ));
        // The norm is still defined.
        assert!(close(op_norm(&t), 0.5, 1e-15));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Matrix::new(0, &[]).is_err());
        assert!(Matrix::new(9, &[0.0; 81]).is_err());
        assert!(Matrix::new(2, &[1.0, 2.0, 3.0]).is_err());
        assert!(Matrix::new(1, &[f64::NAN]).is_err());
    }

    #[test]
    fn jacobi_matches_diagonal_and_det() {
        let t = Matrix::new(3, &[0.2, 0.1, 0.0, -0.05, 0.3, 0.02, 0.01, 0.0, 0.4]).unwrap();
        let sv = singular_values(&t).unwrap();
        assert!(sv.values().windows(2).all(|w| w[0] >= w[1]));
        assert!(((sv.product() - t.det().abs()) / t.det().abs()).abs() < 1e-10);

        let d = Matrix::diag(&[0.1, 0.5, 0.3, 0.2]);
        let sv = singular_values(&d).unwrap();
        for (got, want) in sv.values().iter().zip([0.5, 0.3, 0.2, 0.1]) {
            assert!(close(*got, want, 1e-14));
        }
    }

    #[test]
    fn determinant_by_lu() {
        let t = Matrix::new(3, &[2.0, 0.0, 1.0, 1.0, 3.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        // 2(3-2) - 0 + 1(1-3) = 0
        assert!(close(t.det(), 0.0, 1e-15));
        let t = Matrix::new(3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(close(t.det(), -2.0, 1e-15));
    }
}
