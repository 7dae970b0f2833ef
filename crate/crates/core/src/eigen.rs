//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! The output basis is canonical: eigenvalues ascending, each eigenvector
//! signed so its largest-magnitude entry is positive, and columns sharing an
//! eigenvalue ordered lexicographically. Two runs on the same Laplacian
//! therefore produce the same basis, which the trained weights depend on.

use serde::{Deserialize, Serialize};

use crate::error::{GftnnError, Result};
use crate::graph::Laplacian;
use crate::linalg::Matrix;

const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Eigenvalues closer than this are treated as one eigenspace.
const TIE_TOLERANCE: f64 = 1e-8;
/// Components within this of the column maximum count as tied for sign fixing.
const MAGNITUDE_TIE: f64 = 1e-12;

/// Eigenvalues (ascending) and orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Row-major `N x N`; column `l` is the eigenvector of `eigenvalues[l]`.
    #[serde(with = "matrix_serde")]
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Component `i` of eigenvector `l`, i.e. `u_l(i)`.
    pub fn component(&self, l: usize, i: usize) -> f64 {
        self.eigenvectors[(i, l)]
    }

    /// Largest `‖L·u_l − λ_l·u_l‖∞` over all eigenpairs.
    pub fn max_residual(&self, matrix: &Matrix) -> f64 {
        let n = self.len();
        let lu = matrix.matmul(&self.eigenvectors);
        let mut worst = 0.0_f64;
        for l in 0..n {
            for i in 0..n {
                let r = lu[(i, l)] - self.eigenvalues[l] * self.eigenvectors[(i, l)];
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// Largest deviation of `UᵀU` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.eigenvectors.t_matmul(&self.eigenvectors);
        gram.max_abs_diff(&Matrix::identity(self.len()))
    }
}

/// Eigendecomposition of a graph Laplacian.
pub fn eigendecompose(laplacian: &Laplacian) -> Result<Spectrum> {
    eigendecompose_symmetric(&laplacian.matrix)
}

/// Eigendecomposition of any real symmetric matrix.
pub fn eigendecompose_symmetric(matrix: &Matrix) -> Result<Spectrum> {
    if !matrix.is_square() || matrix.rows() == 0 {
        return Err(GftnnError::Contract(format!(
            "eigendecomposition needs a non-empty square matrix, got {}x{}",
            matrix.rows(),
            matrix.cols()
        )));
    }
    let asymmetry = matrix.asymmetry();
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(GftnnError::Contract(format!(
            "matrix is not symmetric (max |L - Lᵀ| = {asymmetry:e})"
        )));
    }
    let (values, vectors) = jacobi(matrix)?;
    Ok(canonicalize(values, vectors))
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    sum.sqrt()
}

fn jacobi(matrix: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = matrix.rows();
    let mut a = matrix.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let tolerance = OFF_DIAGONAL_TOLERANCE * matrix.frobenius_norm().max(1.0);

    // One extra sweep after the threshold is met: eigenvector error scales
    // like off-norm / spectral gap, and long paths have gaps near 1e-3.
    let mut converged = false;
    let mut polished = off_diagonal_norm(&a) == 0.0;
    for _ in 0..MAX_SWEEPS {
        if polished {
            break;
        }
        if converged {
            polished = true;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = converged || off_diagonal_norm(&a) < tolerance;
    }
    if !converged && !polished {
        return Err(GftnnError::Numeric {
            layer: format!("jacobi eigensolver ({MAX_SWEEPS} sweeps exhausted)"),
        });
    }
    let values = (0..n).map(|i| a[(i, i)]).collect();
    Ok((values, v))
}

fn canonicalize(values: Vec<f64>, vectors: Matrix) -> Spectrum {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut columns: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| {
            let mut col = vectors.column(j);
            fix_sign(&mut col);
            col
        })
        .collect();
    let mut sorted_values: Vec<f64> = order.iter().map(|&j| values[j]).collect();

    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted_values[end] - sorted_values[end - 1] < TIE_TOLERANCE {
            end += 1;
        }
        if end - start > 1 {
            columns[start..end].sort_by(|a, b| lexicographic(a, b));
            sorted_values[start..end].sort_by(f64::total_cmp);
        }
        start = end;
    }

    let eigenvectors = Matrix::from_fn(n, n, |i, l| columns[l][i]);
    Spectrum {
        eigenvalues: sorted_values,
        eigenvectors,
    }
}

fn fix_sign(col: &mut [f64]) {
    let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(pivot) = col.iter().position(|x| x.abs() >= max - MAGNITUDE_TIE) {
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

pub(crate) mod matrix_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Matrix;

    #[derive(Serialize, Deserialize)]
    struct Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Dense {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let dense = Dense::deserialize(d)?;
        if dense.data.len() != dense.rows * dense.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                dense.data.len(),
                dense.rows,
                dense.cols
            )));
        }
        Ok(Matrix::from_row_major(dense.rows, dense.cols, dense.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_line_graph, build_spider_graph, laplacian};

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() < tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn path_of_three() {
        // Characteristic polynomial of the P3 Laplacian: -λ(λ-1)(λ-3).
        let s = eigendecompose(&laplacian(&build_line_graph(3).unwrap())).unwrap();
        assert_close(&s.eigenvalues, &[0.0, 1.0, 3.0], 1e-12);
        let c = 1.0 / 3f64.sqrt();
        assert_close(&s.eigenvectors.column(0), &[c, c, c], 1e-12);
    }

    #[test]
    fn star_of_nine() {
        let l = laplacian(&build_spider_graph(9, 0).unwrap());
        let s = eigendecompose(&l).unwrap();
        let mut expected = vec![0.0];
        expected.extend([1.0; 7]);
        expected.push(9.0);
        assert_close(&s.eigenvalues, &expected, 1e-10);
        assert!(s.max_residual(&l.matrix) < 1e-10);
        assert!(s.orthonormality_error() < 1e-12);
    }

    #[test]
    fn one_by_one() {
        let s = eigendecompose_symmetric(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0]);
        assert_eq!(s.eigenvectors.as_slice(), &[1.0]);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = Matrix::from_row_major(2, 2, vec![1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            eigendecompose_symmetric(&m),
            Err(GftnnError::Contract(_))
        ));
    }

    #[test]
    fn canonical_signs_and_determinism() {
        let l = laplacian(&build_line_graph(75).unwrap());
        let a = eigendecompose(&l).unwrap();
        let b = eigendecompose(&l).unwrap();
        assert_eq!(a, b);
        for j in 0..a.len() {
            let col = a.eigenvectors.column(j);
            let max = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let first = col.iter().find(|x| x.abs() >= max - MAGNITUDE_TIE).unwrap();
            assert!(*first > 0.0);
        }
        assert!(a.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.max_residual(&l.matrix) < 1e-9);
        assert!(a.orthonormality_error() < 1e-9);
    }

    #[test]
    fn path_spectrum_matches_closed_form() {
        // Path Laplacian eigenvalues: 2 - 2 cos(πk/n).
        let n = 12;
        let s = eigendecompose(&laplacian(&build_line_graph(n).unwrap())).unwrap();
        let expected: Vec<f64> = (0..n)
            .map(|k| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        assert_close(&s.eigenvalues, &expected, 1e-10);
    }
}
