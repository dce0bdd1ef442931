//! Dense Hermitian eigendecomposition and small matrix helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigenpairs of a Hermitian matrix sorted by decreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = h.symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(m.nrows(), n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Relative deviation from Hermitian symmetry, `max|a - a^H| / max(1, max|a|)`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
            scale = scale.max(m[(i, j)].norm());
        }
    }
    worst / scale.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_descending_and_reconstructs() {
        let m = CMatrix::from_fn(4, 4, |i, j| {
            let re = (i + 2 * j) as f64;
            let im = if i == j { 0.0 } else { (i as f64) - (j as f64) };
            Complex64::new(re + (j + 2 * i) as f64, im)
        });
        let eig = HermitianEigen::new(&m);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let d = CMatrix::from_diagonal(&CVector::from_iterator(
            4,
            eig.values.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        let back = &eig.vectors * d * eig.vectors.adjoint();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        assert!((back - h).norm() < 1e-10);
    }
}
