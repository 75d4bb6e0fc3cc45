//! Cyclic Jacobi eigen-decomposition for small complex Hermitian matrices.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;

const MAX_SWEEPS: usize = 64;

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors, stored
/// as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct HermitianEigen<const N: usize> {
    pub values: SVector<f64, N>,
    pub vectors: SMatrix<Complex64, N, N>,
}

impl<const N: usize> HermitianEigen<N> {
    /// Rebuilds `V diag(f(λ)) V†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SMatrix<Complex64, N, N> {
        let mut scaled = self.vectors;
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::from(f(self.values[j]));
        }
        scaled * self.vectors.adjoint()
    }

    pub fn max_value(&self) -> f64 {
        self.values[N - 1]
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }
}

fn off_diagonal_norm<const N: usize>(a: &SMatrix<Complex64, N, N>) -> f64 {
    let mut sum = 0.0;
    for i in 0..N {
        for j in 0..N {
            if i != j {
                sum += a[(i, j)].norm_sqr();
            }
        }
    }
    sum.sqrt()
}

/// Diagonalizes a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Only the Hermitian part of `m` is used. Sweeps stop once the off-diagonal
/// Frobenius norm drops below `1e-14 × ‖m‖_F` (absolute floor 1e-300).
pub fn hermitian_eigen<const N: usize>(m: &SMatrix<Complex64, N, N>) -> HermitianEigen<N> {
    let mut a = (m + m.adjoint()) * Complex64::from(0.5);
    let mut v = SMatrix::<Complex64, N, N>::identity();
    let scale = a.norm().max(1e-300);
    let threshold = 1e-14 * scale;

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                // Phase that makes the (p, q) element real and positive.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // J = W·R with W = diag(.., e^{-iφ} at q, ..) and R the real
                // rotation annihilating the real symmetric (p, q) entry.
                let mut j = SMatrix::<Complex64, N, N>::identity();
                let w = phase.conj();
                j[(p, p)] = Complex64::from(c);
                j[(p, q)] = Complex64::from(s);
                j[(q, p)] = w * (-s);
                j[(q, q)] = w * c;

                a = j.adjoint() * a * j;
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                v *= j;
            }
        }
    }

    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let mut values = SVector::<f64, N>::zeros();
    let mut vectors = SMatrix::<Complex64, N, N>::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)].re;
        vectors.set_column(dst, &v.column(src));
    }
    HermitianEigen { values, vectors }
}

/// Principal square root of a positive semidefinite Hermitian matrix;
/// negative round-off eigenvalues are clipped to zero.
pub fn psd_sqrt<const N: usize>(m: &SMatrix<Complex64, N, N>) -> SMatrix<Complex64, N, N> {
    hermitian_eigen(m).reconstruct_with(|x| x.max(0.0).sqrt())
}
