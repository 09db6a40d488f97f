//! Skyline (profile) Cholesky factorization for the symmetric positive
//! definite five-point systems assembled on a [`Grid`].
//!
//! Row `i` of the lower factor is stored from its first structural nonzero
//! column up to the diagonal; Cholesky fill stays inside that envelope.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone)]
pub struct SkylineCholesky<T> {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<T>,
}

/// A symmetric matrix on the grid graph: a diagonal plus one weight per
/// interior face.
#[derive(Debug, Clone)]
pub struct GridMatrix<T> {
    pub diag: Vec<T>,
    /// `(k, l, a_kl)` with `k < l`.
    pub faces: Vec<(usize, usize, T)>,
}

impl<T: Scalar> GridMatrix<T> {
    /// `shift·I + h²(−Δ_h)` for the Dirichlet Laplacian.
    pub fn shifted_dirichlet(grid: &Grid<T>, shift: T) -> Self {
        let diag = (0..grid.len()).map(|k| shift + T::lit(4.0 + grid.boundary_faces(k) as f64)).collect();
        let faces = grid.interior_faces().map(|(k, l)| (k, l, -T::one())).collect();
        Self { diag, faces }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y: Vec<T> = self.diag.iter().zip(x).map(|(&d, &xi)| d * xi).collect();
        for &(k, l, a) in &self.faces {
            y[k] = y[k] + a * x[l];
            y[l] = y[l] + a * x[k];
        }
        y
    }

    pub fn factor(&self) -> Result<SkylineCholesky<T>> {
        SkylineCholesky::factor(self)
    }
}

impl<T: Scalar> SkylineCholesky<T> {
    pub fn factor(matrix: &GridMatrix<T>) -> Result<Self> {
        let n = matrix.diag.len();
        let mut first: Vec<usize> = (0..n).collect();
        for &(k, l, _) in &matrix.faces {
            first[l] = first[l].min(k);
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        let mut data = vec![T::zero(); total];
        for i in 0..n {
            data[offset[i] + i - first[i]] = matrix.diag[i];
        }
        for &(k, l, a) in &matrix.faces {
            data[offset[l] + k - first[l]] = a;
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = offset[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let s = if k0 < j {
                    let (a, b) = if j == i {
                        let r = &data[row_i + k0 - fi..row_i + j - fi];
                        (r, r)
                    } else {
                        (&data[row_i + k0 - fi..row_i + j - fi], &data[offset[j] + k0 - fj..offset[j] + j - fj])
                    };
                    dot(a, b)
                } else {
                    T::zero()
                };
                let val = data[row_i + j - fi] - s;
                if j == i {
                    if !(val > T::zero()) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: val.to_f64_lossy() });
                    }
                    data[row_i + j - fi] = val.sqrt();
                } else {
                    let djj = data[offset[j] + j - fj];
                    data[row_i + j - fi] = val / djj;
                }
            }
        }
        Ok(Self { first, offset, data })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    fn row(&self, i: usize) -> &[T] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.len();
        for i in 0..n {
            let row = self.row(i);
            let fi = self.first[i];
            let s = dot(&row[..i - fi], &x[fi..i]);
            x[i] = (x[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let row = self.row(i);
            let fi = self.first[i];
            x[i] = x[i] / row[i - fi];
            let xi = x[i];
            for (xk, &l) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                *xk = *xk - l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Factored system with one step of iterative refinement on every solve.
#[derive(Debug, Clone)]
pub struct SpdSolver<T> {
    matrix: GridMatrix<T>,
    factor: SkylineCholesky<T>,
}

impl<T: Scalar> SpdSolver<T> {
    pub fn new(matrix: GridMatrix<T>) -> Result<Self> {
        let factor = matrix.factor()?;
        Ok(Self { matrix, factor })
    }

    pub fn matrix(&self) -> &GridMatrix<T> {
        &self.matrix
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = self.factor.solve(b);
        let ax = self.matrix.apply(&x);
        let mut r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        self.factor.solve_in_place(&mut r);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi = *xi + *ri;
        }
        x
    }

    pub fn solve_field(&self, b: &Field<T>) -> Field<T> {
        Field::new(self.solve(b.values()))
    }
}
