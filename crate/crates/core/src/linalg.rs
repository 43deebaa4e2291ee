//! Small dense helpers over row-major `f64` buffers.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer shape");
        Self { rows, cols, data }
    }

    /// First `rows` rows of the `cols × cols` identity.
    pub fn identity_rows(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec operand length");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "transposed matvec operand length");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, self.row(i), &mut out);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_vec(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self::from_vec(m.nrows(), m.ncols(), data)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.to_nalgebra().singular_values().iter().copied().fold(0.0, f64::max)
    }

    /// `‖I − M·Mᵀ‖_F²`, the row-orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.rows {
            for j in 0..self.rows {
                let g = dot(self.row(i), self.row(j));
                let target = if i == j { 1.0 } else { 0.0 };
                total += (target - g) * (target - g);
            }
        }
        total
    }

    /// Gradient of [`Self::orthonormality_defect`]: `−4·(I − M·Mᵀ)·M`.
    pub fn orthonormality_defect_grad(&self) -> Matrix {
        let n = self.rows;
        let mut residual = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                residual[i * n + j] = target - dot(self.row(i), self.row(j));
            }
        }
        let mut grad = Matrix::zeros(n, self.cols);
        for i in 0..n {
            let out = grad.row_mut(i);
            for j in 0..n {
                axpy(-4.0 * residual[i * n + j], self.row(j), out);
            }
        }
        grad
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a·x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Seeded `rows × cols` matrix with orthonormal rows (`rows ≤ cols`), from the
/// thin QR factorization of a Gaussian `cols × rows` matrix.
pub fn orthonormal_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(rows <= cols, "cannot have more orthonormal rows than columns");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = DMatrix::<f64>::from_fn(cols, rows, |_, _| StandardNormal.sample(&mut rng));
    let qr = gaussian.qr();
    let mut q = qr.q();
    // Sign-fix with R's diagonal so the factorization is unique.
    let r = qr.r();
    for j in 0..rows {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Matrix::from_nalgebra(&q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_rows_have_zero_defect() {
        let m = orthonormal_rows(16, 256, 5);
        assert_eq!((m.rows, m.cols), (16, 256));
        assert!(m.orthonormality_defect() < 1e-20);
        assert_eq!(m, orthonormal_rows(16, 256, 5));
        assert_ne!(m, orthonormal_rows(16, 256, 6));
    }

    #[test]
    fn defect_of_scaled_identity_rows() {
        assert_eq!(Matrix::identity_rows(16, 256).orthonormality_defect(), 0.0);
        assert_eq!(
            Matrix::identity_rows(16, 256).scaled(2.0).orthonormality_defect(),
            144.0
        );
        assert_eq!(Matrix::zeros(16, 256).orthonormality_defect(), 16.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(4.0) - 0.982_013_790_037_908_5).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_of_identity_rows() {
        assert!((Matrix::identity_rows(4, 9).spectral_norm() - 1.0).abs() < 1e-12);
    }
}
