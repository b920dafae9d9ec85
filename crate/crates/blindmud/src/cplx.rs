//! Small dense complex linear algebra for the receiver core.
//!
//! Everything the detector needs is covariance-shaped: accumulate `y y*`
//! outer products over spread units, invert the resulting Hermitian matrix,
//! and evaluate quadratic forms `c* A⁻¹ c`. Matrices here are tiny (the
//! spreading factor, or the number of decoded users), so we use direct
//! Cholesky factorization rather than pulling in a LAPACK binding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix numerically singular (pivot {pivot:.3e} at index {index})")]
    Singular { pivot: f64, index: usize },
}

/// Conjugated inner product `Σ conj(a_i)·b_i` with Neumaier compensation.
///
/// Compensated summation keeps the reductions bit-stable regardless of how
/// the surrounding simulation batches its work, which the regression tests
/// rely on.
pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum_re = NeumaierSum::default();
    let mut sum_im = NeumaierSum::default();
    for (x, y) in a.iter().zip(b) {
        let p = x.conj() * y;
        sum_re.add(p.re);
        sum_im.add(p.im);
    }
    Complex64::new(sum_re.value(), sum_im.value())
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sq(v: &[Complex64]) -> f64 {
    let mut s = NeumaierSum::default();
    for x in v {
        s.add(x.norm_sqr());
    }
    s.value()
}

#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Dense Hermitian matrix in row-major order.
///
/// Construction paths (outer-product accumulation, inversion) enforce exact
/// conjugate symmetry of the stored entries and real diagonals, so the rest
/// of the receiver can take both for granted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex64::new(scale, 0.0);
        }
        m
    }

    /// Builds a matrix from arbitrary entries, forcing Hermitian symmetry by
    /// averaging `A` with `A*` and zeroing diagonal imaginary parts.
    pub fn from_entries(dim: usize, entries: Vec<Complex64>) -> Result<Self, LinalgError> {
        if entries.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let mut m = Self { dim, data: entries };
        m.hermitianize();
        Ok(m)
    }

    fn hermitianize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            self.data[i * n + i] = Complex64::new(self.data[i * n + i].re, 0.0);
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i].conj());
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v.conj();
        if i == j {
            self.data[i * self.dim + i] = Complex64::new(v.re, 0.0);
        }
    }

    /// Accumulates the rank-one outer product: `self += y y*`.
    ///
    /// Only the upper triangle is computed; the lower is mirrored, so the
    /// result is Hermitian by construction.
    pub fn outer_accumulate(&mut self, y: &[Complex64]) -> Result<(), LinalgError> {
        if y.len() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        let n = self.dim;
        for i in 0..n {
            let di = self.data[i * n + i].re + y[i].norm_sqr();
            self.data[i * n + i] = Complex64::new(di, 0.0);
            for j in (i + 1)..n {
                let v = self.data[i * n + j] + y[i] * y[j].conj();
                self.data[i * n + j] = v;
                self.data[j * n + i] = v.conj();
            }
        }
        Ok(())
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        for i in 0..self.dim {
            let d = self.data[i * self.dim + i].re + s;
            self.data[i * self.dim + i] = Complex64::new(d, 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn trace_real(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i].re).sum()
    }

    /// Diagonal loading used when inverting sample covariances: small enough
    /// to leave well-conditioned matrices untouched, large enough to keep a
    /// rank-deficient accumulation invertible.
    pub fn default_ridge(&self) -> f64 {
        1e-6 * self.trace_real() / self.dim as f64
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        (0..n)
            .map(|i| {
                let mut acc = Complex64::ZERO;
                for j in 0..n {
                    acc += self.data[i * n + j] * x[j];
                }
                acc
            })
            .collect()
    }

    /// Real quadratic form `Re(c* A c)`.
    ///
    /// The raw product of a Hermitian matrix has a vanishing imaginary part;
    /// a residual above the rounding floor means an upstream matrix was
    /// corrupted, so it is asserted rather than silently dropped.
    pub fn quadratic_form(&self, c: &[Complex64]) -> f64 {
        let v = self.matvec(c);
        let q = dot_conj(c, &v);
        let scale = f64::max(1.0, self.max_abs_entry() * norm_sq(c));
        assert!(
            q.im.abs() <= 1e-9 * scale,
            "quadratic form imaginary residue {} exceeds tolerance",
            q.im
        );
        q.re
    }

    /// Cholesky factor `L` (lower triangular, `A = L L*`).
    ///
    /// Fails with `Singular` when a pivot falls below the positive-definite
    /// threshold, which is the receiver's signal that a covariance or Gram
    /// matrix has degenerated.
    fn cholesky(&self) -> Result<Vec<Complex64>, LinalgError> {
        let n = self.dim;
        let mut l = vec![Complex64::ZERO; n * n];
        let max_diag = (0..n)
            .map(|i| self.data[i * n + i].re)
            .fold(0.0_f64, f64::max);
        let tol = max_diag * 1e-14;
        for j in 0..n {
            let mut d = self.data[j * n + j].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if d <= tol {
                return Err(LinalgError::Singular { pivot: d, index: j });
            }
            let root = d.sqrt();
            l[j * n + j] = Complex64::new(root, 0.0);
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / root;
            }
        }
        Ok(l)
    }

    /// Returns `(self + ridge·I)⁻¹` as a Hermitian matrix.
    pub fn inverse(&self, ridge: f64) -> Result<HermitianMatrix, LinalgError> {
        let n = self.dim;
        let mut loaded = self.clone();
        if ridge != 0.0 {
            loaded.add_scaled_identity(ridge);
        }
        let l = loaded.cholesky()?;

        // Invert the lower-triangular factor in place: linv[j][j] = 1/l[j][j],
        // then back-substitute down each column.
        let mut linv = vec![Complex64::ZERO; n * n];
        for j in 0..n {
            linv[j * n + j] = Complex64::new(1.0 / l[j * n + j].re, 0.0);
            for i in (j + 1)..n {
                let mut s = Complex64::ZERO;
                for k in j..i {
                    s += l[i * n + k] * linv[k * n + j];
                }
                linv[i * n + j] = -s / l[i * n + i].re;
            }
        }

        // A⁻¹ = L⁻* L⁻¹; fill the upper triangle and mirror.
        let mut out = HermitianMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut s = Complex64::ZERO;
                for k in j..n {
                    s += linv[k * n + i].conj() * linv[k * n + j];
                }
                if i == j {
                    out.data[i * n + i] = Complex64::new(s.re, 0.0);
                } else {
                    out.data[i * n + j] = s;
                    out.data[j * n + i] = s.conj();
                }
            }
        }
        Ok(out)
    }

    /// Solves `(self + ridge·I) x = b` by Cholesky forward/back substitution.
    pub fn solve(&self, b: &[Complex64], ridge: f64) -> Result<Vec<Complex64>, LinalgError> {
        if b.len() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        let n = self.dim;
        let mut loaded = self.clone();
        if ridge != 0.0 {
            loaded.add_scaled_identity(ridge);
        }
        let l = loaded.cholesky()?;
        // L z = b
        let mut z = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let t = l[i * n + k] * z[k];
                z[i] -= t;
            }
            z[i] /= l[i * n + i].re;
        }
        // L* x = z
        let mut x = z;
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let t = l[k * n + i].conj() * x[k];
                x[i] -= t;
            }
            x[i] /= l[i * n + i].re;
        }
        Ok(x)
    }

    /// Max absolute entry of `self·other − I`; the inversion quality gauge.
    pub fn product_identity_error(&self, other: &HermitianMatrix) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex64::ZERO;
                for k in 0..n {
                    s += self.data[i * n + k] * other.data[k * n + j];
                }
                if i == j {
                    s -= Complex64::new(1.0, 0.0);
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    pub fn frobenius_distance(&self, other: &HermitianMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation from conjugate symmetry; zero for any matrix built
    /// through the constructors in this module.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        worst
    }
}

/// Compensated mean of outer products: `Σ y_i y_i* / count`.
///
/// This is the sample-covariance builder. Accumulation order does not affect
/// the result beyond the compensated-summation floor.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    dim: usize,
    re: Vec<NeumaierSum>,
    im: Vec<NeumaierSum>,
    count: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            re: vec![NeumaierSum::default(); dim * dim],
            im: vec![NeumaierSum::default(); dim * dim],
            count: 0,
        }
    }

    pub fn add(&mut self, y: &[Complex64]) {
        debug_assert_eq!(y.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            self.re[i * n + i].add(y[i].norm_sqr());
            for j in (i + 1)..n {
                let p = y[i] * y[j].conj();
                self.re[i * n + j].add(p.re);
                self.im[i * n + j].add(p.im);
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the accumulated outer products.
    pub fn mean(&self) -> HermitianMatrix {
        let n = self.dim;
        let scale = if self.count == 0 {
            0.0
        } else {
            1.0 / self.count as f64
        };
        let mut m = HermitianMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(self.re[i * n + i].value() * scale, 0.0);
            for j in (i + 1)..n {
                let v = Complex64::new(
                    self.re[i * n + j].value() * scale,
                    self.im[i * n + j].value() * scale,
                );
                m.data[i * n + j] = v;
                m.data[j * n + i] = v.conj();
            }
        }
        m
    }
}
