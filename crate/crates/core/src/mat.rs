//! Dense symmetric-matrix storage and the vectorization operators used by the
//! Riccati and estimation modules.
//!
//! Conventions, fixed once here and relied on everywhere else:
//!
//! * `vecs` packs the upper triangle row-major: `[M11, M12, .., M1n, M22, ..]`.
//! * `ves` stacks full columns: `[col1; col2; ..]`.
//! * `bar_vec(x)` carries the factor 2 on cross terms so that
//!   `bar_vec(x) . vecs(P) == x' P x` exactly.
//! * All tolerances are stated against the Frobenius norm.
//!
//! Linear solves go through partial-pivot LU; problem sizes here are desk
//! scale (n <= ~10), so the O(n^6) Kronecker route for Lyapunov equations is
//! deliberate simplicity, not an oversight.

use thiserror::Error;

/// General rectangular dense matrix. Column-major, f64.
pub type DenseMatrix = nalgebra::DMatrix<f64>;
/// Dense column vector, f64.
pub type DenseVector = nalgebra::DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: String, right: String },
    #[error("packed length {got} is not n(n+1)/2 for any n")]
    BadPackedLength { got: usize },
    #[error("linear system is singular or numerically indistinguishable from singular")]
    SingularSystem,
}

/// Symmetric matrix with packed upper-triangle storage (row-major).
///
/// Symmetry is structural: there is one stored entry per unordered index
/// pair, so `get(i, j) == get(j, i)` cannot drift. Construction from dense
/// data symmetrizes as `(M + M')/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    /// Upper triangle, row-major; length n(n+1)/2.
    u: Vec<f64>,
}

#[inline]
fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    // caller guarantees i <= j < n; row i starts after i rows of n, n-1, ..
    i * (2 * n + 1 - i) / 2 + (j - i)
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, u: vec![0.0; packed_len(n)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Diagonal matrix from a slice.
    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a dense square matrix, symmetrizing as `(M + M')/2`.
    pub fn from_dense(m: &DenseMatrix) -> Result<Self, MatError> {
        if m.nrows() != m.ncols() {
            return Err(MatError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let n = m.nrows();
        let mut u = Vec::with_capacity(packed_len(n));
        for i in 0..n {
            for j in i..n {
                u.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Ok(SymMatrix { n, u })
    }

    /// Inverse of [`SymMatrix::vecs`]: unpacks a row-major upper triangle.
    pub fn from_vecs(v: &[f64]) -> Result<Self, MatError> {
        // solve n(n+1)/2 = len for integer n
        let len = v.len();
        let n = ((((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
        if packed_len(n) != len {
            return Err(MatError::BadPackedLength { got: len });
        }
        Ok(SymMatrix { n, u: v.to_vec() })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Row-major upper triangle literal, e.g. 2x2 from `&[m11, m12, m22]`.
    pub fn from_upper(n: usize, upper: &[f64]) -> Self {
        assert_eq!(upper.len(), packed_len(n), "upper triangle length");
        SymMatrix { n, u: upper.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.u[packed_index(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.u[packed_index(self.n, i, j)] = v;
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Packs the upper triangle row-major: `[M11, M12, .., M1n, M22, .., Mnn]`.
    pub fn vecs(&self) -> DenseVector {
        DenseVector::from_column_slice(&self.u)
    }

    /// Norm-preserving packing: off-diagonal entries scaled by sqrt(2), so the
    /// Euclidean norm of the result equals the Frobenius norm of the matrix.
    pub fn sym_isometry(&self) -> DenseVector {
        let s2 = std::f64::consts::SQRT_2;
        let mut out = Vec::with_capacity(self.u.len());
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.u[packed_index(self.n, i, j)];
                out.push(if i == j { v } else { s2 * v });
            }
        }
        DenseVector::from_vec(out)
    }

    /// Frobenius norm, computed from packed storage.
    pub fn norm_fro(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.u[packed_index(self.n, i, j)];
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    /// Frobenius inner product `<A, B> = tr(A B)`.
    pub fn inner_fro(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let p = self.u[packed_index(self.n, i, j)] * other.u[packed_index(self.n, i, j)];
                acc += if i == j { p } else { 2.0 * p };
            }
        }
        acc
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix { n: self.n, u: self.u.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        SymMatrix {
            n: self.n,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        SymMatrix {
            n: self.n,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self + c * other`, the shape every Euler step takes.
    pub fn axpy(&self, c: f64, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        SymMatrix {
            n: self.n,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + c * b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite())
    }

    /// Raw packed upper triangle (row-major), shared with `vecs` ordering.
    pub fn packed(&self) -> &[f64] {
        &self.u
    }

    /// Quadratic form `x' M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n, "dimension mismatch");
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.u[packed_index(self.n, i, j)];
                acc += if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] };
            }
        }
        acc
    }
}

impl std::ops::Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::add(self, rhs)
    }
}

impl std::ops::Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix::sub(self, rhs)
    }
}

impl std::ops::Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

/// Column-stacking vectorization of a rectangular matrix.
pub fn ves(m: &DenseMatrix) -> DenseVector {
    DenseVector::from_column_slice(m.as_slice())
}

/// Kronecker sum `A (+) C = A x I + I x C` for square A, C of equal size.
pub fn kron_sum(a: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix, MatError> {
    if a.nrows() != a.ncols() {
        return Err(MatError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if c.nrows() != c.ncols() {
        return Err(MatError::NotSquare { rows: c.nrows(), cols: c.ncols() });
    }
    if a.nrows() != c.nrows() {
        return Err(MatError::DimMismatch {
            left: format!("{}x{}", a.nrows(), a.ncols()),
            right: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    let eye = DenseMatrix::identity(a.nrows(), a.nrows());
    Ok(a.kronecker(&eye) + eye.kronecker(c))
}

/// Quadratic-form coordinates of a vector:
/// `[x1^2, 2 x1 x2, .., 2 x1 xq, x2^2, ..]`, ordered like `vecs`, so that
/// `bar_vec(x) . vecs(P) == x' P x`.
pub fn bar_vec(x: &[f64]) -> DenseVector {
    let q = x.len();
    let mut out = Vec::with_capacity(packed_len(q));
    for i in 0..q {
        for j in i..q {
            out.push(if i == j { x[i] * x[i] } else { 2.0 * x[i] * x[j] });
        }
    }
    DenseVector::from_vec(out)
}

/// Solves the Lyapunov equation `A' X + X A + W = 0` for symmetric `W`.
///
/// The equation is linearized through the Kronecker sum and solved by
/// partial-pivot LU. Errors with [`MatError::SingularSystem`] when some
/// eigenvalue pair of A satisfies `lambda_i + lambda_j = 0` (the linear map is
/// then singular), which is also the reliable non-Hurwitz signal used by
/// [`is_hurwitz`].
pub fn solve_lyapunov(a: &DenseMatrix, w: &SymMatrix) -> Result<SymMatrix, MatError> {
    if a.nrows() != a.ncols() {
        return Err(MatError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.nrows() != w.dim() {
        return Err(MatError::DimMismatch {
            left: format!("{}x{}", a.nrows(), a.ncols()),
            right: format!("{0}x{0}", w.dim()),
        });
    }
    let n = a.nrows();
    let at = a.transpose();
    // ves(A'X + XA) = (I x A' + A' x I) ves(X)
    let k = kron_sum(&at, &at)?;
    let rhs = -ves(&w.to_dense());
    let lu = k.lu();
    let x = lu.solve(&rhs).ok_or(MatError::SingularSystem)?;
    let xm = DenseMatrix::from_column_slice(n, n, x.as_slice());
    let xs = SymMatrix::from_dense(&xm)?;
    if !xs.is_finite() {
        return Err(MatError::SingularSystem);
    }
    // Near-singular pencils pass LU with garbage; reject by residual.
    let xd = xs.to_dense();
    let resid = at.clone() * &xd + &xd * a + w.to_dense();
    let scale = 1.0 + a.norm() * xs.norm_fro() + w.norm_fro();
    if resid.norm() > 1e-8 * scale {
        return Err(MatError::SingularSystem);
    }
    Ok(xs)
}

/// Positive-definiteness test by symmetric triangular factorization.
///
/// Attempts a Cholesky-style factorization and reports failure as soon as a
/// pivot drops to `1e-10 * max(1, ||M||_F)` or below; scale-aware so that a
/// tiny multiple of the identity is rejected rather than accepted on sign
/// alone. Non-finite input is never positive definite.
pub fn is_pd(m: &SymMatrix) -> bool {
    if !m.is_finite() {
        return false;
    }
    let n = m.dim();
    if n == 0 {
        return false;
    }
    let tol = 1e-10 * m.norm_fro().max(1.0);
    let mut l = vec![0.0f64; n * n];
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol) {
            return false;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
    }
    true
}

/// Hurwitz test routed through the Lyapunov machinery rather than an
/// eigensolver: A is Hurwitz iff `A'X + XA + I = 0` has a solution and that
/// solution is positive definite. A singular Lyapunov map (eigenvalues summing
/// to zero, e.g. anything on the imaginary axis) reports false.
pub fn is_hurwitz(a: &DenseMatrix) -> bool {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return false;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    match solve_lyapunov(a, &SymMatrix::identity(a.nrows())) {
        Ok(x) => is_pd(&x),
        Err(_) => false,
    }
}
