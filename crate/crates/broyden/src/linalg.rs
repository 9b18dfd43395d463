//! Dense linear-algebra kernels.
//!
//! Everything is plain `f64` with column-major storage, sized for the dense
//! systems this crate works with (a few hundred unknowns at most). The only
//! factorization is LU with partial pivoting; the spectral norm comes from
//! power iteration on `AᵀA` with a deterministic start vector, so identical
//! inputs always produce identical outputs.

use crate::error::{Error, Result};

/// Relative pivot threshold for LU: a pivot below `LU_PIVOT_RTOL * max|A|`
/// is reported as a singular matrix.
pub const LU_PIVOT_RTOL: f64 = 1e-14;

/// Relative tolerance for the power-iteration spectral norm.
const SPECTRAL_RTOL: f64 = 1e-12;

/// Iteration cap for the power-iteration spectral norm.
const SPECTRAL_MAX_ITERS: usize = 10_000;

fn assert_finite(data: &[f64], what: &str) {
    for (i, v) in data.iter().enumerate() {
        assert!(v.is_finite(), "non-finite entry {v} at index {i} in {what}");
    }
}

// ── DenseVector ─────────────────────────────────────────────────────

/// A dense real vector. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Wraps a `Vec<f64>`. Panics if any entry is NaN or infinite.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must have positive dimension");
        assert_finite(&data, "DenseVector");
        Self { data }
    }

    /// Builds entry `i` from `f(i)`.
    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self::from_vec((0..dim).map(f).collect())
    }

    /// Crate-internal constructor for arithmetic results; entries may be
    /// non-finite when a computation overflows, which the solvers detect
    /// through the residual-norm guard instead of a panic.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_raw(vec![0.0; dim])
    }

    pub fn ones(dim: usize) -> Self {
        Self::from_raw(vec![1.0; dim])
    }

    /// The standard basis vector `e_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        assert!(i < dim);
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self::from_raw(v)
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self::from_raw(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_raw(self.data.iter().map(|a| a * s).collect())
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

// ── DenseMatrix ─────────────────────────────────────────────────────

/// A dense real matrix stored column-major. Entries are finite by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps column-major data. Panics on shape mismatch or non-finite
    /// entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows > 0 && cols > 0, "matrix must have positive dimensions");
        assert_eq!(data.len(), rows * cols, "column-major data length mismatch");
        assert_finite(&data, "DenseMatrix");
        Self { rows, cols, data }
    }

    /// Convenience constructor from row-major data, handy for literals.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self::from_fn(rows, cols, |i, j| data[i * cols + j])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// The outer product `u vᵀ`.
    pub fn outer(u: &DenseVector, v: &DenseVector) -> Self {
        Self::from_fn(u.dim(), v.dim(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i] = v;
    }

    /// Column-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn col(&self, j: usize) -> DenseVector {
        DenseVector::from_raw(self.data[j * self.rows..(j + 1) * self.rows].to_vec())
    }

    pub fn matvec(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.cols, x.dim());
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols {
            let xj = x[j];
            let col = &self.data[j * self.rows..(j + 1) * self.rows];
            for i in 0..self.rows {
                out[i] += col[i] * xj;
            }
        }
        DenseVector::from_raw(out)
    }

    /// `Aᵀ x` without forming the transpose.
    pub fn tr_matvec(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(self.rows, x.dim());
        let mut out = vec![0.0; self.cols];
        for j in 0..self.cols {
            let col = &self.data[j * self.rows..(j + 1) * self.rows];
            out[j] = col.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
        }
        DenseVector::from_raw(out)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                let col = &self.data[k * self.rows..(k + 1) * self.rows];
                for i in 0..self.rows {
                    out.data[j * self.rows + i] += col[i] * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_raw(self.cols, self.rows, {
            let mut data = vec![0.0; self.data.len()];
            for j in 0..self.cols {
                for i in 0..self.rows {
                    data[i * self.cols + j] = self.get(i, j);
                }
            }
            data
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_raw(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|a| a * s).collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.rows + i]
    }
}

// ── Norms ───────────────────────────────────────────────────────────

/// Frobenius norm: square root of the sum of squared entries.
pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value via power iteration on `AᵀA`.
///
/// The start vector is the normalized all-ones vector so results are
/// deterministic; if that start happens to lie in the null space of `AᵀA`
/// the iteration restarts once from a fixed pseudo-random vector. Matrices
/// whose top singular values are clustered (where the change-based stop
/// may creep for the whole budget without triggering, e.g. near-identity
/// matrices) fall back to a cyclic Jacobi eigensolve of `AᵀA`.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    let fro = frobenius_norm(a);
    if fro == 0.0 {
        return Ok(0.0);
    }
    let n = a.cols();
    let mut v = DenseVector::ones(n).scale(1.0 / (n as f64).sqrt());
    let mut restarted = false;
    let mut prev = 0.0f64;
    let mut small_changes = 0usize;
    // Creep detection: when the estimate inches along for a whole window
    // without meeting the tolerance, the spectrum is clustered and the
    // Jacobi fallback resolves it directly instead of spinning out the
    // full budget.
    let mut creeping = 0usize;
    const CREEP_RTOL: f64 = 1e-8;
    const CREEP_WINDOW: usize = 256;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let w = a.matvec(&v);
        let sigma = w.norm();
        let z = a.tr_matvec(&w);
        let nz = z.norm();
        if nz <= fro * fro * 1e-300 || sigma == 0.0 {
            if restarted {
                // A maps the entire probe space to zero yet has nonzero
                // entries; numerically the norm is below representable range.
                return Ok(0.0);
            }
            restarted = true;
            v = deterministic_probe(n);
            prev = 0.0;
            small_changes = 0;
            creeping = 0;
            continue;
        }
        v = z.scale(1.0 / nz);
        let change = (sigma - prev).abs();
        if change <= SPECTRAL_RTOL * sigma {
            small_changes += 1;
            if small_changes >= 2 {
                return Ok(sigma);
            }
        } else {
            small_changes = 0;
        }
        if change <= CREEP_RTOL * sigma {
            creeping += 1;
            if creeping >= CREEP_WINDOW {
                return gram_jacobi_norm(a);
            }
        } else {
            creeping = 0;
        }
        prev = sigma;
    }
    gram_jacobi_norm(a)
}

/// Spectral norm through a cyclic Jacobi eigensolve of the Gram matrix
/// `AᵀA`; slower than power iteration but immune to clustered spectra.
fn gram_jacobi_norm(a: &DenseMatrix) -> Result<f64> {
    let n = a.cols();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = a.col(i).dot(&a.col(j));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m.get(p, q).abs());
            }
        }
        if off <= 1e-15 * scale {
            let top = (0..n).map(|i| m.get(i, i)).fold(0.0f64, f64::max);
            return Ok(top.max(0.0).sqrt());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: SPECTRAL_MAX_ITERS,
    })
}

/// Fixed fallback start vector for the measure-zero case where the ones
/// vector is orthogonal to the dominant singular subspace.
fn deterministic_probe(n: usize) -> DenseVector {
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        v.push(2.0 * u - 1.0);
    }
    let v = DenseVector::from_raw(v);
    let norm = v.norm();
    v.scale(1.0 / norm)
}

// ── LU factorization ────────────────────────────────────────────────

/// Packed LU factors of a square matrix with partial (row) pivoting:
/// `PA = LU` with unit-diagonal `L`.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: DenseMatrix,
    perm: Vec<usize>,
    sign: f64,
}

/// Factors a square matrix, failing when a pivot falls below
/// [`LU_PIVOT_RTOL`] relative to the largest entry of the input.
pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactorization> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "lu_factor",
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let n = a.rows();
    let threshold = LU_PIVOT_RTOL * a.max_abs();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let mut p = k;
        let mut best = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= threshold || best == 0.0 {
            return Err(Error::SingularMatrix {
                pivot: best,
                column: k,
            });
        }
        if p != k {
            for j in 0..n {
                let a = lu.get(k, j);
                let b = lu.get(p, j);
                lu.set(k, j, b);
                lu.set(p, j, a);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let pivot = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pivot;
            lu.set(i, k, factor);
            if factor != 0.0 {
                for j in (k + 1)..n {
                    let v = lu.get(i, j) - factor * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
    }
    Ok(LuFactorization { lu, perm, sign })
}

impl LuFactorization {
    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A z = b` for the factored `A`.
    pub fn solve(&self, b: &DenseVector) -> Result<DenseVector> {
        let n = self.dim();
        if b.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "lu_solve",
                expected: n,
                found: b.dim(),
            });
        }
        // Pb, then forward substitution with unit-diagonal L.
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s;
        }
        // Back substitution with U.
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s / self.lu.get(i, i);
        }
        Ok(DenseVector::from_raw(x))
    }

    /// Dense inverse, built by solving against the identity columns.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let mut out = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let col = self
                .solve(&DenseVector::unit(n, j))
                .expect("dimension verified");
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        out
    }

    /// Determinant from the packed factors.
    pub fn determinant(&self) -> f64 {
        let mut det = self.sign;
        for i in 0..self.dim() {
            det *= self.lu.get(i, i);
        }
        det
    }
}

/// Solves `A z = b` given the factorization of `A`.
pub fn lu_solve(f: &LuFactorization, b: &DenseVector) -> Result<DenseVector> {
    f.solve(b)
}

/// Inverse of a square matrix through LU.
pub fn invert(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(lu_factor(a)?.inverse())
}

// ── Rank-one machinery ──────────────────────────────────────────────

/// `B + u vᵀ`.
pub fn rank_one_update(b: &DenseMatrix, u: &DenseVector, v: &DenseVector) -> Result<DenseMatrix> {
    if u.dim() != b.rows() {
        return Err(Error::DimensionMismatch {
            context: "rank_one_update (u)",
            expected: b.rows(),
            found: u.dim(),
        });
    }
    if v.dim() != b.cols() {
        return Err(Error::DimensionMismatch {
            context: "rank_one_update (v)",
            expected: b.cols(),
            found: v.dim(),
        });
    }
    let mut out = b.clone();
    for j in 0..b.cols() {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        for i in 0..b.rows() {
            let val = out.get(i, j) + u[i] * vj;
            out.set(i, j, val);
        }
    }
    Ok(out)
}

/// Sherman-Morrison step for the inverse-form secant update:
/// given `H ≈ B⁻¹`, returns the inverse of the rank-one-updated `B`
/// that maps `u` to `y`, i.e. `H - (H y - u) uᵀH / (uᵀH y)`.
///
/// Fails with [`Error::BreakdownDenominator`] when `|uᵀH y|` falls below
/// `1e-14 · ‖u‖ · ‖H y‖`, which signals that the updated matrix would be
/// numerically singular.
pub fn sherman_morrison_inverse_update(
    h: &DenseMatrix,
    u: &DenseVector,
    y: &DenseVector,
) -> Result<DenseMatrix> {
    let n = h.rows();
    if !h.is_square() || u.dim() != n || y.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "sherman_morrison_inverse_update",
            expected: n,
            found: u.dim().max(y.dim()),
        });
    }
    let hy = h.matvec(y);
    let denom = u.dot(&hy);
    let scale = u.norm() * hy.norm();
    if denom.abs() < 1e-14 * scale || denom == 0.0 {
        return Err(Error::BreakdownDenominator {
            value: denom,
            scale,
        });
    }
    let num = hy.sub(u); // H y - u
    let uth = h.tr_matvec(u); // (uᵀH)ᵀ
    rank_one_update(h, &num.scale(-1.0 / denom), &uth)
}

/// Spectral condition number `‖A‖·‖A⁻¹‖`.
pub fn condition_number(a: &DenseMatrix) -> Result<f64> {
    let inv = invert(a)?;
    Ok(spectral_norm(a)? * spectral_norm(&inv)?)
}
