//! Small dense linear-algebra kernels.
//!
//! Everything here works on [`Matrix`], a row-major `f64` matrix. The
//! decompositions are Jacobi methods: one-sided (Hestenes) Jacobi for the thin
//! SVD of tall-skinny matrices and cyclic two-sided Jacobi for symmetric
//! eigenproblems. Both are accurate to a few ulps on the sizes used by the
//! shape layer (m ≤ a few hundred, k = 2).

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense row-major matrix of finite reals.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, validating dimensions and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// Builds a matrix from columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("ragged columns".into()));
        }
        let mut m = Matrix::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Matrix::from_vec(m.rows, m.cols, m.data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutable row-major entries; callers keep them finite.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by a {}-vector",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    fn zip_with(&self, rhs: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.dims() != rhs.dims() {
            return Err(Error::Shape(format!(
                "{op} of {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sum", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "difference", |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "Hadamard product", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of element-wise products, `Σ a_ij b_ij`.
    pub fn inner(&self, rhs: &Matrix) -> Result<f64> {
        if self.dims() != rhs.dims() {
            return Err(Error::Shape("inner product of differently shaped matrices".into()));
        }
        Ok(dot(&self.data, &rhs.data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `‖A − Aᵀ‖_F`; errors on non-square input.
    pub fn asymmetry(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::Shape(format!("{}x{} is not square", self.rows, self.cols)));
        }
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self[(i, j)] - self[(j, i)];
                acc += d * d;
            }
        }
        Ok(acc.sqrt())
    }

    /// Copy of columns `range`.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        let mut out = Matrix::zeros(self.rows, range.len());
        for r in 0..self.rows {
            for (j, c) in range.clone().enumerate() {
                out[(r, j)] = self[(r, c)];
            }
        }
        out
    }

    /// Subtracts each column's mean (centroid removal for point sets stored as rows).
    pub fn center_columns(&self) -> Matrix {
        let mut out = self.clone();
        for c in 0..self.cols {
            let mean = (0..self.rows).map(|r| self[(r, c)]).sum::<f64>() / self.rows as f64;
            for r in 0..self.rows {
                out[(r, c)] -= mean;
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin singular value decomposition `A = U·diag(d)·Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    /// m×k, orthonormal columns.
    pub u: Matrix,
    /// Descending, nonnegative.
    pub d: Vec<f64>,
    /// k×k orthogonal.
    pub v: Matrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Matrix {
        let mut ud = self.u.clone();
        for r in 0..ud.rows() {
            for c in 0..ud.cols() {
                ud[(r, c)] *= self.d[c];
            }
        }
        let vt = self.v.transpose();
        ud.matmul(&vt).expect("factor dimensions chain")
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD of an m×k matrix with m ≥ k via one-sided Jacobi rotations.
///
/// Columns of `U` belonging to zero singular values are completed to an
/// orthonormal set. Each `U` column is signed so its largest-magnitude entry
/// is positive; the flip is mirrored into `V`.
pub fn thin_svd(a: &Matrix) -> Result<ThinSvd> {
    let (m, k) = a.dims();
    if m < k {
        return Err(Error::Shape(format!("thin SVD needs rows ≥ cols, got {m}x{k}")));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite entry in SVD input".into()));
    }

    // Work on columns: rotate pairs until they are mutually orthogonal.
    let mut cols: Vec<Vec<f64>> = (0..k).map(|c| a.column(c)).collect();
    let mut v = Matrix::identity(k);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (cp, cq) = split_pair(&mut cols, p, q);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
                for r in 0..k {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp - s * vq;
                    v[(r, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let d_max = norms[order[0]];
    let null_tol = d_max * (m as f64) * f64::EPSILON;
    let mut d = Vec::with_capacity(k);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut v_sorted = Matrix::zeros(k, k);
    let mut null_slots = Vec::new();
    for (slot, &src) in order.iter().enumerate() {
        let s = norms[src];
        for r in 0..k {
            v_sorted[(r, slot)] = v[(r, src)];
        }
        if s > null_tol && s > 0.0 {
            d.push(s);
            u_cols.push(cols[src].iter().map(|x| x / s).collect());
        } else {
            d.push(if s > 0.0 { s } else { 0.0 });
            u_cols.push(vec![0.0; m]);
            null_slots.push(slot);
        }
    }
    for slot in null_slots {
        let basis: Vec<Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != slot && c.iter().any(|&x| x != 0.0))
            .map(|(_, c)| c.clone())
            .collect();
        u_cols[slot] = next_orthonormal(&basis, m);
    }

    let mut u = Matrix::from_columns(&u_cols)?;
    canonicalize_signs(&mut u, Some(&mut v_sorted));
    Ok(ThinSvd { u, d, v: v_sorted })
}

fn split_pair(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = cols.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal),
/// picked from the coordinate axes by largest residual.
fn next_orthonormal(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..m {
        let mut r = vec![0.0; m];
        r[i] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(b, &r);
                for (x, y) in r.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let n = norm(&r);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, r));
        }
    }
    let (n, r) = best.expect("m ≥ 1");
    r.into_iter().map(|x| x / n).collect()
}

/// Flips columns of `q` so each one's largest-magnitude entry is positive
/// (first such entry on ties), mirroring flips into `mirror`.
fn canonicalize_signs(q: &mut Matrix, mut mirror: Option<&mut Matrix>) {
    for c in 0..q.cols() {
        let mut pivot = 0;
        for r in 1..q.rows() {
            if q[(r, c)].abs() > q[(pivot, c)].abs() {
                pivot = r;
            }
        }
        if q[(pivot, c)] < 0.0 {
            for r in 0..q.rows() {
                q[(r, c)] = -q[(r, c)];
            }
            if let Some(mirror) = mirror.as_deref_mut() {
                for r in 0..mirror.rows() {
                    mirror[(r, c)] = -mirror[(r, c)];
                }
            }
        }
    }
}

/// Extends an m×k matrix with orthonormal columns to an m×m orthogonal
/// matrix whose leading k columns are exactly `q`.
///
/// The trailing columns come from Householder reflectors of `q`, so they are
/// orthogonal to `q` to working precision.
pub fn complete_orthonormal_basis(q: &Matrix) -> Result<Matrix> {
    let (m, k) = q.dims();
    if k > m {
        return Err(Error::Shape(format!("cannot complete a {m}x{k} basis")));
    }
    let mut work = q.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..m).map(|r| work[(r, j)]).collect();
        let alpha = -x[0].signum() * norm(&x);
        let mut v = x;
        v[0] -= alpha;
        let vn = norm(&v);
        if vn > 0.0 {
            v.iter_mut().for_each(|e| *e /= vn);
        }
        for c in j..k {
            let proj: f64 = (j..m).map(|r| v[r - j] * work[(r, c)]).sum();
            for r in j..m {
                work[(r, c)] -= 2.0 * v[r - j] * proj;
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 … H_{k-1}; apply to identity from the right-most reflector.
    let mut full = Matrix::identity(m);
    for (j, v) in reflectors.iter().enumerate().rev() {
        for c in 0..m {
            let proj: f64 = (j..m).map(|r| v[r - j] * full[(r, c)]).sum();
            if proj == 0.0 {
                continue;
            }
            for r in j..m {
                full[(r, c)] -= 2.0 * v[r - j] * proj;
            }
        }
    }
    for r in 0..m {
        for c in 0..k {
            full[(r, c)] = q[(r, c)];
        }
    }
    Ok(full)
}

/// Eigenvalues (descending) and eigenvectors (as columns) of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Rejects inputs with `‖A − Aᵀ‖_F > 1e-8·‖A‖_F`. Eigenvectors are signed
/// like SVD factors: largest-magnitude entry positive.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::Shape(format!("{}x{} is not square", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite entry in eigen input".into()));
    }
    let asym = a.asymmetry()?;
    if asym > 1e-8 * a.frobenius_norm() {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (‖A − Aᵀ‖_F = {asym:e})"
        )));
    }
    let n = a.rows();
    // Symmetrize so rotations act on an exactly symmetric array.
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut q = Matrix::identity(n);
    let scale = w.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| w[(i, j)] * w[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = w[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (w[(r, r)] - w[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (wkp, wkr) = (w[(k, p)], w[(k, r)]);
                    w[(k, p)] = c * wkp - s * wkr;
                    w[(k, r)] = s * wkp + c * wkr;
                }
                for k in 0..n {
                    let (wpk, wrk) = (w[(p, k)], w[(r, k)]);
                    w[(p, k)] = c * wpk - s * wrk;
                    w[(r, k)] = s * wpk + c * wrk;
                }
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (slot, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, slot)] = q[(r, src)];
        }
    }
    canonicalize_signs(&mut vectors, None);
    Ok(SymEigen { values, vectors })
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky factorisation.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n {
        return Err(Error::Shape(format!(
            "cannot solve {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::InvalidInput("matrix is not positive definite".into()));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}
