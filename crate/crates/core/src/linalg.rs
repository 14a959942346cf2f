//! Small dense matrices and the spectral quantities the bounds are built on.
//!
//! Everything here targets matrices of dimension up to roughly 8x8. The SVD
//! is a one-sided (Hestenes) Jacobi iteration, eigenvalues of general
//! matrices come from a Hessenberg reduction followed by the shifted
//! double-step QR iteration, and symmetric eigenvalues from cyclic Jacobi
//! rotations.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_JACOBI_SWEEPS: usize = 80;
const MAX_QR_ITERATIONS: usize = 60;

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "Vec<Vec<T>>",
    into = "Vec<Vec<T>>",
    bound(serialize = "T: Scalar", deserialize = "T: Scalar")
)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != ncols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// `u v^T`
    pub fn outer(u: &[T], v: &[T]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                m.data[i * v.len() + j] = ui * vj;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self.get(i, i))
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// `self += k * other`, in place.
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + k * b;
        }
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// Spectral norm without the finiteness check. NaN in, NaN out.
    pub fn norm2(&self) -> T {
        svd_values(self).first().copied().unwrap_or_else(T::zero)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<T> {
        svd_values(self)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Scalar> TryFrom<Vec<Vec<T>>> for Matrix<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl<T: Scalar> From<Matrix<T>> for Vec<Vec<T>> {
    fn from(m: Matrix<T>) -> Self {
        m.to_rows()
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;

    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] = out.data[i * rhs.cols + j] + a * rhs.get(k, j);
                }
            }
        }
        out
    }
}

impl<T: Scalar> Add for &Matrix<T> {
    type Output = Matrix<T>;

    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out.add_scaled(rhs, T::one());
        out
    }
}

impl<T: Scalar> Sub for &Matrix<T> {
    type Output = Matrix<T>;

    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out.add_scaled(rhs, -T::one());
        out
    }
}

fn check_finite<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("matrix has non-finite entries"))
    }
}

fn check_square<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            m.rows, m.cols
        )))
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    check_finite(m)?;
    Ok(m.norm2())
}

/// Smallest singular value of a square matrix.
pub fn min_singular_value<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    check_square(m)?;
    check_finite(m)?;
    Ok(svd_values(m).last().copied().unwrap_or_else(T::zero))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(T::zero(), T::max))
}

/// Moore-Penrose pseudoinverse. Singular values at or below `tol` are
/// treated as zero; `None` selects `sigma_max * max(rows, cols) * eps`.
pub fn pseudoinverse<T: Scalar>(m: &Matrix<T>, tol: Option<T>) -> Matrix<T> {
    let svd = Svd::new(m);
    let tol = tol.unwrap_or_else(|| svd.default_tolerance());
    let k = svd.sigma.len();
    let mut out = Matrix::zeros(m.cols, m.rows);
    for r in 0..k {
        let s = svd.sigma[r];
        if s <= tol || s == T::zero() {
            continue;
        }
        let inv = T::one() / s;
        // out += v_r u_r^T / s_r
        for i in 0..m.cols {
            let vi = svd.v.get(i, r) * inv;
            if vi == T::zero() {
                continue;
            }
            for j in 0..m.rows {
                let idx = i * m.rows + j;
                out.data[idx] = out.data[idx] + vi * svd.u.get(j, r);
            }
        }
    }
    out
}

/// Numerical rank at the default pseudoinverse tolerance.
pub fn rank<T: Scalar>(m: &Matrix<T>) -> usize {
    let svd = Svd::new(m);
    let tol = svd.default_tolerance();
    svd.sigma.iter().filter(|&&s| s > tol).count()
}

/// Thin SVD `M = U diag(sigma) V^T` with `sigma` descending.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn new(m: &Matrix<T>) -> Self {
        if m.rows >= m.cols {
            one_sided_jacobi(m)
        } else {
            let t = one_sided_jacobi(&m.transpose());
            Svd {
                u: t.v,
                sigma: t.sigma,
                v: t.u,
            }
        }
    }

    fn default_tolerance(&self) -> T {
        let dim = self.u.rows.max(self.v.rows);
        self.sigma.first().copied().unwrap_or_else(T::zero) * T::of_usize(dim) * T::epsilon()
    }
}

fn svd_values<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    Svd::new(m).sigma
}

/// Hestenes one-sided Jacobi for `rows >= cols`.
fn one_sided_jacobi<T: Scalar>(m: &Matrix<T>) -> Svd<T> {
    let (rows, cols) = (m.rows, m.cols);
    // Column-major working copy so column rotations touch contiguous memory.
    let mut w: Vec<Vec<T>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<T>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for i in 0..rows {
                    let (a, b) = (w[p][i], w[q][i]);
                    alpha = alpha + a * a;
                    beta = beta + b * b;
                    gamma = gamma + a * b;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (a, b) = (w[p][i], w[q][i]);
                    w[p][i] = c * a - s * b;
                    w[q][i] = s * a + c * b;
                }
                for i in 0..cols {
                    let (a, b) = (v[p][i], v[q][i]);
                    v[p][i] = c * a - s * b;
                    v[q][i] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(T, usize)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt(), j))
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (r, &(s, j)) in order.iter().enumerate() {
        sigma.push(s);
        if s > T::zero() {
            for i in 0..rows {
                u.set(i, r, w[j][i] / s);
            }
        }
        for i in 0..cols {
            vm.set(i, r, v[j][i]);
        }
    }
    Svd { u, sigma, v: vm }
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    check_square(m)?;
    check_finite(m)?;
    let n = m.rows;
    let mut a = m.clone();
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(T::zero(), |acc, (i, j)| acc + a.get(i, j) * a.get(i, j));
        let diag = (0..n).fold(T::zero(), |acc, i| acc + a.get(i, i) * a.get(i, i));
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ev)
}

/// Eigenvalues `(re, im)` of a general real square matrix.
pub fn eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<(T, T)>> {
    check_square(m)?;
    check_finite(m)?;
    let n = m.rows;
    // 1-based working copy, mirroring the classical formulation.
    let mut a = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m.get(i, j);
        }
    }
    hessenberg(&mut a, n);
    for i in 1..=n {
        for j in 1..i.saturating_sub(1) {
            a[i][j] = T::zero();
        }
    }
    hqr(&mut a, n)
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transforms.
fn hessenberg<T: Scalar>(a: &mut [Vec<T>], n: usize) {
    for m in 2..n {
        let mut x = T::zero();
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let tmp = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(i, m);
            }
        }
        if x != T::zero() {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != T::zero() {
                    y = y / x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] = a[i][j] - y * a[m][j];
                    }
                    for j in 1..=n {
                        a[j][m] = a[j][m] + y * a[j][i];
                    }
                }
            }
        }
    }
}

/// Shifted double-step QR on an upper Hessenberg matrix (1-based).
#[allow(clippy::many_single_char_names)]
fn hqr<T: Scalar>(a: &mut [Vec<T>], n: usize) -> Result<Vec<(T, T)>> {
    let zero = T::zero();
    let mut wr = vec![zero; n + 1];
    let mut wi = vec![zero; n + 1];
    let mut anorm = zero;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm = anorm + a[i][j].abs();
        }
    }
    let sign = |v: T, s: T| if s >= T::zero() { v.abs() } else { -v.abs() };

    let mut nn = n;
    let mut t = zero;
    let (mut p, mut q, mut r): (T, T, T);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == zero {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = zero;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = zero;
                nn -= 1;
                break;
            }
            let mut y = a[nn - 1][nn - 1];
            let mut w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                p = T::of(0.5) * (y - x);
                q = p * p + w;
                let mut z = q.abs().sqrt();
                x = x + t;
                if q >= zero {
                    z = p + sign(z, p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != zero {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = zero;
                    wi[nn] = zero;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn = nn.saturating_sub(2);
                break;
            }
            if its == MAX_QR_ITERATIONS {
                return Err(Error::Resource(
                    "eigenvalue iteration did not converge".into(),
                ));
            }
            if its == 10 || its == 20 {
                t = t + x;
                for i in 1..=nn {
                    a[i][i] = a[i][i] - x;
                }
                let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = T::of(0.75) * s;
                y = x;
                w = T::of(-0.4375) * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            let mut z;
            loop {
                z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p = p / s;
                q = q / s;
                r = r / s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i][i - 2] = zero;
                if i != m + 2 {
                    a[i][i - 3] = zero;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = zero;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != zero {
                        p = p / x;
                        q = q / x;
                        r = r / x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != zero {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p = p + s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q = q / p;
                    r = r / p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p = p + r * a[k + 2][j];
                            a[k + 2][j] = a[k + 2][j] - p * z;
                        }
                        a[k + 1][j] = a[k + 1][j] - p * y;
                        a[k][j] = a[k][j] - p * x;
                    }
                    let mmin = nn.min(k + 3);
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p = p + z * a[i][k + 2];
                            a[i][k + 2] = a[i][k + 2] - p * r;
                        }
                        a[i][k + 1] = a[i][k + 1] - p * q;
                        a[i][k] = a[i][k] - p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn spectral_norm_examples() {
        assert!(close(spectral_norm(&Matrix::<f64>::identity(2)).unwrap(), 1.0, 1e-12));
        assert!(close(spectral_norm(&Matrix::from_diag(&[0.5, 2.0])).unwrap(), 2.0, 1e-12));
        // Shift matrix: A^T A = diag(0, 1).
        assert!(close(spectral_norm(&m(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let huge = Matrix::from_diag(&[f64::MAX, 1.0]);
        let overflow = huge.scale(10.0);
        assert!(matches!(spectral_norm(&overflow), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn min_singular_value_examples() {
        assert!(close(min_singular_value(&Matrix::<f64>::identity(3)).unwrap(), 1.0, 1e-12));
        assert!(close(min_singular_value(&Matrix::from_diag(&[0.5, 2.0])).unwrap(), 0.5, 1e-12));
        assert!(min_singular_value(&m(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap().abs() < 1e-12);
        assert!(min_singular_value(&Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let r = |a: &Matrix<f64>| spectral_radius(a).unwrap();
        assert!(close(r(&Matrix::from_diag(&[0.5, 0.5])), 0.5, 1e-12));
        assert!(close(r(&Matrix::from_diag(&[2.0, 2.0])), 2.0, 1e-12));
        assert!(r(&m(&[&[0.0, 1.0], &[0.0, 0.0]])) < 1e-12);
        // Rotation by 90 degrees: eigenvalues +-i.
        assert!(close(r(&m(&[&[0.0, -1.0], &[1.0, 0.0]])), 1.0, 1e-12));
        assert!(spectral_radius(&Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn eigenvalues_of_companion_matrix() {
        // Roots 1, 2, 3 of x^3 - 6x^2 + 11x - 6.
        let c = m(&[&[6.0, -11.0, 6.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let mut ev: Vec<f64> = eigenvalues(&c).unwrap().iter().map(|e| e.0).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-9, "{ev:?}");
        }
    }

    #[test]
    fn pseudoinverse_examples() {
        let i2 = Matrix::<f64>::identity(2);
        assert!(pseudoinverse(&i2, None).max_abs_diff(&i2) < 1e-14);
        let z = Matrix::<f64>::zeros(2, 2);
        assert_eq!(pseudoinverse(&z, None), z);
        let p = pseudoinverse(&Matrix::from_diag(&[2.0, 0.0]), None);
        assert!(p.max_abs_diff(&Matrix::from_diag(&[0.5, 0.0])) < 1e-14);
    }

    #[test]
    fn pseudoinverse_of_wide_and_tall() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let p = pseudoinverse(&a, None);
        assert_eq!((p.rows(), p.cols()), (3, 2));
        let apa = &(&a * &p) * &a;
        assert!(apa.max_abs_diff(&a) < 1e-10);
        let pt = pseudoinverse(&a.transpose(), None);
        assert!(pt.max_abs_diff(&p.transpose()) < 1e-10);
    }

    #[test]
    fn symmetric_eigenvalues_match_known() {
        let s = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let ev = symmetric_eigenvalues(&s).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::<f32>::from_diag(&[0.5, 2.0]);
        assert!((spectral_norm(&a).unwrap() - 2.0).abs() < 1e-6);
        assert!((spectral_radius(&a).unwrap() - 2.0).abs() < 1e-6);
    }

    fn square(max_n: usize) -> impl Strategy<Value = Matrix<f64>> {
        (2..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-3.0..3.0_f64, n * n)
                .prop_map(move |d| Matrix::new(n, n, d).unwrap())
        })
    }

    fn square_pair() -> impl Strategy<Value = (Matrix<f64>, Matrix<f64>)> {
        (2..=4_usize).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0..3.0_f64, n * n),
                prop::collection::vec(-3.0..3.0_f64, n * n),
            )
                .prop_map(move |(a, b)| (Matrix::new(n, n, a).unwrap(), Matrix::new(n, n, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn norm_dominates_min_singular_value(a in square(6)) {
            prop_assert!(spectral_norm(&a).unwrap() + 1e-12 >= min_singular_value(&a).unwrap());
        }

        #[test]
        fn radius_below_norm(a in square(6)) {
            let rho = spectral_radius(&a).unwrap();
            let norm = spectral_norm(&a).unwrap();
            prop_assert!(rho <= norm * (1.0 + 1e-9) + 1e-12, "rho {} norm {}", rho, norm);
        }

        #[test]
        fn submultiplicative((a, b) in square_pair()) {
            let ab = spectral_norm(&(&a * &b)).unwrap();
            prop_assert!(ab <= spectral_norm(&a).unwrap() * spectral_norm(&b).unwrap() * (1.0 + 1e-10) + 1e-12);
        }

        #[test]
        fn spectral_norm_matches_gram_eigenvalue(a in square(5)) {
            // sigma_max^2 is the largest eigenvalue of A^T A.
            let ata = &a.transpose() * &a;
            let top = *symmetric_eigenvalues(&ata).unwrap().last().unwrap();
            let s = spectral_norm(&a).unwrap();
            prop_assert!((s * s - top).abs() <= 1e-10 * top.max(1.0));
        }

        #[test]
        fn radius_matches_characteristic_roots_in_2d(d in prop::collection::vec(-3.0..3.0_f64, 4)) {
            let a = Matrix::new(2, 2, d.clone()).unwrap();
            let (tr, det) = (d[0] + d[3], d[0] * d[3] - d[1] * d[2]);
            let disc = tr * tr / 4.0 - det;
            let want = if disc >= 0.0 {
                (tr / 2.0 + disc.sqrt()).abs().max((tr / 2.0 - disc.sqrt()).abs())
            } else {
                det.sqrt()
            };
            prop_assert!((spectral_radius(&a).unwrap() - want).abs() <= 1e-9 * want.max(1.0));
        }

        #[test]
        fn moore_penrose_identities(a in square(5)) {
            let p = pseudoinverse(&a, None);
            let apa = &(&a * &p) * &a;
            let pap = &(&p * &a) * &p;
            let ap = &a * &p;
            let pa = &p * &a;
            let scale = spectral_norm(&p).unwrap().max(1.0);
            prop_assert!(apa.max_abs_diff(&a) <= 1e-8 * scale);
            prop_assert!(pap.max_abs_diff(&p) <= 1e-8 * scale * scale);
            prop_assert!(ap.max_abs_diff(&ap.transpose()) <= 1e-8 * scale);
            prop_assert!(pa.max_abs_diff(&pa.transpose()) <= 1e-8 * scale);
        }

        #[test]
        fn full_rank_pseudoinverse_is_inverse(a in square(5)) {
            prop_assume!(min_singular_value(&a).unwrap() > 1e-2);
            let p = pseudoinverse(&a, None);
            let n = a.rows();
            prop_assert!((&a * &p).max_abs_diff(&Matrix::identity(n)) <= 1e-8);
            prop_assert!((&p * &a).max_abs_diff(&Matrix::identity(n)) <= 1e-8);
        }
    }
}
