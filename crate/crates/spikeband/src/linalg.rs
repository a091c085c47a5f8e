//! Small dense/banded linear algebra kernels used across the crate.
//!
//! Everything here is sized for one-dimensional discretizations (tridiagonal
//! pencils with a few thousand nodes) or two-dimensional banded systems with
//! bandwidth a few hundred, so simple O(n * band^2) algorithms with partial
//! pivoting are used throughout instead of a general-purpose library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("zero pivot in column {col}")]
    SingularPivot { col: usize },
}

/// Symmetric tridiagonal matrix: `diag` has length n, `off` length n-1.
#[derive(Debug, Clone)]
pub struct SymTri {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTri {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(v.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// `v^T A v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        self.mul(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Generalized eigenvalue pencil `M v = theta A v` with `M` diagonal
/// (entries `m`) and `A` symmetric tridiagonal positive definite.
///
/// Eigenvalues are located by Sturm bisection: by Sylvester's law applied to
/// `A^{-1/2} M A^{-1/2} - t I`, the number of pencil eigenvalues above `t`
/// equals the number of positive pivots in the LDL^T factorization of
/// `M - t A`. Eigenvectors come from inverse iteration on the shifted matrix.
pub struct DiagPencil<'a> {
    pub m: &'a [f64],
    pub a: &'a SymTri,
}

impl DiagPencil<'_> {
    /// Number of pencil eigenvalues strictly greater than `t`.
    pub fn count_above(&self, t: f64) -> usize {
        let n = self.a.n();
        let mut count = 0usize;
        let mut prev = 1.0f64;
        for i in 0..n {
            let c = self.m[i] - t * self.a.diag[i];
            let e = if i > 0 { -t * self.a.off[i - 1] } else { 0.0 };
            let mut d = c - e * e / prev;
            if d == 0.0 {
                d = -f64::MIN_POSITIVE;
            }
            if d > 0.0 {
                count += 1;
            }
            prev = d;
        }
        count
    }

    /// The `k` largest eigenvalues, in decreasing order. `hi` must be an
    /// upper bound for the spectrum (it is grown if the count says otherwise).
    pub fn largest(&self, k: usize, hi: f64) -> Vec<f64> {
        let n = self.a.n();
        assert!(k <= n, "requested more eigenvalues than the pencil has");
        let mut top = hi.max(f64::MIN_POSITIVE);
        for _ in 0..64 {
            if self.count_above(top) == 0 {
                break;
            }
            top *= 2.0;
        }
        let mut bottom = -top;
        for _ in 0..64 {
            if self.count_above(bottom) >= k {
                break;
            }
            bottom *= 2.0;
        }
        let tol = 4.0 * f64::EPSILON * top.max(-bottom);
        let mut out = Vec::with_capacity(k);
        for j in 1..=k {
            // Invariant: count(lo) >= j > count(hi).
            let mut lo = bottom;
            let mut hi_j = top;
            while hi_j - lo > tol {
                let mid = 0.5 * (lo + hi_j);
                if self.count_above(mid) >= j {
                    lo = mid;
                } else {
                    hi_j = mid;
                }
            }
            out.push(0.5 * (lo + hi_j));
        }
        out
    }

    /// Eigenvector for the eigenvalue nearest `theta`, via inverse iteration.
    /// Normalized so that `v^T A v = 1` with the entry of largest modulus
    /// positive. Also returns the Rayleigh quotient `v^T M v` (equal to the
    /// eigenvalue after normalization).
    pub fn eigenvector(&self, theta: f64) -> (Vec<f64>, f64) {
        let n = self.a.n();
        let dl: Vec<f64> = self.a.off.iter().map(|&e| -theta * e).collect();
        let du = dl.clone();
        let d: Vec<f64> = (0..n).map(|i| self.m[i] - theta * self.a.diag[i]).collect();
        let scale = d
            .iter()
            .chain(dl.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        let lu = TriLu::factor_regularized(dl, d, du, 1e3 * f64::EPSILON * scale);
        // A mildly uneven start vector avoids accidental orthogonality to the
        // target eigendirection.
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 1e-3 * ((i % 7) as f64 - 3.0))
            .collect();
        for _ in 0..3 {
            let mut rhs = self.a.mul(&v);
            lu.solve_in_place(&mut rhs);
            let norm = rhs.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
            for x in rhs.iter_mut() {
                *x /= norm;
            }
            v = rhs;
        }
        let a_norm = self.a.quad(&v).sqrt();
        let imax = (0..n).fold(0, |im, i| if v[i].abs() > v[im].abs() { i } else { im });
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        for x in v.iter_mut() {
            *x *= sign / a_norm;
        }
        let rq: f64 = v.iter().zip(self.m).map(|(vi, mi)| vi * vi * mi).sum();
        (v, rq)
    }
}

/// LU factorization of a general tridiagonal matrix with partial pivoting.
/// Row exchanges introduce one extra superdiagonal (`du2`).
pub struct TriLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    ipiv: Vec<usize>,
}

impl TriLu {
    pub fn factor(dl: Vec<f64>, d: Vec<f64>, du: Vec<f64>) -> Result<Self, LinalgError> {
        let lu = Self::factor_regularized(dl, d, du, 0.0);
        match lu.d.iter().position(|&x| x == 0.0) {
            Some(col) => Err(LinalgError::SingularPivot { col }),
            None => Ok(lu),
        }
    }

    /// As `factor`, but pivots smaller in modulus than `floor` are replaced
    /// by `floor` (keeping sign). Inverse iteration uses this to shift
    /// through a numerically singular matrix.
    pub fn factor_regularized(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>, floor: f64) -> Self {
        let n = d.len();
        assert_eq!(dl.len(), n.saturating_sub(1));
        assert_eq!(du.len(), n.saturating_sub(1));
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut ipiv: Vec<usize> = (0..n).collect();
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < floor {
                    d[i] = if d[i] < 0.0 { -floor } else { floor };
                }
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                ipiv[i] = i + 1;
            }
        }
        if n > 0 && d[n - 1].abs() < floor {
            d[n - 1] = if d[n - 1] < 0.0 { -floor } else { floor };
        }
        TriLu { dl, d, du, du2, ipiv }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        for i in 0..n.saturating_sub(1) {
            if self.ipiv[i] == i {
                b[i + 1] -= self.dl[i] * b[i];
            } else {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n >= 2 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// General band matrix in LAPACK-style column-major band storage with room
/// for the fill-in produced by partial pivoting: `ldab = 2*kl + ku + 1` rows
/// per column, entry `(i, j)` stored at `data[j * ldab + kl + ku + i - j]`.
pub struct BandMat {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMat {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandMat {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(i + self.ku >= j && j + self.kl >= i, "entry outside band");
        j * self.ldab + self.kl + self.ku + i - j
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.ku < j || j + self.kl < i {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                out[i] += self.get(i, j) * x[j];
            }
        }
        out
    }

    /// In-place LU factorization with partial pivoting (unblocked).
    pub fn factor(mut self) -> Result<BandLu, LinalgError> {
        let n = self.n;
        let (kl, ku, ldab) = (self.kl, self.ku, self.ldab);
        let kv = kl + ku;
        let mut ipiv = vec![0usize; n];
        // Rightmost column touched by any row seen so far: swaps drag
        // fill-in into later columns, so this bound only ever grows.
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // Pivot search over the km+1 candidates in column j.
            let base = j * ldab + kv;
            let mut jp = 0usize;
            for p in 1..=km {
                if self.data[base + p].abs() > self.data[base + jp].abs() {
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            let pivot = self.data[base + jp];
            if pivot == 0.0 {
                return Err(LinalgError::SingularPivot { col: j });
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                // Swap rows j and j+jp over the columns they both touch.
                for c in j..=ju {
                    let s1 = c * ldab + kv + j - c;
                    let s2 = c * ldab + kv + j + jp - c;
                    self.data.swap(s1, s2);
                }
            }
            if km > 0 {
                let inv = 1.0 / self.data[base];
                for p in 1..=km {
                    self.data[base + p] *= inv;
                }
                for c in j + 1..=ju {
                    let head = c * ldab + kv + j - c;
                    let factor = self.data[head];
                    if factor != 0.0 {
                        for p in 1..=km {
                            self.data[head + p] -= factor * self.data[base + p];
                        }
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            ldab,
            data: self.data,
            ipiv,
        })
    }
}

pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let kv = self.kl + self.ku;
        // L solve with the recorded interchanges.
        if self.kl > 0 {
            for j in 0..n.saturating_sub(1) {
                let lm = self.kl.min(n - 1 - j);
                let l = self.ipiv[j];
                if l != j {
                    b.swap(l, j);
                }
                let base = j * self.ldab + kv;
                for p in 1..=lm {
                    b[j + p] -= self.data[base + p] * b[j];
                }
            }
        }
        // U solve: U has kl+ku superdiagonals after fill-in.
        for j in (0..n).rev() {
            let hi = (j + kv).min(n - 1);
            let mut s = b[j];
            for c in j + 1..=hi {
                s -= self.data[c * self.ldab + kv + j - c] * b[c];
            }
            b[j] = s / self.data[j * self.ldab + kv];
        }
    }
}

/// Dense LU solve with partial pivoting. Intended for small systems and as a
/// cross-check oracle for the banded solvers.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for j in 0..n {
        let piv = (j..n)
            .max_by(|&p, &q| a[p][j].abs().partial_cmp(&a[q][j].abs()).unwrap())
            .unwrap();
        if a[piv][j] == 0.0 {
            return Err(LinalgError::SingularPivot { col: j });
        }
        a.swap(j, piv);
        b.swap(j, piv);
        for i in j + 1..n {
            let f = a[i][j] / a[j][j];
            a[i][j] = 0.0;
            for c in j + 1..n {
                a[i][c] -= f * a[j][c];
            }
            b[i] -= f * b[j];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in i + 1..n {
            s -= a[i][c] * b[c];
        }
        b[i] = s / a[i][i];
    }
    Ok(b)
}

/// Shape-preserving piecewise cubic interpolant (Fritsch-Carlson slopes).
/// Monotone data produces a monotone interpolant.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        assert!(x.windows(2).all(|w| w[1] > w[0]), "abscissae must increase");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[0] = edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
        d[n - 1] = edge_slope(
            h[n - 2],
            if n >= 3 { h[n - 3] } else { h[n - 2] },
            delta[n - 2],
            if n >= 3 { delta[n - 3] } else { delta[n - 2] },
        );
        Pchip { x, y, d }
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.x.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h * h10 * self.d[i] + h01 * self.y[i + 1] + h * h11 * self.d[i + 1]
    }

    pub fn eval_deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let dh00 = (6.0 * s2 - 6.0 * s) / h;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = (-6.0 * s2 + 6.0 * s) / h;
        let dh11 = 3.0 * s2 - 2.0 * s;
        dh00 * self.y[i] + dh10 * self.d[i] + dh01 * self.y[i + 1] + dh11 * self.d[i + 1]
    }
}

/// Non-centered endpoint slope for the shape-preserving interpolant, with
/// the usual clamps that keep the end interval monotone.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s * d0 <= 0.0 {
        s = 0.0;
    } else if d0 * d1 < 0.0 && s.abs() > 3.0 * d0.abs() {
        s = 3.0 * d0;
    }
    s
}

/// Least-squares straight line through `(x_i, y_i)`: returns (slope, intercept).
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    assert!(x.len() == y.len() && x.len() >= 2);
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
