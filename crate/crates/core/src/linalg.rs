//! Small dense 2x2 algebra and a banded LU factorization.

use crate::error::{Error, Result};

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// General 2x2 matrix, row major.
pub type Mat2 = [[f64; 2]; 2];

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self::new(a, 0.0, b)
    }

    /// `p p^T`.
    pub fn outer(p: [f64; 2]) -> Self {
        Self::new(p[0] * p[0], p[0] * p[1], p[1] * p[1])
    }

    /// `p q^T + q p^T`.
    pub fn sym_outer(p: [f64; 2], q: [f64; 2]) -> Self {
        Self::new(2.0 * p[0] * q[0], p[0] * q[1] + p[1] * q[0], 2.0 * p[1] * q[1])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            _ => self.xy,
        }
    }

    pub fn to_mat(self) -> Mat2 {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Frobenius inner product `tr(self * o)`.
    pub fn contract(&self, o: &Self) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    pub fn mul_vec(&self, p: [f64; 2]) -> [f64; 2] {
        [self.xx * p[0] + self.xy * p[1], self.xy * p[0] + self.yy * p[1]]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Self::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    /// `a * self * b` for symmetric `a`, `b` where the product is known to
    /// be symmetric (`a == b`, or a sum with its transpose is taken later).
    pub fn sandwich(&self, outer: &Sym2) -> Sym2 {
        let m = mat_mul(mat_mul(outer.to_mat(), self.to_mat()), outer.to_mat());
        Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
    }

    /// Ascending eigenvalues and the matching unit eigenvectors.
    pub fn eigen(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let mean = 0.5 * (self.xx + self.yy);
        let half = 0.5 * (self.xx - self.yy);
        let rad = half.hypot(self.xy);
        // Recover the root that suffers cancellation from the determinant.
        let (lo, hi) = if mean >= 0.0 {
            let hi = mean + rad;
            let lo = if hi != 0.0 { self.det() / hi } else { mean - rad };
            (lo, hi)
        } else {
            let lo = mean - rad;
            (lo, self.det() / lo)
        };
        let phi = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        let (s, c) = phi.sin_cos();
        ([lo, hi], [[-s, c], [c, s]])
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        self.eigen().0
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}

pub fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

/// `a^T * s * b` for general `a`, `b`, returned as a full matrix.
pub fn congruence(a: Mat2, s: Sym2, b: Mat2) -> Mat2 {
    let at = [[a[0][0], a[1][0]], [a[0][1], a[1][1]]];
    mat_mul(mat_mul(at, s.to_mat()), b)
}

/// Row-interchanging LU factorization of a square banded matrix.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; the extra `kl`
/// super-diagonals hold the fill produced by partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `value` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.data[k] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "mul_vec on a factored matrix");
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { column: k });
            }
            self.pivots[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let row_k = self.idx(k, k + 1);
                let row_i = self.idx(i, k + 1);
                let len = last_col - k;
                for off in 0..len {
                    self.data[row_i + off] -= l * self.data[row_k + off];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place; `factor` must have been called.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "solve on an unfactored matrix");
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.data[self.idx(i, k)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + ku + kl).min(n - 1) {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}
