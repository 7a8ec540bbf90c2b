//! Normalized elementary symmetric functions and the curvature operators
//! built from them.
//!
//! `S_k = e_k / C(n, k)`, so that `S_k(1, ..., 1) = 1`. The operator
//! `F(A) = S_k(lambda(A))^(1/k)` is defined on matrices whose eigenvalues lie
//! in the positive cone, where it is elliptic, concave and homogeneous of
//! degree one. The dual operator `F~(A) = (S_n / S_{n-k})^(1/k)` satisfies
//! `F~(diag(1/kappa)) = 1 / F(diag(kappa))`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance scale for strict cone membership.
pub const CONE_EPS: f64 = 1e-12;

/// A tuple of principal-curvature candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalTuple(Vec<f64>);

impl PrincipalTuple {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("empty principal tuple".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("principal tuple has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    /// Componentwise reciprocal.
    pub fn reciprocal(&self) -> Result<Self> {
        Self::new(self.0.iter().map(|v| 1.0 / v).collect())
    }

    pub fn in_positive_cone(&self) -> bool {
        in_positive_cone(&self.0)
    }
}

/// Strict membership in `{lambda_i > 0}` with a scale-relative margin.
pub fn in_positive_cone(values: &[f64]) -> bool {
    cone_margin(values) > 0.0
}

/// `min lambda_i - eps * max(1, |lambda|_inf)`; positive inside the cone.
pub fn cone_margin(values: &[f64]) -> f64 {
    let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    min - CONE_EPS * scale
}

/// Symmetric `n x n` matrix stored as its packed upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl CurvatureMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, upper: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Builds from full rows, reading only the upper triangle.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Argument("curvature matrix must be square and non-empty".into()));
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rows[i][j]);
            }
        }
        Ok(m)
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

    pub fn n(&self) -> usize {
        self.n
    }

    fn pos(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.pos(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let p = self.pos(i, j);
        self.upper[p] = v;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { n: self.n, upper: self.upper.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        }
    }

    /// Ascending eigenvalues and the matching orthonormal eigenvectors
    /// (`vectors[i]` pairs with `values[i]`).
    pub fn eigen(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self.n {
            1 => (vec![self.get(0, 0)], vec![vec![1.0]]),
            2 => {
                let s = crate::linalg::Sym2::new(self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let (vals, vecs) = s.eigen();
                (vals.to_vec(), vecs.iter().map(|v| v.to_vec()).collect())
            }
            n => {
                let dense = DMatrix::from_fn(n, n, |i, j| self.get(i, j));
                let eig = SymmetricEigen::new(dense);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
                let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
                let vectors = order
                    .iter()
                    .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
                    .collect();
                (values, vectors)
            }
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Unnormalized `e_0 ..= e_k` by the one-pass product recurrence.
pub fn elem_sym_all(values: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (seen, &l) in values.iter().enumerate() {
        for j in (1..=k.min(seen + 1)).rev() {
            e[j] += l * e[j - 1];
        }
    }
    e
}

/// Normalized `S_k` with `0 <= k <= n`, no range checks.
pub(crate) fn sk(values: &[f64], k: usize) -> f64 {
    elem_sym_all(values, k)[k] / binomial(values.len(), k)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

fn cone_checked(values: &[f64]) -> Result<()> {
    if in_positive_cone(values) {
        Ok(())
    } else {
        let min_eigenvalue = values.iter().copied().fold(f64::INFINITY, f64::min);
        Err(Error::ConeViolation { min_eigenvalue })
    }
}

/// `S_k(lambda) = e_k(lambda) / C(n, k)`.
pub fn elem_sym_norm(lambda: &PrincipalTuple, k: usize) -> Result<f64> {
    check_k(lambda.n(), k)?;
    Ok(sk(lambda.values(), k))
}

/// `S_k(lambda)^(1/k)` for a tuple already known to be in the cone.
pub fn weingarten_f_eigs(values: &[f64], k: usize) -> Result<f64> {
    check_k(values.len(), k)?;
    cone_checked(values)?;
    Ok(sk(values, k).powf(1.0 / k as f64))
}

/// `F(A) = S_k(lambda(A))^(1/k)`.
pub fn weingarten_f(a: &CurvatureMatrix, k: usize) -> Result<f64> {
    weingarten_f_eigs(&a.eigenvalues(), k)
}

/// `(S_n / S_{n-k})^(1/k)` of a cone tuple.
pub fn dual_f_eigs(values: &[f64], k: usize) -> Result<f64> {
    let n = values.len();
    check_k(n, k)?;
    cone_checked(values)?;
    Ok((sk(values, n) / sk(values, n - k)).powf(1.0 / k as f64))
}

/// `F~(A) = (S_n(lambda(A)) / S_{n-k}(lambda(A)))^(1/k)`.
pub fn dual_f(a: &CurvatureMatrix, k: usize) -> Result<f64> {
    dual_f_eigs(&a.eigenvalues(), k)
}

/// `dF/dlambda_i` at a cone tuple.
pub fn f_eig_gradient(values: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = values.len();
    check_k(n, k)?;
    cone_checked(values)?;
    let s = sk(values, k);
    let scale = s.powf(1.0 / k as f64 - 1.0) / (k as f64 * binomial(n, k));
    let mut rest = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            rest.clear();
            rest.extend(values.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v));
            scale * elem_sym_all(&rest, k - 1)[k - 1]
        })
        .collect())
}

/// `F^{ij} = dF/dA_ij`, as a symmetric matrix.
///
/// For a spectral function the first derivative is `Q diag(dF/dlambda) Q^T`;
/// equal eigenvalues get equal partials, so no gap handling is needed here.
pub fn f_gradient(a: &CurvatureMatrix, k: usize) -> Result<CurvatureMatrix> {
    let (values, vectors) = a.eigen();
    let d = f_eig_gradient(&values, k)?;
    let n = a.n();
    Ok(CurvatureMatrix::from_fn(n, |i, j| {
        (0..n).map(|m| d[m] * vectors[m][i] * vectors[m][j]).sum()
    }))
}

/// `(S_1, S_2^(1/2), ..., S_n^(1/n))`; non-increasing on the cone.
pub fn maclaurin_report(lambda: &PrincipalTuple) -> Result<Vec<f64>> {
    cone_checked(lambda.values())?;
    let n = lambda.n();
    let e = elem_sym_all(lambda.values(), n);
    Ok((1..=n)
        .map(|k| (e[k] / binomial(n, k)).powf(1.0 / k as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Brute-force `e_k` by subset enumeration.
    fn e_k_enumerate(values: &[f64], k: usize) -> f64 {
        let n = values.len();
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| values[i]).product::<f64>())
            .sum()
    }

    fn tuple(v: &[f64]) -> PrincipalTuple {
        PrincipalTuple::new(v.to_vec()).unwrap()
    }

    #[test]
    fn elem_sym_examples() {
        assert_eq!(elem_sym_norm(&tuple(&[1.0, 1.0, 1.0]), 2).unwrap(), 1.0);
        assert_eq!(elem_sym_norm(&tuple(&[2.0, 2.0]), 1).unwrap(), 2.0);
        let e2 = e_k_enumerate(&[1.0, 2.0, 3.0], 2);
        assert_eq!(e2, 11.0);
        assert_relative_eq!(
            elem_sym_norm(&tuple(&[1.0, 2.0, 3.0]), 2).unwrap(),
            e2 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn elem_sym_rejects_bad_k() {
        assert!(matches!(elem_sym_norm(&tuple(&[1.0, 2.0]), 0), Err(Error::Argument(_))));
        assert!(matches!(elem_sym_norm(&tuple(&[1.0, 2.0]), 3), Err(Error::Argument(_))));
    }

    #[test]
    fn normalization_up_to_six() {
        for n in 1..=6 {
            for k in 1..=n {
                assert_eq!(elem_sym_norm(&tuple(&vec![1.0; n]), k).unwrap(), 1.0, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn weingarten_f_examples() {
        let a = CurvatureMatrix::identity(2).scaled(3.0);
        assert_relative_eq!(weingarten_f(&a, 2).unwrap(), 3.0, epsilon = 1e-15);
        let a = CurvatureMatrix::diagonal(&[1.0, 2.0]);
        assert_relative_eq!(weingarten_f(&a, 1).unwrap(), 1.5, epsilon = 1e-15);
        let a = CurvatureMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_relative_eq!(weingarten_f(&a, 2).unwrap(), 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn weingarten_f_cone_violation() {
        let a = CurvatureMatrix::diagonal(&[1.0, 0.0]);
        assert!(matches!(weingarten_f(&a, 1), Err(Error::ConeViolation { .. })));
        let a = CurvatureMatrix::diagonal(&[-1.0, 2.0]);
        assert!(matches!(dual_f(&a, 1), Err(Error::ConeViolation { .. })));
    }

    #[test]
    fn dual_f_examples() {
        for n in 1..=4 {
            for k in 1..=n {
                assert_relative_eq!(
                    dual_f(&CurvatureMatrix::identity(n), k).unwrap(),
                    1.0,
                    epsilon = 1e-15
                );
            }
        }
        let a = CurvatureMatrix::diagonal(&[1.0, 0.5]);
        assert_relative_eq!(dual_f(&a, 1).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn f_gradient_examples() {
        let g = f_gradient(&CurvatureMatrix::identity(2), 1).unwrap();
        assert_relative_eq!(g.get(0, 0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.get(1, 1), 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.get(0, 1), 0.0, epsilon = 1e-15);

        let g = f_gradient(&CurvatureMatrix::diagonal(&[1.0, 3.0]), 2).unwrap();
        assert_relative_eq!(g.get(0, 0), 3f64.sqrt() / 2.0, epsilon = 1e-14);
        assert_relative_eq!(g.get(1, 1), 1.0 / (2.0 * 3f64.sqrt()), epsilon = 1e-14);
        assert_relative_eq!(g.get(0, 1), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn repeated_eigenvalues_gradient() {
        // Identity in 3D with k = 2: dF/dA = I / 3 by symmetry and homogeneity.
        let g = f_gradient(&CurvatureMatrix::identity(3), 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert_relative_eq!(g.get(i, j), want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn cone_membership() {
        assert!(tuple(&[1.0, 2.0, 3.0]).in_positive_cone());
        assert!(!tuple(&[1.0, 0.0, 3.0]).in_positive_cone());
        assert!(!tuple(&[-1.0, 2.0]).in_positive_cone());
    }

    #[test]
    fn maclaurin_examples() {
        let r = maclaurin_report(&tuple(&[1.0; 4])).unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let r = maclaurin_report(&tuple(&[1.0, 2.0])).unwrap();
        assert_relative_eq!(r[0], 1.5, epsilon = 1e-15);
        assert_relative_eq!(r[1], 2f64.sqrt(), epsilon = 1e-15);
        assert!(r[0] >= r[1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

        #[test]
        fn recurrence_matches_enumeration(values in prop::collection::vec(-3.0f64..3.0, 1..=5)) {
            let n = values.len();
            for k in 0..=n {
                let want = e_k_enumerate(&values, k);
                let got = elem_sym_all(&values, k)[k];
                prop_assert!((want - got).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }

        #[test]
        fn homogeneity(values in prop::collection::vec(0.1f64..5.0, 1..=5), c in 0.1f64..10.0) {
            let n = values.len();
            let a = CurvatureMatrix::diagonal(&values);
            for k in 1..=n {
                let f = weingarten_f(&a, k).unwrap();
                let fc = weingarten_f(&a.scaled(c), k).unwrap();
                prop_assert!((fc - c * f).abs() <= 1e-12 * fc.abs());
            }
        }
    }
}
