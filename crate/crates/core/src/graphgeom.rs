//! Pointwise geometry of radial graphs `X(x) = x / u(x)` over a cap.
//!
//! With `w = sqrt(u^2 + |grad u|^2)`, in an orthonormal frame of the sphere:
//!
//! ```text
//! g_ij     = (delta_ij + u_i u_j / u^2) / u^2
//! h_ij     = (u delta_ij + u_ij) / (u w)
//! gamma^ij = u delta_ij - u u_i u_j / (w (u + w))
//! gamma_ij = delta_ij / u + u_i u_j / (u^2 (u + w))
//! A        = gamma^ h gamma^
//! ```
//!
//! `gamma_` squares to `g`, so the eigenvalues of the symmetric `A` are the
//! principal curvatures. With `v = ln u` the same matrix reads
//! `A = (e^v / w) (I + gamma H_v gamma)`, `w = sqrt(1 + |grad v|^2)`,
//! `gamma = I - grad v grad v^T / (w (1 + w))`.
//!
//! The unit normal is `eta = (u x + grad u) / w`, with `grad u` expanded
//! in the ambient frame. It points away from the origin.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Sym2;
use crate::sphere::CapGrid;
use crate::symfunc::{self, cone_margin};

/// Per-node geometry of a radial graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPointData {
    pub u: f64,
    pub grad_u: [f64; 2],
    pub hess_u: Sym2,
    pub w: f64,
    pub gamma_upper: Sym2,
    pub gamma_lower: Sym2,
    pub a: Sym2,
    pub eta: [f64; 3],
    pub g: Sym2,
    pub g_inv: Sym2,
    /// Embedded position `x / u`.
    pub position: [f64; 3],
}

impl GraphPointData {
    /// Ascending principal curvatures.
    pub fn kappa(&self) -> [f64; 2] {
        self.a.eigenvalues()
    }

    /// Eigenvalues of `u I + hess u`, ascending.
    pub fn convexity_eigenvalues(&self) -> [f64; 2] {
        self.hess_u.add(Sym2::IDENTITY.scale(self.u)).eigenvalues()
    }

    /// `S_k(kappa)`.
    pub fn weingarten(&self, k: usize) -> Result<f64> {
        Ok(symfunc::weingarten_f_eigs(&self.kappa(), k)?.powi(k as i32))
    }
}

fn ambient(v: [f64; 2], frame: &[[f64; 3]; 2]) -> [f64; 3] {
    [0, 1, 2].map(|i| v[0] * frame[0][i] + v[1] * frame[1][i])
}

/// Geometry from `u`, its frame gradient and covariant Hessian at `x`.
pub fn point_geometry_u(
    u: f64,
    grad_u: [f64; 2],
    hess_u: Sym2,
    x: [f64; 3],
    frame: &[[f64; 3]; 2],
) -> Result<GraphPointData> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("u = {u} is not positive")));
    }
    let p = grad_u;
    let pp = Sym2::outer(p);
    let w = (u * u + pp.trace()).sqrt();
    let g = Sym2::IDENTITY.add(pp.scale(1.0 / (u * u))).scale(1.0 / (u * u));
    let g_inv = g.inverse().ok_or_else(|| Error::Domain("degenerate metric".into()))?;
    let h = Sym2::IDENTITY.scale(u).add(hess_u).scale(1.0 / (u * w));
    let gamma_upper = Sym2::IDENTITY.scale(u).sub(pp.scale(u / (w * (u + w))));
    let gamma_lower = Sym2::IDENTITY.scale(1.0 / u).add(pp.scale(1.0 / (u * u * (u + w))));
    let a = h.sandwich(&gamma_upper);
    let gp = ambient(p, frame);
    let eta = [0, 1, 2].map(|i| (u * x[i] + gp[i]) / w);
    Ok(GraphPointData {
        u,
        grad_u,
        hess_u,
        w,
        gamma_upper,
        gamma_lower,
        a,
        eta,
        g,
        g_inv,
        position: x.map(|c| c / u),
    })
}

/// `gamma = I - q q^T / (w (1 + w))` and `w = sqrt(1 + |q|^2)`.
pub fn v_gamma(q: [f64; 2]) -> (Sym2, f64) {
    let qq = Sym2::outer(q);
    let w = (1.0 + qq.trace()).sqrt();
    (Sym2::IDENTITY.sub(qq.scale(1.0 / (w * (1.0 + w)))), w)
}

/// `A` in the logarithmic variable, without the rest of the geometry.
pub fn curvature_matrix_v(v: f64, grad_v: [f64; 2], hess_v: Sym2) -> Sym2 {
    let (gamma, w) = v_gamma(grad_v);
    Sym2::IDENTITY.add(hess_v.sandwich(&gamma)).scale(v.exp() / w)
}

/// Unit normal from the logarithmic variable: `(x + grad v) / w`.
pub fn normal_v(grad_v: [f64; 2], x: [f64; 3], frame: &[[f64; 3]; 2]) -> [f64; 3] {
    let w = (1.0 + grad_v[0] * grad_v[0] + grad_v[1] * grad_v[1]).sqrt();
    let gq = ambient(grad_v, frame);
    [0, 1, 2].map(|i| (x[i] + gq[i]) / w)
}

/// Geometry from `v = ln u`, with `A` from the logarithmic form.
pub fn point_geometry_v(
    v: f64,
    grad_v: [f64; 2],
    hess_v: Sym2,
    x: [f64; 3],
    frame: &[[f64; 3]; 2],
) -> Result<GraphPointData> {
    let u = v.exp();
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::Domain(format!("v = {v} gives u = {u}")));
    }
    let q = grad_v;
    let qq = Sym2::outer(q);
    let (gamma, wv) = v_gamma(q);
    let a = curvature_matrix_v(v, q, hess_v);
    let g = Sym2::IDENTITY.add(qq).scale(1.0 / (u * u));
    let g_inv = g.inverse().ok_or_else(|| Error::Domain("degenerate metric".into()))?;
    Ok(GraphPointData {
        u,
        grad_u: [u * q[0], u * q[1]],
        hess_u: hess_v.add(qq).scale(u),
        w: u * wv,
        gamma_upper: gamma.scale(u),
        gamma_lower: Sym2::IDENTITY.add(qq.scale(1.0 / (1.0 + wv))).scale(1.0 / u),
        a,
        eta: normal_v(q, x, frame),
        g,
        g_inv,
        position: x.map(|c| c / u),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// values are `u`
    U,
    /// values are `v = ln u`
    V,
}

/// Worst node of an admissibility scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub worst_node: usize,
    /// Smallest eigenvalue of `u I + hess u` at `worst_node`.
    pub min_eigenvalue: f64,
}

/// Admissibility over a list of per-node data: every `u I + hess u` must
/// be positive definite with the cone margin.
pub fn admissibility(points: &[GraphPointData]) -> AdmissibilityReport {
    let mut worst = (0, f64::INFINITY, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let eig = p.convexity_eigenvalues();
        let margin = cone_margin(&eig);
        if margin < worst.2 {
            worst = (i, eig[0], margin);
        }
    }
    AdmissibilityReport { admissible: worst.2 > 0.0, worst_node: worst.0, min_eigenvalue: worst.1 }
}

/// A scalar field on a cap grid together with its per-node geometry.
#[derive(Debug, Clone)]
pub struct GraphState {
    grid: Arc<CapGrid>,
    repr: Representation,
    values: Vec<f64>,
    points: Vec<GraphPointData>,
}

impl GraphState {
    pub fn from_u(grid: Arc<CapGrid>, u: Vec<f64>) -> Result<Self> {
        Self::new(grid, Representation::U, u)
    }

    pub fn from_v(grid: Arc<CapGrid>, v: Vec<f64>) -> Result<Self> {
        Self::new(grid, Representation::V, v)
    }

    pub fn new(grid: Arc<CapGrid>, repr: Representation, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Argument(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let points = compute_points(&grid, repr, &values)?;
        Ok(Self { grid, repr, values, points })
    }

    /// Replaces the field and recomputes the geometry.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        *self = Self::new(self.grid.clone(), self.repr, values)?;
        Ok(())
    }

    pub fn grid(&self) -> &Arc<CapGrid> {
        &self.grid
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn points(&self) -> &[GraphPointData] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &GraphPointData {
        &self.points[i]
    }

    pub fn u_values(&self) -> Vec<f64> {
        match self.repr {
            Representation::U => self.values.clone(),
            Representation::V => self.values.iter().map(|v| v.exp()).collect(),
        }
    }

    pub fn v_values(&self) -> Vec<f64> {
        match self.repr {
            Representation::U => self.values.iter().map(|u| u.ln()).collect(),
            Representation::V => self.values.clone(),
        }
    }

    /// Same surface in the other representation.
    pub fn to_representation(&self, repr: Representation) -> Result<Self> {
        let values = match repr {
            Representation::U => self.u_values(),
            Representation::V => self.v_values(),
        };
        Self::new(self.grid.clone(), repr, values)
    }

    pub fn admissible(&self) -> AdmissibilityReport {
        admissibility(&self.points)
    }

    /// Triangle mesh of the embedded graph.
    pub fn embed(&self) -> Mesh {
        let vertices = self.points.iter().map(|p| p.position).collect::<Vec<_>>();
        let faces = triangulate(&self.grid, &vertices);
        Mesh { vertices, faces }
    }

    /// `(eta, <X, eta>)` per node: samples of the support function of the
    /// enclosed convex body on the Gauss image.
    pub fn support_samples(&self) -> Result<Vec<([f64; 3], f64)>> {
        let report = self.admissible();
        if !report.admissible {
            return Err(Error::NotAdmissible {
                node: report.worst_node,
                min_eigenvalue: report.min_eigenvalue,
            });
        }
        Ok(self
            .points
            .iter()
            .map(|p| {
                let h = p.position[0] * p.eta[0] + p.position[1] * p.eta[1] + p.position[2] * p.eta[2];
                (p.eta, h)
            })
            .collect())
    }
}

fn compute_points(grid: &CapGrid, repr: Representation, values: &[f64]) -> Result<Vec<GraphPointData>> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let node = grid.node(i);
            let (grad, hess) = grid.frame_derivatives(values, i);
            match repr {
                Representation::U => point_geometry_u(values[i], grad, hess, node.x, &node.frame),
                Representation::V => point_geometry_v(values[i], grad, hess, node.x, &node.frame),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Every face keeps its outward orientation: the face normal has a
    /// positive component along the centroid direction.
    pub fn is_embedded(&self) -> bool {
        self.faces.iter().all(|f| {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let n = [
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            let centroid = [0, 1, 2].map(|i| a[i] + b[i] + c[i]);
            n[0] * centroid[0] + n[1] * centroid[1] + n[2] * centroid[2] > 0.0
        })
    }
}

/// Center fan plus quads split along their shorter embedded diagonal.
pub fn triangulate(grid: &CapGrid, vertices: &[[f64; 3]]) -> Vec<[usize; 3]> {
    let s = grid.sectors() as isize;
    let dist2 = |a: usize, b: usize| {
        let (p, q) = (vertices[a], vertices[b]);
        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
    };
    let mut faces = Vec::with_capacity(grid.sectors() * (2 * grid.rings() - 1));
    for m in 0..s {
        faces.push([0, grid.index(1, m), grid.index(1, m + 1)]);
    }
    for j in 1..grid.rings() {
        for m in 0..s {
            let a = grid.index(j, m);
            let b = grid.index(j, m + 1);
            let c = grid.index(j + 1, m + 1);
            let d = grid.index(j + 1, m);
            if dist2(a, c) <= dist2(d, b) {
                faces.push([a, d, c]);
                faces.push([a, c, b]);
            } else {
                faces.push([a, d, b]);
                faces.push([d, c, b]);
            }
        }
    }
    faces
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const E: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    const POLE: [f64; 3] = [0.0, 0.0, 1.0];

    fn mat_close(a: Sym2, b: Sym2, tol: f64) -> bool {
        (a.xx - b.xx).abs() <= tol && (a.xy - b.xy).abs() <= tol && (a.yy - b.yy).abs() <= tol
    }

    fn product(a: Sym2, b: Sym2) -> [[f64; 2]; 2] {
        crate::linalg::mat_mul(a.to_mat(), b.to_mat())
    }

    /// Off-center sphere |X - c| = R as a radial graph: far intersection root.
    fn sphere_u(c: [f64; 3], r: f64, x: [f64; 3]) -> f64 {
        let xc = x[0] * c[0] + x[1] * c[1] + x[2] * c[2];
        let cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        1.0 / (xc + (r * r - cc + xc * xc).sqrt())
    }

    #[test]
    fn constant_u_is_centered_sphere() {
        let c = 2.5;
        let p = point_geometry_u(c, [0.0, 0.0], Sym2::ZERO, POLE, &E).unwrap();
        assert!(mat_close(p.gamma_upper, Sym2::IDENTITY.scale(c), 1e-15));
        assert!(mat_close(p.gamma_lower, Sym2::IDENTITY.scale(1.0 / c), 1e-15));
        assert!(mat_close(p.a, Sym2::IDENTITY.scale(c), 1e-15));
        assert_eq!(p.eta, POLE);
        assert_eq!(p.kappa(), [c, c]);
        assert_eq!(p.w, c);
    }

    #[test]
    fn tilted_gradient_hand_values() {
        let p = point_geometry_u(1.0, [1.0, 0.0], Sym2::ZERO, POLE, &E).unwrap();
        assert_relative_eq!(p.w, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p.gamma_upper.xx, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p.gamma_lower.xx, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p.gamma_upper.xx * p.gamma_lower.xx, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_u_is_a_domain_error() {
        assert!(matches!(
            point_geometry_u(0.0, [0.0, 0.0], Sym2::ZERO, POLE, &E),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn v_form_hand_check() {
        let p = point_geometry_v(0.0, [3.0, 4.0], Sym2::ZERO, POLE, &E).unwrap();
        assert_relative_eq!(p.w, 26f64.sqrt(), epsilon = 1e-14);
        // gamma^2 equals the inverse of I + q q^T = I - q q^T / w^2
        let (gamma, w) = v_gamma([3.0, 4.0]);
        let sq = product(gamma, gamma);
        let want = Sym2::IDENTITY.sub(Sym2::outer([3.0, 4.0]).scale(1.0 / (w * w)));
        assert!((sq[0][0] - want.xx).abs() < 1e-14);
        assert!((sq[0][1] - want.xy).abs() < 1e-14);
        assert!((sq[1][1] - want.yy).abs() < 1e-14);
        let c = point_geometry_v(0.4, [0.0, 0.0], Sym2::ZERO, POLE, &E).unwrap();
        assert!(mat_close(c.a, Sym2::IDENTITY.scale(0.4f64.exp()), 1e-15));
    }

    fn random_u_input(rng: &mut ChaCha8Rng) -> (f64, [f64; 2], Sym2) {
        let u = rng.gen_range(0.2..5.0);
        let r = rng.gen_range(0.0..10.0);
        let t = rng.gen_range(0.0..2.0 * PI);
        let h = Sym2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        (u, [r * t.cos(), r * t.sin()], h)
    }

    #[test]
    fn gamma_identities_and_metric_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (u, p, h) = random_u_input(&mut rng);
            let d = point_geometry_u(u, p, h, POLE, &E).unwrap();
            let id = product(d.gamma_upper, d.gamma_lower);
            assert!((id[0][0] - 1.0).abs() < 1e-10 && (id[1][1] - 1.0).abs() < 1e-10);
            assert!(id[0][1].abs() < 1e-10 && id[1][0].abs() < 1e-10);
            let gl2 = product(d.gamma_lower, d.gamma_lower);
            let scale = d.g.xx.abs().max(d.g.yy.abs());
            assert!((gl2[0][0] - d.g.xx).abs() < 1e-10 * scale);
            assert!((gl2[0][1] - d.g.xy).abs() < 1e-10 * scale);
            // eigenvalues of g^{-1} h
            let hh = Sym2::IDENTITY.scale(u).add(h).scale(1.0 / (u * d.w));
            let m = crate::linalg::mat_mul(d.g_inv.to_mat(), hh.to_mat());
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            let want = [0.5 * tr - disc, 0.5 * tr + disc];
            let got = d.kappa();
            let s = want[0].abs().max(want[1].abs()).max(1.0);
            assert!((got[0] - want[0]).abs() < 1e-9 * s && (got[1] - want[1]).abs() < 1e-9 * s);
            let n = d.eta;
            assert!(((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn u_and_v_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v: f64 = rng.gen_range(-1.5..1.5);
            let q = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let hv = Sym2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let u = v.exp();
            let pv = point_geometry_v(v, q, hv, POLE, &E).unwrap();
            let pu = point_geometry_u(u, [u * q[0], u * q[1]], hv.add(Sym2::outer(q)).scale(u), POLE, &E)
                .unwrap();
            let scale = pu.a.xx.abs().max(pu.a.yy.abs()).max(pu.a.xy.abs()).max(1e-300);
            assert!(mat_close(pv.a, pu.a, 1e-10 * scale), "{:?} vs {:?}", pv.a, pu.a);
            for i in 0..3 {
                assert!((pv.eta[i] - pu.eta[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn off_center_sphere_geometry() {
        let c = [0.0, 0.0, 0.3];
        let mut worst = Vec::new();
        for rings in [16, 32] {
            let grid = Arc::new(CapGrid::build(PI / 3.0, rings, 2 * rings).unwrap());
            let u: Vec<f64> = grid.nodes().iter().map(|n| sphere_u(c, 1.0, n.x)).collect();
            let state = GraphState::from_u(grid.clone(), u).unwrap();
            let mut err = 0.0_f64;
            for p in state.points() {
                let k = p.kappa();
                err = err.max((k[0] - 1.0).abs()).max((k[1] - 1.0).abs());
                // eta is the outward normal (X - c) / R of the sphere
                for i in 0..3 {
                    let want = p.position[i] - c[i];
                    assert!((p.eta[i] - want).abs() < 1e-2, "eta {:?} vs X - c", p.eta);
                }
            }
            assert!(state.admissible().admissible);
            let samples = state.support_samples().unwrap();
            for (eta, h) in samples {
                let want = c[0] * eta[0] + c[1] * eta[1] + c[2] * eta[2] + 1.0;
                assert!((h - want).abs() < 1e-3, "support {h} vs {want}");
            }
            worst.push(err);
        }
        assert!(worst[0] < 1e-2, "{worst:?}");
        assert!((worst[0] / worst[1]).log2() >= 1.8, "{worst:?}");
    }

    #[test]
    fn centered_sphere_support_and_embedding() {
        let grid = Arc::new(CapGrid::build(PI / 3.0, 8, 16).unwrap());
        let r0 = 1.7;
        let state = GraphState::from_u(grid.clone(), vec![1.0 / r0; grid.len()]).unwrap();
        for (_, h) in state.support_samples().unwrap() {
            assert_relative_eq!(h, r0, epsilon = 1e-14);
        }
        let unit = GraphState::from_u(grid.clone(), vec![1.0; grid.len()]).unwrap();
        let mesh = unit.embed();
        assert_eq!(mesh.vertices.len(), grid.len());
        for v in &mesh.vertices {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-14);
        }
        assert!(mesh.is_embedded());
        assert_eq!(mesh.faces.len(), 16 * (2 * 8 - 1));
    }

    #[test]
    fn admissibility_reports_worst_node() {
        let grid = Arc::new(CapGrid::build(PI / 3.0, 8, 16).unwrap());
        let state = GraphState::from_u(grid.clone(), vec![1.0; grid.len()]).unwrap();
        assert!(state.admissible().admissible);
        let mut points = state.points().to_vec();
        points[7].hess_u = Sym2::diag(-2.0, 0.0);
        let r = admissibility(&points);
        assert!(!r.admissible);
        assert_eq!(r.worst_node, 7);
        assert_relative_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-15);
        // boundary of the cone is excluded
        points[7].hess_u = Sym2::diag(-1.0, 0.0);
        assert!(!admissibility(&points).admissible);
        let bad = GraphState::from_u(grid.clone(), grid.nodes().iter().map(|n| 1.0 + 3.0 * n.x[2] * n.x[2]).collect())
            .unwrap();
        assert!(bad.support_samples().is_err() || bad.admissible().admissible);
    }

    #[test]
    fn off_center_mesh_lies_on_sphere() {
        let c = [0.0, 0.0, 0.3];
        let grid = Arc::new(CapGrid::build(PI / 3.0, 16, 32).unwrap());
        let u: Vec<f64> = grid.nodes().iter().map(|n| sphere_u(c, 1.0, n.x)).collect();
        let mesh = GraphState::from_u(grid, u).unwrap().embed();
        for v in &mesh.vertices {
            let d = ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt();
            assert!((d - 1.0).abs() < 1e-10);
        }
        assert!(mesh.is_embedded());
    }
}
