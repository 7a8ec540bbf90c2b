//! Post-solve checks: curvature pinching, support-function duality,
//! Newton-Maclaurin bound, gradient maximum and an independent mesh-based
//! curvature estimate.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::graphgeom::{GraphState, Mesh};
use crate::psidsl::PsiExpr;
use crate::symfunc::{dual_f_eigs, sk, weingarten_f_eigs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinchingReport {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub min_node: usize,
    pub max_node: usize,
}

impl PinchingReport {
    pub fn ratio(&self) -> f64 {
        self.kappa_max / self.kappa_min
    }

    pub fn is_pinched(&self) -> bool {
        self.kappa_min > 0.0 && self.kappa_max.is_finite() && self.kappa_min <= self.kappa_max
    }
}

/// Extremal principal curvatures over all nodes.
pub fn pinching_report(state: &GraphState) -> PinchingReport {
    let mut r = PinchingReport { kappa_min: f64::INFINITY, kappa_max: f64::NEG_INFINITY, min_node: 0, max_node: 0 };
    for (i, p) in state.points().iter().enumerate() {
        let [lo, hi] = p.kappa();
        if lo < r.kappa_min {
            r.kappa_min = lo;
            r.min_node = i;
        }
        if hi > r.kappa_max {
            r.kappa_max = hi;
            r.max_node = i;
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityReport {
    /// `max |S_k(kappa) S_n(1/kappa) / S_{n-k}(1/kappa) - 1|`.
    pub identity_error: f64,
    /// `max |F~(1/kappa) psi^(1/k)(eta) - 1|` over interior nodes.
    pub equation_error: f64,
}

/// `S_k(kappa) * S_n(mu) / S_{n-k}(mu) - 1` with `mu = 1/kappa`.
pub fn duality_identity_error(kappa: &[f64], k: usize) -> f64 {
    let n = kappa.len();
    let mu: Vec<f64> = kappa.iter().map(|x| 1.0 / x).collect();
    (sk(kappa, k) * sk(&mu, n) / sk(&mu, n - k) - 1.0).abs()
}

pub fn duality_check(state: &GraphState, psi: &PsiExpr, k: usize) -> DualityReport {
    let grid = state.grid();
    let mut out = DualityReport { identity_error: 0.0, equation_error: 0.0 };
    for (i, p) in state.points().iter().enumerate() {
        let kappa = p.kappa();
        out.identity_error = out.identity_error.max(duality_identity_error(&kappa, k));
        if grid.is_boundary(i) {
            continue;
        }
        let mu = [1.0 / kappa[1], 1.0 / kappa[0]];
        let err = match dual_f_eigs(&mu, k) {
            Ok(f) => (f * psi.value(p.eta).powf(1.0 / k as f64) - 1.0).abs(),
            Err(_) => f64::INFINITY,
        };
        out.equation_error = out.equation_error.max(err);
    }
    out
}

/// `S_n(mu) - psi~^k S_n(mu)^((n-k)/n)` with `mu = 1/kappa`.
pub fn nm_margin(kappa: &[f64], psi_tilde: f64, k: usize) -> f64 {
    let n = kappa.len();
    let mu: Vec<f64> = kappa.iter().map(|x| 1.0 / x).collect();
    let s_n = sk(&mu, n);
    s_n - psi_tilde.powi(k as i32) * s_n.powf((n - k) as f64 / n as f64)
}

/// Smallest Newton-Maclaurin margin over interior nodes, with
/// `psi~ = psi(eta)^(-1/k)`.
pub fn nm_lower_bound(state: &GraphState, psi: &PsiExpr, k: usize) -> f64 {
    let grid = state.grid();
    state
        .points()
        .iter()
        .enumerate()
        .filter(|(i, _)| !grid.is_boundary(*i))
        .map(|(_, p)| nm_margin(&p.kappa(), psi.value(p.eta).powf(-1.0 / k as f64), k))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientMaxReport {
    pub node: usize,
    /// `w = sqrt(u^2 + |grad u|^2)` at `node`.
    pub w: f64,
    pub grad_norm: f64,
    pub on_boundary: bool,
}

pub fn gradient_max_locus(state: &GraphState) -> GradientMaxReport {
    let (node, p) = state
        .points()
        .iter()
        .enumerate()
        .fold((0, &state.points()[0]), |best, cur| if cur.1.w > best.1.w { cur } else { best });
    GradientMaxReport {
        node,
        w: p.w,
        grad_norm: p.grad_u[0].hypot(p.grad_u[1]),
        on_boundary: state.grid().is_boundary(node),
    }
}

/// Range of `tr(hess u) + n u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceReport {
    pub min: f64,
    pub max: f64,
}

pub fn trace_report(state: &GraphState) -> TraceReport {
    let mut r = TraceReport { min: f64::INFINITY, max: f64::NEG_INFINITY };
    for p in state.points() {
        let h = p.hess_u.trace() + 2.0 * p.u;
        r.min = r.min.min(h);
        r.max = r.max.max(h);
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshCurvatureReport {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub worst_vertex: usize,
    pub evaluated: usize,
    pub skipped: usize,
    /// Relative error per vertex; `None` where no fit was made.
    #[serde(skip)]
    pub errors: Vec<Option<f64>>,
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit3(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    a.map(|c| c / n)
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Topology {
    neighbours: Vec<BTreeSet<usize>>,
    incident: Vec<Vec<usize>>,
    boundary: Vec<bool>,
}

impl Topology {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.vertices.len();
        let mut neighbours = vec![BTreeSet::new(); n];
        let mut incident = vec![Vec::new(); n];
        let mut edges = std::collections::BTreeMap::new();
        for (f, face) in mesh.faces.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (face[e], face[(e + 1) % 3]);
                neighbours[a].insert(b);
                neighbours[b].insert(a);
                incident[a].push(f);
                *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let mut boundary = vec![false; n];
        for (&(a, b), &count) in &edges {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        Self { neighbours, incident, boundary }
    }

    /// Vertex and its one-ring are away from the border.
    fn has_full_rings(&self, v: usize) -> bool {
        !self.boundary[v] && self.neighbours[v].iter().all(|&w| !self.boundary[w])
    }

    fn two_ring(&self, v: usize) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for &w in &self.neighbours[v] {
            set.insert(w);
            set.extend(self.neighbours[w].iter().copied());
        }
        set.remove(&v);
        set.into_iter().collect()
    }
}

/// `S_k` of the fitted surface and its unit normal at vertex `v`.
fn fit_vertex(mesh: &Mesh, topo: &Topology, v: usize, k: usize) -> Option<(f64, [f64; 3])> {
    let p = mesh.vertices[v];
    let mut n0 = [0.0; 3];
    for &f in &topo.incident[v] {
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        let fn_ = cross3(sub3(b, a), sub3(c, a));
        n0 = [0, 1, 2].map(|i| n0[i] + fn_[i]);
    }
    if dot3(n0, p) < 0.0 {
        n0 = n0.map(|c| -c);
    }
    let n0 = unit3(n0);
    let seed = if n0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t1 = unit3(cross3(n0, seed));
    let t2 = cross3(n0, t1);

    let ring = topo.two_ring(v);
    if ring.len() < 8 {
        return None;
    }
    let mut m = DMatrix::<f64>::zeros(ring.len(), 5);
    let mut rhs = DVector::<f64>::zeros(ring.len());
    let mut scale = 0.0_f64;
    for q in &ring {
        let d = sub3(mesh.vertices[*q], p);
        scale = scale.max(dot3(d, t1).abs()).max(dot3(d, t2).abs());
    }
    for (row, q) in ring.iter().enumerate() {
        let d = sub3(mesh.vertices[*q], p);
        let (x, y) = (dot3(d, t1) / scale, dot3(d, t2) / scale);
        let cols = [x, y, x * x, x * y, y * y];
        for (c, val) in cols.iter().enumerate() {
            m[(row, c)] = *val;
        }
        rhs[row] = dot3(d, n0);
    }
    let svd = m.svd(true, true);
    let (smax, smin) = svd.singular_values.iter().fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if !(smin > 1e-8 * smax) {
        return None;
    }
    let c = svd.solve(&rhs, 1e-14).ok()?;
    let (gx, gy) = (c[0] / scale, c[1] / scale);
    let s2 = scale * scale;
    let (hxx, hxy, hyy) = (2.0 * c[2] / s2, c[3] / s2, 2.0 * c[4] / s2);
    let q = 1.0 + gx * gx + gy * gy;
    let root = q.sqrt();
    // shape operator of the height graph, sign chosen so convex is positive
    let (ixx, ixy, iyy) = (1.0 + gx * gx, gx * gy, 1.0 + gy * gy);
    let (bxx, bxy, byy) = (-hxx / root, -hxy / root, -hyy / root);
    let det_i = ixx * iyy - ixy * ixy;
    let s11 = (iyy * bxx - ixy * bxy) / det_i;
    let s22 = (ixx * byy - ixy * bxy) / det_i;
    let mean = 0.5 * (s11 + s22);
    let gauss = (bxx * byy - bxy * bxy) / det_i;
    let wk = if k == 1 { mean } else { gauss };
    let normal = unit3([0, 1, 2].map(|i| n0[i] - gx * t1[i] - gy * t2[i]));
    Some((wk, normal))
}

/// Compares `W_k` from local fits of the embedded mesh against `psi` at
/// the fitted normal.
pub fn mesh_curvature_check(state: &GraphState, psi: &PsiExpr, k: usize) -> MeshCurvatureReport {
    mesh_curvature_check_mesh(&state.embed(), psi, k)
}

pub fn mesh_curvature_check_mesh(mesh: &Mesh, psi: &PsiExpr, k: usize) -> MeshCurvatureReport {
    let topo = Topology::new(mesh);
    let errors: Vec<Option<f64>> = (0..mesh.vertices.len())
        .into_par_iter()
        .map(|v| {
            if !topo.has_full_rings(v) {
                return None;
            }
            let (wk, normal) = fit_vertex(mesh, &topo, v, k)?;
            let target = psi.value(normal);
            let err = ((wk - target) / target).abs();
            err.is_finite().then_some(err)
        })
        .collect();
    let mut sorted: Vec<f64> = errors.iter().flatten().copied().collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (worst_vertex, max) = errors
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i, e)))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let interior = (0..mesh.vertices.len()).filter(|&v| topo.has_full_rings(v)).count();
    MeshCurvatureReport {
        median: percentile(&sorted, 0.5),
        p95: percentile(&sorted, 0.95),
        max,
        worst_vertex,
        evaluated: sorted.len(),
        skipped: interior - sorted.len(),
        errors,
    }
}

/// Thresholds used for pass/fail entries of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub mesh_median: f64,
    pub mesh_p95: f64,
    pub duality_identity: f64,
    pub duality_equation: f64,
    pub nm_margin: f64,
    pub comparison: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            mesh_median: 0.02,
            mesh_p95: 0.05,
            duality_identity: 1e-10,
            duality_equation: 1e-6,
            nm_margin: -1e-8,
            comparison: -1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value: finite(value), threshold, passed: value <= threshold }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value: finite(value), threshold, passed: value >= threshold }
    }
}

/// Non-finite values are reported as the largest finite magnitude.
fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x < 0.0 {
        f64::MIN
    } else {
        f64::MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub passed: bool,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub pinching_ratio: f64,
    /// `min (v - v_)` over all nodes.
    pub comparison_margin: f64,
    /// `min (v - v_)` over interior nodes.
    pub interior_comparison_margin: f64,
    pub duality_identity_error: f64,
    pub duality_equation_error: f64,
    pub nm_margin: f64,
    pub mesh_median: f64,
    pub mesh_p95: f64,
    pub mesh_max: f64,
    pub mesh_evaluated: usize,
    pub mesh_skipped: usize,
    pub gradient_max: GradientMaxReport,
    pub trace_min: f64,
    pub trace_max: f64,
    pub checks: Vec<Check>,
}

/// Runs every check on a solved state; `v_under` is the subsolution in
/// the logarithmic variable.
pub fn diagnose(
    state: &GraphState,
    v_under: &[f64],
    psi: &PsiExpr,
    k: usize,
    thresholds: &Thresholds,
) -> DiagnosticsReport {
    let pinch = pinching_report(state);
    let duality = duality_check(state, psi, k);
    let nm = nm_lower_bound(state, psi, k);
    let mesh = mesh_curvature_check(state, psi, k);
    let grad = gradient_max_locus(state);
    let trace = trace_report(state);
    let v = state.v_values();
    let grid = state.grid();
    let (mut margin, mut interior) = (f64::INFINITY, f64::INFINITY);
    for (i, (a, b)) in v.iter().zip(v_under).enumerate() {
        margin = margin.min(a - b);
        if !grid.is_boundary(i) {
            interior = interior.min(a - b);
        }
    }
    let checks = vec![
        Check::at_least("kappa_min", pinch.kappa_min, 0.0),
        Check::at_most("duality_identity", duality.identity_error, thresholds.duality_identity),
        Check::at_most("duality_equation", duality.equation_error, thresholds.duality_equation),
        Check::at_least("nm_margin", nm, thresholds.nm_margin),
        Check::at_least("comparison", margin, thresholds.comparison),
        Check::at_most("mesh_median", mesh.median, thresholds.mesh_median),
        Check::at_most("mesh_p95", mesh.p95, thresholds.mesh_p95),
    ];
    DiagnosticsReport {
        passed: checks.iter().all(|c| c.passed) && pinch.is_pinched(),
        kappa_min: finite(pinch.kappa_min),
        kappa_max: finite(pinch.kappa_max),
        pinching_ratio: finite(pinch.ratio()),
        comparison_margin: finite(margin),
        interior_comparison_margin: finite(interior),
        duality_identity_error: finite(duality.identity_error),
        duality_equation_error: finite(duality.equation_error),
        nm_margin: finite(nm),
        mesh_median: finite(mesh.median),
        mesh_p95: finite(mesh.p95),
        mesh_max: finite(mesh.max),
        mesh_evaluated: mesh.evaluated,
        mesh_skipped: mesh.skipped,
        gradient_max: grad,
        trace_min: finite(trace.min),
        trace_max: finite(trace.max),
        checks,
    }
}

/// `F(kappa)` at every node, for export.
pub fn weingarten_field(state: &GraphState, k: usize) -> Vec<f64> {
    state
        .points()
        .iter()
        .map(|p| weingarten_f_eigs(&p.kappa(), k).map(|f| f.powi(k as i32)).unwrap_or(f64::NAN))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::CapGrid;
    use crate::subsolution::{build_subsolution, EnclosingSphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn cap(center: [f64; 3], rings: usize) -> GraphState {
        let sphere = EnclosingSphere::new(center, 1.0).unwrap();
        let grid = Arc::new(CapGrid::build(PI / 3.0, rings, 2 * rings).unwrap());
        build_subsolution(&sphere, grid).unwrap().state
    }

    #[test]
    fn centered_sphere_pinching() {
        let sphere = EnclosingSphere::new([0.0; 3], 2.0).unwrap();
        let grid = Arc::new(CapGrid::build(PI / 3.0, 8, 16).unwrap());
        let s = build_subsolution(&sphere, grid).unwrap().state;
        let r = pinching_report(&s);
        assert_eq!((r.kappa_min, r.kappa_max), (0.5, 0.5));
        let g = gradient_max_locus(&s);
        assert_eq!(g.grad_norm, 0.0);
        assert_eq!(g.w, 0.5);
    }

    #[test]
    fn off_center_pinching_converges() {
        let mut errs = Vec::new();
        for rings in [16, 32] {
            let r = pinching_report(&cap([0.0, 0.0, 0.3], rings));
            errs.push((r.kappa_min - 1.0).abs().max((r.kappa_max - 1.0).abs()));
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[1] < 1e-3, "{errs:?}");
    }

    #[test]
    fn duality_identity_on_random_cone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let kappa = [rng.gen_range(0.01..10.0), rng.gen_range(0.01..10.0)];
            for k in 1..=2 {
                assert!(duality_identity_error(&kappa, k) <= 1e-10);
            }
        }
    }

    #[test]
    fn exact_cap_duality_and_nm() {
        let s = cap([0.0, 0.0, 0.3], 64);
        let psi: PsiExpr = "1".parse().unwrap();
        for k in 1..=2 {
            let d = duality_check(&s, &psi, k);
            assert!(d.identity_error <= 1e-12);
            // discrete curvature of the exact cap is 1 up to truncation
            assert!(d.equation_error <= 1e-3, "{d:?}");
            assert!(nm_lower_bound(&s, &psi, k).abs() <= 1e-3);
        }
        let centered = {
            let sphere = EnclosingSphere::new([0.0; 3], 1.0).unwrap();
            let grid = Arc::new(CapGrid::build(PI / 3.0, 16, 32).unwrap());
            build_subsolution(&sphere, grid).unwrap().state
        };
        let d = duality_check(&centered, &psi, 2);
        assert!(d.equation_error <= 1e-8 && d.identity_error <= 1e-10);
        assert!(nm_lower_bound(&centered, &psi, 2).abs() <= 1e-8);
    }

    #[test]
    fn unsolved_state_separates_algebra_from_equation() {
        let s = cap([0.0, 0.0, 0.3], 16);
        let psi: PsiExpr = "0.5".parse().unwrap();
        let d = duality_check(&s, &psi, 2);
        assert!(d.identity_error <= 1e-10);
        assert!(d.equation_error > 0.1);
    }

    #[test]
    fn nm_hand_value() {
        // kappa = (1, 4), k = 1: psi~ = 1 / S_1 = 0.4, S_2(1, 1/4) = 1/4
        let m = nm_margin(&[1.0, 4.0], 0.4, 1);
        assert!((m - 0.05).abs() < 1e-15);
    }

    #[test]
    fn nm_margin_nonnegative_on_cone() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..2000 {
            let kappa = [rng.gen_range(0.05..20.0), rng.gen_range(0.05..20.0)];
            for k in 1..=2 {
                let psi_tilde = 1.0 / weingarten_f_eigs(&kappa, k).unwrap();
                assert!(nm_margin(&kappa, psi_tilde, k) >= -1e-12);
            }
        }
    }

    #[test]
    fn off_center_gradient_max_is_flat() {
        // w = 1 / support, largest where <c, eta> is smallest: the cap centre
        let s = cap([0.0, 0.0, -0.3], 32);
        let g = gradient_max_locus(&s);
        assert!(!g.on_boundary);
        assert!(g.grad_norm <= 1e-3, "{g:?}");
        assert!(gradient_max_locus(&cap([0.0, 0.0, 0.3], 16)).on_boundary);
    }

    #[test]
    fn mesh_check_on_exact_cap() {
        let s = cap([0.0, 0.0, 0.3], 64);
        let psi: PsiExpr = "1".parse().unwrap();
        for k in 1..=2 {
            let r = mesh_curvature_check(&s, &psi, k);
            assert!(r.median <= 0.01, "{} {}", r.median, r.p95);
            assert!(r.evaluated > 1000);
        }
    }

    #[test]
    fn mesh_check_flags_bump() {
        let s = cap([0.0, 0.0, 0.3], 32);
        let psi: PsiExpr = "1".parse().unwrap();
        let clean = mesh_curvature_check(&s, &psi, 2);
        let mut u = s.u_values();
        let bumped = s.grid().index(10, 7);
        u[bumped] *= 1.1;
        let bad = GraphState::from_u(s.grid().clone(), u).unwrap();
        let r = mesh_curvature_check(&bad, &psi, 2);
        let e = r.errors[bumped].unwrap();
        assert!(e > 20.0 * clean.median.max(1e-6), "{e} vs {}", clean.median);
        assert!(r.max >= e && r.max > 0.1);
    }

    #[test]
    fn corruption_degrades_pde_checks_monotonically() {
        let s = cap([0.0, 0.0, 0.3], 32);
        let psi: PsiExpr = "1".parse().unwrap();
        let grid = s.grid().clone();
        let mut prev = 0.0;
        for amp in [0.0, 0.01, 0.02, 0.04] {
            let u: Vec<f64> = s
                .u_values()
                .iter()
                .zip(grid.nodes())
                .map(|(u, n)| u * (1.0 + amp * (3.0 * n.y[0]).sin() * (2.0 * n.y[1]).cos()))
                .collect();
            let st = GraphState::from_u(grid.clone(), u).unwrap();
            let d = duality_check(&st, &psi, 2);
            assert!(d.identity_error <= 1e-10);
            assert!(d.equation_error >= prev);
            prev = d.equation_error;
        }
    }
}
