//! Geodesic caps on the unit sphere, discretized through the stereographic
//! chart, with covariant derivatives in the orthonormal conformal frame.
//!
//! The cap of geodesic radius `theta0` about the north pole maps to the
//! plane disk of radius `tan(theta0 / 2)`, with metric `lambda^2 |dy|^2`,
//! `lambda = 2 / (1 + |y|^2)`. Nodes sit on a plane-polar layout: one
//! center node plus `rings x sectors` nodes, the last ring on the cap edge.
//!
//! Each node carries a linear stencil mapping nodal values to the frame
//! components `(grad_1, grad_2, hess_11, hess_12, hess_22)`. Away from the
//! center the stencils come from polar differences (fourth order in the
//! angle and for the radial first derivative, second order for the radial
//! second derivative and at the boundary ring), the center uses a
//! least-squares quadratic fit over the first ring. All stencils are exact
//! on quadratic polynomials of the plane coordinates.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::linalg::Sym2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Center,
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Stereographic plane coordinates.
    pub y: [f64; 2],
    /// Point on the unit sphere.
    pub x: [f64; 3],
    /// `2 / (1 + |y|^2)`.
    pub conformal: f64,
    pub class: NodeClass,
    pub ring: usize,
    pub sector: usize,
    /// Ambient orthonormal frame `e_i = (1 / conformal) d x / d y_i`.
    pub frame: [[f64; 3]; 2],
}

impl Node {
    /// Ambient vector with frame components `v`.
    pub fn to_ambient(&self, v: [f64; 2]) -> [f64; 3] {
        [0, 1, 2].map(|i| v[0] * self.frame[0][i] + v[1] * self.frame[1][i])
    }
}

/// Frame-derivative stencil: `(node, [g1, g2, h11, h12, h22])` weights.
/// The node's own weights equal minus the sum of the others.
#[derive(Debug, Clone, Default)]
pub struct Stencil {
    pub entries: Vec<(usize, [f64; 5])>,
}

#[derive(Debug, Clone)]
pub struct CapGrid {
    cap_radius: f64,
    rings: usize,
    sectors: usize,
    plane_radius: f64,
    nodes: Vec<Node>,
    stencils: Vec<Stencil>,
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &CapGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Argument(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Argument("field contains NaN".into()));
        }
        Ok(Self { values })
    }

    pub fn from_fn(grid: &CapGrid, f: impl Fn(&Node) -> f64) -> Self {
        Self { values: grid.nodes().iter().map(f).collect() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Sparse linear combination of nodal values.
#[derive(Debug, Clone, Default)]
struct Lin(Vec<(usize, f64)>);

impl Lin {
    fn push(&mut self, idx: usize, w: f64) {
        self.0.push((idx, w));
    }

    fn axpy(&mut self, s: f64, o: &Lin) {
        self.0.extend(o.0.iter().map(|&(i, w)| (i, s * w)));
    }

    fn scaled(mut self, s: f64) -> Lin {
        for e in &mut self.0 {
            e.1 *= s;
        }
        self
    }
}

/// Periodic angular weights exact on Fourier modes 0, 1, 2.
#[derive(Debug, Clone, Copy)]
struct AngularWeights {
    /// first derivative: `d1 (f[m+1] - f[m-1]) + d2 (f[m+2] - f[m-2])`
    d1: f64,
    d2: f64,
    /// second derivative: `s0 f[m] + s1 (f[m+1] + f[m-1]) + s2 (f[m+2] + f[m-2])`
    s0: f64,
    s1: f64,
    s2: f64,
}

impl AngularWeights {
    fn new(step: f64) -> Self {
        let (a, b) = (step.sin(), (2.0 * step).sin());
        let (c, d) = ((2.0 * step).sin(), (4.0 * step).sin());
        // 2 d1 sin(q h) + 2 d2 sin(2 q h) = q, q = 1, 2
        let det = 2.0 * (a * d - b * c);
        let d1 = (d - 2.0 * b) / det;
        let d2 = (2.0 * a - c) / det;
        // s0 + 2 s1 cos(q h) + 2 s2 cos(2 q h) = -q^2, q = 0, 1, 2
        let m = SMatrix::<f64, 3, 3>::new(
            1.0,
            2.0,
            2.0,
            1.0,
            2.0 * step.cos(),
            2.0 * (2.0 * step).cos(),
            1.0,
            2.0 * (2.0 * step).cos(),
            2.0 * (4.0 * step).cos(),
        );
        let s = m
            .lu()
            .solve(&SVector::<f64, 3>::new(0.0, -1.0, -4.0))
            .expect("angular stencil system is regular for sectors >= 8");
        Self { d1, d2, s0: s[0], s1: s[1], s2: s[2] }
    }
}

impl CapGrid {
    /// Builds the grid for a cap of geodesic radius `cap_radius` about the
    /// north pole.
    pub fn build(cap_radius: f64, rings: usize, sectors: usize) -> Result<Self> {
        if !(cap_radius > 0.0 && cap_radius < PI / 2.0) {
            return Err(Error::Argument(format!("cap radius {cap_radius} outside (0, pi/2)")));
        }
        if rings < 4 {
            return Err(Error::Argument(format!("rings = {rings}, need at least 4")));
        }
        if sectors < 8 || sectors % 2 != 0 {
            return Err(Error::Argument(format!("sectors = {sectors}, need an even count >= 8")));
        }
        let plane_radius = (cap_radius / 2.0).tan();
        let mut nodes = Vec::with_capacity(1 + rings * sectors);
        nodes.push(make_node([0.0, 0.0], NodeClass::Center, 0, 0));
        for j in 1..=rings {
            let r = if j == rings { plane_radius } else { plane_radius * j as f64 / rings as f64 };
            let class = if j == rings { NodeClass::Boundary } else { NodeClass::Interior };
            for m in 0..sectors {
                let t = 2.0 * PI * m as f64 / sectors as f64;
                nodes.push(make_node([r * t.cos(), r * t.sin()], class, j, m));
            }
        }
        let mut grid = Self {
            cap_radius,
            rings,
            sectors,
            plane_radius,
            nodes,
            stencils: Vec::new(),
        };
        grid.stencils = (0..grid.len()).map(|i| grid.build_stencil(i)).collect();
        Ok(grid)
    }

    pub fn cap_radius(&self) -> f64 {
        self.cap_radius
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn sectors(&self) -> usize {
        self.sectors
    }

    pub fn plane_radius(&self) -> f64 {
        self.plane_radius
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn stencil(&self, i: usize) -> &Stencil {
        &self.stencils[i]
    }

    /// Index of `(ring, sector)`; ring 0 is the center, sectors wrap.
    pub fn index(&self, ring: usize, sector: isize) -> usize {
        if ring == 0 {
            return 0;
        }
        1 + (ring - 1) * self.sectors + sector.rem_euclid(self.sectors as isize) as usize
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.nodes[i].class == NodeClass::Boundary
    }

    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_boundary(i))
    }

    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.is_boundary(i))
    }

    /// Node on the line through the center: negative rings continue past
    /// the center into the opposite half-plane.
    fn line_node(&self, signed_ring: isize, sector: isize) -> usize {
        match signed_ring {
            0 => 0,
            r if r > 0 => self.index(r as usize, sector),
            r => self.index((-r) as usize, sector + self.sectors as isize / 2),
        }
    }

    fn radial_step(&self) -> f64 {
        self.plane_radius / self.rings as f64
    }

    fn angular_step(&self) -> f64 {
        2.0 * PI / self.sectors as f64
    }

    fn d_r(&self, j: usize, m: isize) -> Lin {
        let h = self.radial_step();
        let (rings, j_s) = (self.rings, j as isize);
        let mut l = Lin::default();
        if j == rings {
            l.push(self.line_node(j_s, m), 3.0 / (2.0 * h));
            l.push(self.line_node(j_s - 1, m), -4.0 / (2.0 * h));
            l.push(self.line_node(j_s - 2, m), 1.0 / (2.0 * h));
        } else if j + 2 <= rings {
            let c = 1.0 / (12.0 * h);
            l.push(self.line_node(j_s - 2, m), c);
            l.push(self.line_node(j_s - 1, m), -8.0 * c);
            l.push(self.line_node(j_s + 1, m), 8.0 * c);
            l.push(self.line_node(j_s + 2, m), -c);
        } else {
            l.push(self.line_node(j_s + 1, m), 0.5 / h);
            l.push(self.line_node(j_s - 1, m), -0.5 / h);
        }
        l
    }

    fn d_rr(&self, j: usize, m: isize) -> Lin {
        let h2 = self.radial_step().powi(2);
        let j_s = j as isize;
        let mut l = Lin::default();
        if j == self.rings {
            for (off, w) in [(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)] {
                l.push(self.line_node(j_s - off, m), w / h2);
            }
        } else {
            l.push(self.line_node(j_s - 1, m), 1.0 / h2);
            l.push(self.line_node(j_s, m), -2.0 / h2);
            l.push(self.line_node(j_s + 1, m), 1.0 / h2);
        }
        l
    }

    fn build_stencil(&self, i: usize) -> Stencil {
        let node = &self.nodes[i];
        // plane derivative stencils d1, d2, d11, d12, d22
        let plane: [Lin; 5] = if node.class == NodeClass::Center {
            self.center_plane_stencils()
        } else {
            self.polar_plane_stencils(node.ring, node.sector as isize)
        };
        // frame conversion: g = d / lambda,
        // H_ij = (d_ij - L_j d_i - L_i d_j + delta_ij L.d) / lambda^2
        let y = node.y;
        let q = 1.0 + y[0] * y[0] + y[1] * y[1];
        let lam = node.conformal;
        let ll = [-2.0 * y[0] / q, -2.0 * y[1] / q];
        let mut acc: Vec<(usize, [f64; 5])> = Vec::new();
        let mut put = |lin: &Lin, f: &dyn Fn(f64) -> [f64; 5]| {
            for &(idx, w) in &lin.0 {
                let add = f(w);
                acc.push((idx, add));
            }
        };
        let inv = 1.0 / lam;
        let inv2 = inv * inv;
        // d1 contributes to g1, and to the Christoffel correction
        put(&plane[0], &|w| {
            [w * inv, 0.0, inv2 * (-2.0 * ll[0] * w + ll[0] * w), -inv2 * ll[1] * w, inv2 * ll[0] * w]
        });
        put(&plane[1], &|w| {
            [0.0, w * inv, inv2 * ll[1] * w, -inv2 * ll[0] * w, inv2 * (-2.0 * ll[1] * w + ll[1] * w)]
        });
        put(&plane[2], &|w| [0.0, 0.0, inv2 * w, 0.0, 0.0]);
        put(&plane[3], &|w| [0.0, 0.0, 0.0, inv2 * w, 0.0]);
        put(&plane[4], &|w| [0.0, 0.0, 0.0, 0.0, inv2 * w]);

        acc.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, [f64; 5])> = Vec::new();
        for (idx, w) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == idx => {
                    for c in 0..5 {
                        last.1[c] += w[c];
                    }
                }
                _ => merged.push((idx, w)),
            }
        }
        let mut own = [0.0; 5];
        let mut entries: Vec<(usize, [f64; 5])> = merged.into_iter().filter(|e| e.0 != i).collect();
        for (_, w) in &entries {
            for c in 0..5 {
                own[c] -= w[c];
            }
        }
        entries.push((i, own));
        entries.sort_by_key(|e| e.0);
        Stencil { entries }
    }

    fn polar_plane_stencils(&self, j: usize, m: isize) -> [Lin; 5] {
        let aw = AngularWeights::new(self.angular_step());
        let r = self.nodes[self.index(j, m)].y[0].hypot(self.nodes[self.index(j, m)].y[1]);
        let theta = self.angular_step() * m as f64;
        let (s, c) = theta.sin_cos();

        let ur = self.d_r(j, m);
        let urr = self.d_rr(j, m);
        let mut ut = Lin::default();
        let mut utt = Lin::default();
        utt.push(self.index(j, m), aw.s0);
        for (q, dw, sw) in [(1, aw.d1, aw.s1), (2, aw.d2, aw.s2)] {
            ut.push(self.index(j, m + q), dw);
            ut.push(self.index(j, m - q), -dw);
            utt.push(self.index(j, m + q), sw);
            utt.push(self.index(j, m - q), sw);
        }
        let mut urt = Lin::default();
        for (q, dw) in [(1, aw.d1), (2, aw.d2)] {
            urt.axpy(dw, &self.d_r(j, m + q));
            urt.axpy(-dw, &self.d_r(j, m - q));
        }

        // A = ur/r + utt/r^2, B = urt/r - ut/r^2
        let mut a = ur.clone().scaled(1.0 / r);
        a.axpy(1.0 / (r * r), &utt);
        let mut b = urt.scaled(1.0 / r);
        b.axpy(-1.0 / (r * r), &ut);

        let mut d1 = ur.clone().scaled(c);
        d1.axpy(-s / r, &ut);
        let mut d2 = ur.scaled(s);
        d2.axpy(c / r, &ut);
        let mut d11 = urr.clone().scaled(c * c);
        d11.axpy(s * s, &a);
        d11.axpy(-2.0 * s * c, &b);
        let mut d22 = urr.clone().scaled(s * s);
        d22.axpy(c * c, &a);
        d22.axpy(2.0 * s * c, &b);
        let mut d12 = urr.scaled(s * c);
        d12.axpy(-s * c, &a);
        d12.axpy(c * c - s * s, &b);
        [d1, d2, d11, d12, d22]
    }

    fn center_plane_stencils(&self) -> [Lin; 5] {
        let pts: Vec<(usize, [f64; 2])> = std::iter::once(0)
            .chain((0..self.sectors).map(|m| self.index(1, m as isize)))
            .map(|i| (i, self.nodes[i].y))
            .collect();
        let mono = |y: [f64; 2]| [1.0, y[0], y[1], y[0] * y[0], y[0] * y[1], y[1] * y[1]];
        let mut normal = SMatrix::<f64, 6, 6>::zeros();
        for (_, y) in &pts {
            let v = mono(*y);
            for a in 0..6 {
                for b in 0..6 {
                    normal[(a, b)] += v[a] * v[b];
                }
            }
        }
        let inv = normal.try_inverse().expect("first ring spans the quadratics");
        let scale = [0.0, 1.0, 1.0, 2.0, 1.0, 2.0];
        let mut out: [Lin; 5] = Default::default();
        for (idx, y) in &pts {
            let v = SVector::<f64, 6>::from(mono(*y));
            let coef = inv * v;
            for (slot, c) in (1..6).enumerate() {
                out[slot].push(*idx, scale[c] * coef[c]);
            }
        }
        out
    }

    /// Frame gradient and covariant Hessian of `values` at node `i`.
    pub fn frame_derivatives(&self, values: &[f64], i: usize) -> ([f64; 2], Sym2) {
        let base = values[i];
        let mut d = [0.0; 5];
        for &(j, w) in &self.stencils[i].entries {
            if j == i {
                continue;
            }
            let diff = values[j] - base;
            for c in 0..5 {
                d[c] += w[c] * diff;
            }
        }
        ([d[0], d[1]], Sym2::new(d[2], d[3], d[4]))
    }

    /// Largest geodesic distance between radially or angularly adjacent nodes.
    pub fn max_spacing(&self) -> f64 {
        let dist = |a: usize, b: usize| {
            let (p, q) = (self.nodes[a].x, self.nodes[b].x);
            let dot = (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).clamp(-1.0, 1.0);
            dot.acos()
        };
        let mut worst = 0.0_f64;
        for j in 1..=self.rings {
            for m in 0..self.sectors as isize {
                let i = self.index(j, m);
                worst = worst.max(dist(i, self.index(j, m + 1)));
                worst = worst.max(dist(i, self.index(j - 1, m)));
            }
        }
        worst
    }
}

/// Frame gradient of `field` at `node`.
pub fn covariant_gradient(grid: &CapGrid, field: &ScalarField, node: usize) -> [f64; 2] {
    grid.frame_derivatives(field.values(), node).0
}

/// Frame covariant Hessian of `field` at `node`.
pub fn covariant_hessian(grid: &CapGrid, field: &ScalarField, node: usize) -> Sym2 {
    grid.frame_derivatives(field.values(), node).1
}

fn make_node(y: [f64; 2], class: NodeClass, ring: usize, sector: usize) -> Node {
    let q = 1.0 + y[0] * y[0] + y[1] * y[1];
    let conformal = 2.0 / q;
    let x = [2.0 * y[0] / q, 2.0 * y[1] / q, (2.0 - q) / q];
    let frame = [
        [1.0 - 2.0 * y[0] * y[0] / q, -2.0 * y[0] * y[1] / q, -2.0 * y[0] / q],
        [-2.0 * y[0] * y[1] / q, 1.0 - 2.0 * y[1] * y[1] / q, -2.0 * y[1] / q],
    ];
    Node { y, x, conformal, class, ring, sector, frame }
}

/// Deterministic, nearly uniform points on the unit sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}
