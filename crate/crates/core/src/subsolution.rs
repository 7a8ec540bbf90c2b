//! Enclosing sphere, the Serrin gate and the subsolution `1 / rho`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphgeom::GraphState;
use crate::psidsl::PsiExpr;
use crate::sphere::{fibonacci_sphere, CapGrid, ScalarField};
use crate::symfunc;

/// Number of quasi-uniform samples used by [`serrin_check`].
pub const SERRIN_SAMPLES: usize = 20_000;

/// Relative slack when comparing `sup psi` against `K0`.
const SERRIN_SLACK: f64 = 1e-12;

/// Round sphere enclosing the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnclosingSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

impl EnclosingSphere {
    pub fn new(center: [f64; 3], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument(format!("invalid sphere: center {center:?}, radius {radius}")));
        }
        let s = Self { center, radius };
        if !(s.center_norm() < radius) {
            return Err(Error::Argument(format!(
                "origin is not inside the sphere: |c| = {} >= R = {radius}",
                s.center_norm()
            )));
        }
        Ok(s)
    }

    pub fn center_norm(&self) -> f64 {
        dot(self.center, self.center).sqrt()
    }

    /// Distance from the origin to the sphere along the unit direction `x`.
    pub fn radial(&self, x: [f64; 3]) -> f64 {
        let b = dot(x, self.center);
        let disc = self.radius * self.radius - dot(self.center, self.center) + b * b;
        assert!(disc > 0.0, "ray {x:?} misses the enclosing sphere");
        b + disc.sqrt()
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `min W_k` over the sphere: `R^-k`.
pub fn k_zero(sphere: &EnclosingSphere, k: usize) -> f64 {
    1.0 / sphere.radius.powi(k as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SerrinReport {
    pub passed: bool,
    pub k_zero: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub argmin: [f64; 3],
    pub argmax: [f64; 3],
    pub samples: usize,
}

impl SerrinReport {
    /// `psi` is numerically the constant `K0`.
    pub fn is_degenerate(&self) -> bool {
        self.passed && self.psi_min >= self.k_zero * (1.0 - SERRIN_SLACK)
    }

    pub fn message(&self) -> String {
        if self.psi_min <= 0.0 {
            format!("psi = {} <= 0 at {:?}", self.psi_min, self.argmin)
        } else if !self.passed {
            format!("sup psi = {} exceeds K0 = {} at {:?}", self.psi_max, self.k_zero, self.argmax)
        } else {
            format!("{} <= psi <= {} <= K0 = {}", self.psi_min, self.psi_max, self.k_zero)
        }
    }
}

/// Samples `psi` on the sphere and checks `0 < psi <= K0`.
pub fn serrin_check(psi: &PsiExpr, sphere: &EnclosingSphere, k: usize) -> SerrinReport {
    let k0 = k_zero(sphere, k);
    let mut pts = fibonacci_sphere(SERRIN_SAMPLES);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut e = [0.0; 3];
            e[axis] = sign;
            pts.push(e);
        }
    }
    let mut lo = (f64::INFINITY, [0.0; 3]);
    let mut hi = (f64::NEG_INFINITY, [0.0; 3]);
    let mut finite = true;
    for &n in &pts {
        let v = psi.value(n);
        finite &= v.is_finite();
        if v < lo.0 {
            lo = (v, n);
        }
        if v > hi.0 {
            hi = (v, n);
        }
    }
    SerrinReport {
        passed: finite && lo.0 > 0.0 && hi.0 <= k0 * (1.0 + SERRIN_SLACK),
        k_zero: k0,
        psi_min: lo.0,
        psi_max: hi.0,
        argmin: lo.1,
        argmax: hi.1,
        samples: pts.len(),
    }
}

/// Subsolution `u = 1 / rho` of the enclosing sphere over the cap.
#[derive(Debug, Clone)]
pub struct Subsolution {
    pub sphere: EnclosingSphere,
    /// `u` representation.
    pub state: GraphState,
    /// Boundary values `(node, u)`.
    pub phi: Vec<(usize, f64)>,
}

pub fn build_subsolution(sphere: &EnclosingSphere, grid: Arc<CapGrid>) -> Result<Subsolution> {
    let u: Vec<f64> = grid.nodes().iter().map(|n| 1.0 / sphere.radial(n.x)).collect();
    let phi = grid.boundary_indices().map(|i| (i, u[i])).collect();
    let state = GraphState::from_u(grid, u)?;
    let report = state.admissible();
    if !report.admissible {
        return Err(Error::NotAdmissible { node: report.worst_node, min_eigenvalue: report.min_eigenvalue });
    }
    Ok(Subsolution { sphere: *sphere, state, phi })
}

/// `F(A)` of the state at every node.
pub fn underbar_psi(state: &GraphState, k: usize) -> Result<ScalarField> {
    let report = state.admissible();
    if !report.admissible {
        return Err(Error::NotAdmissible { node: report.worst_node, min_eigenvalue: report.min_eigenvalue });
    }
    let values = state
        .points()
        .iter()
        .map(|p| symfunc::weingarten_f_eigs(&p.kappa(), k))
        .collect::<Result<Vec<_>>>()?;
    ScalarField::new(state.grid(), values)
}
