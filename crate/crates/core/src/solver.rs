//! Homotopy residuals in `v = ln u`, their Newton linearization and the
//! two-stage continuation.
//!
//! Both families share the right-hand side
//! `(a + b e^{2z}) Psi + c e^{2z} psi_`, `z = v - v_`:
//! `Theta^t` is `(0, t, 1 - t)` and `Xi^s` is `(s, 1 - s, 0)`.

use std::fmt;
use std::sync::Arc;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphgeom::{normal_v, v_gamma, GraphState, Representation};
use crate::linalg::{mat_mul, BandMatrix, Sym2};
use crate::psidsl::PsiExpr;
use crate::sphere::{CapGrid, ScalarField};
use crate::subsolution::{serrin_check, SerrinReport, Subsolution};
use crate::symfunc::{cone_margin, f_eig_gradient, weingarten_f_eigs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Family {
    Theta,
    Xi,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Theta => "theta",
            Family::Xi => "xi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Coeff {
    a: f64,
    b: f64,
    c: f64,
}

impl Coeff {
    fn new(family: Family, param: f64) -> Self {
        match family {
            Family::Theta => Coeff { a: 0.0, b: param, c: 1.0 - param },
            Family::Xi => Coeff { a: param, b: 1.0 - param, c: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    /// Central differences of the residual, column by column.
    FiniteDifference,
}

/// The Dirichlet problem together with its subsolution anchor.
#[derive(Debug, Clone)]
pub struct Problem {
    psi: PsiExpr,
    k: usize,
    grid: Arc<CapGrid>,
    v_under: Vec<f64>,
    psi_under: Vec<f64>,
    anchor_derivs: Vec<([f64; 2], Sym2)>,
    anchor: GraphState,
    serrin: SerrinReport,
    ordering: Ordering,
}

impl Problem {
    /// Fails with [`Error::Serrin`] when `psi` does not satisfy `0 < psi <= K0`.
    pub fn new(sub: &Subsolution, psi: PsiExpr, k: usize) -> Result<Self> {
        if !(1..=2).contains(&k) {
            return Err(Error::Argument(format!("k = {k} outside 1..=2")));
        }
        psi.require_smooth()?;
        let serrin = serrin_check(&psi, &sub.sphere, k);
        if !serrin.passed {
            return Err(Error::Serrin(serrin.message()));
        }
        let anchor = sub.state.to_representation(Representation::V)?;
        let grid = anchor.grid().clone();
        let v_under = anchor.values().to_vec();
        let ordering = Ordering::new(&grid);
        let anchor_derivs = (0..grid.len()).map(|i| grid.frame_derivatives(&v_under, i)).collect();
        let mut p = Self {
            psi,
            k,
            grid,
            v_under,
            psi_under: Vec::new(),
            anchor_derivs,
            anchor,
            serrin,
            ordering,
        };
        p.psi_under = p.lhs_field()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn psi(&self) -> &PsiExpr {
        &self.psi
    }

    pub fn grid(&self) -> &Arc<CapGrid> {
        &self.grid
    }

    pub fn serrin(&self) -> &SerrinReport {
        &self.serrin
    }

    /// Subsolution in the `v` representation.
    pub fn anchor(&self) -> &GraphState {
        &self.anchor
    }

    pub fn v_under(&self) -> &[f64] {
        &self.v_under
    }

    /// `F(A[v_])` per node.
    pub fn psi_under(&self) -> &[f64] {
        &self.psi_under
    }

    /// Size of the right-hand side, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.psi_under.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    }

    /// `Psi = psi^(1/k)` at every node of the anchor.
    pub fn psi_root_on(&self, state: &GraphState) -> Vec<f64> {
        state.points().iter().map(|p| self.psi.value(p.eta).powf(1.0 / self.k as f64)).collect()
    }

    fn lhs_field(&self) -> Result<Vec<f64>> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let (p, h) = self.anchor_derivs[i];
                let a = curvature(self.v_under[i], p, h).0;
                let lam = a.eigenvalues();
                if cone_margin(&lam) <= 0.0 {
                    return Err(Error::NotAdmissible { node: i, min_eigenvalue: lam[0] });
                }
                weingarten_f_eigs(&lam, self.k)
            })
            .collect()
    }

    /// Differences `z = v - v_` are exact near the anchor, so stencils act
    /// on `z` and the anchor derivatives are added afterwards.
    fn offsets(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.v_under).map(|(v, w)| v - w).collect()
    }

    fn node_terms(&self, coeff: Coeff, z: &[f64], i: usize, jac: bool) -> Result<NodeTerms> {
        let grid = &self.grid;
        let node = grid.node(i);
        let v = self.v_under[i] + z[i];
        let (dz, hz) = grid.frame_derivatives(z, i);
        let (pa, ha) = self.anchor_derivs[i];
        let p = [pa[0] + dz[0], pa[1] + dz[1]];
        let h = ha.add(hz);
        let (a, gamma, w) = curvature(v, p, h);
        let (lam, vecs) = a.eigen();
        if cone_margin(&lam) <= 0.0 {
            return Err(Error::NotAdmissible { node: i, min_eigenvalue: lam[0] });
        }
        let f = weingarten_f_eigs(&lam, self.k)?;
        let eta = normal_v(p, node.x, &node.frame);
        let (psi, grad_psi) = self.psi.eval_with_gradient(eta)?;
        let inv_k = 1.0 / self.k as f64;
        let big_psi = psi.powf(inv_k);
        let e2 = (2.0 * z[i]).exp();
        let lead = coeff.a + coeff.b * e2;
        let r = f - lead * big_psi - coeff.c * e2 * self.psi_under[i];
        if !jac {
            return Ok(NodeTerms { r, ..Default::default() });
        }

        let d = f_eig_gradient(&lam, self.k)?;
        let g = Sym2::outer(vecs[0]).scale(d[0]).add(Sym2::outer(vecs[1]).scale(d[1]));
        let ew = v.exp() / w;
        let ga = g.contract(&a);
        let m = g.sandwich(&gamma);
        let dh = [ew * m.xx, 2.0 * ew * m.xy, ew * m.yy];

        let c0 = 1.0 / (w * (1.0 + w));
        let c1 = -(1.0 + 2.0 * w) / (w * w * (1.0 + w) * (1.0 + w));
        let pp = Sym2::outer(p);
        let hg = mat_mul(h.to_mat(), gamma.to_mat());
        let dpsi_scale = inv_k * psi.powf(inv_k - 1.0);
        let mut dp = [0.0; 2];
        for (mi, slot) in dp.iter_mut().enumerate() {
            let mut e = [0.0; 2];
            e[mi] = 1.0;
            let gamma_m = Sym2::sym_outer(e, p).scale(-c0).sub(pp.scale(c1 * p[mi] / w));
            let gm_hg = mat_mul(gamma_m.to_mat(), hg);
            let gmat = g.to_mat();
            let prod = mat_mul(gmat, gm_hg);
            let df = -(p[mi] / (w * w)) * ga + 2.0 * ew * (prod[0][0] + prod[1][1]);
            let frame = node.frame[mi];
            let deta: [f64; 3] = [0, 1, 2].map(|c| frame[c] / w - eta[c] * p[mi] / (w * w));
            let dpsi = dpsi_scale * (grad_psi[0] * deta[0] + grad_psi[1] * deta[1] + grad_psi[2] * deta[2]);
            *slot = df - lead * dpsi;
        }
        let dv = ga - 2.0 * e2 * (coeff.b * big_psi + coeff.c * self.psi_under[i]);
        Ok(NodeTerms { r, dv, dp, dh })
    }

    fn check_values(&self, state: &GraphState) -> Result<Vec<f64>> {
        if !Arc::ptr_eq(state.grid(), &self.grid) && state.grid().len() != self.grid.len() {
            return Err(Error::Argument("state lives on a different grid".into()));
        }
        Ok(state.v_values())
    }

    fn residual_values(&self, family: Family, param: f64, values: &[f64]) -> Result<Vec<f64>> {
        self.residual_offsets(family, param, &self.offsets(values))
    }

    /// Residual as a function of `z = v - v_`.
    pub fn residual_offsets(&self, family: Family, param: f64, z: &[f64]) -> Result<Vec<f64>> {
        let coeff = Coeff::new(family, param);
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                if self.grid.is_boundary(i) {
                    Ok(z[i])
                } else {
                    self.node_terms(coeff, z, i, false).map(|t| t.r)
                }
            })
            .collect()
    }

    /// The surface `v_ + z`.
    pub fn state_from_offsets(&self, z: &[f64]) -> Result<GraphState> {
        let v = self.v_under.iter().zip(z).map(|(a, b)| a + b).collect();
        GraphState::from_v(self.grid.clone(), v)
    }

    /// Residual of a family at `param`; boundary entries are `v - ln phi`.
    pub fn residual(&self, family: Family, param: f64, state: &GraphState) -> Result<ScalarField> {
        let values = self.check_values(state)?;
        ScalarField::new(&self.grid, self.residual_values(family, param, &values)?)
    }

    pub fn jacobian(&self, family: Family, param: f64, state: &GraphState, mode: JacobianMode) -> Result<Jacobian> {
        let values = self.check_values(state)?;
        self.jacobian_offsets(family, param, &self.offsets(&values), mode)
    }

    pub fn jacobian_offsets(&self, family: Family, param: f64, z: &[f64], mode: JacobianMode) -> Result<Jacobian> {
        match mode {
            JacobianMode::Analytic => self.analytic_jacobian(family, param, z),
            JacobianMode::FiniteDifference => self.fd_jacobian(family, param, z),
        }
    }

    fn analytic_jacobian(&self, family: Family, param: f64, z: &[f64]) -> Result<Jacobian> {
        let coeff = Coeff::new(family, param);
        let grid = &self.grid;
        let terms = (0..grid.len())
            .into_par_iter()
            .map(|i| if grid.is_boundary(i) { Ok(None) } else { self.node_terms(coeff, z, i, true).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        let ord = &self.ordering;
        let mut band = BandMatrix::zeros(grid.len(), ord.kl, ord.ku);
        for (i, t) in terms.iter().enumerate() {
            let row = ord.pos[i];
            let Some(t) = t else {
                band.add(row, row, 1.0);
                continue;
            };
            band.add(row, row, t.dv);
            for &(j, wts) in &grid.stencil(i).entries {
                let val = t.dp[0] * wts[0]
                    + t.dp[1] * wts[1]
                    + t.dh[0] * wts[2]
                    + t.dh[1] * wts[3]
                    + t.dh[2] * wts[4];
                band.add(row, ord.pos[j], val);
            }
        }
        Ok(Jacobian { band, pos: ord.pos.clone(), factored: false })
    }

    fn fd_jacobian(&self, family: Family, param: f64, z: &[f64]) -> Result<Jacobian> {
        let coeff = Coeff::new(family, param);
        let grid = &self.grid;
        let mut readers = vec![Vec::new(); grid.len()];
        for i in grid.interior_indices() {
            for &(j, _) in &grid.stencil(i).entries {
                readers[j].push(i);
            }
        }
        let columns = (0..grid.len())
            .into_par_iter()
            .map(|j| {
                let eps = 1e-6 * (self.v_under[j] + z[j]).abs().max(1.0);
                let mut work = z.to_vec();
                let mut eval = |x: f64| -> Result<Vec<f64>> {
                    work[j] = x;
                    readers[j].iter().map(|&i| self.node_terms(coeff, &work, i, false).map(|t| t.r)).collect()
                };
                let plus = eval(z[j] + eps)?;
                let minus = eval(z[j] - eps)?;
                Ok(readers[j]
                    .iter()
                    .zip(plus.iter().zip(&minus))
                    .map(|(&i, (p, m))| (i, (p - m) / (2.0 * eps)))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let ord = &self.ordering;
        let mut band = BandMatrix::zeros(grid.len(), ord.kl, ord.ku);
        for i in grid.boundary_indices() {
            band.add(ord.pos[i], ord.pos[i], 1.0);
        }
        for (j, col) in columns.into_iter().enumerate() {
            for (i, val) in col {
                band.add(ord.pos[i], ord.pos[j], val);
            }
        }
        Ok(Jacobian { band, pos: ord.pos.clone(), factored: false })
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeTerms {
    r: f64,
    dv: f64,
    dp: [f64; 2],
    dh: [f64; 3],
}

/// `A = (e^v / w)(I + gamma H gamma)` with `gamma` and `w`.
fn curvature(v: f64, p: [f64; 2], h: Sym2) -> (Sym2, Sym2, f64) {
    let (gamma, w) = v_gamma(p);
    let a = Sym2::IDENTITY.add(h.sandwich(&gamma)).scale(v.exp() / w);
    (a, gamma, w)
}

/// Unknown ordering that interleaves each ring's sectors from both ends,
/// so angular neighbours (including the wrap) stay within a few rows.
#[derive(Debug, Clone)]
struct Ordering {
    pos: Vec<usize>,
    kl: usize,
    ku: usize,
}

impl Ordering {
    fn new(grid: &CapGrid) -> Self {
        let s = grid.sectors();
        let mut pos = vec![0; grid.len()];
        for node in grid.nodes().iter().skip(1) {
            let m = node.sector;
            let p = if m < s / 2 { 2 * m } else { 2 * (s - m) - 1 };
            pos[grid.index(node.ring, m as isize)] = 1 + (node.ring - 1) * s + p;
        }
        let (mut kl, mut ku) = (0, 0);
        for i in grid.interior_indices() {
            for &(j, _) in &grid.stencil(i).entries {
                let (r, c) = (pos[i], pos[j]);
                kl = kl.max(r.saturating_sub(c));
                ku = ku.max(c.saturating_sub(r));
            }
        }
        Self { pos, kl, ku }
    }
}

/// Banded Newton matrix in the interleaved ordering.
#[derive(Debug, Clone)]
pub struct Jacobian {
    band: BandMatrix,
    pos: Vec<usize>,
    factored: bool,
}

impl Jacobian {
    pub fn dim(&self) -> usize {
        self.pos.len()
    }

    /// Entry for residual row `i` and unknown `j` in node numbering.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(!self.factored);
        self.band.get(self.pos[i], self.pos[j])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut xp = vec![0.0; x.len()];
        for (i, &p) in self.pos.iter().enumerate() {
            xp[p] = x[i];
        }
        let yp = self.band.mul_vec(&xp);
        self.pos.iter().map(|&p| yp[p]).collect()
    }

    /// Solves `J x = b`, factoring on first use.
    pub fn solve(&mut self, b: &[f64]) -> Result<Vec<f64>> {
        if !self.factored {
            self.band.factor()?;
            self.factored = true;
        }
        let mut bp = vec![0.0; b.len()];
        for (i, &p) in self.pos.iter().enumerate() {
            bp[p] = b[i];
        }
        self.band.solve_in_place(&mut bp);
        Ok(self.pos.iter().map(|&p| bp[p]).collect())
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        self.band.bandwidths()
    }
}

pub fn residual_theta(problem: &Problem, state: &GraphState, t: f64) -> Result<ScalarField> {
    problem.residual(Family::Theta, t, state)
}

pub fn residual_xi(problem: &Problem, state: &GraphState, s: f64) -> Result<ScalarField> {
    problem.residual(Family::Xi, s, state)
}

pub fn assemble_jacobian(problem: &Problem, state: &GraphState, family: Family, param: f64) -> Result<Jacobian> {
    problem.jacobian(family, param, state, JacobianMode::Analytic)
}

pub fn max_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute tolerance on the max-norm of the residual.
    pub tol: f64,
    pub max_iterations: usize,
    /// Step halvings tried before giving up (`alpha >= 2^-max_halvings`).
    pub max_halvings: usize,
    pub mode: JacobianMode,
}

impl NewtonOptions {
    pub fn for_problem(problem: &Problem) -> Self {
        Self { tol: 1e-9 * problem.scale(), max_iterations: 30, max_halvings: 6, mode: JacobianMode::Analytic }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub state: GraphState,
    /// `z = v - v_` of the final iterate, kept unrounded.
    pub offset: Vec<f64>,
    pub residual: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the residual before each iteration and at the end.
    pub norms: Vec<f64>,
    /// Accepted damping factor per iteration.
    pub alphas: Vec<f64>,
}

/// One damped Newton update of the offset `z` with residual `r`.
///
/// Returns the new offset, its surface, its residual and the damping used.
pub fn newton_step(
    problem: &Problem,
    family: Family,
    param: f64,
    z: &[f64],
    r: &[f64],
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, GraphState, Vec<f64>, f64)> {
    let mut jac = problem.jacobian_offsets(family, param, z, opts.mode)?;
    let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
    let delta = jac.solve(&rhs)?;
    let base = two_norm(r);
    let mut alpha = 1.0;
    for attempt in 0..=opts.max_halvings {
        let trial: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
        let outcome = problem.state_from_offsets(&trial).and_then(|s| {
            let report = s.admissible();
            if !report.admissible {
                return Err(Error::NotAdmissible { node: report.worst_node, min_eigenvalue: report.min_eigenvalue });
            }
            let rt = problem.residual_offsets(family, param, &trial)?;
            Ok((s, rt))
        });
        match outcome {
            Ok((s, rt)) if two_norm(&rt) < base => return Ok((trial, s, rt, alpha)),
            Ok((_, rt)) => debug!("alpha {alpha}: residual {:e} >= {base:e}", two_norm(&rt)),
            Err(e) => debug!("alpha {alpha} rejected (attempt {attempt}): {e}"),
        }
        alpha *= 0.5;
    }
    Err(Error::LineSearch { attempts: opts.max_halvings, residual: max_norm(r) })
}

/// Damped Newton iteration to `opts.tol` starting from a surface.
pub fn newton_solve(
    problem: &Problem,
    family: Family,
    param: f64,
    start: &GraphState,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let v = problem.check_values(start)?;
    let z = problem.offsets(&v);
    let state = start.to_representation(Representation::V)?;
    newton_from_offsets(problem, family, param, z, state, opts)
}

fn newton_from_offsets(
    problem: &Problem,
    family: Family,
    param: f64,
    mut z: Vec<f64>,
    mut state: GraphState,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let mut r = problem.residual_offsets(family, param, &z)?;
    let mut norms = vec![max_norm(&r)];
    let mut alphas = Vec::new();
    for it in 0..=opts.max_iterations {
        if max_norm(&r) <= opts.tol {
            return Ok(NewtonOutcome { state, offset: z, residual: r, iterations: it, norms, alphas });
        }
        if it == opts.max_iterations {
            break;
        }
        let (zn, s, rt, alpha) = newton_step(problem, family, param, &z, &r, opts)?;
        z = zn;
        state = s;
        r = rt;
        norms.push(max_norm(&r));
        alphas.push(alpha);
    }
    Err(Error::NewtonDiverged { iterations: opts.max_iterations, residual: max_norm(&r) })
}

/// Continuation step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepController {
    pub delta: f64,
    pub min_delta: f64,
    pub shrink: f64,
    pub grow: f64,
    pub max_newton_iterations: usize,
}

impl Default for StepController {
    fn default() -> Self {
        Self { delta: 0.1, min_delta: 1e-4, shrink: 0.5, grow: 1.5, max_newton_iterations: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub controller: StepController,
    /// Newton tolerance relative to [`Problem::scale`].
    pub relative_tol: f64,
    /// Allowed undershoot of `v - v_` at accepted states.
    pub monitor_tol: f64,
    pub mode: JacobianMode,
    /// Keep every accepted state in [`HomotopyRun::accepted`].
    pub record_states: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            controller: StepController::default(),
            relative_tol: 1e-9,
            monitor_tol: 1e-10,
            mode: JacobianMode::Analytic,
            record_states: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub family: Family,
    pub parameter: f64,
    pub newton_iterations: usize,
    pub residual: f64,
    pub accepted: bool,
    pub step: f64,
    pub min_comparison_margin: f64,
}

/// State of a continuation in progress.
#[derive(Debug, Clone)]
pub struct HomotopyRun {
    pub family: Family,
    pub parameter: f64,
    pub state: GraphState,
    /// `z = v - v_` of `state`, kept unrounded.
    pub offset: Vec<f64>,
    pub controller: StepController,
    pub history: Vec<HistoryEntry>,
    /// Accepted states in order, when recording is enabled.
    pub accepted: Vec<GraphState>,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub state: GraphState,
    pub offset: Vec<f64>,
    pub residual: Vec<f64>,
    pub history: Vec<HistoryEntry>,
    /// Accepted states, empty unless recording was requested.
    pub accepted: Vec<GraphState>,
    /// The subsolution already solved the target problem.
    pub immediate: bool,
}

impl ContinuationResult {
    pub fn residual_norm(&self) -> f64 {
        max_norm(&self.residual)
    }
}

#[derive(Debug)]
pub struct ContinuationFailure {
    pub error: Error,
    pub run: Box<HomotopyRun>,
}

impl fmt::Display for ContinuationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} = {}: {}", self.run.family, self.run.family, self.run.parameter, self.error)
    }
}

impl std::error::Error for ContinuationFailure {}

impl From<ContinuationFailure> for Error {
    fn from(f: ContinuationFailure) -> Self {
        match f.error {
            Error::Continuation(_) => f.error,
            _ => Error::Continuation(f.to_string()),
        }
    }
}

/// `min (v - v_)`.
pub fn comparison_margin(offset: &[f64]) -> f64 {
    offset.iter().copied().fold(f64::INFINITY, f64::min)
}

impl HomotopyRun {
    fn new(problem: &Problem, controller: StepController) -> Self {
        Self {
            family: Family::Theta,
            parameter: 0.0,
            state: problem.anchor.clone(),
            offset: vec![0.0; problem.grid.len()],
            controller,
            history: Vec::new(),
            accepted: Vec::new(),
        }
    }

    /// Advances the current family from its parameter to 1.
    fn sweep(&mut self, problem: &Problem, opts: &ContinuationOptions, newton: &NewtonOptions) -> Result<()> {
        let ctl = opts.controller;
        self.controller.delta = ctl.delta;
        while self.parameter < 1.0 {
            let step = self.controller.delta.min(1.0 - self.parameter);
            let target = if step >= 1.0 - self.parameter { 1.0 } else { self.parameter + step };
            let outcome =
                newton_from_offsets(problem, self.family, target, self.offset.clone(), self.state.clone(), newton);
            let (accepted, iterations, residual, margin) = match outcome {
                Ok(out) => {
                    let margin = comparison_margin(&out.offset);
                    let ok = margin >= -opts.monitor_tol;
                    if !ok {
                        warn!("{} = {target}: v - v_ reaches {margin:e}", self.family);
                    }
                    let entry = (ok, out.iterations, max_norm(&out.residual), margin);
                    if ok {
                        if opts.record_states {
                            self.accepted.push(out.state.clone());
                        }
                        self.state = out.state;
                        self.offset = out.offset;
                        self.parameter = target;
                    }
                    entry
                }
                Err(e) => {
                    debug!("{} = {target} rejected: {e}", self.family);
                    (false, newton.max_iterations, f64::NAN, f64::NAN)
                }
            };
            self.history.push(HistoryEntry {
                family: self.family,
                parameter: target,
                newton_iterations: iterations,
                residual,
                accepted,
                step,
                min_comparison_margin: margin,
            });
            if accepted {
                info!("{} = {target:.6} accepted after {iterations} newton iterations", self.family);
                self.controller.delta *= ctl.grow;
            } else {
                self.controller.delta *= ctl.shrink;
                if self.controller.delta < ctl.min_delta {
                    return Err(Error::Continuation(format!(
                        "step size fell below {} in {} at {}",
                        ctl.min_delta, self.family, self.parameter
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Theta from `t = 0` to 1, then Xi from `s = 0` to 1.
pub fn continuity_run(
    problem: &Problem,
    opts: &ContinuationOptions,
) -> std::result::Result<ContinuationResult, ContinuationFailure> {
    let mut newton = NewtonOptions::for_problem(problem);
    newton.tol = opts.relative_tol * problem.scale();
    newton.max_iterations = opts.controller.max_newton_iterations;
    newton.mode = opts.mode;
    let mut run = HomotopyRun::new(problem, opts.controller);
    let fail = |error: Error, run: HomotopyRun| ContinuationFailure { error, run: Box::new(run) };

    let target = match problem.residual_offsets(Family::Xi, 1.0, &run.offset) {
        Ok(r) => r,
        Err(e) => return Err(fail(e, run)),
    };
    if max_norm(&target) <= newton.tol || problem.serrin.is_degenerate() {
        info!("subsolution solves the target problem (residual {:e})", max_norm(&target));
        run.family = Family::Xi;
        run.parameter = 1.0;
        return Ok(ContinuationResult {
            state: run.state,
            offset: run.offset,
            residual: target,
            history: run.history,
            accepted: run.accepted,
            immediate: true,
        });
    }

    for family in [Family::Theta, Family::Xi] {
        run.family = family;
        run.parameter = 0.0;
        if let Err(e) = run.sweep(problem, opts, &newton) {
            return Err(fail(e, run));
        }
    }
    match problem.residual_offsets(Family::Xi, 1.0, &run.offset) {
        Ok(residual) => Ok(ContinuationResult {
            state: run.state,
            offset: run.offset,
            residual,
            history: run.history,
            accepted: run.accepted,
            immediate: false,
        }),
        Err(e) => Err(fail(e, run)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subsolution::{build_subsolution, EnclosingSphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn problem(center: [f64; 3], psi: &str, k: usize, rings: usize, sectors: usize) -> Problem {
        let sphere = EnclosingSphere::new(center, 1.0).unwrap();
        let grid = Arc::new(CapGrid::build(PI / 3.0, rings, sectors).unwrap());
        let sub = build_subsolution(&sphere, grid).unwrap();
        Problem::new(&sub, psi.parse().unwrap(), k).unwrap()
    }

    fn smooth_bump(grid: &CapGrid, amp: f64) -> Vec<f64> {
        let r0 = grid.plane_radius();
        grid.nodes()
            .iter()
            .map(|n| {
                let s = (n.y[0] * n.y[0] + n.y[1] * n.y[1]).sqrt() / r0;
                amp * (1.0 - s * s) * (1.0 + 0.3 * n.y[0] / r0)
            })
            .collect()
    }

    #[test]
    fn theta_anchor_is_exact() {
        for center in [[0.0; 3], [0.0, 0.0, 0.3], [0.2, -0.1, 0.1]] {
            let p = problem(center, "0.7 - 0.2*nz", 2, 8, 16);
            let r = residual_theta(&p, p.anchor(), 0.0).unwrap();
            assert!(max_norm(r.values()) <= 1e-12, "{center:?}");
        }
    }

    #[test]
    fn families_meet() {
        let p = problem([0.1, 0.0, 0.3], "0.7 - 0.2*nz", 2, 8, 16);
        let mut v = p.v_under().to_vec();
        for (x, b) in v.iter_mut().zip(smooth_bump(p.grid(), 0.02)) {
            *x += b;
        }
        let s = GraphState::from_v(p.grid().clone(), v).unwrap();
        let a = residual_theta(&p, &s, 1.0).unwrap();
        let b = residual_xi(&p, &s, 0.0).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn constant_lift_sign() {
        let p = problem([0.0, 0.0, 0.3], "1", 2, 12, 24);
        let v: Vec<f64> = p.v_under().iter().map(|x| x + 0.1).collect();
        let s = GraphState::from_v(p.grid().clone(), v).unwrap();
        let r = residual_xi(&p, &s, 1.0).unwrap();
        let interior: Vec<f64> = p.grid().interior_indices().map(|i| r.values()[i]).collect();
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(mean > 0.0);
        assert!(interior.iter().all(|&x| x > 0.0));
    }

    fn random_state(p: &Problem, rng: &mut ChaCha8Rng) -> GraphState {
        let r0 = p.grid().plane_radius();
        let (a, b, c) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(0.0..6.0));
        let v = p
            .grid()
            .nodes()
            .iter()
            .zip(p.v_under())
            .map(|(n, base)| {
                let (x, y) = (n.y[0] / r0, n.y[1] / r0);
                base + a * (x * x + y * y) + b * (c * x + y).sin()
            })
            .collect();
        GraphState::from_v(p.grid().clone(), v).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, fam, param) in [(1, Family::Theta, 0.3), (2, Family::Xi, 0.6), (2, Family::Theta, 1.0)] {
            let p = problem([0.1, -0.05, 0.3], "exp(0.3*nx - 0.2*ny)*0.5", k, 10, 20);
            let state = random_state(&p, &mut rng);
            assert!(state.admissible().admissible);
            let jac = p.jacobian(fam, param, &state, JacobianMode::Analytic).unwrap();
            let v = state.values().to_vec();
            for _ in 0..10 {
                let d: Vec<f64> = (0..v.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let eps = 1e-6;
                let shifted = |sgn: f64| {
                    let w: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + sgn * eps * b).collect();
                    p.residual_values(fam, param, &w).unwrap()
                };
                let (rp, rm) = (shifted(1.0), shifted(-1.0));
                let jd = jac.apply(&d);
                for i in 0..v.len() {
                    let fd = (rp[i] - rm[i]) / (2.0 * eps);
                    assert!((jd[i] - fd).abs() <= 1e-6 * (1.0 + jd[i].abs()), "node {i}: {} vs {fd}", jd[i]);
                }
            }
        }
    }

    #[test]
    fn fd_mode_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = problem([0.0, 0.1, 0.2], "0.8 - 0.1*nz*nz", 2, 8, 16);
        let state = random_state(&p, &mut rng);
        let a = p.jacobian(Family::Xi, 0.5, &state, JacobianMode::Analytic).unwrap();
        let f = p.jacobian(Family::Xi, 0.5, &state, JacobianMode::FiniteDifference).unwrap();
        for i in 0..p.grid().len() {
            for &(j, _) in &p.grid().stencil(i).entries {
                let (x, y) = (a.get(i, j), f.get(i, j));
                assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "({i},{j}) {x} vs {y}");
            }
        }
    }

    #[test]
    fn boundary_rows_are_identity() {
        let p = problem([0.0, 0.0, 0.3], "0.6", 1, 8, 16);
        let jac = assemble_jacobian(&p, p.anchor(), Family::Theta, 0.5).unwrap();
        for i in p.grid().boundary_indices() {
            for j in 0..p.grid().len() {
                assert_eq!(jac.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_order_coefficient_is_nonpositive_at_solutions() {
        let p = problem([0.0, 0.0, 0.3], "0.7 - 0.2*nz", 2, 8, 16);
        for (fam, param) in [(Family::Theta, 0.0), (Family::Theta, 0.4)] {
            let coeff = Coeff::new(fam, param);
            for i in p.grid().interior_indices() {
                let t = p.node_terms(coeff, &vec![0.0; p.grid().len()], i, true).unwrap();
                // at the anchor with t = 0, dv = F - 2 F = -F
                if param == 0.0 {
                    assert!(t.dv < 0.0);
                    assert!((t.dv + p.psi_under()[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bandwidth_is_about_two_rings() {
        let p = problem([0.0; 3], "0.5", 1, 8, 16);
        let (kl, ku) = (p.ordering.kl, p.ordering.ku);
        assert!(kl <= 2 * 16 + 8 && ku <= 2 * 16 + 8, "{kl} {ku}");
    }

    #[test]
    fn newton_recovers_perturbed_cap() {
        let p = problem([0.0, 0.0, 0.3], "1", 2, 16, 32);
        let opts = NewtonOptions::for_problem(&p);
        let exact = newton_solve(&p, Family::Xi, 1.0, p.anchor(), &opts).unwrap();
        let u_exact = exact.state.u_values();
        let start: Vec<f64> = exact.offset.iter().zip(smooth_bump(p.grid(), 0.05)).map(|(v, b)| v + b).collect();
        let start = p.state_from_offsets(&start).unwrap();
        let out = newton_solve(&p, Family::Xi, 1.0, &start, &opts).unwrap();
        let err = out.state.u_values().iter().zip(&u_exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(out.norms.windows(2).all(|w| w[1] <= 0.3 * w[0]), "{:?}", out.norms);
        let again = newton_solve(&p, Family::Xi, 1.0, &out.state, &opts).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn degenerate_psi_returns_subsolution() {
        let p = problem([0.0; 3], "1", 2, 8, 16);
        let out = continuity_run(&p, &ContinuationOptions::default()).unwrap();
        assert!(out.immediate);
        assert_eq!(out.state.values(), p.v_under());
        assert!(out.residual_norm() <= 1e-15);
    }

    #[test]
    fn serrin_violation_is_refused() {
        let sphere = EnclosingSphere::new([0.0, 0.0, 0.3], 1.0).unwrap();
        let grid = Arc::new(CapGrid::build(PI / 3.0, 8, 16).unwrap());
        let sub = build_subsolution(&sphere, grid).unwrap();
        assert!(matches!(Problem::new(&sub, "1.1".parse().unwrap(), 2), Err(Error::Serrin(_))));
        assert!(matches!(Problem::new(&sub, "abs(nz)+0.1".parse().unwrap(), 2), Err(Error::Psi(_))));
    }

    #[test]
    fn small_continuation_run() {
        let p = problem([0.0, 0.0, 0.3], "0.7 - 0.2*nz", 2, 12, 24);
        let out = continuity_run(&p, &ContinuationOptions::default()).unwrap();
        assert!(!out.immediate);
        assert!(out.residual_norm() <= 1e-9 * p.scale());
        assert!(out.state.admissible().admissible);
        assert!(comparison_margin(&out.offset) >= -1e-10);
        assert!(out.history.iter().filter(|h| h.accepted).all(|h| h.min_comparison_margin >= -1e-10));
        assert!(out.history.len() <= 40);
    }
}
