//! Two solvers for `L u = χ_{u>0}` (with general forcing) on the grid.
//!
//! Writing the equation as `∂_t u = Δ_v u − v·∇_x u − β_ε(u) − φ`, the
//! penalized scheme marches from the initial slice with implicit diffusion
//! (per-(t,x)-line tridiagonal solves for `n = 1`), explicit first-order
//! upwind transport and a damped Newton iteration for the penalty term. The
//! projected solver replaces the penalty by a per-step linear complementarity
//! solve: projected SOR sweeps with the clamp `u ← max(u, 0)` applied at every
//! node update, so its output is nonnegative exactly.
//!
//! Lateral boundary handling follows the influx partition: Dirichlet data is
//! consumed on incoming faces and on both v-faces, outgoing x-face nodes are
//! extrapolated first-order from the interior, and tangential (`v = 0`)
//! x-face nodes solve the equation with the transport term dropped.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{apply_l, Field, Grid, Transport};

/// Penalty profile choice.
///
/// Both variants satisfy `β_ε(s) = 0` for `s ≥ 0`, `β_ε(s) = s/ε` for
/// `s ≤ −ε`, `β_ε ≤ 0` and `β_ε' ≥ 0`. The piecewise-linear form is the exact
/// two-piece function; the cubic bridge interpolates `C¹`-smoothly on
/// `(−ε, 0)` (concavity is given up on the bridge, which only the proof needs,
/// not the numerics).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyVariant {
    PiecewiseLinear,
    CubicBridge,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct PenaltyFunction {
    pub eps: f64,
    pub variant: PenaltyVariant,
}

impl PenaltyFunction {
    pub fn new(eps: f64, variant: PenaltyVariant) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::usage(format!("penalty.eps must be positive, got {eps}")));
        }
        Ok(Self { eps, variant })
    }

    pub fn beta(&self, s: f64) -> f64 {
        let eps = self.eps;
        match self.variant {
            PenaltyVariant::PiecewiseLinear => s.min(0.0) / eps,
            PenaltyVariant::CubicBridge => {
                if s >= 0.0 {
                    0.0
                } else if s <= -eps {
                    s / eps
                } else {
                    let q = s / eps;
                    -2.0 * q * q - q * q * q
                }
            }
        }
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        let eps = self.eps;
        match self.variant {
            PenaltyVariant::PiecewiseLinear => {
                if s < 0.0 {
                    1.0 / eps
                } else {
                    0.0
                }
            }
            PenaltyVariant::CubicBridge => {
                if s >= 0.0 {
                    0.0
                } else if s <= -eps {
                    1.0 / eps
                } else {
                    let q = s / eps;
                    (-4.0 * q - 3.0 * q * q) / eps
                }
            }
        }
    }
}

/// Right-hand side `φ` of the penalized equation (`φ ≡ 1` recovers the unit
/// obstacle normalisation).
#[derive(Clone, Debug)]
pub enum Forcing {
    Constant(f64),
    PerNode(Field),
}

impl Forcing {
    fn at(&self, flat: usize) -> f64 {
        match self {
            Forcing::Constant(c) => *c,
            Forcing::PerNode(f) => f.values()[flat],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Forcing::Constant(c) => c.abs(),
            Forcing::PerNode(f) => f.sup_norm(),
        }
    }
}

/// Dirichlet data on the parabolic boundary and incoming lateral faces.
#[derive(Clone, Debug)]
pub enum BoundaryData {
    Zero,
    /// `½ ((v·e)₊)²` for `e = ±1`.
    HalfSpace { e: f64 },
    /// `m t + a v²`.
    Polynomial { m: f64, a: f64 },
    /// Half-space profile with an x-modulated amplitude; keeps a fat contact
    /// slab `{v ≲ 0}` near the domain centre.
    ThickSlab { gamma: f64 },
    /// Near-polynomial profile whose contact set shrinks to a thin neighborhood
    /// of `{t = 0, v = 0}`.
    ThinParabola { gamma: f64 },
    /// Interpolated from a stored field.
    FromField(Field),
}

impl BoundaryData {
    pub fn eval(&self, grid: &Grid, t: f64, x: f64, v: f64) -> f64 {
        match self {
            BoundaryData::Zero => 0.0,
            BoundaryData::HalfSpace { e } => {
                let ve = v * e;
                if ve > 0.0 {
                    0.5 * ve * ve
                } else {
                    0.0
                }
            }
            BoundaryData::Polynomial { m, a } => m * t + a * v * v,
            BoundaryData::ThickSlab { gamma } => {
                // sin keeps the x-gradient peaked at the domain centre and the
                // amplitude equal to one on the x-faces
                let amp = 1.0 + gamma * (std::f64::consts::PI * x / grid.x_extent()).sin();
                if v > 0.0 {
                    0.5 * v * v * amp
                } else {
                    0.0
                }
            }
            BoundaryData::ThinParabola { gamma } => {
                let amp = 1.0 + gamma * (std::f64::consts::PI * x / grid.x_extent()).sin();
                (-0.5 * t + 0.25 * v * v) * amp
            }
            BoundaryData::FromField(f) => {
                let z = crate::geometry::KineticPoint::new1(t, x, v);
                f.interpolate(&z).unwrap_or(0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MarchParams {
    /// CFL factor: the grid must satisfy `Δt ≤ cfl·Δx/max|v|`, `cfl ≤ 1`.
    pub cfl: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
}

impl Default for MarchParams {
    fn default() -> Self {
        Self { cfl: 1.0, max_newton: 25, newton_tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ProjectedParams {
    pub relax_omega: f64,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
}

impl Default for ProjectedParams {
    fn default() -> Self {
        Self { relax_omega: 1.6, sweep_tol: 1e-11, max_sweeps: 50_000 }
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleProblemSpec {
    pub grid: Grid,
    pub forcing: Forcing,
    pub boundary: BoundaryData,
    pub penalty: PenaltyFunction,
    pub march: MarchParams,
    pub projected: ProjectedParams,
}

impl ObstacleProblemSpec {
    pub fn new(grid: Grid, boundary: BoundaryData) -> Self {
        Self {
            grid,
            forcing: Forcing::Constant(1.0),
            boundary,
            penalty: PenaltyFunction { eps: 1e-3, variant: PenaltyVariant::PiecewiseLinear },
            march: MarchParams::default(),
            projected: ProjectedParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let mut errs = Vec::new();
        if g.n() != 1 {
            errs.push("the marching solvers are implemented for n = 1".to_string());
        }
        if !(self.march.cfl > 0.0 && self.march.cfl <= 1.0) {
            errs.push(format!("solver.cfl must lie in (0, 1], got {}", self.march.cfl));
        }
        let vmax = g.v_extent();
        if g.dt() > self.march.cfl * g.dx() / vmax + 1e-14 {
            errs.push(format!(
                "CFL violated: Δt = {:.5} exceeds cfl·Δx/max|v| = {:.5}; refine the time axis",
                g.dt(),
                self.march.cfl * g.dx() / vmax
            ));
        }
        if !(self.penalty.eps > 0.0) {
            errs.push("penalty.eps must be positive".to_string());
        }
        if !(self.projected.relax_omega > 0.0 && self.projected.relax_omega < 2.0) {
            errs.push(format!(
                "solver.relax_omega must lie in (0, 2), got {}",
                self.projected.relax_omega
            ));
        }
        // boundary data must be nonnegative where it is consumed
        if g.n() == 1 {
            let mut worst: f64 = 0.0;
            for it in 0..=g.nt() {
                let t = g.t_node(it);
                for ix in 0..=g.nx() {
                    let x = g.x_node(ix);
                    for iv in [0, g.nv()] {
                        worst = worst.min(self.boundary.eval(g, t, x, g.v_node(iv)));
                    }
                    if it == 0 {
                        for iv in 0..=g.nv() {
                            worst = worst.min(self.boundary.eval(g, t, x, g.v_node(iv)));
                        }
                    }
                }
            }
            if worst < -1e-12 {
                errs.push(format!("boundary data dips to {worst:.3e}; h must be nonnegative"));
            }
        }
        if let Forcing::PerNode(f) = &self.forcing {
            if f.grid() != g {
                errs.push("forcing field must live on the solve grid".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveStats {
    /// Worst per-line iteration count for each time step (Newton iterations
    /// for the penalized march, relaxation sweeps for the projected one).
    pub iterations_per_step: Vec<u32>,
    /// Worst step-level residual seen: Newton residual or LCP residual.
    pub step_residual: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub u: Field,
    pub stats: SolveStats,
    /// `‖min(A u − b, u)‖_∞` over all marched steps (projected solver), or the
    /// final penalty equation residual (penalized solver).
    pub complementarity_residual: f64,
    pub penalty_residual: f64,
    pub min_value: f64,
    /// Lemma-level lower bound `−max{1, ‖φ‖_∞}·ε` the penalized solution is
    /// measured against.
    pub penalized_lower_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Penalized,
    Projected,
}

pub fn solve(spec: &ObstacleProblemSpec, kind: SolverKind) -> Result<SolveResult> {
    match kind {
        SolverKind::Penalized => solve_penalized(spec),
        SolverKind::Projected => solve_projected(spec),
    }
}

struct March<'a> {
    spec: &'a ObstacleProblemSpec,
    g: &'a Grid,
    nx: usize,
    nv: usize,
    dt: f64,
    dx: f64,
    dv2: f64,
}

impl<'a> March<'a> {
    fn new(spec: &'a ObstacleProblemSpec) -> Self {
        let g = &spec.grid;
        Self {
            spec,
            g,
            nx: g.nx(),
            nv: g.nv(),
            dt: g.dt(),
            dx: g.dx(),
            dv2: g.dv() * g.dv(),
        }
    }

    fn h(&self, t: f64, x: f64, v: f64) -> f64 {
        self.spec.boundary.eval(self.g, t, x, v)
    }

    /// Explicit upwind transport `v · ∂_x u` evaluated on the previous slice.
    fn transport(&self, prev: &[f64], ix: usize, iv: usize) -> f64 {
        let v = self.g.v_node(iv);
        if v == 0.0 {
            return 0.0;
        }
        let cols = self.nv + 1;
        let here = prev[ix * cols + iv];
        let d = if v > 0.0 {
            if ix == 0 {
                prev[cols + iv] - here
            } else {
                here - prev[(ix - 1) * cols + iv]
            }
        } else if ix == self.nx {
            here - prev[(ix - 1) * cols + iv]
        } else {
            prev[(ix + 1) * cols + iv] - here
        };
        v * d / self.dx
    }

    fn rhs_line(&self, prev: &[f64], it: usize, ix: usize) -> Vec<f64> {
        let cols = self.nv + 1;
        let mut b = vec![0.0; cols];
        for iv in 0..=self.nv {
            let flat = self.g.flat1(it, ix, iv);
            b[iv] = prev[ix * cols + iv] / self.dt
                - self.transport(prev, ix, iv)
                - self.spec.forcing.at(flat);
        }
        b
    }
}

/// Tridiagonal solve (Thomas algorithm); diagonals given as (lower, diag, upper).
fn thomas(lo: &[f64], di: &[f64], hi: &[f64], rhs: &mut [f64]) {
    let m = rhs.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = hi[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..m {
        let w = di[i] - lo[i] * c[i - 1];
        c[i] = hi[i] / w;
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / w;
    }
    rhs[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        rhs[i] = d[i] - c[i] * rhs[i + 1];
    }
}

/// Damped Newton for one implicit v-line of the penalized step.
///
/// Unknowns are the full line; rows 0 and nv are Dirichlet identities.
fn newton_line(
    pen: &PenaltyFunction,
    dt: f64,
    dv2: f64,
    b: &[f64],
    dirichlet: (f64, f64),
    start: &[f64],
    max_iter: usize,
    tol: f64,
) -> std::result::Result<(Vec<f64>, u32), f64> {
    let m = b.len();
    let mut u = start.to_vec();
    u[0] = dirichlet.0;
    u[m - 1] = dirichlet.1;
    let a_off = -1.0 / dv2;
    let a_diag = 1.0 / dt + 2.0 / dv2;

    let residual = |u: &[f64], f: &mut [f64]| -> f64 {
        let mut worst = 0.0f64;
        f[0] = 0.0;
        f[m - 1] = 0.0;
        for i in 1..m - 1 {
            let fi = a_off * u[i - 1] + a_diag * u[i] + a_off * u[i + 1] + pen.beta(u[i]) - b[i];
            f[i] = fi;
            worst = worst.max(fi.abs());
        }
        worst
    };

    let mut f = vec![0.0; m];
    let mut res = residual(&u, &mut f);
    for iter in 0..max_iter {
        if res <= tol {
            return Ok((u, iter as u32));
        }
        // Newton system J δ = −F with Dirichlet rows pinned
        let mut lo = vec![a_off; m];
        let mut di = vec![a_diag; m];
        let mut hi = vec![a_off; m];
        let mut rhs = vec![0.0; m];
        for i in 1..m - 1 {
            di[i] += pen.beta_prime(u[i]);
            rhs[i] = -f[i];
        }
        lo[0] = 0.0;
        di[0] = 1.0;
        hi[0] = 0.0;
        lo[m - 1] = 0.0;
        di[m - 1] = 1.0;
        hi[m - 1] = 0.0;
        thomas(&lo, &di, &hi, &mut rhs);
        // damping by halving until the residual does not increase
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let trial: Vec<f64> = u.iter().zip(&rhs).map(|(ui, di)| ui + lambda * di).collect();
            let mut ft = vec![0.0; m];
            let rt = residual(&trial, &mut ft);
            if rt < res {
                u = trial;
                f = ft;
                res = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // flat spot: take the smallest damped step anyway
            for (ui, di) in u.iter_mut().zip(&rhs) {
                *ui += lambda * di;
            }
            res = residual(&u, &mut f);
        }
    }
    if res <= tol {
        Ok((u, max_iter as u32))
    } else {
        Err(res)
    }
}

/// Projected SOR for one implicit v-line of the complementarity step.
fn psor_line(
    params: &ProjectedParams,
    dt: f64,
    dv2: f64,
    b: &[f64],
    dirichlet: (f64, f64),
    start: &[f64],
) -> std::result::Result<(Vec<f64>, u32, f64), f64> {
    let m = b.len();
    let mut u = start.to_vec();
    u[0] = dirichlet.0;
    u[m - 1] = dirichlet.1;
    let a_off = -1.0 / dv2;
    let a_diag = 1.0 / dt + 2.0 / dv2;
    let omega = params.relax_omega;
    for sweep in 0..params.max_sweeps {
        let mut change = 0.0f64;
        for i in 1..m - 1 {
            let gs = (b[i] - a_off * (u[i - 1] + u[i + 1])) / a_diag;
            let cand = ((1.0 - omega) * u[i] + omega * gs).max(0.0);
            change = change.max((cand - u[i]).abs());
            u[i] = cand;
        }
        if change <= params.sweep_tol {
            let mut res = 0.0f64;
            for i in 1..m - 1 {
                let au_b = a_off * (u[i - 1] + u[i + 1]) + a_diag * u[i] - b[i];
                res = res.max(au_b.min(u[i]).abs());
            }
            return Ok((u, sweep as u32 + 1, res));
        }
    }
    let mut res = 0.0f64;
    for i in 1..m - 1 {
        let au_b = a_off * (u[i - 1] + u[i + 1]) + a_diag * u[i] - b[i];
        res = res.max(au_b.min(u[i]).abs());
    }
    Err(res)
}

enum StepKind<'a> {
    Penalized(&'a PenaltyFunction),
    Projected(&'a ProjectedParams),
}

fn march_all(spec: &ObstacleProblemSpec, kind: StepKind) -> Result<SolveResult> {
    spec.validate()?;
    let t0 = Instant::now();
    let m = March::new(spec);
    let g = m.g;
    let (nx, nv) = (m.nx, m.nv);
    let cols = nv + 1;
    let mut u = Field::zeros(g);

    // initial slice is parabolic boundary
    for ix in 0..=nx {
        let x = g.x_node(ix);
        for iv in 0..=nv {
            let val = m.h(g.t_lo(), x, g.v_node(iv));
            u.values_mut()[g.flat1(0, ix, iv)] = val;
        }
    }

    let mut iterations = Vec::with_capacity(g.nt());
    let mut worst_step_residual = 0.0f64;

    for it in 1..=g.nt() {
        let t = g.t_node(it);
        let prev: Vec<f64> = (0..=nx)
            .flat_map(|ix| (0..=nv).map(move |iv| (ix, iv)))
            .map(|(ix, iv)| u.values()[g.flat1(it - 1, ix, iv)])
            .collect();

        // interior lines solve implicitly in v; x-face lines are filled after
        let line_results: Vec<_> = (1..nx)
            .into_par_iter()
            .map(|ix| {
                let x = g.x_node(ix);
                let b = m.rhs_line(&prev, it, ix);
                let dirichlet = (m.h(t, x, g.v_node(0)), m.h(t, x, g.v_node(nv)));
                let start = &prev[ix * cols..(ix + 1) * cols];
                match &kind {
                    StepKind::Penalized(pen) => newton_line(
                        pen,
                        m.dt,
                        m.dv2,
                        &b,
                        dirichlet,
                        start,
                        spec.march.max_newton,
                        spec.march.newton_tol,
                    )
                    .map(|(line, iters)| (line, iters, 0.0)),
                    StepKind::Projected(pp) => psor_line(pp, m.dt, m.dv2, &b, dirichlet, start),
                }
            })
            .collect();

        let mut step_iters = 0u32;
        for (k, res) in line_results.into_iter().enumerate() {
            let ix = k + 1;
            match res {
                Ok((line, iters, lcp_res)) => {
                    step_iters = step_iters.max(iters);
                    worst_step_residual = worst_step_residual.max(lcp_res);
                    for iv in 0..=nv {
                        u.values_mut()[g.flat1(it, ix, iv)] = line[iv];
                    }
                }
                Err(r) => {
                    return Err(match kind {
                        StepKind::Penalized(_) => Error::NewtonDiverged { step: it, residual: r },
                        StepKind::Projected(_) => Error::SweepsExceeded { step: it, residual: r },
                    });
                }
            }
        }

        // x-faces: Dirichlet on incoming rows, first-order extrapolation on
        // outgoing rows, scalar implicit solve on tangential rows
        for (ix, inner, incoming_if) in [(0usize, 1usize, 1.0f64), (nx, nx - 1, -1.0)] {
            let x = g.x_node(ix);
            for iv in 0..=nv {
                let v = g.v_node(iv);
                let flat = g.flat1(it, ix, iv);
                if iv == 0 || iv == nv || v * incoming_if > 0.0 {
                    u.values_mut()[flat] = m.h(t, x, v);
                } else if v != 0.0 {
                    u.values_mut()[flat] = u.values()[g.flat1(it, inner, iv)];
                }
            }
            // tangential rows after their v-neighbours are known
            for iv in 1..nv {
                let v = g.v_node(iv);
                if v != 0.0 {
                    continue;
                }
                let flat = g.flat1(it, ix, iv);
                let b_i = prev[ix * cols + iv] / m.dt - spec.forcing.at(flat);
                let nb = (u.values()[g.flat1(it, ix, iv - 1)] + u.values()[g.flat1(it, ix, iv + 1)]) / m.dv2;
                let a_diag = 1.0 / m.dt + 2.0 / m.dv2;
                let val = match &kind {
                    StepKind::Projected(_) => ((b_i + nb) / a_diag).max(0.0),
                    StepKind::Penalized(pen) => {
                        let mut s = prev[ix * cols + iv];
                        let mut ok = false;
                        for _ in 0..spec.march.max_newton {
                            let f = a_diag * s + pen.beta(s) - b_i - nb;
                            if f.abs() <= spec.march.newton_tol {
                                ok = true;
                                break;
                            }
                            s -= f / (a_diag + pen.beta_prime(s));
                        }
                        if !ok {
                            let f = a_diag * s + pen.beta(s) - b_i - nb;
                            if f.abs() > spec.march.newton_tol * 10.0 {
                                return Err(Error::NewtonDiverged { step: it, residual: f.abs() });
                            }
                        }
                        s
                    }
                };
                u.values_mut()[flat] = val;
            }
        }
        iterations.push(step_iters);
    }

    let min_value = u.min_value();
    let phi_sup = spec.forcing.sup_norm();
    let (comp_res, pen_res) = match kind {
        StepKind::Penalized(_) => (f64::NAN, worst_step_residual.max(spec.march.newton_tol)),
        StepKind::Projected(_) => (worst_step_residual, 0.0),
    };
    Ok(SolveResult {
        u,
        stats: SolveStats {
            iterations_per_step: iterations,
            step_residual: worst_step_residual,
            wall_seconds: t0.elapsed().as_secs_f64(),
        },
        complementarity_residual: comp_res,
        penalty_residual: pen_res,
        min_value,
        penalized_lower_bound: -phi_sup.max(1.0) * spec.penalty.eps,
    })
}

/// Penalized march (`L u = β_ε(u) + φ`).
pub fn solve_penalized(spec: &ObstacleProblemSpec) -> Result<SolveResult> {
    let pen = spec.penalty;
    march_all(spec, StepKind::Penalized(&pen))
}

/// Projected-relaxation complementarity march, the cross-validation oracle:
/// the result satisfies `min(A u − b, u) = 0` per step within the sweep
/// tolerance and is nonnegative exactly.
pub fn solve_projected(spec: &ObstacleProblemSpec) -> Result<SolveResult> {
    let pp = spec.projected;
    march_all(spec, StepKind::Projected(&pp))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ComplementarityReport {
    /// Sup over interior nodes of `|min(−L_h u + φ, u)|` with diagnostic
    /// (central) stencils.
    pub sup_residual: f64,
    /// Fraction of interior nodes violating the complementarity relation
    /// beyond the stated tolerance.
    pub violating_fraction: f64,
    pub tolerance: f64,
}

/// Node-wise check of `min(−L u + φ, u) = 0` with the diagnostic operator.
pub fn complementarity_report(u: &Field, forcing: &Forcing, tolerance: f64) -> Result<ComplementarityReport> {
    let g = u.grid();
    let lu = apply_l(u, Transport::Central)?;
    let mut sup = 0.0f64;
    let mut violations = 0usize;
    let mut count = 0usize;
    let mut idx = vec![0usize; g.axes()];
    for flat in 0..g.len() {
        g.unflat(flat, &mut idx);
        if idx.iter().zip(g.shape()).any(|(i, s)| *i == 0 || *i + 1 == *s) {
            continue;
        }
        count += 1;
        let res = (-lu.values()[flat] + forcing.at(flat)).min(u.values()[flat]);
        sup = sup.max(res.abs());
        if res.abs() > tolerance {
            violations += 1;
        }
    }
    Ok(ComplementarityReport {
        sup_residual: sup,
        violating_fraction: violations as f64 / count.max(1) as f64,
        tolerance,
    })
}

/// Unconstrained march (penalty off, forcing = `−L u_exact` analytic image) for
/// manufactured-solution convergence tests: solves `L u = s` by the same IMEX
/// scheme with Dirichlet data taken from the exact solution everywhere data is
/// consumed.
pub fn solve_linear(
    grid: &Grid,
    exact: impl Fn(f64, f64, f64) -> f64,
    l_exact: impl Fn(f64, f64, f64) -> f64,
) -> Result<Field> {
    // the marched equation realises L u = β(u) + φ, so φ carries the image
    let mut rhs = Field::zeros(grid);
    let mut idx = vec![0usize; grid.axes()];
    for flat in 0..grid.len() {
        grid.unflat(flat, &mut idx);
        let z = grid.point_at(&idx);
        rhs.values_mut()[flat] = l_exact(z.t(), z.x()[0], z.v()[0]);
    }
    // L is invariant under adding a constant, so shifting the data keeps the
    // march strictly positive and the penalty term identically zero
    let mut sampled = Field::sample(grid, |z| exact(z.t(), z.x()[0], z.v()[0]));
    let shift = 1.0 + sampled.sup_norm();
    for v in sampled.values_mut() {
        *v += shift;
    }
    let spec = ObstacleProblemSpec {
        grid: grid.clone(),
        forcing: Forcing::PerNode(rhs),
        boundary: BoundaryData::FromField(sampled),
        penalty: PenaltyFunction { eps: 1.0, variant: PenaltyVariant::PiecewiseLinear },
        march: MarchParams::default(),
        projected: ProjectedParams::default(),
    };
    let res = solve_penalized(&spec)?;
    let mut u = res.u;
    for v in u.values_mut() {
        *v -= shift;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};
    use proptest::prelude::*;

    fn unit_grid(nt: usize, nx: usize, nv: usize) -> Grid {
        build_grid(&GridConfig::unit(1, nt, nx, nv)).unwrap()
    }

    fn spec(grid: Grid, boundary: BoundaryData, eps: f64) -> ObstacleProblemSpec {
        let mut s = ObstacleProblemSpec::new(grid, boundary);
        s.penalty.eps = eps;
        s
    }

    #[test]
    fn beta_pieces() {
        for variant in [PenaltyVariant::PiecewiseLinear, PenaltyVariant::CubicBridge] {
            let pen = PenaltyFunction::new(0.01, variant).unwrap();
            assert_eq!(pen.beta(-0.02), -2.0);
            assert_eq!(pen.beta(0.0), 0.0);
            assert_eq!(pen.beta(5.0), 0.0);
        }
        let pen = PenaltyFunction::new(0.4, PenaltyVariant::CubicBridge).unwrap();
        // bridge value at −ε/2 is forced by the cubic: −2/4 + 1/8 = −3/8
        assert!((pen.beta(-0.2) - (-0.375)).abs() < 1e-15);
        assert!(PenaltyFunction::new(0.0, PenaltyVariant::PiecewiseLinear).is_err());
    }

    proptest! {
        #[test]
        fn beta_envelope(s in -1.0f64..1.0, eps in 1e-3f64..0.5) {
            for variant in [PenaltyVariant::PiecewiseLinear, PenaltyVariant::CubicBridge] {
                let pen = PenaltyFunction::new(eps, variant).unwrap();
                prop_assert!(pen.beta(s) <= 0.0);
                prop_assert!(pen.beta_prime(s) >= 0.0);
                if s >= 0.0 { prop_assert_eq!(pen.beta(s), 0.0); }
                if s <= -eps { prop_assert!((pen.beta(s) - s / eps).abs() < 1e-12); }
            }
        }
    }

    #[test]
    fn zero_data_solves_to_penalty_floor() {
        let g = unit_grid(16, 8, 8);
        let s = spec(g, BoundaryData::Zero, 1e-3);
        let res = solve_penalized(&s).unwrap();
        let bound = 1e-3 * 1.0 + 2.0 * s.grid.dv();
        assert!(res.u.sup_norm() <= bound, "sup {} bound {}", res.u.sup_norm(), bound);
        // Lemma-level lower bound with a small discretization slack
        assert!(res.min_value >= res.penalized_lower_bound - 2.0 * s.grid.dv() * 1e-2);

        let res = solve_projected(&s).unwrap();
        assert_eq!(res.u.sup_norm(), 0.0);
    }

    #[test]
    fn half_space_recovery() {
        let g = unit_grid(32, 16, 16);
        let s = spec(g.clone(), BoundaryData::HalfSpace { e: 1.0 }, 1e-3);
        let res = solve_penalized(&s).unwrap();
        let mut worst = 0.0f64;
        let mut idx = vec![0usize; 3];
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            let v = g.v_node(idx[2]);
            let exact = if v > 0.0 { 0.5 * v * v } else { 0.0 };
            worst = worst.max((res.u.values()[flat] - exact).abs());
        }
        // the half-space profile is a steady exact solution; the march should
        // hold it to within C(ε + Δ)
        let delta = g.dx().max(g.dv()).max(g.dt());
        assert!(worst <= 1.0 * (1e-3 + delta), "sup error {worst}");
    }

    #[test]
    fn projected_is_nonnegative_and_close_to_penalized() {
        let g = unit_grid(24, 12, 12);
        let s = spec(g, BoundaryData::ThickSlab { gamma: 0.25 }, 2e-3);
        let proj = solve_projected(&s).unwrap();
        assert!(proj.u.values().iter().all(|v| *v >= 0.0));
        let pen = solve_penalized(&s).unwrap();
        let mut dist = 0.0f64;
        for (a, b) in pen.u.values().iter().zip(proj.u.values()) {
            dist = dist.max((a - b).abs());
        }
        let delta = s.grid.dx().max(s.grid.dv()).max(s.grid.dt());
        assert!(dist <= 2.0 * (s.penalty.eps + delta), "pen-proj distance {dist}");
    }

    #[test]
    fn penalized_distance_shrinks_with_eps() {
        let g = unit_grid(24, 12, 12);
        let mut dists = Vec::new();
        for eps in [4e-3, 2e-3, 1e-3] {
            let s = spec(g.clone(), BoundaryData::ThickSlab { gamma: 0.25 }, eps);
            let pen = solve_penalized(&s).unwrap();
            let proj = solve_projected(&s).unwrap();
            let d = pen
                .u
                .values()
                .iter()
                .zip(proj.u.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            dists.push(d);
        }
        assert!(dists[0] > dists[1] && dists[1] > dists[2], "{dists:?}");
    }

    #[test]
    fn comparison_principle() {
        let g = unit_grid(16, 8, 8);
        let s1 = spec(g.clone(), BoundaryData::HalfSpace { e: 1.0 }, 1e-3);
        // h2 = h1 scaled up dominates node-wise
        let h2 = Field::sample(&g, |z| {
            let v = z.v()[0];
            if v > 0.0 { 0.75 * v * v } else { 0.0 }
        });
        let s2 = spec(g.clone(), BoundaryData::FromField(h2), 1e-3);
        let u1 = solve_projected(&s1).unwrap().u;
        let u2 = solve_projected(&s2).unwrap().u;
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert!(*a <= b + 1e-8, "{a} > {b}");
        }
    }

    #[test]
    fn randomized_nonnegative_boundary_keeps_projection_nonnegative() {
        use rand::{Rng, SeedableRng};
        let rng = std::cell::RefCell::new(rand_chacha::ChaCha8Rng::seed_from_u64(7));
        let g = unit_grid(12, 8, 8);
        let h = Field::sample(&g, |_| rng.borrow_mut().gen_range(0.0..0.5));
        let s = spec(g, BoundaryData::FromField(h), 1e-3);
        let res = solve_projected(&s).unwrap();
        assert!(res.u.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn complementarity_examples() {
        let g = unit_grid(16, 12, 12);
        // zero field with zero data has residual 0
        let zero = Field::zeros(&g);
        let rep = complementarity_report(&zero, &Forcing::Constant(1.0), 1e-6).unwrap();
        assert_eq!(rep.sup_residual, 0.0);

        // exact half-space: residual vanishes away from the interface
        let hs = Field::sample(&g, |z| {
            let v = z.v()[0];
            if v > 0.0 { 0.5 * v * v } else { 0.0 }
        });
        let rep = complementarity_report(&hs, &Forcing::Constant(1.0), 1e-6).unwrap();
        // only the O(Δv) interface band can violate
        assert!(rep.violating_fraction < 3.0 / g.nv() as f64, "{}", rep.violating_fraction);

        // solved penalized field: residual O(ε) + O(Δ)
        let s = spec(g.clone(), BoundaryData::ThickSlab { gamma: 0.25 }, 1e-3);
        let res = solve_penalized(&s).unwrap();
        let rep = complementarity_report(&res.u, &Forcing::Constant(1.0), 1e-6).unwrap();
        let delta = g.dx().max(g.dv()).max(g.dt());
        assert!(rep.sup_residual <= 8.0 * (1e-3 + delta), "{}", rep.sup_residual);
    }

    #[test]
    fn manufactured_linear_march_first_order() {
        let exact = |t: f64, x: f64, v: f64| t.exp() * (0.8 * x).sin() * (0.7 * v).cos();
        let l_exact = |t: f64, x: f64, v: f64| {
            let u = exact(t, x, v);
            -0.49 * u - u - v * 0.8 * t.exp() * (0.8 * x).cos() * (0.7 * v).cos()
        };
        let err = |cells: usize| {
            let g = unit_grid(2 * cells, cells, cells);
            let u = solve_linear(&g, exact, l_exact).unwrap();
            let mut worst = 0.0f64;
            let mut idx = vec![0usize; 3];
            for flat in 0..g.len() {
                g.unflat(flat, &mut idx);
                if idx.iter().zip(g.shape()).any(|(i, s)| *i == 0 || *i + 1 == *s) {
                    continue;
                }
                let z = g.point_at(&idx);
                worst = worst.max((u.values()[flat] - exact(z.t(), z.x()[0], z.v()[0])).abs());
            }
            worst
        };
        let e1 = err(12);
        let e2 = err(24);
        let order = (e1 / e2).log2();
        assert!(order > 0.7, "march order {order} ({e1} -> {e2})");
    }

    #[test]
    fn cfl_violation_is_config_error() {
        let cfg = GridConfig { nt: 4, ..GridConfig::unit(1, 4, 32, 8) };
        let g = build_grid(&cfg).unwrap();
        let s = spec(g, BoundaryData::Zero, 1e-3);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn negative_boundary_rejected() {
        let g = unit_grid(8, 8, 8);
        let s = spec(g, BoundaryData::Polynomial { m: 1.0, a: 0.0 }, 1e-3);
        assert!(s.validate().is_err());
    }
}
