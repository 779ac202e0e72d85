//! Uniform tensor grids over the box hull of a kinetic cylinder, scalar fields
//! and the finite-difference realisations of `∂_t`, `∇_x`, `∇_v`, `D²_v`,
//! `Y = ∂_t + v·∇_x` and `L = Δ_v − Y`.
//!
//! Grids are node-centred and include boundary nodes: `N` cells along an axis
//! means `N + 1` nodes, with node coordinates always computed as
//! `lo + i·Δ` from the index so they are bit-reproducible. The value layout is
//! t-major, then x, then v fastest.
//!
//! Two transport discretisations are exposed and never mixed silently: a
//! first-order upwind form (what the solver marches with) and a second-order
//! central form (what derivative diagnostics report).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{KineticCylinder, KineticPoint};

const MAGIC: &[u8; 5] = b"KOBS1";

/// Grid construction parameters. Counts are cell counts per axis.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_extent: f64,
    pub v_extent: f64,
    pub nt: usize,
    pub nx: usize,
    pub nv: usize,
}

impl GridConfig {
    /// Discretisation of the unit cylinder hull `[−1, 0] × [−1, 1]ⁿ × [−1, 1]ⁿ`.
    pub fn unit(n: usize, nt: usize, nx: usize, nv: usize) -> Self {
        Self { n, t_lo: -1.0, t_hi: 0.0, x_extent: 1.0, v_extent: 1.0, nt, nx, nv }
    }
}

/// A realised grid with derived spacings and strides.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    t_lo: f64,
    t_hi: f64,
    x_extent: f64,
    v_extent: f64,
    nt: usize,
    nx: usize,
    nv: usize,
    dt: f64,
    dx: f64,
    dv: f64,
    /// Node counts per axis, order (t, x_1.., v_1..).
    shape: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

pub fn build_grid(cfg: &GridConfig) -> Result<Grid> {
    let mut errs = Vec::new();
    if cfg.n < 1 || cfg.n > 2 {
        errs.push(format!("grid.n must be 1 or 2, got {}", cfg.n));
    }
    for (name, count) in [("nt", cfg.nt), ("nx", cfg.nx), ("nv", cfg.nv)] {
        if count < 4 {
            errs.push(format!("grid.{name} must be at least 4, got {count}"));
        }
    }
    if !(cfg.t_hi > cfg.t_lo) {
        errs.push(format!("grid time range is empty: [{}, {}]", cfg.t_lo, cfg.t_hi));
    }
    if !(cfg.x_extent > 0.0) {
        errs.push(format!("grid.x_extent must be positive, got {}", cfg.x_extent));
    }
    if !(cfg.v_extent > 0.0) {
        errs.push(format!("grid.v_extent must be positive, got {}", cfg.v_extent));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let n = cfg.n;
    let mut shape = Vec::with_capacity(1 + 2 * n);
    shape.push(cfg.nt + 1);
    for _ in 0..n {
        shape.push(cfg.nx + 1);
    }
    for _ in 0..n {
        shape.push(cfg.nv + 1);
    }
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for a in (0..shape.len()).rev() {
        strides[a] = acc;
        acc *= shape[a];
    }
    Ok(Grid {
        n,
        t_lo: cfg.t_lo,
        t_hi: cfg.t_hi,
        x_extent: cfg.x_extent,
        v_extent: cfg.v_extent,
        nt: cfg.nt,
        nx: cfg.nx,
        nv: cfg.nv,
        dt: (cfg.t_hi - cfg.t_lo) / cfg.nt as f64,
        dx: 2.0 * cfg.x_extent / cfg.nx as f64,
        dv: 2.0 * cfg.v_extent / cfg.nv as f64,
        shape,
        strides,
        len: acc,
    })
}

impl Grid {
    pub fn config(&self) -> GridConfig {
        GridConfig {
            n: self.n,
            t_lo: self.t_lo,
            t_hi: self.t_hi,
            x_extent: self.x_extent,
            v_extent: self.v_extent,
            nt: self.nt,
            nx: self.nx,
            nv: self.nv,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dv(&self) -> f64 {
        self.dv
    }
    pub fn t_lo(&self) -> f64 {
        self.t_lo
    }
    pub fn t_hi(&self) -> f64 {
        self.t_hi
    }
    pub fn x_extent(&self) -> f64 {
        self.x_extent
    }
    pub fn v_extent(&self) -> f64 {
        self.v_extent
    }
    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Node counts per axis in (t, x.., v..) order.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    pub fn axes(&self) -> usize {
        self.shape.len()
    }

    pub fn t_node(&self, i: usize) -> f64 {
        self.t_lo + i as f64 * self.dt
    }
    pub fn x_node(&self, i: usize) -> f64 {
        -self.x_extent + i as f64 * self.dx
    }
    pub fn v_node(&self, i: usize) -> f64 {
        -self.v_extent + i as f64 * self.dv
    }

    /// Spacing of a given axis (t, then x axes, then v axes).
    pub fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.dt
        } else if axis <= self.n {
            self.dx
        } else {
            self.dv
        }
    }


    fn axis_lo(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.t_lo
        } else if axis <= self.n {
            -self.x_extent
        } else {
            -self.v_extent
        }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflat(&self, flat: usize, out: &mut [usize]) {
        let mut rem = flat;
        for a in 0..self.shape.len() {
            out[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    /// Flat index for an `n = 1` grid.
    pub fn flat1(&self, it: usize, ix: usize, iv: usize) -> usize {
        debug_assert_eq!(self.n, 1);
        (it * self.shape[1] + ix) * self.shape[2] + iv
    }

    pub fn point_at(&self, idx: &[usize]) -> KineticPoint {
        let n = self.n;
        let mut x = [0.0; 2];
        let mut v = [0.0; 2];
        for i in 0..n {
            x[i] = self.x_node(idx[1 + i]);
            v[i] = self.v_node(idx[1 + n + i]);
        }
        KineticPoint::new(self.t_node(idx[0]), &x[..n], &v[..n]).expect("grid point dims")
    }

    /// Whether the whole cylinder fits inside the grid box.
    pub fn contains_cylinder(&self, q: &KineticCylinder) -> bool {
        let z0 = &q.center;
        let r = q.radius;
        let r3 = r * r * r;
        if z0.t() - r * r < self.t_lo - 1e-12 || z0.t() > self.t_hi + 1e-12 {
            return false;
        }
        for i in 0..self.n {
            // the x-ball centre drifts over t ∈ [t0 − r², t0]
            let c_top = z0.x()[i];
            let c_bot = z0.x()[i] - r * r * z0.v()[i];
            if c_top.abs().max(c_bot.abs()) + r3 > self.x_extent + 1e-12 {
                return false;
            }
            if z0.v()[i].abs() + r > self.v_extent + 1e-12 {
                return false;
            }
        }
        true
    }

    /// Flat indices of all nodes inside the slanted cylinder.
    pub fn cylinder_nodes(&self, q: &KineticCylinder) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.axes()];
        self.visit_cylinder(q, &mut idx, &mut |flat| out.push(flat));
        out
    }

    fn visit_cylinder(&self, q: &KineticCylinder, idx: &mut [usize], f: &mut impl FnMut(usize)) {
        let z0 = &q.center;
        let r = q.radius;
        let t0 = z0.t();
        let it_lo = ((t0 - r * r - self.t_lo) / self.dt).ceil().max(0.0) as usize;
        let it_hi = (((t0 - self.t_lo) / self.dt).floor() as isize).min(self.nt as isize);
        if it_hi < it_lo as isize {
            return;
        }
        for it in it_lo..=(it_hi as usize) {
            idx[0] = it;
            self.visit_cylinder_x(q, idx, 0, f);
        }
    }

    fn visit_cylinder_x(&self, q: &KineticCylinder, idx: &mut [usize], xi: usize, f: &mut impl FnMut(usize)) {
        let n = self.n;
        if xi == n {
            self.visit_cylinder_v(q, idx, 0, f);
            return;
        }
        let z0 = &q.center;
        let r = q.radius;
        let r3 = r * r * r;
        let dt = self.t_node(idx[0]) - z0.t();
        let c = z0.x()[xi] + dt * z0.v()[xi];
        let lo = (((c - r3) + self.x_extent) / self.dx).ceil().max(0.0) as usize;
        let hi = ((((c + r3) + self.x_extent) / self.dx).floor() as isize).min(self.nx as isize);
        if hi < lo as isize {
            return;
        }
        for ix in lo..=(hi as usize) {
            idx[1 + xi] = ix;
            self.visit_cylinder_x(q, idx, xi + 1, f);
        }
    }

    fn visit_cylinder_v(&self, q: &KineticCylinder, idx: &mut [usize], vi: usize, f: &mut impl FnMut(usize)) {
        let n = self.n;
        if vi == n {
            let z = self.point_at(idx);
            if q.contains(&z) {
                f(self.flat(idx));
            }
            return;
        }
        let z0 = &q.center;
        let r = q.radius;
        let c = z0.v()[vi];
        let lo = (((c - r) + self.v_extent) / self.dv).ceil().max(0.0) as usize;
        let hi = ((((c + r) + self.v_extent) / self.dv).floor() as isize).min(self.nv as isize);
        if hi < lo as isize {
            return;
        }
        for iv in lo..=(hi as usize) {
            idx[1 + n + vi] = iv;
            self.visit_cylinder_v(q, idx, vi + 1, f);
        }
    }
}

/// A scalar grid function, dense storage in grid layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::usage(format!(
                "value buffer length {} does not match grid node count {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("field values must be finite"));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    /// Samples a closed-form function on every node.
    pub fn sample(grid: &Grid, f: impl Fn(&KineticPoint) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        let mut idx = vec![0usize; grid.axes()];
        for flat in 0..grid.len() {
            grid.unflat(flat, &mut idx);
            values[flat] = f(&grid.point_at(&idx));
        }
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// Multilinear interpolation at a point strictly inside the grid box.
    ///
    /// Exact on functions that are affine in each coordinate separately.
    /// Points outside the box (beyond a few ulp of slack) are a range error.
    pub fn interpolate(&self, z: &KineticPoint) -> Result<f64> {
        let g = &self.grid;
        if z.dim() != g.n {
            return Err(Error::usage("point dimension does not match grid"));
        }
        let dims = g.axes();
        let mut base = vec![0usize; dims];
        let mut frac = vec![0.0f64; dims];
        let mut coord = vec![0.0f64; dims];
        coord[0] = z.t();
        for i in 0..g.n {
            coord[1 + i] = z.x()[i];
            coord[1 + g.n + i] = z.v()[i];
        }
        for a in 0..dims {
            let h = g.spacing(a);
            let cells = g.shape[a] - 1;
            let s = (coord[a] - g.axis_lo(a)) / h;
            let slack = 64.0 * f64::EPSILON * (cells as f64).max(1.0);
            if s < -slack || s > cells as f64 + slack {
                return Err(Error::range(format!(
                    "interpolation point outside grid box on axis {a} (offset {s:.6} of {cells} cells)"
                )));
            }
            let mut cell = s.floor() as isize;
            cell = cell.clamp(0, cells as isize - 1);
            base[a] = cell as usize;
            let mut fr = (s - cell as f64).clamp(0.0, 1.0);
            // snap to nodes so node queries reproduce stored values exactly
            if fr < 1e-9 {
                fr = 0.0;
            } else if fr > 1.0 - 1e-9 {
                fr = 1.0;
            }
            frac[a] = fr;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..dims {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + up as usize) * g.strides[a];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        Ok(acc)
    }
}

/// Derivative selector for [`diff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diff {
    Dt,
    Dx(usize),
    Dv(usize),
    /// Second derivative `∂²/∂v_i ∂v_j`.
    Dvv(usize, usize),
}

/// Second-order finite difference of a field: central in the interior,
/// one-sided (still second-order) at the faces. Exact on polynomials of
/// degree ≤ 2 in the differenced axis.
pub fn diff(field: &Field, which: Diff) -> Result<Field> {
    let g = field.grid();
    let n = g.n;
    let check_axis = |i: usize| -> Result<()> {
        if i >= n {
            Err(Error::usage(format!("axis index {i} out of range for n = {n}")))
        } else {
            Ok(())
        }
    };
    match which {
        Diff::Dt => first_derivative(field, 0),
        Diff::Dx(i) => {
            check_axis(i)?;
            first_derivative(field, 1 + i)
        }
        Diff::Dv(i) => {
            check_axis(i)?;
            first_derivative(field, 1 + n + i)
        }
        Diff::Dvv(i, j) => {
            check_axis(i)?;
            check_axis(j)?;
            if i == j {
                second_derivative(field, 1 + n + i)
            } else {
                let once = first_derivative(field, 1 + n + i)?;
                first_derivative(&once, 1 + n + j)
            }
        }
    }
}

fn for_each_line(g: &Grid, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    // visits every 1-D line along `axis`: (line start flat index, stride, node count)
    let stride = g.strides[axis];
    let count = g.shape[axis];
    let mut idx = vec![0usize; g.axes()];
    let outer: usize = g.len / count;
    for line in 0..outer {
        // build the multi-index with the chosen axis pinned to zero
        let mut rem = line;
        for a in (0..g.axes()).rev() {
            if a == axis {
                idx[a] = 0;
                continue;
            }
            idx[a] = rem % g.shape[a];
            rem /= g.shape[a];
        }
        f(g.flat(&idx), stride, count);
    }
}

fn first_derivative(field: &Field, axis: usize) -> Result<Field> {
    let g = field.grid();
    if g.shape[axis] < 4 {
        return Err(Error::usage("grid too small for second-order stencils"));
    }
    let h = g.spacing(axis);
    let u = field.values();
    let mut out = vec![0.0; u.len()];
    for_each_line(g, axis, |start, s, m| {
        out[start] = (-3.0 * u[start] + 4.0 * u[start + s] - u[start + 2 * s]) / (2.0 * h);
        for k in 1..m - 1 {
            let i = start + k * s;
            out[i] = (u[i + s] - u[i - s]) / (2.0 * h);
        }
        let last = start + (m - 1) * s;
        out[last] = (3.0 * u[last] - 4.0 * u[last - s] + u[last - 2 * s]) / (2.0 * h);
    });
    Ok(Field { grid: g.clone(), values: out })
}

fn second_derivative(field: &Field, axis: usize) -> Result<Field> {
    let g = field.grid();
    if g.shape[axis] < 4 {
        return Err(Error::usage("grid too small for second-order stencils"));
    }
    let h2 = g.spacing(axis) * g.spacing(axis);
    let u = field.values();
    let mut out = vec![0.0; u.len()];
    for_each_line(g, axis, |start, s, m| {
        out[start] =
            (2.0 * u[start] - 5.0 * u[start + s] + 4.0 * u[start + 2 * s] - u[start + 3 * s]) / h2;
        for k in 1..m - 1 {
            let i = start + k * s;
            out[i] = (u[i + s] - 2.0 * u[i] + u[i - s]) / h2;
        }
        let last = start + (m - 1) * s;
        out[last] =
            (2.0 * u[last] - 5.0 * u[last - s] + 4.0 * u[last - 2 * s] - u[last - 3 * s]) / h2;
    });
    Ok(Field { grid: g.clone(), values: out })
}

/// Transport discretisation for [`apply_l`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// First-order differences biased against the flow direction; this is the
    /// stable choice the solver marches with.
    Upwind,
    /// Second-order central differences; this is what derivative reports use.
    Central,
}

fn upwind_dx(field: &Field, axis_x: usize) -> Result<Field> {
    let g = field.grid();
    if g.shape[1 + axis_x] < 4 {
        return Err(Error::usage("grid too small for transport stencils"));
    }
    let n = g.n;
    let h = g.dx;
    let u = field.values();
    let mut out = vec![0.0; u.len()];
    let sx = g.strides[1 + axis_x];
    let m = g.shape[1 + axis_x];
    let mut idx = vec![0usize; g.axes()];
    for flat in 0..u.len() {
        g.unflat(flat, &mut idx);
        let v = g.v_node(idx[1 + n + axis_x]);
        let ix = idx[1 + axis_x];
        out[flat] = if v > 0.0 {
            if ix == 0 {
                (u[flat + sx] - u[flat]) / h
            } else {
                (u[flat] - u[flat - sx]) / h
            }
        } else if v < 0.0 {
            if ix == m - 1 {
                (u[flat] - u[flat - sx]) / h
            } else {
                (u[flat + sx] - u[flat]) / h
            }
        } else {
            0.0
        };
    }
    Ok(Field { grid: g.clone(), values: out })
}

/// The Kolmogorov operator `L u = Δ_v u − ∂_t u − v·∇_x u` on the grid.
///
/// Sign convention: `Y = ∂_t + v·∇_x` and `L = Δ_v − Y` everywhere.
pub fn apply_l(field: &Field, transport: Transport) -> Result<Field> {
    let g = field.grid();
    let n = g.n;
    let mut acc = diff(field, Diff::Dvv(0, 0))?;
    if n == 2 {
        let d2 = diff(field, Diff::Dvv(1, 1))?;
        for (a, b) in acc.values_mut().iter_mut().zip(d2.values()) {
            *a += b;
        }
    }
    let y = apply_y_with(field, transport)?;
    for (a, b) in acc.values_mut().iter_mut().zip(y.values()) {
        *a -= b;
    }
    Ok(acc)
}

/// Material derivative `Y u = ∂_t u + v·∇_x u` with central (diagnostic)
/// transport.
pub fn apply_y(field: &Field) -> Result<Field> {
    apply_y_with(field, Transport::Central)
}

fn apply_y_with(field: &Field, transport: Transport) -> Result<Field> {
    let g = field.grid();
    let n = g.n;
    let mut acc = diff(field, Diff::Dt)?;
    for i in 0..n {
        let ddx = match transport {
            Transport::Central => diff(field, Diff::Dx(i))?,
            Transport::Upwind => upwind_dx(field, i)?,
        };
        let mut idx = vec![0usize; g.axes()];
        let values = acc.values_mut();
        for flat in 0..values.len() {
            g.unflat(flat, &mut idx);
            values[flat] += g.v_node(idx[1 + n + i]) * ddx.values()[flat];
        }
    }
    Ok(acc)
}

/// Inflow classification of a boundary face node for the transport field
/// `(1, v, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum BoundaryLabel {
    Incoming,
    Outgoing,
    Tangential,
}

/// One face of the grid box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceId {
    TLow,
    THigh,
    XLow(usize),
    XHigh(usize),
    VLow(usize),
    VHigh(usize),
}

/// Label one boundary node. `v` is the velocity vector at the node.
///
/// x-faces follow the sign of `v·n_x`; the initial time face and both v-faces
/// consume Dirichlet data during a march and are labelled incoming; the top
/// time face is computed, hence outgoing.
pub fn face_label(face: FaceId, v: &[f64]) -> BoundaryLabel {
    match face {
        FaceId::TLow => BoundaryLabel::Incoming,
        FaceId::THigh => BoundaryLabel::Outgoing,
        FaceId::VLow(_) | FaceId::VHigh(_) => BoundaryLabel::Incoming,
        FaceId::XLow(i) => match v[i].partial_cmp(&0.0).unwrap() {
            std::cmp::Ordering::Less => BoundaryLabel::Outgoing,
            std::cmp::Ordering::Greater => BoundaryLabel::Incoming,
            std::cmp::Ordering::Equal => BoundaryLabel::Tangential,
        },
        FaceId::XHigh(i) => match v[i].partial_cmp(&0.0).unwrap() {
            std::cmp::Ordering::Less => BoundaryLabel::Incoming,
            std::cmp::Ordering::Greater => BoundaryLabel::Outgoing,
            std::cmp::Ordering::Equal => BoundaryLabel::Tangential,
        },
    }
}

/// Per-face label maps over the lateral and temporal boundary of the box.
pub struct BoundaryPartition {
    pub faces: Vec<(FaceId, Vec<(usize, BoundaryLabel)>)>,
}

/// Labels every node of every boundary face. Nodes are reported by flat index;
/// nodes on edges appear once per adjoining face.
pub fn boundary_partition(grid: &Grid) -> BoundaryPartition {
    let n = grid.n;
    let mut faces = Vec::new();
    let mut face_list = vec![FaceId::TLow, FaceId::THigh];
    for i in 0..n {
        face_list.push(FaceId::XLow(i));
        face_list.push(FaceId::XHigh(i));
        face_list.push(FaceId::VLow(i));
        face_list.push(FaceId::VHigh(i));
    }
    let mut idx = vec![0usize; grid.axes()];
    for face in face_list {
        let (axis, pinned) = match face {
            FaceId::TLow => (0, 0),
            FaceId::THigh => (0, grid.shape[0] - 1),
            FaceId::XLow(i) => (1 + i, 0),
            FaceId::XHigh(i) => (1 + i, grid.shape[1 + i] - 1),
            FaceId::VLow(i) => (1 + n + i, 0),
            FaceId::VHigh(i) => (1 + n + i, grid.shape[1 + n + i] - 1),
        };
        let mut labels = Vec::new();
        let outer: usize = grid.len / grid.shape[axis];
        for cell in 0..outer {
            let mut rem = cell;
            for a in (0..grid.axes()).rev() {
                if a == axis {
                    idx[a] = pinned;
                    continue;
                }
                idx[a] = rem % grid.shape[a];
                rem /= grid.shape[a];
            }
            let mut v = [0.0f64; 2];
            for i in 0..n {
                v[i] = grid.v_node(idx[1 + n + i]);
            }
            labels.push((grid.flat(&idx), face_label(face, &v[..n])));
        }
        faces.push((face, labels));
    }
    BoundaryPartition { faces }
}

// Binary field format: magic "KOBS1", then n, N_t, N_x, N_v as u64 LE, then
// t_lo, t_hi, x_extent, v_extent as f64 LE, then values row-major v fastest.

pub fn write_field(field: &Field, w: &mut impl Write) -> Result<()> {
    let g = field.grid();
    w.write_all(MAGIC)?;
    for val in [g.n as u64, g.nt as u64, g.nx as u64, g.nv as u64] {
        w.write_all(&val.to_le_bytes())?;
    }
    for val in [g.t_lo, g.t_hi, g.x_extent, g.v_extent] {
        w.write_all(&val.to_le_bytes())?;
    }
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<Field> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut u = [0u8; 8];
    let mut ints = [0u64; 4];
    for slot in &mut ints {
        r.read_exact(&mut u)?;
        *slot = u64::from_le_bytes(u);
    }
    let mut reals = [0f64; 4];
    for slot in &mut reals {
        r.read_exact(&mut u)?;
        *slot = f64::from_le_bytes(u);
    }
    let cfg = GridConfig {
        n: ints[0] as usize,
        nt: ints[1] as usize,
        nx: ints[2] as usize,
        nv: ints[3] as usize,
        t_lo: reals[0],
        t_hi: reals[1],
        x_extent: reals[2],
        v_extent: reals[3],
    };
    let grid = build_grid(&cfg).map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
    let mut values = vec![0.0f64; grid.len()];
    for slot in &mut values {
        r.read_exact(&mut u)?;
        *slot = f64::from_le_bytes(u);
    }
    // read_exact above guarantees the payload was complete
    Ok(Field { grid, values })
}

pub fn save_field(field: &Field, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(field, &mut f)
}

pub fn load_field(path: &Path) -> Result<Field> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_field(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(nt: usize, nx: usize, nv: usize) -> Grid {
        build_grid(&GridConfig::unit(1, nt, nx, nv)).unwrap()
    }

    #[test]
    fn nodes_from_index_arithmetic() {
        let g = unit_grid(4, 4, 4);
        let nodes: Vec<f64> = (0..=4).map(|i| g.t_node(i)).collect();
        assert_eq!(nodes, vec![-1.0, -0.75, -0.5, -0.25, 0.0]);
        assert_eq!(g.dv(), 0.5);
        assert_eq!(g.x_node(0), -1.0);
        assert_eq!(g.x_node(4), 1.0);
        assert_eq!(g.len(), 5 * 5 * 5);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = GridConfig { nt: 2, ..GridConfig::unit(1, 8, 8, 8) };
        assert!(build_grid(&bad).is_err());
        let bad = GridConfig { x_extent: -1.0, ..GridConfig::unit(1, 8, 8, 8) };
        assert!(build_grid(&bad).is_err());
    }

    #[test]
    fn diff_exact_on_quadratics() {
        let g = unit_grid(6, 6, 8);
        let f = Field::sample(&g, |z| z.v()[0] * z.v()[0]);
        let d2 = diff(&f, Diff::Dvv(0, 0)).unwrap();
        for v in d2.values() {
            assert!((v - 2.0).abs() < 1e-11, "{v}");
        }
        let f = Field::sample(&g, |z| z.x()[0]);
        let d1 = diff(&f, Diff::Dx(0)).unwrap();
        for v in d1.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diff_second_order_in_dv() {
        // Richardson: halving Δv divides the sin error by 4 (±10 %)
        let err = |nv: usize| {
            let g = unit_grid(4, 4, nv);
            let f = Field::sample(&g, |z| z.v()[0].sin());
            let d = diff(&f, Diff::Dv(0)).unwrap();
            let mut worst = 0.0f64;
            let mut idx = vec![0usize; 3];
            for flat in 0..g.len() {
                g.unflat(flat, &mut idx);
                if idx[2] == 0 || idx[2] == nv {
                    continue;
                }
                let v = g.v_node(idx[2]);
                worst = worst.max((d.values()[flat] - v.cos()).abs());
            }
            worst
        };
        let ratio = err(16) / err(32);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn l_of_half_space_profile() {
        let g = unit_grid(8, 8, 16);
        let f = Field::sample(&g, |z| {
            let v = z.v()[0];
            if v > 0.0 { 0.5 * v * v } else { 0.0 }
        });
        let l = apply_l(&f, Transport::Upwind).unwrap();
        let mut idx = vec![0usize; 3];
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            if idx[2] == 0 || idx[2] == g.nv() {
                continue;
            }
            let v = g.v_node(idx[2]);
            let expect = if v > g.dv() {
                1.0
            } else if v < -g.dv() {
                0.0
            } else {
                continue;
            };
            assert!((l.values()[flat] - expect).abs() < 1e-10, "v = {v}");
        }
    }

    #[test]
    fn l_of_heat_polynomial() {
        // u = m t + A v² has L u = 2A − m at every node (no x dependence)
        let (m, a) = (-0.5, 0.25);
        let g = unit_grid(8, 8, 8);
        let f = Field::sample(&g, |z| m * z.t() + a * z.v()[0] * z.v()[0]);
        let l = apply_l(&f, Transport::Upwind).unwrap();
        for v in l.values() {
            assert!((v - (2.0 * a - m)).abs() < 1e-10);
        }
    }

    #[test]
    fn l_of_nondegeneracy_barrier() {
        // φ^r = (1/6)(v² − t) + x²/(4 r⁴) for n = 1: L φ = ½ − v·x/(2 r⁴)
        let r: f64 = 0.8;
        let r4 = r.powi(4);
        let g = unit_grid(8, 16, 16);
        let f = Field::sample(&g, |z| {
            (z.v()[0] * z.v()[0] - z.t()) / 6.0 + z.x()[0] * z.x()[0] / (4.0 * r4)
        });
        let l = apply_l(&f, Transport::Central).unwrap();
        let mut idx = vec![0usize; 3];
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            let x = g.x_node(idx[1]);
            let v = g.v_node(idx[2]);
            let expect = 0.5 - v * x / (2.0 * r4);
            assert!((l.values()[flat] - expect).abs() < 1e-9, "x={x} v={v}");
            if v * x == 0.0 {
                assert!((l.values()[flat] - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn y_examples() {
        let g = unit_grid(8, 8, 8);
        let f = Field::sample(&g, |z| z.t());
        for v in apply_y(&f).unwrap().values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let f = Field::sample(&g, |z| z.x()[0]);
        let y = apply_y(&f).unwrap();
        let mut idx = vec![0usize; 3];
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            assert!((y.values()[flat] - g.v_node(idx[2])).abs() < 1e-12);
        }
        let f = Field::sample(&g, |z| {
            let v = z.v()[0];
            if v > 0.0 { 0.5 * v * v } else { 0.0 }
        });
        for v in apply_y(&f).unwrap().values() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn interpolation_is_multilinear_exact() {
        let g = unit_grid(5, 5, 5);
        let f = Field::sample(&g, |z| z.t() * z.x()[0] * z.v()[0]);
        // node point reproduces stored value exactly
        let z = g.point_at(&[2, 3, 4]);
        assert_eq!(f.interpolate(&z).unwrap(), f.values()[g.flat(&[2, 3, 4])]);
        // multilinear functions interpolate exactly anywhere inside
        for (t, x, v) in [(-0.31, 0.77, -0.13), (-0.99, -0.98, 0.97), (-0.5, 0.24, 0.0)] {
            let z = KineticPoint::new1(t, x, v);
            let got = f.interpolate(&z).unwrap();
            assert!((got - t * x * v).abs() < 1e-13, "{got} vs {}", t * x * v);
        }
        // midpoint of an edge on a linear field
        let lin = Field::sample(&g, |z| 2.0 * z.v()[0] - 1.0);
        let z = KineticPoint::new1(-1.0, -1.0, -0.9);
        assert!((lin.interpolate(&z).unwrap() - (2.0 * -0.9 - 1.0)).abs() < 1e-14);
        // out of box
        assert!(f.interpolate(&KineticPoint::new1(0.5, 0.0, 0.0)).is_err());
        assert!(f.interpolate(&KineticPoint::new1(-0.5, 1.5, 0.0)).is_err());
    }

    #[test]
    fn boundary_labels() {
        assert_eq!(face_label(FaceId::XHigh(0), &[0.5]), BoundaryLabel::Outgoing);
        assert_eq!(face_label(FaceId::XLow(0), &[0.5]), BoundaryLabel::Incoming);
        assert_eq!(face_label(FaceId::XHigh(0), &[0.0]), BoundaryLabel::Tangential);
        assert_eq!(face_label(FaceId::XHigh(0), &[-0.5]), BoundaryLabel::Incoming);
        assert_eq!(face_label(FaceId::TLow, &[0.3]), BoundaryLabel::Incoming);
        assert_eq!(face_label(FaceId::THigh, &[0.3]), BoundaryLabel::Outgoing);
        assert_eq!(face_label(FaceId::VLow(0), &[-1.0]), BoundaryLabel::Incoming);

        let g = unit_grid(4, 4, 4);
        let part = boundary_partition(&g);
        // every face of a 1-D grid: 2 t-faces, 2 x-faces, 2 v-faces
        assert_eq!(part.faces.len(), 6);
        for (face, labels) in &part.faces {
            let expected = match face {
                FaceId::TLow | FaceId::THigh => 25,
                _ => 25,
            };
            assert_eq!(labels.len(), expected);
        }
    }

    #[test]
    fn weak_form_consistency() {
        // ⟨L u, η⟩ = ⟨u, Δ_v η + ∂_t η + v·∇_x η⟩ for compactly supported η,
        // here to round-off because central differences sum by parts exactly.
        let g = unit_grid(12, 12, 12);
        let bump = |s: f64, c: f64, w: f64| {
            let r = ((s - c) / w).abs();
            if r < 1.0 { (1.0 - r * r).powi(3) } else { 0.0 }
        };
        let u = Field::sample(&g, |z| bump(z.t(), -0.5, 0.4) * bump(z.x()[0], 0.0, 0.5) * bump(z.v()[0], 0.0, 0.5));
        let eta = Field::sample(&g, |z| bump(z.t(), -0.5, 0.35) * bump(z.x()[0], 0.1, 0.4) * bump(z.v()[0], -0.1, 0.4));
        let lu = apply_l(&u, Transport::Central).unwrap();
        let dvv = diff(&eta, Diff::Dvv(0, 0)).unwrap();
        let y_eta = apply_y(&eta).unwrap();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..g.len() {
            lhs += lu.values()[i] * eta.values()[i];
            rhs += u.values()[i] * (dvv.values()[i] + y_eta.values()[i]);
        }
        let w = g.dt() * g.dx() * g.dv();
        assert!(((lhs - rhs) * w).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn upwind_reduces_to_heat_form_on_x_constant_fields() {
        let g = unit_grid(6, 6, 10);
        let u = Field::sample(&g, |z| z.t().exp() * z.v()[0].cos());
        let lu = apply_l(&u, Transport::Upwind).unwrap();
        let dvv = diff(&u, Diff::Dvv(0, 0)).unwrap();
        let dt = diff(&u, Diff::Dt).unwrap();
        for i in 0..g.len() {
            let heat = dvv.values()[i] - dt.values()[i];
            assert!((lu.values()[i] - heat).abs() < 1e-12);
        }
    }

    #[test]
    fn field_binary_roundtrip_bit_exact() {
        let g = unit_grid(5, 6, 7);
        let f = Field::sample(&g, |z| (z.t() * 3.1).sin() + z.x()[0] / 7.0 + z.v()[0].exp());
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid(), f.grid());
        assert_eq!(back.values().len(), f.values().len());
        for (a, b) in back.values().iter().zip(f.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // corrupted magic is rejected
        buf[0] = b'X';
        assert!(read_field(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn cylinder_node_enumeration_matches_membership() {
        let g = unit_grid(8, 8, 8);
        let q = KineticCylinder::new(KineticPoint::new1(-0.25, 0.1, 0.3), 0.45).unwrap();
        let listed = g.cylinder_nodes(&q);
        let mut idx = vec![0usize; 3];
        let mut expected = Vec::new();
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            if q.contains(&g.point_at(&idx)) {
                expected.push(flat);
            }
        }
        assert_eq!(listed, expected);
        assert!(!expected.is_empty());
    }
}
