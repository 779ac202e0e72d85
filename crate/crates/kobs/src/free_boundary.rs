//! Contact-set classification and free-boundary diagnostics: thickness via
//! minimal diameters, Lebesgue density, corkscrew witnesses, graph extraction
//! with Hölder seminorms, and velocity-cone checks.
//!
//! Node labels split the grid into the positivity set `Ω = {u > tol}` and the
//! contact set `Λ = {u ≤ tol}`; the free boundary `Γ ⊆ Λ` is the set of
//! contact nodes with an axis neighbour solidly inside `Ω`. For penalized
//! fields the natural zero tolerance is a small multiple of `ε·max(1, ‖φ‖)`
//! (the proven dip scale); projected fields classify with exact zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{kinetic_distance, KineticCylinder, KineticPoint};
use crate::grid::{diff, Diff, Field, Grid};

/// Node labels. `Ω` and `Λ` partition the grid; `Γ` is carried separately as
/// a subset of `Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Label {
    Positive,
    Contact,
}

#[derive(Clone, Debug)]
pub struct Classification {
    labels: Vec<Label>,
    gamma: Vec<bool>,
    pub tol_zero: f64,
    pub tol_pos: f64,
}

impl Classification {
    pub fn label(&self, flat: usize) -> Label {
        self.labels[flat]
    }
    pub fn is_contact(&self, flat: usize) -> bool {
        self.labels[flat] == Label::Contact
    }
    pub fn is_positive(&self, flat: usize) -> bool {
        self.labels[flat] == Label::Positive
    }
    pub fn is_gamma(&self, flat: usize) -> bool {
        self.gamma[flat]
    }
    pub fn gamma_nodes(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.then_some(i))
            .collect()
    }
    pub fn contact_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Contact).count()
    }
}

/// Default contact tolerance for penalized fields: ten times the proven dip
/// scale `ε·max(1, ‖φ‖)`.
pub fn penalized_tol(eps: f64, forcing_sup: f64) -> f64 {
    10.0 * eps * forcing_sup.max(1.0)
}

/// Labels every node. `Λ = {u ≤ tol_zero}`, `Ω` its complement; a contact node
/// joins `Γ` when one of its `2(1+2n)` axis neighbours has `u > tol_pos`.
pub fn classify(u: &Field, tol_zero: f64, tol_pos: f64) -> Result<Classification> {
    if tol_zero > tol_pos {
        return Err(Error::usage("tol_zero must not exceed tol_pos"));
    }
    let g = u.grid();
    let labels: Vec<Label> = u
        .values()
        .iter()
        .map(|v| if *v <= tol_zero { Label::Contact } else { Label::Positive })
        .collect();
    let mut gamma = vec![false; g.len()];
    let mut idx = vec![0usize; g.axes()];
    for flat in 0..g.len() {
        if labels[flat] != Label::Contact {
            continue;
        }
        g.unflat(flat, &mut idx);
        'axes: for a in 0..g.axes() {
            for dir in [-1isize, 1] {
                let i = idx[a] as isize + dir;
                if i < 0 || i as usize >= g.shape()[a] {
                    continue;
                }
                let nb = (flat as isize + dir * g.strides()[a] as isize) as usize;
                if u.values()[nb] > tol_pos {
                    gamma[flat] = true;
                    break 'axes;
                }
            }
        }
    }
    Ok(Classification { labels, gamma, tol_zero, tol_pos })
}

/// The `Γ` node nearest to a target point in kinetic distance (ties broken by
/// flat index).
pub fn nearest_gamma(grid: &Grid, cls: &Classification, target: &KineticPoint) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    let mut idx = vec![0usize; grid.axes()];
    for flat in 0..grid.len() {
        if !cls.is_gamma(flat) {
            continue;
        }
        grid.unflat(flat, &mut idx);
        let d = kinetic_distance(&grid.point_at(&idx), target);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, flat));
        }
    }
    best.map(|(_, f)| f)
}

/// Minimal diameter of a finite point set on the line: `max − min`
/// (empty sets report 0 by convention).
pub fn minimal_diameter_1d(vals: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Minimal width of a planar point set: smallest distance between two parallel
/// lines containing it, via convex hull plus rotating calipers.
pub fn minimal_diameter_2d(pts: &[[f64; 2]]) -> f64 {
    let hull = convex_hull(pts);
    if hull.len() <= 2 {
        return 0.0;
    }
    let m = hull.len();
    let mut width = f64::INFINITY;
    let mut far = 1usize;
    for i in 0..m {
        let a = hull[i];
        let b = hull[(i + 1) % m];
        let dist = |p: [f64; 2]| {
            let ex = b[0] - a[0];
            let ey = b[1] - a[1];
            let len = (ex * ex + ey * ey).sqrt();
            ((p[0] - a[0]) * ey - (p[1] - a[1]) * ex).abs() / len
        };
        // the farthest vertex advances monotonically as the edge rotates
        while dist(hull[(far + 1) % m]) > dist(hull[far]) {
            far = (far + 1) % m;
        }
        width = width.min(dist(hull[far]));
    }
    width
}

fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = pts.to_vec();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() <= 2 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    // monotone chain, counter-clockwise, collinear points dropped
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &pt in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], pt) <= 0.0 {
            lower.pop();
        }
        lower.push(pt);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &pt in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], pt) <= 0.0 {
            upper.pop();
        }
        upper.push(pt);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[derive(Clone, Debug, Serialize)]
pub struct ThicknessReport {
    pub r: f64,
    /// `δ_r`: scaled minimal diameter of the contact v-section, sup over the
    /// x-ball at the slice `t0 − r²`.
    pub delta: f64,
    /// `δ*_r`: the weaker variant, sup over `t ∈ [t0 − r², t0 − r²/2]` with the
    /// drifting x-ball centre.
    pub delta_star: f64,
    pub t_slice_used: f64,
    pub witness_x: Vec<f64>,
    pub witness_section: Vec<f64>,
}

/// Thickness of the contact set near `z0` at scale `r`:
/// `δ_r = sup_{x ∈ B_{r³}(x0 − r² v0)} m.d.(Λ_{u(t0−r², x, ·)} ∩ B_r(v0)) / r`.
///
/// Sups run over grid nodes only; the time slice snaps to the nearest node.
pub fn thickness_delta(
    grid: &Grid,
    cls: &Classification,
    z0: &KineticPoint,
    r: f64,
) -> Result<ThicknessReport> {
    if grid.n() != z0.dim() {
        return Err(Error::usage("point dimension does not match grid"));
    }
    if !(r > 0.0) {
        return Err(Error::usage("thickness radius must be positive"));
    }
    let t_slice = z0.t() - r * r;
    if t_slice < grid.t_lo() - 1e-12 || z0.t() > grid.t_hi() + 1e-12 {
        return Err(Error::range(format!("slice t = {t_slice} outside the grid")));
    }
    for i in 0..grid.n() {
        if z0.v()[i].abs() + r > grid.v_extent() + 1e-12 {
            return Err(Error::range("velocity ball sticks out of the grid"));
        }
    }

    let section_md = |it: usize, x_center: &[f64], report: Option<&mut ThicknessReport>| -> f64 {
        let mut best = 0.0f64;
        let mut best_x = vec![0.0; grid.n()];
        let mut best_sec: Vec<f64> = Vec::new();
        let r3 = r * r * r;
        let xs = x_nodes_in_ball(grid, x_center, r3);
        for xidx in xs {
            let (md, sec) = v_section_md(grid, cls, it, &xidx, z0, r);
            if md > best {
                best = md;
                for (i, b) in best_x.iter_mut().enumerate() {
                    *b = grid.x_node(xidx[i]);
                }
                best_sec = sec;
            }
        }
        if let Some(rep) = report {
            if best > rep.delta {
                rep.witness_x = best_x;
                rep.witness_section = best_sec;
            }
        }
        best
    };

    let it_slice = ((t_slice - grid.t_lo()) / grid.dt()).round().clamp(0.0, grid.nt() as f64) as usize;
    let mut rep = ThicknessReport {
        r,
        delta: 0.0,
        delta_star: 0.0,
        t_slice_used: grid.t_node(it_slice),
        witness_x: vec![0.0; grid.n()],
        witness_section: Vec::new(),
    };

    // δ_r: single slice, ball centred at x0 − r² v0
    let center: Vec<f64> = (0..grid.n()).map(|i| z0.x()[i] - r * r * z0.v()[i]).collect();
    let md = section_md(it_slice, &center, Some(&mut rep));
    rep.delta = md / r;

    // δ*_r: slices t ∈ [t0 − r², t0 − r²/2], drifting ball centre x0 + (t − t0) v0
    let t_hi_star = z0.t() - 0.5 * r * r;
    let it_lo = it_slice;
    let it_hi = ((t_hi_star - grid.t_lo()) / grid.dt()).floor().clamp(0.0, grid.nt() as f64) as usize;
    let mut star = 0.0f64;
    for it in it_lo..=it_hi.max(it_lo) {
        let t = grid.t_node(it);
        let c: Vec<f64> = (0..grid.n()).map(|i| z0.x()[i] + (t - z0.t()) * z0.v()[i]).collect();
        star = star.max(section_md(it, &c, None));
    }
    rep.delta_star = star / r;
    Ok(rep)
}

fn x_nodes_in_ball(grid: &Grid, center: &[f64], radius: f64) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    match grid.n() {
        1 => {
            for ix in 0..=grid.nx() {
                if (grid.x_node(ix) - center[0]).abs() < radius {
                    out.push(vec![ix]);
                }
            }
        }
        _ => {
            for ix in 0..=grid.nx() {
                for jx in 0..=grid.nx() {
                    let dx = grid.x_node(ix) - center[0];
                    let dy = grid.x_node(jx) - center[1];
                    if dx * dx + dy * dy < radius * radius {
                        out.push(vec![ix, jx]);
                    }
                }
            }
        }
    }
    out
}

fn v_section_md(
    grid: &Grid,
    cls: &Classification,
    it: usize,
    xidx: &[usize],
    z0: &KineticPoint,
    r: f64,
) -> (f64, Vec<f64>) {
    let n = grid.n();
    match n {
        1 => {
            let mut vals = Vec::new();
            for iv in 0..=grid.nv() {
                let v = grid.v_node(iv);
                if (v - z0.v()[0]).abs() >= r {
                    continue;
                }
                let flat = grid.flat(&[it, xidx[0], iv]);
                if cls.is_contact(flat) {
                    vals.push(v);
                }
            }
            (minimal_diameter_1d(&vals), vals)
        }
        _ => {
            let mut pts = Vec::new();
            for iv in 0..=grid.nv() {
                for jv in 0..=grid.nv() {
                    let v = [grid.v_node(iv), grid.v_node(jv)];
                    let dv0 = v[0] - z0.v()[0];
                    let dv1 = v[1] - z0.v()[1];
                    if dv0 * dv0 + dv1 * dv1 >= r * r {
                        continue;
                    }
                    let flat = grid.flat(&[it, xidx[0], xidx[1], iv, jv]);
                    if cls.is_contact(flat) {
                        pts.push(v);
                    }
                }
            }
            let flat_list: Vec<f64> = pts.iter().flat_map(|p| [p[0], p[1]]).collect();
            (minimal_diameter_2d(&pts), flat_list)
        }
    }
}

/// Fraction of grid nodes of the slanted cylinder `Q_r(z0)` labelled contact.
pub fn lebesgue_density(
    grid: &Grid,
    cls: &Classification,
    z0: &KineticPoint,
    r: f64,
) -> Result<f64> {
    let q = KineticCylinder::new(*z0, r)?;
    if !grid.contains_cylinder(&q) {
        return Err(Error::range(format!("cylinder of radius {r} not contained in the grid")));
    }
    let nodes = grid.cylinder_nodes(&q);
    if nodes.is_empty() {
        return Err(Error::range("cylinder resolves no grid nodes"));
    }
    let contact = nodes.iter().filter(|f| cls.is_contact(**f)).count();
    Ok(contact as f64 / nodes.len() as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct CorkscrewReport {
    pub passes: bool,
    pub contact_witness: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub positive_witness: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub kappa: f64,
    pub r: f64,
}

/// Searches grid-centred cylinders `Q_{κr}(z1) ⊂ Λ ∩ Q_r(z0)` and
/// `Q_{κr}(z2) ⊂ Ω ∩ Q_r(z0)` by exhaustive scan over candidate centres.
pub fn corkscrew_check(
    grid: &Grid,
    cls: &Classification,
    z0: &KineticPoint,
    r: f64,
    kappa: f64,
) -> Result<CorkscrewReport> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::usage("corkscrew ratio must lie in (0, 1)"));
    }
    let q = KineticCylinder::new(*z0, r)?;
    let mut outer_sorted = grid.cylinder_nodes(&q);
    outer_sorted.sort_unstable();
    let outer: std::collections::HashSet<usize> = outer_sorted.iter().copied().collect();
    let mut idx = vec![0usize; grid.axes()];
    let mut find = |target_contact: bool| -> Option<(f64, Vec<f64>, Vec<f64>)> {
        for &cand in &outer_sorted {
            if cls.is_contact(cand) != target_contact {
                continue;
            }
            grid.unflat(cand, &mut idx);
            let center = grid.point_at(&idx);
            let small = KineticCylinder::new(center, kappa * r).ok()?;
            let nodes = grid.cylinder_nodes(&small);
            if nodes.is_empty() {
                continue;
            }
            let ok = nodes
                .iter()
                .all(|f| outer.contains(f) && cls.is_contact(*f) == target_contact);
            if ok {
                return Some((center.t(), center.x().to_vec(), center.v().to_vec()));
            }
        }
        None
    };
    let contact_witness = find(true);
    let positive_witness = find(false);
    Ok(CorkscrewReport {
        passes: contact_witness.is_some() && positive_witness.is_some(),
        contact_witness,
        positive_witness,
        kappa,
        r,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphSample {
    pub t: f64,
    pub x: Vec<f64>,
    /// Transverse velocity coordinates (empty for `n = 1`).
    pub vprime: Vec<f64>,
    pub f: f64,
    pub valid: bool,
    /// Number of label transitions seen along the column.
    pub transitions: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FreeBoundaryGraph {
    /// Which v-axis the graph direction `e` points along.
    pub axis: usize,
    pub samples: Vec<GraphSample>,
}

impl FreeBoundaryGraph {
    pub fn valid_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.valid).count() as f64 / self.samples.len() as f64
    }
}

/// Extracts the free boundary as a graph `v_axis = f(t, x, v')` column by
/// column: the crossing is linearly interpolated between the last contact node
/// and the first positive node. Columns with no crossing or with multiple
/// crossings are masked out, multiplicity recorded.
pub fn extract_graph(u: &Field, cls: &Classification, axis: usize) -> Result<FreeBoundaryGraph> {
    let g = u.grid();
    let n = g.n();
    if axis >= n {
        return Err(Error::usage(format!("graph axis {axis} out of range for n = {n}")));
    }
    let vaxis = 1 + n + axis;
    let stride = g.strides()[vaxis];
    let count = g.shape()[vaxis];
    let mut samples = Vec::new();
    let outer = g.len() / count;
    let mut idx = vec![0usize; g.axes()];
    for cell in 0..outer {
        let mut rem = cell;
        for a in (0..g.axes()).rev() {
            if a == vaxis {
                idx[a] = 0;
                continue;
            }
            idx[a] = rem % g.shape()[a];
            rem /= g.shape()[a];
        }
        let start = g.flat(&idx);
        let mut transitions = 0usize;
        let mut rising_at: Option<usize> = None;
        let mut prev_contact = cls.is_contact(start);
        let starts_contact = prev_contact;
        for k in 1..count {
            let contact = cls.is_contact(start + k * stride);
            if contact != prev_contact {
                transitions += 1;
                if !contact && transitions == 1 {
                    rising_at = Some(k - 1);
                }
                prev_contact = contact;
            }
        }
        let ends_positive = !prev_contact;
        let valid = transitions == 1 && starts_contact && ends_positive;
        let f = if let Some(k) = rising_at {
            let u0 = u.values()[start + k * stride];
            let u1 = u.values()[start + (k + 1) * stride];
            let v0 = g.v_node(k);
            let frac = if u1 != u0 { ((cls.tol_zero - u0) / (u1 - u0)).clamp(0.0, 1.0) } else { 0.0 };
            v0 + frac * g.dv()
        } else {
            f64::NAN
        };
        let point = g.point_at(&idx);
        let vprime: Vec<f64> = (0..n).filter(|i| *i != axis).map(|i| point.v()[i]).collect();
        samples.push(GraphSample {
            t: point.t(),
            x: point.x().to_vec(),
            vprime,
            f: if valid { f } else { f64::NAN },
            valid,
            transitions,
        });
    }
    Ok(FreeBoundaryGraph { axis, samples })
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderReport {
    /// `sup |f(a) − f(b)| / (|t_a − t_b|^{1/2} + |x_a − x_b|^{1/2})` over valid
    /// samples sharing a transverse velocity.
    pub tx_seminorm: f64,
    /// `sup |f(a) − f(b)| / |v'_a − v'_b|` at fixed `(t, x)` (zero when there
    /// is no transverse direction).
    pub v_seminorm: f64,
    pub valid_samples: usize,
    pub tx_pair: Option<((f64, Vec<f64>), (f64, Vec<f64>))>,
}

pub fn holder_seminorms(graph: &FreeBoundaryGraph) -> Result<HolderReport> {
    let valid: Vec<&GraphSample> = graph.samples.iter().filter(|s| s.valid).collect();
    if valid.len() < 2 {
        return Err(Error::usage(format!(
            "Hölder seminorms need at least 2 valid graph samples, have {}",
            valid.len()
        )));
    }
    let mut tx: f64 = 0.0;
    let mut vsemi: f64 = 0.0;
    let mut tx_pair = None;
    for i in 0..valid.len() {
        for j in 0..i {
            let (a, b) = (valid[i], valid[j]);
            let same_vp = a.vprime == b.vprime;
            let same_tx = a.t == b.t && a.x == b.x;
            if same_vp && !same_tx {
                let dx: f64 = a
                    .x
                    .iter()
                    .zip(&b.x)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                let den = (a.t - b.t).abs().sqrt() + dx.sqrt();
                if den > 0.0 {
                    let q = (a.f - b.f).abs() / den;
                    if q > tx {
                        tx = q;
                        tx_pair = Some(((a.t, a.x.clone()), (b.t, b.x.clone())));
                    }
                }
            }
            if same_tx && !same_vp {
                let dv: f64 = a
                    .vprime
                    .iter()
                    .zip(&b.vprime)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                if dv > 0.0 {
                    vsemi = vsemi.max((a.f - b.f).abs() / dv);
                }
            }
        }
    }
    Ok(HolderReport { tx_seminorm: tx, v_seminorm: vsemi, valid_samples: valid.len(), tx_pair })
}

/// Velocity cone `C(e, θ) = {v ∈ B1 : (v/|v|)·e > θ}`.
#[derive(Clone, Debug)]
pub struct VelocityCone {
    pub axis: Vec<f64>,
    pub aperture: f64,
    pub slant: f64,
}

impl VelocityCone {
    pub fn new(axis: Vec<f64>, aperture: f64, slant: f64) -> Result<Self> {
        let norm: f64 = axis.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::usage("cone axis must be a unit vector"));
        }
        if !(aperture > 0.0 && aperture < 1.0) {
            return Err(Error::usage("cone aperture must lie in (0, 1)"));
        }
        Ok(Self { axis, aperture, slant })
    }

    /// Unit directions inside the cone. For `n = 1` this is just the axis; for
    /// `n = 2` a uniform angular sample of the admissible arc.
    pub fn direction_sample(&self, count: usize) -> Vec<Vec<f64>> {
        let n = self.axis.len();
        if n == 1 {
            return vec![self.axis.clone()];
        }
        let base = self.axis[1].atan2(self.axis[0]);
        let half = self.aperture.acos();
        let mut out = Vec::new();
        for k in 0..count {
            let frac = if count == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (count - 1) as f64 };
            let phi = base + 0.999 * half * frac;
            out.push(vec![phi.cos(), phi.sin()]);
        }
        out
    }
}

/// Axis-aligned check region `t ∈ [a, b] × {|x| ≤ x_radius} × v-window`,
/// the grid realisation of `[−1/4, 0] × B_{1/2} × K(δ, s, h)`.
#[derive(Clone, Copy, Debug)]
pub struct Region {
    pub t_range: (f64, f64),
    pub x_radius: f64,
    /// Window along the cone axis: `v·e ∈ [lo, hi]`.
    pub v_window: (f64, f64),
    /// Transverse velocity radius (ignored for `n = 1`).
    pub vprime_radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeMonotonicityReport {
    pub passes: bool,
    pub min_slack: f64,
    pub argmin: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub nodes_checked: usize,
}

/// Verifies `C0·∂_{v_e} u − u ≥ −tol` over the region for every sampled
/// direction of the cone (directional derivative by central differences).
pub fn cone_monotonicity_check(
    u: &Field,
    region: &Region,
    cone: &VelocityCone,
    c0: f64,
    tol: f64,
) -> Result<ConeMonotonicityReport> {
    let g = u.grid();
    let n = g.n();
    if cone.axis.len() != n {
        return Err(Error::usage("cone dimension does not match the grid"));
    }
    let mut dv_fields = Vec::new();
    for i in 0..n {
        dv_fields.push(diff(u, Diff::Dv(i))?);
    }
    let dirs = cone.direction_sample(if n == 1 { 1 } else { 16 });
    let mut min_slack = f64::INFINITY;
    let mut argmin = None;
    let mut checked = 0usize;
    let mut idx = vec![0usize; g.axes()];
    for flat in 0..g.len() {
        g.unflat(flat, &mut idx);
        let z = g.point_at(&idx);
        if z.t() < region.t_range.0 || z.t() > region.t_range.1 {
            continue;
        }
        if z.x_norm() > region.x_radius {
            continue;
        }
        let ve: f64 = z.v().iter().zip(&cone.axis).map(|(v, e)| v * e).sum();
        if ve < region.v_window.0 || ve > region.v_window.1 {
            continue;
        }
        if n == 2 {
            let vp = (z.v_norm().powi(2) - ve * ve).max(0.0).sqrt();
            if vp > region.vprime_radius {
                continue;
            }
        }
        checked += 1;
        for e in &dirs {
            let de: f64 = e.iter().zip(&dv_fields).map(|(c, f)| c * f.values()[flat]).sum();
            let slack = c0 * de - u.values()[flat];
            if slack < min_slack {
                min_slack = slack;
                argmin = Some((z.t(), z.x().to_vec(), z.v().to_vec()));
            }
        }
    }
    if checked == 0 {
        return Err(Error::range("cone monotonicity region resolves no grid nodes"));
    }
    Ok(ConeMonotonicityReport { passes: min_slack >= -tol, min_slack, argmin, nodes_checked: checked })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeTrapReport {
    pub passes: bool,
    pub forward_nodes: usize,
    pub forward_violations: usize,
    pub backward_nodes: usize,
    pub backward_violations: usize,
}

/// Verifies the Hölder-cone trap at a free boundary point: every node of the
/// forward cone `{a(|t| + |x|)^{1/2} + |v| < v_e/ψ}` (coordinates recentred by
/// `z0⁻¹`, both restricted to `Q_{r0/2}`) is positive, every node of the
/// mirror-image backward cone is contact.
pub fn cone_trap_check(
    grid: &Grid,
    cls: &Classification,
    z0: &KineticPoint,
    axis: usize,
    a: f64,
    psi: f64,
    r0: f64,
) -> Result<ConeTrapReport> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(Error::usage("cone slope ψ must lie in (0, 1)"));
    }
    let mut snapped = vec![0usize; grid.axes()];
    let near = nearest_node(grid, z0);
    grid.unflat(near, &mut snapped);
    if !cls.is_gamma(near) {
        return Err(Error::usage("cone trap requires a free-boundary point (nearest node is not Γ)"));
    }
    let zc = grid.point_at(&snapped);
    let q = KineticCylinder::new(zc, r0 / 2.0)?;
    let nodes = grid.cylinder_nodes(&q);
    let inv = zc.inverse();
    let mut rep = ConeTrapReport {
        passes: true,
        forward_nodes: 0,
        forward_violations: 0,
        backward_nodes: 0,
        backward_violations: 0,
    };
    let mut idx = vec![0usize; grid.axes()];
    for flat in nodes {
        grid.unflat(flat, &mut idx);
        let w = inv.compose(&grid.point_at(&idx));
        let lhs = a * (w.t().abs() + w.x_norm()).sqrt() + w.v_norm();
        let ve = w.v()[axis];
        if lhs < ve / psi {
            rep.forward_nodes += 1;
            if !cls.is_positive(flat) {
                rep.forward_violations += 1;
            }
        } else if lhs < -ve / psi {
            rep.backward_nodes += 1;
            if !cls.is_contact(flat) {
                rep.backward_violations += 1;
            }
        }
    }
    rep.passes = rep.forward_violations == 0 && rep.backward_violations == 0;
    Ok(rep)
}

/// Nearest grid node (flat index) to a point.
pub fn nearest_node(grid: &Grid, z: &KineticPoint) -> usize {
    let n = grid.n();
    let mut idx = vec![0usize; grid.axes()];
    idx[0] = ((z.t() - grid.t_lo()) / grid.dt()).round().clamp(0.0, grid.nt() as f64) as usize;
    for i in 0..n {
        idx[1 + i] =
            ((z.x()[i] + grid.x_extent()) / grid.dx()).round().clamp(0.0, grid.nx() as f64) as usize;
        idx[1 + n + i] =
            ((z.v()[i] + grid.v_extent()) / grid.dv()).round().clamp(0.0, grid.nv() as f64) as usize;
    }
    grid.flat(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};
    use proptest::prelude::*;

    fn unit_grid(nt: usize, nx: usize, nv: usize) -> Grid {
        build_grid(&GridConfig::unit(1, nt, nx, nv)).unwrap()
    }

    fn half_space(g: &Grid) -> Field {
        Field::sample(g, |z| {
            let v = z.v()[0];
            if v > 0.0 {
                0.5 * v * v
            } else {
                0.0
            }
        })
    }

    #[test]
    fn classify_half_space() {
        let g = unit_grid(8, 8, 8);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        // Γ is exactly the v = 0 node sheet
        let mut idx = vec![0usize; 3];
        for flat in 0..g.len() {
            g.unflat(flat, &mut idx);
            let v = g.v_node(idx[2]);
            assert_eq!(cls.is_gamma(flat), v == 0.0, "v = {v}");
        }
        // constant-one field has empty Γ
        let ones = Field::sample(&g, |_| 1.0);
        let cls = classify(&ones, 0.0, 0.0).unwrap();
        assert!(cls.gamma_nodes().is_empty());
        assert!(classify(&u, 0.5, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn classify_monotone_in_tolerance(tol1 in 0.0f64..0.05, bump in 0.0f64..0.05) {
            let g = unit_grid(4, 4, 8);
            let u = half_space(&g);
            let a = classify(&u, tol1, tol1).unwrap();
            let b = classify(&u, tol1 + bump, tol1 + bump).unwrap();
            // raising tol_zero cannot shrink Λ
            prop_assert!(a.contact_count() <= b.contact_count());
        }

        #[test]
        fn md_monotone_and_translation_invariant(
            mut vals in proptest::collection::vec(-1.0f64..1.0, 2..12),
            shift in -5.0f64..5.0,
        ) {
            let full = minimal_diameter_1d(&vals);
            let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            prop_assert!((minimal_diameter_1d(&shifted) - full).abs() < 1e-12);
            vals.pop();
            prop_assert!(minimal_diameter_1d(&vals) <= full + 1e-15);
        }
    }

    #[test]
    fn minimal_diameter_basics() {
        assert!((minimal_diameter_1d(&[0.1, 0.4, 0.2]) - 0.3).abs() < 1e-15);
        assert_eq!(minimal_diameter_1d(&[]), 0.0);
        assert_eq!(minimal_diameter_1d(&[0.7]), 0.0);
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!((minimal_diameter_2d(&square) - 1.0).abs() < 1e-12);
        assert_eq!(minimal_diameter_2d(&[[0.3, 0.4]]), 0.0);
        // collinear points sandwich between coincident lines
        assert!(minimal_diameter_2d(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]) < 1e-12);
        // thin triangle: width is its height
        let tri = [[0.0, 0.0], [4.0, 0.0], [2.0, 0.5]];
        assert!((minimal_diameter_2d(&tri) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thickness_of_half_space() {
        let g = unit_grid(16, 16, 32);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let r = 0.5;
        let rep = thickness_delta(&g, &cls, &KineticPoint::origin(1), r).unwrap();
        // contact section is (−r, 0], so m.d. → r with O(Δv/r) slack
        assert!((rep.delta - 1.0).abs() <= 1.5 * g.dv() / r, "δ = {}", rep.delta);
        assert!(rep.delta_star > 0.8);

        // strictly positive slice has zero thickness
        let pos = Field::sample(&g, |_| 1.0);
        let cls = classify(&pos, 0.0, 0.0).unwrap();
        let rep = thickness_delta(&g, &cls, &KineticPoint::origin(1), r).unwrap();
        assert_eq!(rep.delta, 0.0);

        // paraboloid with a single contact node: δ ≤ Δv/r
        let para = Field::sample(&g, |z| 0.25 * z.v()[0] * z.v()[0]);
        let cls = classify(&para, 0.0, 0.0).unwrap();
        let rep = thickness_delta(&g, &cls, &KineticPoint::origin(1), r).unwrap();
        assert!(rep.delta <= g.dv() / r + 1e-12);

        // slice below the grid is a range error
        assert!(thickness_delta(&g, &cls, &KineticPoint::new1(-0.9, 0.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn density_examples() {
        let g = unit_grid(16, 16, 16);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let d = lebesgue_density(&g, &cls, &KineticPoint::origin(1), 0.5).unwrap();
        assert!((d - 0.5).abs() < 2.0 * g.dv() / 0.5, "density {d}");

        let zero = Field::zeros(&g);
        let cls = classify(&zero, 0.0, 0.0).unwrap();
        assert_eq!(lebesgue_density(&g, &cls, &KineticPoint::origin(1), 0.5).unwrap(), 1.0);

        let ones = Field::sample(&g, |_| 1.0);
        let cls = classify(&ones, 0.0, 0.0).unwrap();
        assert_eq!(lebesgue_density(&g, &cls, &KineticPoint::origin(1), 0.5).unwrap(), 0.0);

        assert!(lebesgue_density(&g, &cls, &KineticPoint::origin(1), 2.0).is_err());
    }

    #[test]
    fn corkscrew_on_half_space() {
        let g = unit_grid(24, 24, 24);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let rep = corkscrew_check(&g, &cls, &KineticPoint::origin(1), 0.5, 0.2).unwrap();
        assert!(rep.passes);
        let (_, _, vc) = rep.contact_witness.unwrap();
        let (_, _, vp) = rep.positive_witness.unwrap();
        assert!(vc[0] < 0.0 && vp[0] > 0.0, "witnesses on either side of v = 0");

        let ones = Field::sample(&g, |_| 1.0);
        let cls = classify(&ones, 0.0, 0.0).unwrap();
        assert!(!corkscrew_check(&g, &cls, &KineticPoint::origin(1), 0.5, 0.2).unwrap().passes);

        let zero = Field::zeros(&g);
        let cls = classify(&zero, 0.0, 0.0).unwrap();
        assert!(!corkscrew_check(&g, &cls, &KineticPoint::origin(1), 0.5, 0.2).unwrap().passes);
    }

    #[test]
    fn graph_extraction() {
        let g = unit_grid(8, 8, 16);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let graph = extract_graph(&u, &cls, 0).unwrap();
        assert_eq!(graph.valid_fraction(), 1.0);
        for s in &graph.samples {
            assert!(s.f.abs() < 1e-14, "crossing at {}", s.f);
        }

        let ones = Field::sample(&g, |_| 1.0);
        let cls = classify(&ones, 0.0, 0.0).unwrap();
        let graph = extract_graph(&ones, &cls, 0).unwrap();
        assert_eq!(graph.valid_fraction(), 0.0);
    }

    #[test]
    fn holder_seminorm_values() {
        // constant graph: both seminorms zero
        let mk = |f: &dyn Fn(f64) -> f64| FreeBoundaryGraph {
            axis: 0,
            samples: (0..9)
                .map(|i| {
                    let t = -1.0 + i as f64 / 8.0;
                    GraphSample { t, x: vec![0.0], vprime: vec![], f: f(t), valid: true, transitions: 1 }
                })
                .collect(),
        };
        let rep = holder_seminorms(&mk(&|_| 0.3)).unwrap();
        assert_eq!(rep.tx_seminorm, 0.0);
        assert_eq!(rep.v_seminorm, 0.0);

        // f(t) = |t|^{1/2} has (t,x)-seminorm 1, attained against t = 0
        let rep = holder_seminorms(&mk(&|t: f64| t.abs().sqrt())).unwrap();
        assert!((rep.tx_seminorm - 1.0).abs() < 1e-12, "{}", rep.tx_seminorm);

        // v-seminorm picks up the Lipschitz slope in v'
        let graph = FreeBoundaryGraph {
            axis: 1,
            samples: (0..9)
                .map(|i| {
                    let vp = -1.0 + i as f64 / 4.0;
                    GraphSample {
                        t: -0.5,
                        x: vec![0.0],
                        vprime: vec![vp],
                        f: 0.3 * vp,
                        valid: true,
                        transitions: 1,
                    }
                })
                .collect(),
        };
        let rep = holder_seminorms(&graph).unwrap();
        assert!((rep.v_seminorm - 0.3).abs() < 1e-12);

        let empty = FreeBoundaryGraph { axis: 0, samples: vec![] };
        assert!(holder_seminorms(&empty).is_err());
    }

    #[test]
    fn cone_monotonicity_on_half_space() {
        let g = unit_grid(16, 16, 16);
        let u = half_space(&g);
        let cone = VelocityCone::new(vec![1.0], 0.9, 1.0).unwrap();
        let region = Region {
            t_range: (-0.25, 0.0),
            x_radius: 0.5,
            v_window: (-0.5, 0.25),
            vprime_radius: 0.0,
        };
        let rep = cone_monotonicity_check(&u, &region, &cone, 1.0, 1e-12).unwrap();
        assert!(rep.passes, "min slack {}", rep.min_slack);

        // constant field fails: C0·0 − 1 < 0
        let ones = Field::sample(&g, |_| 1.0);
        let rep = cone_monotonicity_check(&ones, &region, &cone, 1.0, 1e-12).unwrap();
        assert!(!rep.passes);
        assert!((rep.min_slack + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cone_trap_on_half_space() {
        let g = unit_grid(24, 24, 24);
        let u = half_space(&g);
        let cls = classify(&u, 0.0, 0.0).unwrap();
        let rep =
            cone_trap_check(&g, &cls, &KineticPoint::origin(1), 0, 1.0, 0.8, 0.5).unwrap();
        assert!(rep.passes, "{rep:?}");
        assert!(rep.forward_nodes > 0 && rep.backward_nodes > 0);

        // zero field: nearest node is not a free-boundary point
        let zero = Field::zeros(&g);
        let cls = classify(&zero, 0.0, 0.0).unwrap();
        assert!(cone_trap_check(&g, &cls, &KineticPoint::origin(1), 0, 1.0, 0.8, 0.5).is_err());
    }

    #[test]
    fn cone_geometry_lemma() {
        // for v in C(e_n, θ) and c < δ/(2−δ), every w in B_{c v_n} keeps the
        // chord direction inside C(e_n, (1−δ)θ)
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let theta: f64 = 0.7;
        let delta: f64 = 0.3;
        let c = 0.99 * delta / (2.0 - delta);
        for _ in 0..2000 {
            // sample v in the planar cone around e_n = (0, 1)
            let phi = rng.gen_range(-1.0f64..1.0) * theta.acos() * 0.999;
            let len = rng.gen_range(0.05f64..1.0);
            let v = [len * phi.sin(), len * phi.cos()];
            let vn = v[1];
            let wang = rng.gen_range(0.0f64..std::f64::consts::TAU);
            let wlen = rng.gen_range(0.0f64..c * vn);
            let w = [wlen * wang.cos(), wlen * wang.sin()];
            let d = [v[0] - w[0], v[1] - w[1]];
            let dn = d[1] / (d[0] * d[0] + d[1] * d[1]).sqrt();
            assert!(dn > (1.0 - delta) * theta, "chord cosine {dn}");
        }
    }
}
