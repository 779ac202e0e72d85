//! Discrete regularity estimators: sup norms of `∇_x u`, `∂_t u`, `D²_v u`
//! over the half cylinder, quadratic growth quotients, nondegeneracy margins
//! (kinetic, parabolic and elliptic), and porosity of the positivity set.
//!
//! Sup norms run over nodes of the slanted cylinder `Q_{1/2}` (not its box
//! hull). Margins are reported raw; pass/fail decisions add a measured
//! Richardson slack from a coarser companion field.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::free_boundary::Classification;
use crate::geometry::{KineticCylinder, KineticPoint};
use crate::grid::{diff, Diff, Field};

/// Nondegeneracy constant `c_n = 1/(4n + 2)`.
pub fn nondegeneracy_constant(n: usize) -> f64 {
    1.0 / (4.0 * n as f64 + 2.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    /// `‖u‖_∞` over the whole grid.
    pub sup_u: f64,
    /// `‖∇_x u‖_∞` over `Q_{1/2}` nodes (diagnostic central stencils).
    pub sup_grad_x: f64,
    pub sup_dt: f64,
    /// Largest eigenvalue magnitude of `D²_v u` (for `n = 1`, `|∂_vv u|`).
    pub sup_d2v: f64,
    pub nodes_in_half_cylinder: usize,
}

/// Discrete version of the Lipschitz estimate: the three derivative sup norms
/// over `Q_{1/2}`, reported next to `‖u‖_∞(Q_1)`.
pub fn lipschitz_report(u: &Field) -> Result<RegularityReport> {
    let g = u.grid();
    let n = g.n();
    let mut dx_fields = Vec::new();
    let mut dt = diff(u, Diff::Dt)?;
    for i in 0..n {
        dx_fields.push(diff(u, Diff::Dx(i))?);
    }
    let mut dvv = Vec::new();
    for i in 0..n {
        for j in 0..n {
            dvv.push(diff(u, Diff::Dvv(i, j))?);
        }
    }
    let half = KineticCylinder::new(KineticPoint::origin(n), 0.5)?;
    let nodes = g.cylinder_nodes(&half);
    let mut sup_grad_x = 0.0f64;
    let mut sup_dt = 0.0f64;
    let mut sup_d2v = 0.0f64;
    for &flat in &nodes {
        let gx: f64 = dx_fields.iter().map(|f| f.values()[flat] * f.values()[flat]).sum::<f64>().sqrt();
        sup_grad_x = sup_grad_x.max(gx);
        sup_dt = sup_dt.max(dt.values_mut()[flat].abs());
        let d2: f64 = match n {
            1 => dvv[0].values()[flat].abs(),
            _ => {
                // symmetric 2×2 spectral radius
                let a = dvv[0].values()[flat];
                let b = dvv[1].values()[flat];
                let d = dvv[3].values()[flat];
                let mean = 0.5 * (a + d);
                let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                (mean + disc).abs().max((mean - disc).abs())
            }
        };
        sup_d2v = sup_d2v.max(d2);
    }
    Ok(RegularityReport {
        sup_u: u.sup_norm(),
        sup_grad_x,
        sup_dt,
        sup_d2v,
        nodes_in_half_cylinder: nodes.len(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthSample {
    pub r: f64,
    /// `sup_{Q_r(z0)} u / r²`.
    pub quotient: f64,
    /// `sup_{Q_r(z0)} u − c_n r²`.
    pub margin: f64,
    pub nodes: usize,
}

/// Quadratic growth quotients and nondegeneracy margins over a radius sweep.
pub fn growth_report(u: &Field, z0: &KineticPoint, radii: &[f64]) -> Result<Vec<GrowthSample>> {
    let g = u.grid();
    let cn = nondegeneracy_constant(g.n());
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let q = KineticCylinder::new(*z0, r)?;
        if !g.contains_cylinder(&q) {
            return Err(Error::range(format!("growth radius {r} not contained in the grid")));
        }
        let nodes = g.cylinder_nodes(&q);
        let sup = nodes.iter().fold(0.0f64, |m, f| m.max(u.values()[*f]));
        out.push(GrowthSample {
            r,
            quotient: sup / (r * r),
            margin: sup - cn * r * r,
            nodes: nodes.len(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracySample {
    pub scale: f64,
    pub sup: f64,
    pub margin: f64,
}

/// Parabolic nondegeneracy: sup of `u` over the fixed-x parabolic cylinder
/// `{t ∈ (t0 − δ², t0], |v − v0| < δ}` against `c_n δ²`.
pub fn parabolic_nondegeneracy(
    u: &Field,
    z0: &KineticPoint,
    deltas: &[f64],
) -> Result<Vec<NondegeneracySample>> {
    let g = u.grid();
    let n = g.n();
    let cn = nondegeneracy_constant(n);
    let ix: Vec<usize> = (0..n)
        .map(|i| ((z0.x()[i] + g.x_extent()) / g.dx()).round().clamp(0.0, g.nx() as f64) as usize)
        .collect();
    let mut out = Vec::new();
    for &delta in deltas {
        if z0.t() - delta * delta < g.t_lo() - 1e-12 {
            return Err(Error::range(format!("parabolic scale {delta} reaches below the grid")));
        }
        for i in 0..n {
            if z0.v()[i].abs() + delta > g.v_extent() + 1e-12 {
                return Err(Error::range("velocity window sticks out of the grid"));
            }
        }
        let mut sup = f64::NEG_INFINITY;
        let it_lo = ((z0.t() - delta * delta - g.t_lo()) / g.dt()).ceil().max(0.0) as usize;
        let it_hi = ((z0.t() - g.t_lo()) / g.dt()).floor().min(g.nt() as f64) as usize;
        for it in it_lo..=it_hi {
            for_each_v_ball(u, z0, delta, |flat_v| {
                let mut idx = vec![it];
                idx.extend_from_slice(&ix);
                idx.extend_from_slice(flat_v);
                sup = sup.max(u.values()[g.flat(&idx)]);
            });
        }
        if !sup.is_finite() {
            return Err(Error::range("parabolic cylinder resolves no grid nodes"));
        }
        out.push(NondegeneracySample { scale: delta, sup, margin: sup - cn * delta * delta });
    }
    Ok(out)
}

fn for_each_v_ball(u: &Field, z0: &KineticPoint, radius: f64, mut f: impl FnMut(&[usize])) {
    let g = u.grid();
    let n = g.n();
    match n {
        1 => {
            for iv in 0..=g.nv() {
                if (g.v_node(iv) - z0.v()[0]).abs() < radius {
                    f(&[iv]);
                }
            }
        }
        _ => {
            for iv in 0..=g.nv() {
                for jv in 0..=g.nv() {
                    let d0 = g.v_node(iv) - z0.v()[0];
                    let d1 = g.v_node(jv) - z0.v()[1];
                    if d0 * d0 + d1 * d1 < radius * radius {
                        f(&[iv, jv]);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticReport {
    pub samples: Vec<NondegeneracySample>,
    /// Set when the transport-derivative hypothesis `sup |Yu| ≤ ½` near the
    /// point was not verified by the caller.
    pub conditional: bool,
    pub yu_sup_checked: Option<f64>,
}

/// Elliptic nondegeneracy on the fixed-(t, x) velocity ball:
/// `sup_{|w| < λ} u(t0, x0, v0 + w) ≥ λ²/(4n)`.
///
/// Valid under the hypothesis `|Yu| ≤ ½` nearby; pass the measured transport
/// sup if available, otherwise the report is marked conditional.
pub fn elliptic_nondegeneracy(
    u: &Field,
    z0: &KineticPoint,
    lambdas: &[f64],
    yu_sup: Option<f64>,
) -> Result<EllipticReport> {
    let g = u.grid();
    let n = g.n();
    let it = ((z0.t() - g.t_lo()) / g.dt()).round().clamp(0.0, g.nt() as f64) as usize;
    let ix: Vec<usize> = (0..n)
        .map(|i| ((z0.x()[i] + g.x_extent()) / g.dx()).round().clamp(0.0, g.nx() as f64) as usize)
        .collect();
    let mut samples = Vec::new();
    for &lambda in lambdas {
        for i in 0..n {
            if z0.v()[i].abs() + lambda > g.v_extent() + 1e-12 {
                return Err(Error::range("velocity ball sticks out of the grid"));
            }
        }
        let mut sup = f64::NEG_INFINITY;
        for_each_v_ball(u, z0, lambda, |vidx| {
            let mut idx = vec![it];
            idx.extend_from_slice(&ix);
            idx.extend_from_slice(vidx);
            sup = sup.max(u.values()[g.flat(&idx)]);
        });
        if !sup.is_finite() {
            return Err(Error::range("velocity ball resolves no grid nodes"));
        }
        samples.push(NondegeneracySample {
            scale: lambda,
            sup,
            margin: sup - lambda * lambda / (4.0 * n as f64),
        });
    }
    let conditional = !matches!(yu_sup, Some(s) if s <= 0.5);
    Ok(EllipticReport { samples, conditional, yu_sup_checked: yu_sup })
}

#[derive(Clone, Debug, Serialize)]
pub struct PorositySample {
    pub r: f64,
    /// Node fraction of the positivity set in `Q_r(z0)`.
    pub positive_fraction: f64,
    /// Largest tested ratio δ with a full cylinder `Q_{δr}(z1) ⊂ Ω ∩ Q_r(z0)`.
    pub best_delta: Option<f64>,
    pub witness: Option<(f64, Vec<f64>, Vec<f64>)>,
}

/// Porosity of the positivity set: measured node fractions plus the largest
/// inner-cylinder ratio found by search.
pub fn porosity_report(
    u: &Field,
    cls: &Classification,
    z0: &KineticPoint,
    radii: &[f64],
    delta_search: &[f64],
) -> Result<Vec<PorositySample>> {
    let g = u.grid();
    let mut out = Vec::new();
    for &r in radii {
        let q = KineticCylinder::new(*z0, r)?;
        if !g.contains_cylinder(&q) {
            return Err(Error::range(format!("porosity radius {r} not contained in the grid")));
        }
        let nodes = g.cylinder_nodes(&q);
        let inside: std::collections::HashSet<usize> = nodes.iter().copied().collect();
        let positive = nodes.iter().filter(|f| cls.is_positive(**f)).count();
        let mut best_delta = None;
        let mut witness = None;
        let mut sorted_deltas: Vec<f64> = delta_search.to_vec();
        sorted_deltas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut idx = vec![0usize; g.axes()];
        'deltas: for &delta in &sorted_deltas {
            for &cand in &nodes {
                if !cls.is_positive(cand) {
                    continue;
                }
                g.unflat(cand, &mut idx);
                let center = g.point_at(&idx);
                let small = KineticCylinder::new(center, delta * r)?;
                let small_nodes = g.cylinder_nodes(&small);
                if small_nodes.is_empty() {
                    continue;
                }
                if small_nodes.iter().all(|f| inside.contains(f) && cls.is_positive(*f)) {
                    best_delta = Some(delta);
                    witness = Some((center.t(), center.x().to_vec(), center.v().to_vec()));
                    break 'deltas;
                }
            }
        }
        out.push(PorositySample {
            r,
            positive_fraction: positive as f64 / nodes.len().max(1) as f64,
            best_delta,
            witness,
        });
    }
    Ok(out)
}
