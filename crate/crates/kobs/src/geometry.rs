//! Galilean group arithmetic, kinetic scaling, cylinders, norm and Taylor polynomials.
//!
//! The Kolmogorov operator `L = Δ_v − ∂_t − v·∇_x` is invariant under left
//! translation by the non-commutative group law
//!
//! ```text
//! z0 ∘ z = (t0 + t, x0 + x + t v0, v0 + v),     z0⁻¹ = (−t0, −x0 + t0 v0, −v0)
//! ```
//!
//! and under the anisotropic scaling `S_r(t, x, v) = (r²t, r³x, rv)`. Cylinders,
//! the kinetic norm `‖z‖ = |t|^{1/2} + |x|^{1/3} + |v|` and the distance
//! `d(a, b) = ‖b⁻¹ ∘ a‖` are built on these two invariances. Everything here is
//! exact arithmetic on immutable values; membership tests use plain IEEE
//! comparisons with no epsilon, so callers wanting fattened cylinders must pass
//! an inflated radius themselves.

use crate::error::{Error, Result};

/// Largest supported spatial dimension. The solver is specialised to `n = 1`;
/// the geometry and diagnostics also handle `n = 2`.
pub const MAX_DIM: usize = 2;

/// A point `z = (t, x, v)` of the Galilean group, `x, v ∈ ℝⁿ` with `n ≤ 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KineticPoint {
    t: f64,
    x: [f64; MAX_DIM],
    v: [f64; MAX_DIM],
    n: usize,
}

impl KineticPoint {
    pub fn new(t: f64, x: &[f64], v: &[f64]) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::usage(format!(
                "position and velocity dimensions differ: {} vs {}",
                x.len(),
                v.len()
            )));
        }
        if x.is_empty() || x.len() > MAX_DIM {
            return Err(Error::usage(format!(
                "dimension must be 1 or {MAX_DIM}, got {}",
                x.len()
            )));
        }
        let mut xs = [0.0; MAX_DIM];
        let mut vs = [0.0; MAX_DIM];
        xs[..x.len()].copy_from_slice(x);
        vs[..v.len()].copy_from_slice(v);
        Ok(Self { t, x: xs, v: vs, n: x.len() })
    }

    /// One-dimensional point, the workhorse case.
    pub fn new1(t: f64, x: f64, v: f64) -> Self {
        Self { t, x: [x, 0.0], v: [v, 0.0], n: 1 }
    }

    pub fn origin(n: usize) -> Self {
        assert!(n >= 1 && n <= MAX_DIM);
        Self { t: 0.0, x: [0.0; MAX_DIM], v: [0.0; MAX_DIM], n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn v(&self) -> &[f64] {
        &self.v[..self.n]
    }

    /// Group product `self ∘ rhs = (t0 + t, x0 + x + t v0, v0 + v)`.
    ///
    /// Non-commutative: the translation of `x` is sheared by the *left*
    /// factor's velocity. Panics on dimension mismatch.
    pub fn compose(&self, rhs: &KineticPoint) -> KineticPoint {
        assert_eq!(self.n, rhs.n, "dimension mismatch in group product");
        let mut out = *self;
        out.t = self.t + rhs.t;
        for i in 0..self.n {
            out.x[i] = self.x[i] + rhs.x[i] + rhs.t * self.v[i];
            out.v[i] = self.v[i] + rhs.v[i];
        }
        out
    }

    /// Group inverse `z⁻¹ = (−t, −x + t v, −v)`.
    pub fn inverse(&self) -> KineticPoint {
        let mut out = *self;
        out.t = -self.t;
        for i in 0..self.n {
            out.x[i] = -self.x[i] + self.t * self.v[i];
            out.v[i] = -self.v[i];
        }
        out
    }

    /// Kinetic scaling `S_r(z) = (r²t, r³x, rv)`, `r > 0`.
    pub fn scale(&self, r: f64) -> Result<KineticPoint> {
        if !(r > 0.0) {
            return Err(Error::usage(format!("scaling ratio must be positive, got {r}")));
        }
        let mut out = *self;
        out.t = r * r * self.t;
        for i in 0..self.n {
            out.x[i] = r * r * r * self.x[i];
            out.v[i] = r * self.v[i];
        }
        Ok(out)
    }

    /// Kinetic norm `‖z‖ = |t|^{1/2} + |x|^{1/3} + |v|`, homogeneous of degree
    /// one under `S_r`.
    pub fn kinetic_norm(&self) -> f64 {
        self.t.abs().sqrt() + euclid(self.x()).cbrt() + euclid(self.v())
    }

    /// Euclidean norm of the velocity part.
    pub fn v_norm(&self) -> f64 {
        euclid(self.v())
    }

    /// Euclidean norm of the position part.
    pub fn x_norm(&self) -> f64 {
        euclid(self.x())
    }
}

fn euclid(a: &[f64]) -> f64 {
    a.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Kolmogorov (kinetic) distance `d(a, b) = ‖b⁻¹ ∘ a‖`. Left invariant:
/// `d(g∘a, g∘b) = d(a, b)`.
pub fn kinetic_distance(a: &KineticPoint, b: &KineticPoint) -> f64 {
    b.inverse().compose(a).kinetic_norm()
}

/// Slanted kinetic cylinder `Q_r(z0) = z0 ∘ Q_r`.
///
/// Membership means
/// `t0 − r² < t ≤ t0`, `|x − x0 − (t − t0) v0| < r³`, `|v − v0| < r`:
/// half-open at the top time slice, strict on the lateral parts. The centre of
/// the x-ball drifts with the centre velocity.
#[derive(Clone, Copy, Debug)]
pub struct KineticCylinder {
    pub center: KineticPoint,
    pub radius: f64,
}

impl KineticCylinder {
    pub fn new(center: KineticPoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::usage(format!("cylinder radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    /// Unit-radius cylinder at the origin, `(-1, 0] × B1 × B1`.
    pub fn unit(n: usize) -> Self {
        Self { center: KineticPoint::origin(n), radius: 1.0 }
    }

    pub fn contains(&self, z: &KineticPoint) -> bool {
        let z0 = &self.center;
        assert_eq!(z0.dim(), z.dim(), "dimension mismatch in cylinder membership");
        let r = self.radius;
        let dt = z.t - z0.t;
        if !(dt > -r * r && dt <= 0.0) {
            return false;
        }
        let mut dx2 = 0.0;
        let mut dv2 = 0.0;
        for i in 0..z.dim() {
            let dxi = z.x()[i] - z0.x()[i] - dt * z0.v()[i];
            dx2 += dxi * dxi;
            let dvi = z.v()[i] - z0.v()[i];
            dv2 += dvi * dvi;
        }
        let r3 = r * r * r;
        dx2 < r3 * r3 && dv2 < r * r
    }
}

/// Kinetic Taylor polynomial at a base point.
///
/// Order 1: `p1(z) = u0 + (v − v0)·g`. Order 2 adds the material-derivative
/// coefficient and the velocity Hessian:
/// `p2(z) = u0 + (t − t0) Yu + (v − v0)·g + ½ (v − v0)·H (v − v0)`. Neither
/// order carries an x term; under the kinetic scaling `x` only enters at
/// degree 3.
#[derive(Clone, Debug)]
pub struct KineticTaylor {
    pub base: KineticPoint,
    pub value: f64,
    pub grad_v: Vec<f64>,
    /// Present exactly for order 2.
    pub y_coeff: Option<f64>,
    /// Symmetric velocity Hessian, row-major `n×n`, present exactly for order 2.
    pub hess_v: Option<Vec<f64>>,
}

impl KineticTaylor {
    pub fn order1(base: KineticPoint, value: f64, grad_v: Vec<f64>) -> Result<Self> {
        if grad_v.len() != base.dim() {
            return Err(Error::usage("gradient length must match base dimension"));
        }
        Ok(Self { base, value, grad_v, y_coeff: None, hess_v: None })
    }

    pub fn order2(
        base: KineticPoint,
        value: f64,
        grad_v: Vec<f64>,
        y_coeff: f64,
        hess_v: Vec<f64>,
    ) -> Result<Self> {
        let n = base.dim();
        if grad_v.len() != n || hess_v.len() != n * n {
            return Err(Error::usage("coefficient shapes must match base dimension"));
        }
        for i in 0..n {
            for j in 0..i {
                if hess_v[i * n + j] != hess_v[j * n + i] {
                    return Err(Error::usage("velocity Hessian must be symmetric"));
                }
            }
        }
        Ok(Self { base, value, grad_v, y_coeff: Some(y_coeff), hess_v: Some(hess_v) })
    }

    pub fn order(&self) -> usize {
        if self.y_coeff.is_some() {
            2
        } else {
            1
        }
    }

    pub fn eval(&self, z: &KineticPoint) -> f64 {
        assert_eq!(self.base.dim(), z.dim(), "dimension mismatch in Taylor evaluation");
        let n = self.base.dim();
        let mut acc = self.value;
        for i in 0..n {
            acc += (z.v()[i] - self.base.v()[i]) * self.grad_v[i];
        }
        if let Some(m) = self.y_coeff {
            acc += (z.t - self.base.t) * m;
            let h = self.hess_v.as_ref().unwrap();
            for i in 0..n {
                for j in 0..n {
                    acc += 0.5
                        * (z.v()[i] - self.base.v()[i])
                        * h[i * n + j]
                        * (z.v()[j] - self.base.v()[j]);
                }
            }
        }
        acc
    }
}

/// One observation for a kinetic-homogeneity test: a value at `point` and a
/// value at `S_ratio(point)`.
#[derive(Clone, Copy, Debug)]
pub struct ScalingSample {
    pub point: KineticPoint,
    pub value: f64,
    pub ratio: f64,
    pub scaled_value: f64,
}

/// Outcome of [`check_homogeneity`].
#[derive(Clone, Copy, Debug)]
pub struct HomogeneityCheck {
    pub residual: f64,
    pub passed: bool,
}

/// Tests whether sampled values behave like a function homogeneous of kinetic
/// degree `kappa`, i.e. `f(S_r z) = r^κ f(z)`.
///
/// The reported residual is `max |f(S_r z) − r^κ f(z)| / (1 + |f(z)|)` over the
/// samples.
pub fn check_homogeneity(samples: &[ScalingSample], kappa: f64, tol: f64) -> Result<HomogeneityCheck> {
    if samples.is_empty() {
        return Err(Error::usage("homogeneity check needs at least one sample"));
    }
    let mut residual: f64 = 0.0;
    for s in samples {
        if !(s.ratio > 0.0) {
            return Err(Error::usage("scaling ratios must be positive"));
        }
        let predicted = s.ratio.powf(kappa) * s.value;
        residual = residual.max((s.scaled_value - predicted).abs() / (1.0 + s.value.abs()));
    }
    Ok(HomogeneityCheck { residual, passed: residual <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, ulps: f64, scale: f64) -> bool {
        (a - b).abs() <= ulps * f64::EPSILON * scale.max(1.0)
    }

    #[test]
    fn group_product_substitution() {
        let a = KineticPoint::new1(1.0, 2.0, 3.0);
        let b = KineticPoint::new1(4.0, 5.0, 6.0);
        let c = a.compose(&b);
        assert_eq!(c.t(), 5.0);
        assert_eq!(c.x()[0], 19.0);
        assert_eq!(c.v()[0], 9.0);
    }

    #[test]
    fn identity_element() {
        let z = KineticPoint::new1(-0.3, 0.7, -1.1);
        let o = KineticPoint::origin(1);
        assert_eq!(z.compose(&o), z);
        assert_eq!(o.compose(&z), z);
    }

    #[test]
    fn non_commutativity_witness() {
        let a = KineticPoint::new1(1.0, 0.0, 1.0);
        let b = KineticPoint::new1(1.0, 0.0, 0.0);
        let ab = a.compose(&b);
        let ba = b.compose(&a);
        assert_eq!((ab.t(), ab.x()[0], ab.v()[0]), (2.0, 1.0, 1.0));
        assert_eq!((ba.t(), ba.x()[0], ba.v()[0]), (2.0, 0.0, 1.0));
    }

    #[test]
    fn inverse_substitution() {
        let z = KineticPoint::new1(1.0, 2.0, 3.0);
        let inv = z.inverse();
        assert_eq!((inv.t(), inv.x()[0], inv.v()[0]), (-1.0, 1.0, -3.0));
        assert_eq!(KineticPoint::origin(1).inverse(), KineticPoint::origin(1));
    }

    #[test]
    fn scaling_substitution() {
        let z = KineticPoint::new1(1.0, 1.0, 1.0);
        let s = z.scale(2.0).unwrap();
        assert_eq!((s.t(), s.x()[0], s.v()[0]), (4.0, 8.0, 2.0));
        let o = KineticPoint::origin(1).scale(3.5).unwrap();
        assert_eq!(o, KineticPoint::origin(1));
        assert!(z.scale(0.0).is_err());
        assert!(z.scale(-1.0).is_err());
    }

    #[test]
    fn norm_values() {
        let z = KineticPoint::new1(-0.25, 0.008, 0.3);
        assert!((z.kinetic_norm() - 1.0).abs() < 1e-14);
        assert_eq!(KineticPoint::origin(1).kinetic_norm(), 0.0);
    }

    #[test]
    fn distance_values() {
        let z = KineticPoint::new1(0.4, -0.2, 0.9);
        assert_eq!(kinetic_distance(&z, &z), 0.0);
        let a = KineticPoint::new1(-1.0, 0.0, 0.0);
        let d = kinetic_distance(&a, &KineticPoint::origin(1));
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cylinder_membership() {
        let q1 = KineticCylinder::unit(1);
        assert!(q1.contains(&KineticPoint::new1(-0.5, 0.0, 0.0)));
        assert!(!q1.contains(&KineticPoint::new1(0.1, 0.0, 0.0)));
        // top slice included, bottom excluded
        assert!(q1.contains(&KineticPoint::new1(0.0, 0.0, 0.0)));
        assert!(!q1.contains(&KineticPoint::new1(-1.0, 0.0, 0.0)));

        // slanted cylinder: the x-ball centre drifts with v0
        let q = KineticCylinder::new(KineticPoint::new1(0.0, 0.0, 1.0), 0.5).unwrap();
        assert!(q.contains(&KineticPoint::new1(-0.2, -0.2, 1.0)));
        // same x offset without the drift correction would fail: r³ = 0.125
        assert!(!q.contains(&KineticPoint::new1(0.0, -0.2, 1.0)));
    }

    #[test]
    fn taylor_evaluation() {
        let base = KineticPoint::origin(1);
        let p1 = KineticTaylor::order1(base, 2.0, vec![3.0]).unwrap();
        assert_eq!(p1.eval(&KineticPoint::new1(0.0, 0.0, 0.5)), 3.5);
        assert_eq!(p1.eval(&base), 2.0);

        let m = -0.7;
        let p2 = KineticTaylor::order2(base, 1.0, vec![0.0], m, vec![0.0]).unwrap();
        let dt = 0.3;
        assert!((p2.eval(&KineticPoint::new1(dt, 0.0, 0.0)) - (1.0 + m * dt)).abs() < 1e-15);
        assert_eq!(p2.eval(&base), 1.0);

        // order-1 evaluation is exact: value + (v - v0)·grad
        let p = KineticTaylor::order1(KineticPoint::new1(0.1, 0.2, 0.3), 5.0, vec![-2.0]).unwrap();
        let z = KineticPoint::new1(-0.4, 7.0, 0.8);
        assert_eq!(p.eval(&z), 5.0 + (0.8 - 0.3) * -2.0);
    }

    #[test]
    fn homogeneity_exact_and_violated() {
        // f = ½ v₊² is homogeneous of kinetic degree 2
        let f = |z: &KineticPoint| {
            let v = z.v()[0];
            if v > 0.0 {
                0.5 * v * v
            } else {
                0.0
            }
        };
        let mut samples = Vec::new();
        for (t, x, v, r) in [(-0.5, 0.1, 0.4, 2.0), (-0.1, -0.3, -0.2, 0.5), (-1.0, 0.0, 1.0, 3.0)] {
            let z = KineticPoint::new1(t, x, v);
            let zs = z.scale(r).unwrap();
            samples.push(ScalingSample { point: z, value: f(&z), ratio: r, scaled_value: f(&zs) });
        }
        let check = check_homogeneity(&samples, 2.0, 1e-12).unwrap();
        assert!(check.passed, "residual {}", check.residual);

        // f = v² + 1 is not homogeneous: f(S₂(0,0,1)) = 5 ≠ 4 f(0,0,1) = 8
        let g = |z: &KineticPoint| z.v()[0] * z.v()[0] + 1.0;
        let z = KineticPoint::new1(0.0, 0.0, 1.0);
        let zs = z.scale(2.0).unwrap();
        let s = ScalingSample { point: z, value: g(&z), ratio: 2.0, scaled_value: g(&zs) };
        assert_eq!(s.scaled_value, 5.0);
        let check = check_homogeneity(&[s], 2.0, 1e-12).unwrap();
        assert!(!check.passed);
        assert!((check.residual - 3.0 / 3.0).abs() < 1e-15);

        assert!(check_homogeneity(&[], 2.0, 1e-12).is_err());
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(t in -2.0f64..2.0, x in -2.0f64..2.0, v in -2.0f64..2.0) {
            let z = KineticPoint::new1(t, x, v);
            let id = z.compose(&z.inverse());
            prop_assert!(close(id.t(), 0.0, 8.0, t.abs()));
            prop_assert!(close(id.x()[0], 0.0, 8.0, x.abs().max((t*v).abs())));
            prop_assert!(close(id.v()[0], 0.0, 8.0, v.abs()));
            let back = z.inverse().inverse();
            prop_assert!(close(back.t(), z.t(), 8.0, t.abs()));
            prop_assert!(close(back.x()[0], z.x()[0], 8.0, x.abs().max((t*v).abs())));
            prop_assert!(close(back.v()[0], z.v()[0], 8.0, v.abs()));
        }

        #[test]
        fn scaling_group(t in -2.0f64..2.0, x in -2.0f64..2.0, v in -2.0f64..2.0, r in 0.1f64..8.0) {
            let z = KineticPoint::new1(t, x, v);
            let back = z.scale(r).unwrap().scale(1.0 / r).unwrap();
            prop_assert!(close(back.t(), z.t(), 8.0, t.abs()));
            prop_assert!(close(back.x()[0], z.x()[0], 8.0, x.abs()));
            prop_assert!(close(back.v()[0], z.v()[0], 8.0, v.abs()));
        }

        #[test]
        fn left_invariance_of_distance(
            a in proptest::array::uniform3(-2.0f64..2.0),
            b in proptest::array::uniform3(-2.0f64..2.0),
            g in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let a = KineticPoint::new1(a[0], a[1], a[2]);
            let b = KineticPoint::new1(b[0], b[1], b[2]);
            let g = KineticPoint::new1(g[0], g[1], g[2]);
            let d = kinetic_distance(&a, &b);
            let dg = kinetic_distance(&g.compose(&a), &g.compose(&b));
            prop_assert!((d - dg).abs() <= 64.0 * f64::EPSILON * (1.0 + d));
        }

        #[test]
        fn cylinder_equivariance(
            z in proptest::array::uniform3(-0.9f64..0.9),
            c in proptest::array::uniform3(-0.9f64..0.9),
            r in 0.2f64..1.0,
        ) {
            let z = KineticPoint::new1(z[0].min(0.0), z[1], z[2]);
            let z0 = KineticPoint::new1(c[0].min(0.0), c[1], c[2]);
            let q = KineticCylinder::new(z0, r).unwrap();
            let q_origin = KineticCylinder::new(KineticPoint::origin(1), r).unwrap();
            let shifted = z0.inverse().compose(&z);
            prop_assert_eq!(q.contains(&z), q_origin.contains(&shifted));
        }
    }

    #[test]
    fn norm_scaling_dyadic() {
        let z = KineticPoint::new1(-0.37, 0.21, -0.83);
        for k in -8i32..=8 {
            let r = 2.0f64.powi(k);
            let lhs = z.scale(r).unwrap().kinetic_norm();
            let rhs = r * z.kinetic_norm();
            assert!(
                (lhs - rhs).abs() <= 16.0 * f64::EPSILON * rhs.abs().max(1.0),
                "r = {r}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn two_dimensional_algebra() {
        let a = KineticPoint::new(1.0, &[1.0, 2.0], &[0.5, -0.5]).unwrap();
        let b = KineticPoint::new(2.0, &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let c = a.compose(&b);
        assert_eq!(c.t(), 3.0);
        assert_eq!(c.x(), &[1.0 + 0.0 + 2.0 * 0.5, 2.0 + 1.0 + 2.0 * -0.5]);
        assert_eq!(c.v(), &[1.5, 0.5]);
        let id = a.compose(&a.inverse());
        assert!(id.kinetic_norm() < 1e-15);
        assert!(KineticPoint::new(0.0, &[1.0], &[1.0, 2.0]).is_err());
        assert!(KineticPoint::new(0.0, &[], &[]).is_err());
    }
}
