//! Group structure of the relativistic phase space.
//!
//! Points are `(p, y, t)` triples in natural units (`c = 1`, unit rest mass).
//! The Lorentz composition law makes `(R^3, ∘)` a Lie group under which the
//! kinetic operator is invariant; the Galilean law is its small-momentum limit.
//! The cylinders, slabs and cones used by the Harnack machinery are defined at
//! the origin and transported by left translation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(p, y, t)` of momentum–position–time space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub p: f64,
    pub y: f64,
    pub t: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint {
        p: 0.0,
        y: 0.0,
        t: 0.0,
    };

    pub const fn new(p: f64, y: f64, t: f64) -> Self {
        Self { p, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    /// Relativistic energy `sqrt(p^2 + 1)`.
    pub fn energy(&self) -> f64 {
        energy(self.p)
    }

    pub fn max_abs_diff(&self, other: &PhasePoint) -> f64 {
        (self.p - other.p)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.t - other.t).abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p, self.y, self.t]
    }
}

impl From<[f64; 3]> for PhasePoint {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl std::fmt::Display for PhasePoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.p, self.y, self.t)
    }
}

#[inline]
pub fn energy(p: f64) -> f64 {
    p.mul_add(p, 1.0).sqrt()
}

/// Lorentz left translation `z0 ∘ z`.
pub fn lorentz_compose(z0: PhasePoint, z: PhasePoint) -> PhasePoint {
    let e0 = z0.energy();
    PhasePoint {
        p: z.p * e0 + z0.p * z.energy(),
        y: z0.y + z.y * e0 + z0.p * z.t,
        t: z0.t + z.t * e0 + z0.p * z.y,
    }
}

/// Group inverse, so that `z ∘ z^{-1} = z^{-1} ∘ z = 0`.
pub fn lorentz_inverse(z: PhasePoint) -> PhasePoint {
    let e = z.energy();
    PhasePoint {
        p: -z.p,
        y: z.p * z.t - z.y / e - z.p * z.p * z.y / e,
        t: -z.t * e + z.p * z.y,
    }
}

/// `z0^{-1} ∘ z` in the closed form obtained by expanding both operations.
pub fn lorentz_relative(z0: PhasePoint, z: PhasePoint) -> PhasePoint {
    let e0 = z0.energy();
    let dy = z.y - z0.y;
    let dt = z.t - z0.t;
    PhasePoint {
        p: z.p * e0 - z0.p * z.energy(),
        y: e0 * dy - z0.p * dt,
        t: e0 * dt - z0.p * dy,
    }
}

/// Galilean law of the classical Kolmogorov operator.
pub fn galilean_compose(z0: PhasePoint, z: PhasePoint) -> PhasePoint {
    PhasePoint {
        p: z0.p + z.p,
        y: z0.y + z.y + z.t * z0.p,
        t: z0.t + z.t,
    }
}

/// Components `(a, b)` of a two-dimensional four-vector: `(t, y)` or `(E, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourVector {
    pub a: f64,
    pub b: f64,
}

impl FourVector {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// On-shell energy–momentum vector `(sqrt(p^2+1), p)`.
    pub fn energy_momentum(p: f64) -> Self {
        Self { a: energy(p), b: p }
    }

    pub fn minkowski_norm(&self) -> f64 {
        (self.a - self.b) * (self.a + self.b)
    }

    /// Distance from the unit mass shell `a = sqrt(b^2 + 1)`.
    pub fn mass_shell_defect(&self) -> f64 {
        (self.a - energy(self.b)).abs()
    }
}

/// Lorentz factor `1/sqrt(1 - beta^2)`.
pub fn lorentz_factor(beta: f64) -> Result<f64> {
    if !(beta.abs() < 1.0) {
        return Err(Error::Domain {
            what: "frame velocity",
            value: beta,
        });
    }
    Ok(1.0 / ((1.0 - beta) * (1.0 + beta)).sqrt())
}

/// Transform a four-vector into the frame moving with velocity `beta`.
pub fn boost(beta: f64, v: FourVector) -> Result<FourVector> {
    let gamma = lorentz_factor(beta)?;
    Ok(FourVector {
        a: gamma * (v.a - beta * v.b),
        b: gamma * (v.b - beta * v.a),
    })
}

/// Relativistic velocity `p / sqrt(1 + p^2)`, always in `(-1, 1)`.
pub fn to_velocity(p: f64) -> f64 {
    p / energy(p)
}

/// Inverse of [`to_velocity`].
pub fn to_momentum(x: f64) -> Result<f64> {
    if !(x.abs() < 1.0) {
        return Err(Error::Domain {
            what: "velocity",
            value: x,
        });
    }
    Ok(x / ((1.0 - x) * (1.0 + x)).sqrt())
}

/// Shape of an invariant region centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegionKind {
    /// Open cylinder `|p| < r, |y| < r^3, -r^2 < t < 0`.
    Cylinder,
    /// Slab `|p| < r, |y| < r^3, -r^2 <= t <= -r^2/2`.
    Slab,
    /// Cone `|p| <= |t|^{1/2}, |y| <= |t|^{3/2}, -theta^2 r^2 <= t < 0`.
    Cone { theta: f64 },
}

/// A cylinder, slab or cone transported to `center` by Lorentz left translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub center: PhasePoint,
    pub radius: f64,
}

impl Region {
    pub fn new(kind: RegionKind, center: PhasePoint, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "region radius must be positive, got {radius}"
            )));
        }
        if let RegionKind::Cone { theta } = kind {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "cone parameter theta must lie in (0, 1), got {theta}"
                )));
            }
        }
        Ok(Self {
            kind,
            center,
            radius,
        })
    }

    pub fn cylinder(center: PhasePoint, radius: f64) -> Result<Self> {
        Self::new(RegionKind::Cylinder, center, radius)
    }

    pub fn slab(center: PhasePoint, radius: f64) -> Result<Self> {
        Self::new(RegionKind::Slab, center, radius)
    }

    pub fn cone(center: PhasePoint, radius: f64, theta: f64) -> Result<Self> {
        Self::new(RegionKind::Cone { theta }, center, radius)
    }

    /// Membership through the definition: pull `z` back by the inverse of the
    /// centre and test the origin-centred inequalities.
    pub fn contains(&self, z: PhasePoint) -> bool {
        let local = lorentz_compose(lorentz_inverse(self.center), z);
        self.contains_at_origin(local)
    }

    /// Membership through the expanded inequalities, without forming the inverse.
    pub fn contains_explicit(&self, z: PhasePoint) -> bool {
        self.contains_at_origin(lorentz_relative(self.center, z))
    }

    /// Tests the origin-centred inequalities on an already reduced point.
    pub fn contains_at_origin(&self, z: PhasePoint) -> bool {
        let r = self.radius;
        match self.kind {
            RegionKind::Cylinder => {
                z.p.abs() < r && z.y.abs() < r * r * r && -r * r < z.t && z.t < 0.0
            }
            RegionKind::Slab => {
                z.p.abs() < r && z.y.abs() < r * r * r && -r * r <= z.t && z.t <= -r * r / 2.0
            }
            RegionKind::Cone { theta } => {
                let depth = -z.t;
                let floor = theta * theta * r * r;
                z.t < 0.0
                    && depth <= floor
                    && z.p.abs() <= depth.sqrt()
                    && z.y.abs() <= depth * depth.sqrt()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: PhasePoint, b: PhasePoint, tol: f64) -> bool {
        a.max_abs_diff(&b) <= tol
    }

    #[test]
    fn identity_and_inverse() {
        let z = PhasePoint::new(0.7, -1.3, 2.1);
        assert_eq!(lorentz_compose(PhasePoint::ORIGIN, z), z);
        assert!(close(lorentz_compose(z, lorentz_inverse(z)), PhasePoint::ORIGIN, 1e-12));
        assert!(close(lorentz_compose(lorentz_inverse(z), z), PhasePoint::ORIGIN, 1e-12));
        assert_eq!(lorentz_inverse(PhasePoint::ORIGIN), PhasePoint::ORIGIN);
    }

    #[test]
    fn composition_of_unit_momenta() {
        let z = PhasePoint::new(1.0, 0.0, 0.0);
        let c = lorentz_compose(z, z);
        assert!(close(c, PhasePoint::new(2.0 * 2f64.sqrt(), 0.0, 0.0), 1e-14));
    }

    #[test]
    fn inverse_examples() {
        let z = PhasePoint::new(0.0, 1.5, -0.25);
        assert_eq!(lorentz_inverse(z), PhasePoint::new(-0.0, -1.5, 0.25));
        let inv = lorentz_inverse(PhasePoint::new(1.0, 1.0, 0.0));
        assert!(close(inv, PhasePoint::new(-1.0, -2f64.sqrt(), 1.0), 1e-14));
    }

    #[test]
    fn relative_matches_inverse_then_compose() {
        let z0 = PhasePoint::new(-0.4, 0.2, 1.0);
        let z = PhasePoint::new(1.2, -0.7, 0.3);
        let a = lorentz_compose(lorentz_inverse(z0), z);
        let b = lorentz_relative(z0, z);
        assert!(close(a, b, 1e-13));
    }

    #[test]
    fn galilean_examples() {
        let z = PhasePoint::new(0.3, 0.4, 0.5);
        assert_eq!(galilean_compose(PhasePoint::ORIGIN, z), z);
        let c = galilean_compose(PhasePoint::new(1.0, 0.0, 0.0), PhasePoint::new(0.0, 0.0, 1.0));
        assert_eq!(c, PhasePoint::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn lorentz_approaches_galilean_for_small_momentum() {
        let z = PhasePoint::new(0.8, -0.3, 1.1);
        for k in 1..6 {
            let eps = 10f64.powi(-k);
            let e = PhasePoint::new(eps, 0.0, 0.0);
            let zl = lorentz_compose(e, z);
            let zg = galilean_compose(e, z);
            // Only y agrees to second order at a fixed point; p and t need z small too.
            assert!((zl.y - zg.y).abs() <= eps * eps, "y at eps = {eps}");
            assert!((zl.t - zg.t - eps * z.y).abs() <= eps * eps, "t at eps = {eps}");
            let small = PhasePoint::new(eps * z.p, eps.powi(3) * z.y, eps * eps * z.t);
            let dl = lorentz_compose(e, small);
            let dg = galilean_compose(e, small);
            assert!((dl.p - dg.p).abs() <= eps.powi(3));
            assert!((dl.y - dg.y).abs() <= eps.powi(4));
            assert!((dl.t - dg.t).abs() <= eps.powi(4));
        }
    }

    #[test]
    fn boost_properties() {
        let v = FourVector::new(1.7, -0.4);
        assert_eq!(boost(0.0, v).unwrap(), v);
        let w = boost(-0.6, boost(0.6, v).unwrap()).unwrap();
        assert!((w.a - v.a).abs() < 1e-12 && (w.b - v.b).abs() < 1e-12);
        let u = boost(0.35, v).unwrap();
        assert!((u.minkowski_norm() - v.minkowski_norm()).abs() < 1e-12);
        let em = FourVector::energy_momentum(2.3);
        assert!(boost(-0.8, em).unwrap().mass_shell_defect() < 1e-12);
        assert!(matches!(boost(1.0, v), Err(Error::Domain { .. })));
        assert!(matches!(boost(-1.5, v), Err(Error::Domain { .. })));
        assert!(boost(f64::NAN, v).is_err());
    }

    #[test]
    fn velocity_momentum_maps() {
        assert_eq!(to_velocity(0.0), 0.0);
        assert!((to_velocity(1.0) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        for &p in &[-7.0, -1.0, -0.01, 0.3, 4.5] {
            assert!((to_momentum(to_velocity(p)).unwrap() - p).abs() < 1e-12 * (1.0 + p.abs()));
            let x = to_velocity(p);
            assert!(((1.0 - x * x) - 1.0 / (1.0 + p * p)).abs() < 1e-12);
        }
        assert!(to_momentum(1.0).is_err());
        assert!(to_momentum(-1.2).is_err());
    }

    #[test]
    fn cylinder_membership() {
        let r = 0.4;
        let h = Region::cylinder(PhasePoint::ORIGIN, r).unwrap();
        assert!(h.contains(PhasePoint::new(0.0, 0.0, -r * r / 2.0)));
        assert!(!h.contains(PhasePoint::ORIGIN));
        assert!(!h.contains(PhasePoint::new(0.0, 0.0, -r * r)));
        let s = Region::slab(PhasePoint::ORIGIN, r).unwrap();
        assert!(s.contains(PhasePoint::new(0.0, 0.0, -r * r)));
        assert!(s.contains(PhasePoint::new(0.0, 0.0, -r * r / 2.0)));
        assert!(!s.contains(PhasePoint::new(0.0, 0.0, -r * r / 4.0)));
        assert!(Region::cylinder(PhasePoint::ORIGIN, 0.0).is_err());
        assert!(Region::cone(PhasePoint::ORIGIN, 0.3, 1.0).is_err());
    }

    #[test]
    fn cone_membership_uses_depth() {
        let c = Region::cone(PhasePoint::ORIGIN, 0.4, 0.5).unwrap();
        // theta^2 r^2 = 0.04
        assert!(c.contains(PhasePoint::new(0.1, 0.0, -0.01)));
        assert!(c.contains(PhasePoint::new(0.1, 0.001, -0.01)));
        assert!(!c.contains(PhasePoint::new(0.11, 0.0, -0.01)));
        assert!(!c.contains(PhasePoint::new(0.0, 0.0, -0.05)));
        assert!(!c.contains(PhasePoint::ORIGIN));
    }

    #[test]
    fn translated_region_membership() {
        let z0 = PhasePoint::new(1.3, -0.2, 0.7);
        let h = Region::cylinder(z0, 0.3).unwrap();
        let zeta = PhasePoint::new(0.1, 0.001, -0.05);
        assert!(h.contains(lorentz_compose(z0, zeta)));
        assert!(h.contains_explicit(lorentz_compose(z0, zeta)));
        let outside = PhasePoint::new(0.1, 0.001, 0.05);
        assert!(!h.contains(lorentz_compose(z0, outside)));
    }
}
