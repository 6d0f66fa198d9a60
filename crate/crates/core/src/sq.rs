//! Superquadric primitives and their occupancy density.
//!
//! The inside-outside function of a superquadric with semi-axes `s` and shape
//! exponents `(eps1, eps2)` is
//!
//! ```text
//! f(x) = (|x/sx|^(2/eps2) + |y/sy|^(2/eps2))^(eps2/eps1) + |z/sz|^(2/eps1)
//! ```
//!
//! evaluated in the primitive's local frame. Occupancy density is `exp(-f)`.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion};

use crate::{Error, Quat, Result, Vec3};

/// Lower clamp for both shape exponents.
pub const EPS_MIN: f64 = 0.2;
/// Upper clamp for both shape exponents.
pub const EPS_MAX: f64 = 2.0;
/// Saturation value of the inside-outside function.
pub const F_CAP: f64 = 1e30;

/// One scene primitive.
///
/// `rot` maps local coordinates to world coordinates; [`SuperQuadric::to_local`]
/// applies its inverse.
#[derive(Debug, Clone)]
pub struct SuperQuadric {
    pub mu: Vec3,
    pub scale: Vec3,
    pub rot: Quat,
    pub opacity: f64,
    pub logits: Arc<[f64]>,
    pub eps1: f64,
    pub eps2: f64,
    clamped: bool,
}

// The clamp flag records provenance only; it does not take part in equality.
impl PartialEq for SuperQuadric {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu
            && self.scale == other.scale
            && self.rot == other.rot
            && self.opacity == other.opacity
            && self.logits == other.logits
            && self.eps1 == other.eps1
            && self.eps2 == other.eps2
    }
}

impl SuperQuadric {
    /// Validates and builds a primitive.
    ///
    /// `quat_wxyz` is normalized; shape exponents outside `[0.2, 2.0]` are
    /// clamped and the event is remembered (see [`Self::exponents_clamped`]).
    pub fn new(
        mu: Vec3,
        scale: Vec3,
        quat_wxyz: [f64; 4],
        opacity: f64,
        logits: impl Into<Arc<[f64]>>,
        eps1: f64,
        eps2: f64,
    ) -> Result<Self> {
        let logits = logits.into();
        let all_finite = mu.iter().chain(scale.iter()).chain(quat_wxyz.iter()).all(|v| v.is_finite())
            && opacity.is_finite()
            && eps1.is_finite()
            && eps2.is_finite()
            && logits.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidPrimitive("non-finite parameter".into()));
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidPrimitive(format!("scale must be positive, got {:?}", scale.as_slice())));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::InvalidPrimitive(format!("opacity {opacity} outside [0, 1]")));
        }
        if eps1 <= 0.0 || eps2 <= 0.0 {
            return Err(Error::InvalidPrimitive(format!("shape exponents must be positive, got ({eps1}, {eps2})")));
        }
        let [w, x, y, z] = quat_wxyz;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(Error::InvalidPrimitive("zero-length quaternion".into()));
        }
        let (e1, e2) = (eps1.clamp(EPS_MIN, EPS_MAX), eps2.clamp(EPS_MIN, EPS_MAX));
        Ok(Self {
            mu,
            scale,
            rot: if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
                // Already unit: keep the stored bits so files round-trip exactly.
                Quat::new_unchecked(q)
            } else {
                Quat::from_quaternion(q)
            },
            opacity,
            logits,
            eps1: e1,
            eps2: e2,
            clamped: e1 != eps1 || e2 != eps2,
        })
    }

    /// Axis-aligned unit-opacity sphere-like primitive, handy for tests and fixtures.
    pub fn axis_aligned(mu: Vec3, scale: Vec3, eps1: f64, eps2: f64, logits: &[f64]) -> Result<Self> {
        Self::new(mu, scale, [1.0, 0.0, 0.0, 0.0], 1.0, logits.to_vec(), eps1, eps2)
    }

    /// Whether construction had to clamp either shape exponent.
    pub fn exponents_clamped(&self) -> bool {
        self.clamped
    }

    pub fn num_classes(&self) -> usize {
        self.logits.len()
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rot.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// World-to-local rotation matrix (the inverse of `rot`).
    pub fn world_to_local(&self) -> Matrix3<f64> {
        self.rot.inverse().to_rotation_matrix().into_inner()
    }

    /// `R (x - mu)`.
    pub fn to_local(&self, x: &Vec3) -> Vec3 {
        self.rot.inverse_transform_vector(&(x - self.mu))
    }

    pub fn to_world(&self, x_local: &Vec3) -> Vec3 {
        self.rot.transform_vector(x_local) + self.mu
    }

    /// Inside-outside function for a point already in the local frame.
    pub fn inside_outside(&self, x_local: &Vec3) -> f64 {
        inside_outside(x_local, &self.scale, self.eps1, self.eps2)
    }

    /// Unweighted occupancy density `exp(-f)` at a world point.
    pub fn density(&self, x: &Vec3) -> f64 {
        (-self.inside_outside(&self.to_local(x))).exp()
    }

    /// One copy per `k` with `scale = k * s`.
    pub fn scaled_family(&self, ks: &[f64]) -> Result<Vec<SuperQuadric>> {
        validate_k_values(ks)?;
        Ok(ks.iter().map(|&k| SuperQuadric { scale: self.scale * k, ..self.clone() }).collect())
    }

    /// Largest semi-axis.
    pub fn max_scale(&self) -> f64 {
        self.scale.max()
    }
}

/// Inside-outside function with explicit shape parameters.
///
/// Absolute values are taken on every ratio so the function is even in each
/// coordinate. Results saturate at [`F_CAP`].
#[inline]
pub fn inside_outside(x_local: &Vec3, scale: &Vec3, eps1: f64, eps2: f64) -> f64 {
    inside_outside_unit(
        (x_local.x / scale.x).abs(),
        (x_local.y / scale.y).abs(),
        (x_local.z / scale.z).abs(),
        eps1,
        eps2,
    )
}

/// Inside-outside function of non-negative axis ratios `|x/sx|`, `|y/sy|`, `|z/sz|`.
#[inline]
pub(crate) fn inside_outside_unit(a: f64, b: f64, c: f64, eps1: f64, eps2: f64) -> f64 {
    let p2 = 2.0 / eps2;
    let xy = a.powf(p2) + b.powf(p2);
    let f = xy.powf(eps2 / eps1) + c.powf(2.0 / eps1);
    if f < F_CAP {
        f
    } else {
        F_CAP
    }
}

/// Inside-outside value past which `exp(-f)` underflows to exactly 0.
pub(crate) const UNDERFLOW_F: f64 = 746.0;

/// Largest axis ratio `max(|x/sx|, |y/sy|, |z/sz|)` at which `f` can still be
/// at most `f_max`. Since `f >= max ratio^(2/eps1)`, points past it have `f > f_max`.
#[inline]
pub(crate) fn ratio_bound(f_max: f64, eps1: f64) -> f64 {
    f_max.powf(eps1 / 2.0)
}

pub(crate) fn validate_k_values(ks: &[f64]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::InvalidConfig("scale list K is empty".into()));
    }
    if ks.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale list K must be positive: {ks:?}")));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!("scale list K must be strictly increasing: {ks:?}")));
    }
    Ok(())
}

/// Class labels of a scene plus the reserved "free" label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    free_index: u16,
}

impl ClassTable {
    /// Builds a table with the default free label (255, or `C` when `C >= 255`).
    pub fn new(names: Vec<String>) -> Result<Self> {
        let free = if names.len() < 255 { 255 } else { names.len() as u16 };
        Self::with_free_index(names, free)
    }

    pub fn with_free_index(names: Vec<String>, free_index: u16) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidClasses("at least one class required".into()));
        }
        if names.len() >= u16::MAX as usize {
            return Err(Error::InvalidClasses("too many classes".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidClasses(format!("duplicate class name {dup:?}")));
        }
        if (free_index as usize) < names.len() {
            return Err(Error::InvalidClasses(format!(
                "free index {free_index} collides with class ids 0..{}",
                names.len()
            )));
        }
        Ok(Self { names, free_index })
    }

    /// `C` classes named `class_0 .. class_{C-1}`.
    pub fn anonymous(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| format!("class_{i}")).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn free_index(&self) -> u16 {
        self.free_index
    }
}

/// A set of primitives sharing one class table.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<SuperQuadric>,
    pub classes: ClassTable,
}

impl Scene {
    pub fn new(primitives: Vec<SuperQuadric>, classes: ClassTable) -> Result<Self> {
        let c = classes.len();
        if let Some((i, p)) = primitives.iter().enumerate().find(|(_, p)| p.num_classes() != c) {
            return Err(Error::InvalidPrimitive(format!(
                "primitive {i} has {} logits, class table has {c}",
                p.num_classes()
            )));
        }
        Ok(Self { primitives, classes })
    }

    pub fn empty(classes: ClassTable) -> Self {
        Self { primitives: Vec::new(), classes }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn sphere() -> SuperQuadric {
        SuperQuadric::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 1.0, 1.0, &[0.0]).unwrap()
    }

    fn fig3_shape() -> SuperQuadric {
        SuperQuadric::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 0.7, 0.5), 0.6, 0.7, &[0.0]).unwrap()
    }

    #[test]
    fn to_local_identity_at_center() {
        let sq = SuperQuadric::axis_aligned(Vec3::new(1.0, 2.0, 3.0), Vec3::repeat(1.0), 1.0, 1.0, &[0.0]).unwrap();
        assert_eq!(sq.to_local(&Vec3::new(1.0, 2.0, 3.0)), Vec3::zeros());
    }

    #[test]
    fn to_local_uses_inverse_rotation() {
        // 90 degrees about z, local-to-world.
        let q = [FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin()];
        let sq = SuperQuadric::new(Vec3::zeros(), Vec3::repeat(1.0), q, 1.0, vec![0.0], 1.0, 1.0).unwrap();
        let local = sq.to_local(&Vec3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(local, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn inside_outside_reference_values() {
        let s = sphere();
        assert_eq!(s.inside_outside(&Vec3::new(1.0, 0.0, 0.0)), 1.0);
        assert_eq!(s.inside_outside(&Vec3::zeros()), 0.0);
        assert_relative_eq!(s.inside_outside(&Vec3::new(2.0, 0.0, 0.0)), 4.0, max_relative = 1e-15);
        assert_relative_eq!(fig3_shape().inside_outside(&Vec3::new(1.0, 0.0, 0.0)), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn density_reference_values() {
        let s = sphere();
        assert_eq!(s.density(&s.mu), 1.0);
        assert_relative_eq!(s.density(&Vec3::new(0.0, 1.0, 0.0)), (-1.0f64).exp(), max_relative = 1e-15);
        // Far outside the Fig. 3 shape: exp(-2.5^(2/0.6)), evaluated directly.
        let expected = (-(2.5f64).powf(2.0 / 0.6)).exp();
        assert_relative_eq!(fig3_shape().density(&Vec3::new(2.5, 0.0, 0.0)), expected, max_relative = 1e-12);
        assert!(expected < 1e-4);
    }

    #[test]
    fn overflow_saturates() {
        let sq = SuperQuadric::axis_aligned(Vec3::zeros(), Vec3::repeat(1e-3), 0.2, 0.2, &[0.0]).unwrap();
        let f = sq.inside_outside(&Vec3::new(1e8, 1e8, 1e8));
        assert_eq!(f, F_CAP);
        assert_eq!(sq.density(&Vec3::new(1e8, 1e8, 1e8)), 0.0);
    }

    #[test]
    fn construction_validates() {
        let ok = |s: Vec3, o: f64, q: [f64; 4]| SuperQuadric::new(Vec3::zeros(), s, q, o, vec![0.0], 1.0, 1.0);
        assert!(ok(Vec3::new(1.0, 0.0, 1.0), 1.0, [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(ok(Vec3::repeat(1.0), 1.5, [1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(ok(Vec3::repeat(1.0), 1.0, [0.0; 4]).is_err());
        assert!(ok(Vec3::repeat(f64::NAN), 1.0, [1.0, 0.0, 0.0, 0.0]).is_err());
        let sq = ok(Vec3::repeat(1.0), 1.0, [2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(sq.rot.quaternion().norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exponents_are_clamped_and_recorded() {
        let sq = SuperQuadric::axis_aligned(Vec3::zeros(), Vec3::repeat(1.0), 0.05, 3.0, &[0.0]).unwrap();
        assert_eq!((sq.eps1, sq.eps2), (EPS_MIN, EPS_MAX));
        assert!(sq.exponents_clamped());
        assert!(!sphere().exponents_clamped());
    }

    #[test]
    fn scaled_family_members() {
        let k = [0.5, 0.6, 0.75, 0.9, 1.05, 1.2, 1.6, 2.0, 2.5];
        let fam = sphere().scaled_family(&k).unwrap();
        assert_eq!(fam.len(), 9);
        let single = sphere().scaled_family(&[1.0]).unwrap();
        assert_eq!(single[0], sphere());

        let doubled = &sphere().scaled_family(&[2.0]).unwrap()[0];
        let surface = Vec3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(doubled.inside_outside(&surface), 1.0);
        assert_relative_eq!(sphere().inside_outside(&surface), 4.0);

        assert!(sphere().scaled_family(&[1.0, 1.0]).is_err());
        assert!(sphere().scaled_family(&[0.0, 1.0]).is_err());
        assert!(sphere().scaled_family(&[]).is_err());
    }

    #[test]
    fn class_table_rules() {
        assert!(ClassTable::new(vec![]).is_err());
        assert!(ClassTable::new(vec!["a".into(), "a".into()]).is_err());
        assert!(ClassTable::with_free_index(vec!["a".into(), "b".into()], 1).is_err());
        let t = ClassTable::anonymous(17).unwrap();
        assert_eq!(t.free_index(), 255);
        assert_eq!(t.len(), 17);
    }

    #[test]
    fn scene_rejects_logit_mismatch() {
        let classes = ClassTable::anonymous(2).unwrap();
        assert!(Scene::new(vec![sphere()], classes).is_err());
    }

    fn shape() -> impl Strategy<Value = SuperQuadric> {
        (
            prop::array::uniform3(0.1f64..5.0),
            EPS_MIN..=EPS_MAX,
            EPS_MIN..=EPS_MAX,
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_filter("non-degenerate quaternion", |(_, _, _, q, _)| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
            .prop_map(|(s, e1, e2, q, m)| {
                SuperQuadric::new(Vec3::from(m), Vec3::from(s), q, 1.0, vec![0.0], e1, e2).unwrap()
            })
    }

    proptest! {
        #[test]
        fn homogeneity(sq in shape(), x in prop::array::uniform3(-3.0f64..3.0), k in 0.1f64..4.0) {
            let x = Vec3::from(x);
            prop_assume!(x.norm() > 1e-3);
            let f = sq.inside_outside(&x);
            let fk = sq.inside_outside(&(x * k));
            let expected = k.powf(2.0 / sq.eps1) * f;
            prop_assert!((fk - expected).abs() <= 1e-9 * expected.abs().max(1e-300));
        }

        #[test]
        fn octant_symmetry(sq in shape(), x in prop::array::uniform3(-3.0f64..3.0), signs in prop::array::uniform3(prop::bool::ANY)) {
            let x = Vec3::from(x);
            let flipped = Vec3::new(
                if signs[0] { -x.x } else { x.x },
                if signs[1] { -x.y } else { x.y },
                if signs[2] { -x.z } else { x.z },
            );
            prop_assert_eq!(sq.inside_outside(&x), sq.inside_outside(&flipped));
        }

        #[test]
        fn round_trip_local_world(sq in shape(), x in prop::array::uniform3(-20.0f64..20.0)) {
            let x = Vec3::from(x);
            let back = sq.to_world(&sq.to_local(&x));
            prop_assert!((back - x).norm() <= 1e-12 * (1.0 + x.norm()));
        }

        #[test]
        fn density_in_unit_interval(sq in shape(), x in prop::array::uniform3(-20.0f64..20.0)) {
            let d = sq.density(&Vec3::from(x));
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
