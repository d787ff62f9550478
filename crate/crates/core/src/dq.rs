//! Quaternion and dual quaternion algebra.
//!
//! Quaternions are stored scalar-first (`w + x î + y ĵ + z k̂`). Rigid poses
//! are unit dual quaternions `x = r + ε ½ t r`, with `r` a unit quaternion and
//! `t` a pure quaternion holding the translation.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vector8 = SVector<f64, 8>;
pub type Matrix8 = SMatrix<f64, 8, 8>;

/// Tolerance used to decide whether a quaternion is unit or pure.
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DqError {
    #[error("not a pure quaternion (w = {0:e})")]
    NotPure(f64),
    #[error("not a unit quaternion (norm = {0})")]
    NotUnit(f64),
    #[error("not a unit dual quaternion (|primary| = {norm}, <primary, dual> = {dot:e})")]
    NotUnitDual { norm: f64, dot: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::ZERO
    }
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn real(w: f64) -> Self {
        Self::new(w, 0.0, 0.0, 0.0)
    }

    pub const fn pure(x: f64, y: f64, z: f64) -> Self {
        Self::new(0.0, x, y, z)
    }

    pub fn from_vec3(v: &Vector3<f64>) -> Self {
        Self::pure(v[0], v[1], v[2])
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        let (s, c) = (0.5 * angle).sin_cos();
        if n == 0.0 {
            return Self::real(c);
        }
        let a = axis / n;
        Self::new(c, s * a[0], s * a[1], s * a[2])
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            *self
        } else {
            *self * (1.0 / n)
        }
    }

    /// Euclidean inner product of the coefficient vectors.
    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Real part, `Re(h)`.
    pub fn re(&self) -> Self {
        Self::real(self.w)
    }

    /// Imaginary part, `Im(h)`.
    pub fn im(&self) -> Self {
        Self::pure(self.x, self.y, self.z)
    }

    pub fn is_pure(&self) -> bool {
        self.w == 0.0
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    /// Cross product of the imaginary parts, returned as a pure quaternion.
    pub fn cross(&self, other: &Self) -> Self {
        Self::from_vec3(&self.im_vector().cross(&other.im_vector()))
    }

    /// Imaginary part as a 3-vector regardless of the real part.
    pub fn im_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn vec4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vec3(&self) -> Result<Vector3<f64>, DqError> {
        if !self.is_pure() {
            return Err(DqError::NotPure(self.w));
        }
        Ok(self.im_vector())
    }

    /// Rotate the pure quaternion `v` by this unit quaternion: `r v r*`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        (*self * Self::from_vec3(v) * self.conj()).im_vector()
    }

    /// `H₄⁺(h)`, so that `vec4(h a) = H₄⁺(h) vec4(a)`.
    pub fn hamilton_plus(&self) -> Matrix4<f64> {
        let (a, b, c, d) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            a, -b, -c, -d, //
            b, a, -d, c, //
            c, d, a, -b, //
            d, -c, b, a,
        )
    }

    /// `H₄⁻(h)`, so that `vec4(a h) = H₄⁻(h) vec4(a)`.
    pub fn hamilton_minus(&self) -> Matrix4<f64> {
        let (a, b, c, d) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            a, -b, -c, -d, //
            b, a, d, -c, //
            c, -d, a, b, //
            d, c, -b, a,
        )
    }
}

/// Skew-symmetric matrix with `skew(a) b = a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -a[2], a[1], //
        a[2], 0.0, -a[0], //
        -a[1], a[0], 0.0,
    )
}

/// `C₄ = diag(1, -1, -1, -1)`: `vec4(h*) = C₄ vec4(h)`.
pub fn conj_matrix4() -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0))
}

impl Add for Quaternion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Quaternion {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for Quaternion {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Quaternion {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Quaternion {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Quaternion> for f64 {
    type Output = Quaternion;
    fn mul(self, q: Quaternion) -> Quaternion {
        q * self
    }
}

/// Hamilton product.
impl Mul for Quaternion {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// `primary + ε dual`, with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuaternion {
    pub primary: Quaternion,
    pub dual: Quaternion,
}

impl Default for DualQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl DualQuaternion {
    pub const IDENTITY: DualQuaternion = DualQuaternion::new(Quaternion::ONE, Quaternion::ZERO);
    pub const ZERO: DualQuaternion = DualQuaternion::new(Quaternion::ZERO, Quaternion::ZERO);

    pub const fn new(primary: Quaternion, dual: Quaternion) -> Self {
        Self { primary, dual }
    }

    /// Pose `r + ε ½ t r`.
    pub fn from_rt(r: Quaternion, t: &Vector3<f64>) -> Self {
        Self::new(r, Quaternion::from_vec3(t) * r * 0.5)
    }

    pub fn from_translation(t: &Vector3<f64>) -> Self {
        Self::from_rt(Quaternion::ONE, t)
    }

    pub fn from_rotation(r: Quaternion) -> Self {
        Self::new(r, Quaternion::ZERO)
    }

    pub fn from_vec8(v: &Vector8) -> Self {
        Self::new(Quaternion::new(v[0], v[1], v[2], v[3]), Quaternion::new(v[4], v[5], v[6], v[7]))
    }

    pub fn vec8(&self) -> Vector8 {
        let (p, d) = (self.primary, self.dual);
        Vector8::from([p.w, p.x, p.y, p.z, d.w, d.x, d.y, d.z])
    }

    pub fn conj(&self) -> Self {
        Self::new(self.primary.conj(), self.dual.conj())
    }

    /// Unit-check: `‖𝒫(x)‖ = 1` and `⟨𝒫(x), 𝒟(x)⟩ = 0`.
    pub fn check_unit(&self) -> Result<(), DqError> {
        let norm = self.primary.norm();
        let dot = self.primary.dot(&self.dual);
        if (norm - 1.0).abs() > UNIT_TOL || dot.abs() > UNIT_TOL {
            return Err(DqError::NotUnitDual { norm, dot });
        }
        Ok(())
    }

    pub fn is_unit(&self) -> bool {
        self.check_unit().is_ok()
    }

    /// Project back onto the unit dual quaternions: unit primary part, dual part
    /// orthogonal to it.
    pub fn renormalize(&self) -> Self {
        let n = self.primary.norm();
        let p = self.primary * (1.0 / n);
        let d = self.dual * (1.0 / n);
        Self::new(p, d - p * p.dot(&d))
    }

    pub fn rotation(&self) -> Quaternion {
        self.primary
    }

    /// `t = 2 𝒟(x) 𝒫(x)*` without unit checks.
    pub fn translation(&self) -> Vector3<f64> {
        (self.dual * self.primary.conj() * 2.0).im_vector()
    }

    pub fn to_rt(&self) -> Result<(Quaternion, Vector3<f64>), DqError> {
        self.check_unit()?;
        Ok((self.primary, self.translation()))
    }

    /// Transform a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.primary.rotate(p) + self.translation()
    }

    /// Inverse of a unit dual quaternion (equal to its conjugate).
    pub fn inverse(&self) -> Self {
        self.conj()
    }

    /// `H₈⁺(x)`, so that `vec8(x a) = H₈⁺(x) vec8(a)`.
    pub fn hamilton_plus(&self) -> Matrix8 {
        let p = self.primary.hamilton_plus();
        let d = self.dual.hamilton_plus();
        let mut m = Matrix8::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&p);
        m.fixed_view_mut::<4, 4>(4, 0).copy_from(&d);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&p);
        m
    }

    /// `H₈⁻(x)`, so that `vec8(a x) = H₈⁻(x) vec8(a)`.
    pub fn hamilton_minus(&self) -> Matrix8 {
        let p = self.primary.hamilton_minus();
        let d = self.dual.hamilton_minus();
        let mut m = Matrix8::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&p);
        m.fixed_view_mut::<4, 4>(4, 0).copy_from(&d);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&p);
        m
    }
}

impl Add for DualQuaternion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.primary + o.primary, self.dual + o.dual)
    }
}

impl Sub for DualQuaternion {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.primary - o.primary, self.dual - o.dual)
    }
}

impl Neg for DualQuaternion {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.primary, -self.dual)
    }
}

impl Mul<f64> for DualQuaternion {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.primary * s, self.dual * s)
    }
}

impl Mul for DualQuaternion {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.primary * o.primary, self.primary * o.dual + self.dual * o.primary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_quat(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        )
    }

    fn random_unit(rng: &mut impl Rng) -> Quaternion {
        random_quat(rng).normalize()
    }

    fn random_vec3(rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn basis_relations() {
        let (i, j, k) = (Quaternion::I, Quaternion::J, Quaternion::K);
        assert_eq!(i * j, k);
        assert_eq!(i * i, Quaternion::real(-1.0));
        assert_eq!(j * j, Quaternion::real(-1.0));
        assert_eq!(k * k, Quaternion::real(-1.0));
        assert_eq!(i * j * k, Quaternion::real(-1.0));
    }

    #[test]
    fn product_examples() {
        let h = Quaternion::new(0.3, -1.2, 2.0, 0.7);
        assert_eq!(Quaternion::ONE * h, h);
        // (1+i)(1+j) = 1 + i + j + ij = 1 + i + j + k
        let p = (Quaternion::ONE + Quaternion::I) * (Quaternion::ONE + Quaternion::J);
        assert_eq!(p, Quaternion::new(1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn conjugate_examples() {
        let h = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(h.conj(), Quaternion::new(1.0, -2.0, -3.0, -4.0));
        assert_eq!(Quaternion::ONE.conj(), Quaternion::ONE);
        assert_eq!(Quaternion::I.conj() * Quaternion::I, Quaternion::ONE);
        let hh = h * h.conj();
        assert_relative_eq!(hh.w, h.norm_squared(), epsilon = 1e-12);
        assert_eq!(hh.im(), Quaternion::ZERO);
    }

    #[test]
    fn vector_maps() {
        let h = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(h.vec4(), Vector4::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(Quaternion::ZERO.vec3().unwrap(), Vector3::zeros());
        assert!(matches!(h.vec3(), Err(DqError::NotPure(_))));
        let x = DualQuaternion::new(Quaternion::ONE, Quaternion::I);
        assert_eq!(x.vec8(), Vector8::from([1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(DualQuaternion::from_vec8(&x.vec8()), x);
    }

    #[test]
    fn hamilton_operator_examples() {
        assert_eq!(Quaternion::ONE.hamilton_plus(), Matrix4::identity());
        assert_eq!(Quaternion::ONE.hamilton_minus(), Matrix4::identity());
        let ij = Quaternion::I.hamilton_plus() * Quaternion::J.vec4();
        assert_eq!(ij, Vector4::new(0.0, 0.0, 0.0, 1.0));
        assert_eq!(ij, (Quaternion::I * Quaternion::J).vec4());
        assert_eq!(DualQuaternion::IDENTITY.hamilton_plus(), Matrix8::identity());
        assert_eq!(DualQuaternion::IDENTITY.hamilton_minus(), Matrix8::identity());
    }

    #[test]
    fn random_product_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_quat(&mut rng);
            let b = random_quat(&mut rng);
            let ab = a * b;
            assert!((ab.norm() - a.norm() * b.norm()).abs() < 1e-12);
            let lhs = ab.conj();
            let rhs = b.conj() * a.conj();
            assert!((lhs - rhs).norm() < 1e-12);
            let via_plus = a.hamilton_plus() * b.vec4();
            let via_minus = b.hamilton_minus() * a.vec4();
            assert!((via_plus - ab.vec4()).amax() < 1e-12);
            assert!((via_minus - ab.vec4()).amax() < 1e-12);

            let x = DualQuaternion::new(a, random_quat(&mut rng));
            let y = DualQuaternion::new(b, random_quat(&mut rng));
            let xy = (x * y).vec8();
            assert!((x.hamilton_plus() * y.vec8() - xy).amax() < 1e-12);
            assert!((y.hamilton_minus() * x.vec8() - xy).amax() < 1e-12);
        }
    }

    #[test]
    fn pose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(DualQuaternion::from_rt(Quaternion::ONE, &Vector3::zeros()), DualQuaternion::IDENTITY);
        for _ in 0..100 {
            let r = random_unit(&mut rng);
            let t = random_vec3(&mut rng);
            let x = DualQuaternion::from_rt(r, &t);
            x.check_unit().unwrap();
            let (r2, t2) = x.to_rt().unwrap();
            assert!((r2 - r).norm() < 1e-12);
            assert!((t2 - t).amax() < 1e-12);
            assert_eq!(x * DualQuaternion::IDENTITY, x);
        }
    }

    #[test]
    fn to_rt_rejects_non_unit() {
        let x = DualQuaternion::new(Quaternion::new(2.0, 0.0, 0.0, 0.0), Quaternion::ZERO);
        assert!(matches!(x.to_rt(), Err(DqError::NotUnitDual { .. })));
        let y = DualQuaternion::new(Quaternion::ONE, Quaternion::real(0.1));
        assert!(y.to_rt().is_err());
    }

    #[test]
    fn chained_products_stay_unit_after_renormalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = DualQuaternion::IDENTITY;
        for _ in 0..10_000 {
            let step = DualQuaternion::from_rt(random_unit(&mut rng), &random_vec3(&mut rng));
            x = (x * step).renormalize();
            x.check_unit().unwrap();
        }
    }

    #[test]
    fn axis_angle_and_rotate() {
        let r = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let v = r.rotate(&Vector3::x());
        assert!((v - Vector3::y()).amax() < 1e-15);
        let x = DualQuaternion::from_rt(r, &Vector3::new(1.0, 0.0, 0.0));
        let p = x.transform_point(&Vector3::x());
        assert!((p - Vector3::new(1.0, 1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn skew_matches_cross() {
        let a = Vector3::new(0.2, -1.0, 3.0);
        let b = Vector3::new(-0.5, 0.7, 0.1);
        assert!((skew(&a) * b - a.cross(&b)).amax() < 1e-15);
        let qa = Quaternion::from_vec3(&a);
        let qb = Quaternion::from_vec3(&b);
        assert!((qa.cross(&qb).im_vector() - a.cross(&b)).amax() < 1e-15);
        assert_eq!(conj_matrix4() * qa.vec4(), qa.conj().vec4());
    }
}
