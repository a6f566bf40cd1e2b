//! Rotations, projections onto SO(3) and the geodesic metric.
//!
//! Column `k` of a [`Rotation3`] is the image of the k-th basis vector, so the three
//! columns are themselves the direction vectors a directional pose head predicts.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere_grid::UnitVec3;

const ORTHO_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-9;
/// Half rotations are refused at or above this angle.
pub const HALF_ROTATION_LIMIT: f64 = PI - 1e-6;

/// A 3x3 orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Validates orthonormality and orientation to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if !(err <= ORTHO_TOL && (det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::usage(format!(
                "not a rotation: |M^T M - I|max = {err:e}, det = {det}"
            )));
        }
        Ok(Rotation3(m))
    }

    pub fn from_columns(x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> Result<Self> {
        Self::from_matrix(Matrix3::from_columns(&[*x, *y, *z]))
    }

    pub fn from_row_major(rows: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(rows))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Rotation by `angle` radians about `axis` (right-hand rule).
    pub fn from_axis_angle(axis: &UnitVec3, angle: f64) -> Self {
        let k = axis.into_inner();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        let (s, c) = angle.sin_cos();
        Rotation3(Matrix3::identity() + kx * s + kx * kx * (1.0 - c))
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::x_axis(), angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::y_axis(), angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::z_axis(), angle)
    }

    /// Unit quaternion `[w, x, y, z]`.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let v = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if v.norm() < 1e-12 {
            return Err(Error::usage("zero quaternion"));
        }
        let uq = UnitQuaternion::from_quaternion(v);
        Ok(Rotation3(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let uq = UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(self.0),
        );
        let q = uq.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Axis and angle in `[0, pi]`. The axis is arbitrary for the identity.
    pub fn to_axis_angle(&self) -> (UnitVec3, f64) {
        let [w, x, y, z] = self.to_quaternion();
        let v = Vector3::new(x, y, z);
        let s = v.norm();
        if s < 1e-300 {
            return (UnitVec3::z_axis(), 0.0);
        }
        (UnitVec3::new_unchecked(v / s), 2.0 * s.atan2(w))
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        geodesic_distance(&Rotation3::identity(), self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn column(&self, k: usize) -> UnitVec3 {
        UnitVec3::new_unchecked(self.0.column(k).into_owned())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl Mul<&Rotation3> for &Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: &Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

impl TryFrom<[f64; 9]> for Rotation3 {
    type Error = Error;

    fn try_from(a: [f64; 9]) -> Result<Self> {
        Rotation3::from_row_major(&a)
    }
}

impl From<Rotation3> for [f64; 9] {
    fn from(r: Rotation3) -> [f64; 9] {
        r.to_row_major()
    }
}

/// Three unit directions that are not necessarily orthogonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionTriple {
    pub vx: UnitVec3,
    pub vy: UnitVec3,
    pub vz: UnitVec3,
}

impl DirectionTriple {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[*self.vx, *self.vy, *self.vz])
    }
}

/// Closest rotation to `m` in Frobenius norm: `U diag(1, 1, det(U V^T)) V^T`.
pub fn procrustes_project(m: &Matrix3<f64>) -> Result<Rotation3> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("matrix has non-finite entries"));
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let sv = svd.singular_values;
    let (k_min, sigma_min) = sv
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("three singular values");
    if sigma_min <= RANK_TOL * sv.max().max(1.0) {
        return Err(Error::SingularInput { sigma_min });
    }
    let mut d = Vector3::repeat(1.0);
    d[k_min] = (u * v_t).determinant().signum();
    Ok(Rotation3(u * Matrix3::from_diagonal(&d) * v_t))
}

/// Rotation whose first column is `vx` and whose second column is the part of `vy`
/// orthogonal to it.
pub fn gram_schmidt_project(vx: &Vector3<f64>, vy: &Vector3<f64>) -> Result<Rotation3> {
    let (nx, ny) = (vx.norm(), vy.norm());
    if nx < 1e-12 || ny < 1e-12 {
        return Err(Error::DegenerateFrame);
    }
    let c1 = vx / nx;
    let cos = c1.dot(vy) / ny;
    if cos.abs() >= 1.0 - PARALLEL_TOL {
        return Err(Error::DegenerateFrame);
    }
    let c2 = (vy - c1 * c1.dot(vy)).normalize();
    let c3 = c1.cross(&c2);
    Ok(Rotation3(Matrix3::from_columns(&[c1, c2, c3])))
}

/// Angle of `R1^T R2` in `[0, pi]`.
///
/// Evaluated as `atan2(sin, cos)` from the skew and trace parts, which equals
/// `arccos((tr - 1) / 2)` but keeps full precision near 0 and pi.
pub fn geodesic_distance(r1: &Rotation3, r2: &Rotation3) -> f64 {
    let d = r1.0.transpose() * r2.0;
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(
            d[(2, 1)] - d[(1, 2)],
            d[(0, 2)] - d[(2, 0)],
            d[(1, 0)] - d[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

/// The rotation with the same axis and half the angle, so that `r * r = R`.
pub fn half_rotation(r: &Rotation3) -> Result<Rotation3> {
    let (axis, angle) = r.to_axis_angle();
    if angle >= HALF_ROTATION_LIMIT {
        return Err(Error::AmbiguousHalfRotation { angle_rad: angle });
    }
    Ok(Rotation3::from_axis_angle(&axis, 0.5 * angle))
}

/// Area-uniform sample from the spherical cap of half-angle `half_angle` about `center`.
pub fn sample_cap<R: Rng + ?Sized>(center: &UnitVec3, half_angle: f64, rng: &mut R) -> UnitVec3 {
    let c = center.into_inner();
    let cos_max = half_angle.cos();
    let cos_a = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
    let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
    let beta = 2.0 * PI * rng.random::<f64>();
    let (e1, e2) = orthonormal_complement(&c);
    let d = c * cos_a + (e1 * beta.cos() + e2 * beta.sin()) * sin_a;
    UnitVec3::new_unchecked(d.normalize())
}

/// Two unit vectors completing `n` to a right-handed orthonormal basis.
pub(crate) fn orthonormal_complement(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Uniform rotation: a normalized 4D standard normal read as a quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(r) = Rotation3::from_quaternion(q) {
            return r;
        }
    }
}

/// Replaces each column of `r` by a random unit vector within `max_angle` of it and
/// projects the result back onto SO(3).
pub fn perturb_rotation<R: Rng + ?Sized>(
    r: &Rotation3,
    max_angle: f64,
    rng: &mut R,
) -> Result<Rotation3> {
    if !(0.0..PI / 2.0).contains(&max_angle) {
        return Err(Error::usage(format!(
            "perturbation angle must be in [0, pi/2), got {max_angle}"
        )));
    }
    if max_angle == 0.0 {
        return Ok(*r);
    }
    let cols: Vec<Vector3<f64>> = (0..3)
        .map(|k| sample_cap(&r.column(k), max_angle, rng).into_inner())
        .collect();
    procrustes_project(&Matrix3::from_columns(&cols))
}

/// Camera-to-world orientation of a camera looking along `look` with image-up toward
/// `up`.
///
/// Camera axes: +X right, +Y up, optical axis along -Z. The returned columns are those
/// axes in world coordinates.
pub fn from_lookat(look: &UnitVec3, up: &Vector3<f64>) -> Result<Rotation3> {
    let right = look.cross(up);
    if right.norm() < PARALLEL_TOL * up.norm().max(1e-300) || up.norm() < 1e-12 {
        return Err(Error::DegenerateFrame);
    }
    let right = right.normalize();
    let back = -look.into_inner();
    let cam_up = back.cross(&right);
    Ok(Rotation3(Matrix3::from_columns(&[right, cam_up, back])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_rot_eq(a: &Rotation3, b: &Rotation3, tol: f64) {
        let d = (a.matrix() - b.matrix()).amax();
        assert!(d <= tol, "rotations differ by {d:e}\n{a:?}\n{b:?}");
    }

    fn assert_valid(r: &Rotation3) {
        Rotation3::from_matrix(*r.matrix()).expect("valid rotation");
    }

    #[test]
    fn procrustes_examples() {
        assert_rot_eq(
            &procrustes_project(&Matrix3::identity()).unwrap(),
            &Rotation3::identity(),
            1e-15,
        );
        let d = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 4.0));
        assert_rot_eq(&procrustes_project(&d).unwrap(), &Rotation3::identity(), 1e-12);
    }

    #[test]
    fn procrustes_fixes_reflections() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, -3.0));
        let r = procrustes_project(&m).unwrap();
        assert_valid(&r);
        // The sign flip lands on the weakest direction.
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0));
        assert_abs_diff_eq!((r.matrix() - expected).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn procrustes_rejects_rank_deficient() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 0.0);
        assert!(matches!(procrustes_project(&m), Err(Error::SingularInput { .. })));
    }

    #[test]
    fn procrustes_beats_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let truth = random_rotation(&mut rng);
            let noise = Matrix3::from_fn(|_, _| rng.random_range(-0.05..0.05));
            let m = truth.matrix() + noise;
            let r = procrustes_project(&m).unwrap();
            let best = (r.matrix() - m).norm();
            for _ in 0..2000 {
                let q = random_rotation(&mut rng);
                assert!(best <= (q.matrix() - m).norm());
            }
        }
    }

    #[test]
    fn gram_schmidt_examples() {
        let r = gram_schmidt_project(&Vector3::x(), &Vector3::y()).unwrap();
        assert_rot_eq(&r, &Rotation3::identity(), 0.0);

        let r = gram_schmidt_project(&Vector3::y(), &Vector3::x()).unwrap();
        let expected = Matrix3::from_columns(&[Vector3::y(), Vector3::x(), -Vector3::z()]);
        assert_abs_diff_eq!((r.matrix() - expected).amax(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-15);

        let s = 0.5f64.sqrt();
        let r = gram_schmidt_project(&Vector3::x(), &Vector3::new(s, s, 0.0)).unwrap();
        assert_rot_eq(&r, &Rotation3::identity(), 1e-15);

        assert!(matches!(
            gram_schmidt_project(&Vector3::x(), &Vector3::new(2.0, 0.0, 0.0)),
            Err(Error::DegenerateFrame)
        ));
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rotation(&mut rng);
        assert_eq!(geodesic_distance(&r, &r), 0.0);

        let axis = UnitVec3::new(1.0, -2.0, 0.5).unwrap();
        let r30 = Rotation3::from_axis_angle(&axis, PI / 6.0);
        assert_abs_diff_eq!(geodesic_distance(&Rotation3::identity(), &r30), PI / 6.0, epsilon = 1e-14);

        let a = Rotation3::from_axis_angle(&axis, 170f64.to_radians());
        let b = Rotation3::from_axis_angle(&axis, -170f64.to_radians());
        assert_abs_diff_eq!(geodesic_distance(&a, &b), 20f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn geodesic_agrees_with_arccos_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let tr = (a.matrix().transpose() * b.matrix()).trace();
            let acos = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert_abs_diff_eq!(geodesic_distance(&a, &b), acos, epsilon = 1e-7);
        }
    }

    #[test]
    fn half_rotation_examples() {
        assert_rot_eq(&half_rotation(&Rotation3::identity()).unwrap(), &Rotation3::identity(), 0.0);
        let h = half_rotation(&Rotation3::about_z(40f64.to_radians())).unwrap();
        assert_rot_eq(&h, &Rotation3::about_z(20f64.to_radians()), 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let axis = UnitVec3::new(rng.random(), rng.random(), rng.random()).unwrap();
        let r = Rotation3::from_axis_angle(&axis, 150f64.to_radians());
        let h = half_rotation(&r).unwrap();
        assert!((h * h).matrix().metric_distance(r.matrix()) < 1e-9);

        assert!(matches!(
            half_rotation(&Rotation3::about_x(PI)),
            Err(Error::AmbiguousHalfRotation { .. })
        ));
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let r = random_rotation(&mut rng);
            let back = Rotation3::from_quaternion(r.to_quaternion()).unwrap();
            assert_rot_eq(&r, &back, 1e-12);
        }
    }

    #[test]
    fn perturbation_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = random_rotation(&mut rng);
        assert_eq!(perturb_rotation(&r, 0.0, &mut rng).unwrap(), r);
        let max = 15f64.to_radians();
        let p = perturb_rotation(&r, max, &mut rng).unwrap();
        assert_valid(&p);
        assert!(perturb_rotation(&r, PI / 2.0, &mut rng).is_err());

        let a = perturb_rotation(&r, max, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = perturb_rotation(&r, max, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cap_samples_stay_in_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = UnitVec3::new(0.2, 0.9, -0.1).unwrap();
        let half = 30f64.to_radians();
        for _ in 0..2000 {
            assert!(sample_cap(&c, half, &mut rng).angle_to(&c) <= half + 1e-12);
        }
    }

    #[test]
    fn lookat_examples() {
        let r = from_lookat(&UnitVec3::new(0.0, 0.0, -1.0).unwrap(), &Vector3::y()).unwrap();
        assert_rot_eq(&r, &Rotation3::identity(), 0.0);

        let r = from_lookat(&UnitVec3::x_axis(), &Vector3::y()).unwrap();
        assert_valid(&r);
        assert_abs_diff_eq!(r.angle(), PI / 2.0, epsilon = 1e-14);
        // Pure yaw about the up axis, optical axis on +X.
        assert_abs_diff_eq!(r.column(1).into_inner(), Vector3::y(), epsilon = 1e-15);
        assert_abs_diff_eq!(-r.column(2).into_inner(), Vector3::x(), epsilon = 1e-15);

        let tilt = 1f64.to_radians();
        let look = UnitVec3::new(tilt.sin(), tilt.cos(), 0.0).unwrap();
        let r = from_lookat(&look, &Vector3::y()).unwrap();
        assert_valid(&r);
        assert!(from_lookat(&UnitVec3::y_axis(), &Vector3::y()).is_err());
    }

    #[test]
    fn rotation_serializes_row_major() {
        let r = Rotation3::about_z(0.3);
        let json = serde_json::to_string(&r).unwrap();
        let rows: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(rows[1], r.matrix()[(0, 1)]);
        let back: Rotation3 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(serde_json::from_str::<Rotation3>("[1,0,0,0,1,0,0,0,2]").is_err());
    }
}
