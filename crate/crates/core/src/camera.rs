//! Pinhole cameras, rotation homographies and derotation of image pairs.
//!
//! Camera frame: +X right, +Y up, optical axis along -Z. Pixel `(u, v)` has `u` growing
//! right and `v` growing down, and pixel `(0, 0)` is centered at continuous `(0, 0)`.
//! [`Intrinsics::matrix`] folds the axis flip into the calibration matrix, so
//! `p ~ K X` maps camera-frame points to homogeneous pixels and the usual projective
//! formulas (`K' r^T K^-1`, `K^-T E K^-1`) apply unchanged.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{half_rotation, Rotation3};
use crate::sphere_grid::UnitVec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::usage("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::usage("image size must be at least 1x1"));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square pixels, horizontal field of view, principal point at the image center.
    pub fn from_fov(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::usage(format!("field of view must be in (0, 180), got {fov_deg}")));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Horizontal field of view in degrees.
    pub fn fov_deg(&self) -> f64 {
        (2.0 * (self.width as f64 / 2.0 / self.fx).atan()).to_degrees()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, -self.cx, //
            0.0, -self.fy, -self.cy, //
            0.0, 0.0, -1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx, 0.0, -self.cx / self.fx, //
            0.0, -1.0 / self.fy, self.cy / self.fy, //
            0.0, 0.0, -1.0,
        )
    }

    /// Camera-frame ray through a pixel, scaled to unit depth (`z = -1`).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0)
    }

    /// Pixel of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let depth = -p.z;
        if depth <= 0.0 {
            return None;
        }
        Some((self.cx + self.fx * p.x / depth, self.cy - self.fy * p.y / depth))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Row-major float image. Color samples are in `[0, 1]`; depth samples are meters
/// along the optical axis, 0 where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::usage("images have 1 or 3 channels"));
        }
        if data.len() != width * height * channels {
            return Err(Error::usage(format!(
                "image data has {} samples, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("image data must be finite"));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let k = (y * self.width + x) * self.channels;
        &self.data[k..k + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let k = (y * self.width + x) * self.channels;
        &mut self.data[k..k + self.channels]
    }

    /// Bilinear sample at a continuous position; `false` outside the pixel-center hull.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        const EDGE: f64 = 1e-9;
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= -EDGE && y >= -EDGE && x <= w - 1.0 + EDGE && y <= h - 1.0 + EDGE) {
            return false;
        }
        let x = x.clamp(0.0, w - 1.0);
        let y = y.clamp(0.0, h - 1.0);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (ax, ay) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let at = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * self.channels + c];
            let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
            let bottom = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
            *o = top * (1.0 - ay) + bottom * ay;
        }
        true
    }

    /// Places `right` next to `self`; heights must match.
    pub fn side_by_side(&self, right: &ImageBuffer) -> Result<ImageBuffer> {
        if self.height != right.height || self.channels != right.channels {
            return Err(Error::usage("side-by-side images need equal height and channels"));
        }
        let mut out = ImageBuffer::new(self.width + right.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                out.pixel_mut(x, y).copy_from_slice(self.pixel(x, y));
            }
            for x in 0..right.width {
                out.pixel_mut(self.width + x, y).copy_from_slice(right.pixel(x, y));
            }
        }
        Ok(out)
    }
}

/// `X1 = R X0 + s t` for some unknown `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub rotation: Rotation3,
    pub translation: UnitVec3,
}

impl RelativePose {
    pub fn new(rotation: Rotation3, translation: UnitVec3) -> Self {
        RelativePose {
            rotation,
            translation,
        }
    }

    /// Ground truth seen by the two virtual cameras after derotating with `half`:
    /// `X0' = half X0`, `X1' = half^T X1`.
    pub fn derotated(&self, half: &Rotation3) -> RelativePose {
        let ht = half.transpose();
        RelativePose {
            rotation: ht * self.rotation * ht,
            translation: UnitVec3::new_unchecked(ht.apply(&self.translation)),
        }
    }
}

/// `K_out rot^T K_in^-1`: resamples an image into the camera whose axes are those of
/// the input camera rotated by `rot`, so that point coordinates become `rot^T X`.
pub fn rotation_homography(k_in: &Intrinsics, k_out: &Intrinsics, rot: &Rotation3) -> Matrix3<f64> {
    k_out.matrix() * rot.matrix().transpose() * k_in.inverse_matrix()
}

/// Output image plus which pixels sampled inside the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageBuffer,
    pub valid: Vec<bool>,
}

impl Warped {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Inverse-mapping warp: output pixel `p` reads `src` at `H^-1 p` with bilinear
/// interpolation. Samples outside the source are zero and marked invalid.
pub fn warp_image(src: &ImageBuffer, h: &Matrix3<f64>, out_width: usize, out_height: usize) -> Result<Warped> {
    let det = h.determinant();
    if det.abs() <= 1e-12 || det.is_nan() {
        return Err(Error::usage(format!("homography is singular (det {det:e})")));
    }
    let h_inv = h.try_inverse().ok_or_else(|| Error::usage("homography is singular"))?;
    let ch = src.channels;
    let mut image = ImageBuffer::new(out_width, out_height, ch);
    let mut valid = vec![false; out_width * out_height];
    image
        .data
        .par_chunks_mut(out_width * ch)
        .zip(valid.par_chunks_mut(out_width))
        .enumerate()
        .for_each(|(y, (row, row_valid))| {
            for x in 0..out_width {
                let q = h_inv * Vector3::new(x as f64, y as f64, 1.0);
                if q.z.abs() < 1e-300 {
                    continue;
                }
                let (sx, sy) = (q.x / q.z, q.y / q.z);
                row_valid[x] = src.sample_bilinear(sx, sy, &mut row[x * ch..(x + 1) * ch]);
            }
        });
    Ok(Warped { image, valid })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derotated {
    pub img0: Warped,
    pub img1: Warped,
    /// The half rotation `r` with `r r = R_est`.
    pub half: Rotation3,
}

/// Warps both images into the middle frame of the estimated rotation.
///
/// With `r = sqrt(R_est)`, image 0 moves to coordinates `r X0` and image 1 to
/// `r^T X1`. When `R_est` is the true rotation the two virtual cameras differ by a pure
/// translation `r^T t`.
pub fn derotate_pair(
    img0: &ImageBuffer,
    img1: &ImageBuffer,
    r_est: &Rotation3,
    k_in: &Intrinsics,
    k_out: &Intrinsics,
) -> Result<Derotated> {
    let half = half_rotation(r_est)?;
    let h0 = rotation_homography(k_in, k_out, &half.transpose());
    let h1 = rotation_homography(k_in, k_out, &half);
    Ok(Derotated {
        img0: warp_image(img0, &h0, k_out.width, k_out.height)?,
        img1: warp_image(img1, &h1, k_out.width, k_out.height)?,
        half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn smooth_image(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f32 / w as f32, y as f32 / h as f32);
                let p = img.pixel_mut(x, y);
                p[0] = 0.5 + 0.4 * (3.0 * fx).sin() * (2.0 * fy).cos();
                p[1] = 0.5 + 0.3 * (2.5 * fy + fx).sin();
                p[2] = 0.2 + 0.6 * fx * fy;
            }
        }
        img
    }

    #[test]
    fn focal_lengths_from_fov() {
        let k = Intrinsics::from_fov(90.0, 256, 256).unwrap();
        assert_abs_diff_eq!(k.fx, 128.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k.cx, 127.5, epsilon = 0.0);
        let k = Intrinsics::from_fov(105.0, 344, 344).unwrap();
        assert_abs_diff_eq!(k.fx, 131.98, epsilon = 0.01);
        let k = Intrinsics::from_fov(60.0, 256, 256).unwrap();
        assert_abs_diff_eq!(k.fx, 221.70, epsilon = 0.01);
        assert_abs_diff_eq!(k.fov_deg(), 60.0, epsilon = 1e-12);
        assert!(Intrinsics::from_fov(180.0, 10, 10).is_err());
        assert!(Intrinsics::from_fov(0.0, 10, 10).is_err());
    }

    #[test]
    fn matrix_agrees_with_project() {
        let k = Intrinsics::new(200.0, 210.0, 100.0, 80.0, 201, 161).unwrap();
        let p = Vector3::new(0.3, -0.2, -2.0);
        let (u, v) = k.project(&p).unwrap();
        let h = k.matrix() * p;
        assert_abs_diff_eq!(h.x / h.z, u, epsilon = 1e-12);
        assert_abs_diff_eq!(h.y / h.z, v, epsilon = 1e-12);
        assert_abs_diff_eq!((k.matrix() * k.inverse_matrix() - Matrix3::identity()).amax(), 0.0, epsilon = 1e-15);
        let ray = k.pixel_ray(u, v);
        assert_abs_diff_eq!((ray * 2.0 - p).norm(), 0.0, epsilon = 1e-12);
        assert!(k.project(&Vector3::new(0.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn identity_homography() {
        let k = Intrinsics::from_fov(90.0, 64, 64).unwrap();
        let h = rotation_homography(&k, &k, &Rotation3::identity());
        assert_abs_diff_eq!((h / h[(2, 2)] - Matrix3::identity()).amax(), 0.0, epsilon = 1e-15);
        let img = smooth_image(64, 64);
        let w = warp_image(&img, &h, 64, 64).unwrap();
        assert_eq!(w.image, img);
        assert!(w.valid.iter().all(|v| *v));
    }

    #[test]
    fn in_plane_rotation_about_principal_point() {
        let k = Intrinsics::from_fov(90.0, 257, 257).unwrap();
        let theta = 0.3f64;
        let h = rotation_homography(&k, &k, &Rotation3::about_z(theta));
        let map = |u: f64, v: f64| {
            let q = h * Vector3::new(u, v, 1.0);
            (q.x / q.z, q.y / q.z)
        };
        let (u, v) = map(k.cx, k.cy);
        assert_abs_diff_eq!(u, k.cx, epsilon = 1e-9);
        assert_abs_diff_eq!(v, k.cy, epsilon = 1e-9);
        // Offset (du, dv) turns into (du c - dv s, du s + dv c) in pixel axes.
        let (du, dv) = (40.0, -15.0);
        let (u, v) = map(k.cx + du, k.cy + dv);
        let (s, c) = theta.sin_cos();
        assert_abs_diff_eq!(u - k.cx, du * c - dv * s, epsilon = 1e-9);
        assert_abs_diff_eq!(v - k.cy, du * s + dv * c, epsilon = 1e-9);
    }

    #[test]
    fn yaw_displaces_principal_point() {
        let k = Intrinsics::from_fov(90.0, 256, 256).unwrap();
        let h = rotation_homography(&k, &k, &Rotation3::about_y(10f64.to_radians()));
        let q = h * Vector3::new(k.cx, k.cy, 1.0);
        let (u, v) = (q.x / q.z, q.y / q.z);
        assert_abs_diff_eq!((u - k.cx).abs(), 128.0 * 10f64.to_radians().tan(), epsilon = 1e-9);
        assert_abs_diff_eq!((u - k.cx).abs(), 22.57, epsilon = 0.01);
        assert_abs_diff_eq!(v, k.cy, epsilon = 1e-9);
    }

    #[test]
    fn homographies_compose() {
        let k = Intrinsics::from_fov(75.0, 128, 96).unwrap();
        let r1 = Rotation3::from_axis_angle(&UnitVec3::new(1.0, 2.0, 3.0).unwrap(), 0.4);
        let r2 = Rotation3::from_axis_angle(&UnitVec3::new(-1.0, 0.5, 0.2).unwrap(), 0.7);
        let a = rotation_homography(&k, &k, &r1) * rotation_homography(&k, &k, &r2);
        // rot^T composes in reverse order.
        let b = rotation_homography(&k, &k, &(r2 * r1));
        let (a, b) = (a / a[(2, 2)], b / b[(2, 2)]);
        assert_abs_diff_eq!((a - b).amax(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn integer_translation_is_exact() {
        let img = smooth_image(40, 30);
        let h = Matrix3::new(1.0, 0.0, 10.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let w = warp_image(&img, &h, 40, 30).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                if x >= 10 {
                    assert_eq!(w.image.pixel(x, y), img.pixel(x - 10, y));
                    assert!(w.valid[y * 40 + x]);
                } else {
                    assert_eq!(w.image.pixel(x, y), &[0.0, 0.0, 0.0]);
                    assert!(!w.valid[y * 40 + x]);
                }
            }
        }
    }

    #[test]
    fn warp_round_trip() {
        let k = Intrinsics::from_fov(90.0, 96, 96).unwrap();
        let img = smooth_image(96, 96);
        let h = rotation_homography(&k, &k, &Rotation3::from_axis_angle(&UnitVec3::new(0.2, 1.0, 0.1).unwrap(), 0.15));
        let there = warp_image(&img, &h, 96, 96).unwrap();
        let back = warp_image(&there.image, &h.try_inverse().unwrap(), 96, 96).unwrap();
        let mut checked = 0;
        for y in 2..94 {
            for x in 2..94 {
                // Interior of the region that survived both warps.
                let ok = (y - 2..=y + 2).all(|yy| (x - 2..=x + 2).all(|xx| back.valid[yy * 96 + xx]));
                if !ok {
                    continue;
                }
                let q = h * Vector3::new(x as f64, y as f64, 1.0);
                let (mx, my) = ((q.x / q.z).round() as isize, (q.y / q.z).round() as isize);
                if mx < 2 || my < 2 || mx > 93 || my > 93 {
                    continue;
                }
                for (a, b) in back.image.pixel(x, y).iter().zip(img.pixel(x, y)) {
                    assert!((a - b).abs() <= 2.0 / 255.0, "({x},{y}): {a} vs {b}");
                }
                checked += 1;
            }
        }
        assert!(checked > 3000);
    }

    #[test]
    fn singular_homography_rejected() {
        let img = smooth_image(4, 4);
        assert!(warp_image(&img, &Matrix3::zeros(), 4, 4).is_err());
    }

    #[test]
    fn derotating_identity_is_identity() {
        let k = Intrinsics::from_fov(90.0, 48, 48).unwrap();
        let img = smooth_image(48, 48);
        let d = derotate_pair(&img, &img, &Rotation3::identity(), &k, &k).unwrap();
        assert_eq!(d.img0.image, img);
        assert_eq!(d.img1.image, img);
        assert_eq!(d.half, Rotation3::identity());
    }

    #[test]
    fn derotated_translation() {
        let pose = RelativePose::new(Rotation3::about_y(40f64.to_radians()), UnitVec3::x_axis());
        let half = half_rotation(&pose.rotation).unwrap();
        let d = pose.derotated(&half);
        let a = 20f64.to_radians();
        // rot_y(20)^T (1, 0, 0) = (cos 20, 0, sin 20).
        assert_abs_diff_eq!(d.translation.x, a.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.translation.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.translation.z, a.sin(), epsilon = 1e-15);
        assert!(d.rotation.angle() < 1e-12);
        // Pure translation: any derotated correspondence satisfies x1'^T [t']x x0' = 0.
        let x0 = Vector3::new(0.3, -0.1, -2.5);
        let x1 = pose.rotation.apply(&x0) + pose.translation.into_inner() * 0.7;
        let (x0d, x1d) = (half.apply(&x0), half.transpose().apply(&x1));
        assert_abs_diff_eq!(x1d.dot(&d.translation.cross(&x0d)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn fov_check_for_overflowing_derotation() {
        let k = Intrinsics::from_fov(60.0, 64, 64).unwrap();
        let img = smooth_image(64, 64);
        let d = derotate_pair(&img, &img, &Rotation3::about_y(100f64.to_radians()), &k, &k).unwrap();
        assert!(d.img0.valid_fraction() < 0.5);
        assert!(matches!(
            derotate_pair(&img, &img, &Rotation3::about_y(std::f64::consts::PI), &k, &k),
            Err(Error::AmbiguousHalfRotation { .. })
        ));
    }
}
