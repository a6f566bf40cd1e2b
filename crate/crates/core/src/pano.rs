//! Synthetic panoramas of a textured box room and perspective image pairs cut from them.
//!
//! The world frame is z-up. Panoramas are equirectangular with the same colatitude and
//! azimuth convention as [`crate::sphere_grid`]: row `i` sits at colatitude
//! `(i + 1/2) pi / H`, column `j` at azimuth `2 pi j / W`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{ImageBuffer, Intrinsics, RelativePose};
use crate::error::{Error, Result};
use crate::so3::{from_lookat, geodesic_distance, sample_cap, Rotation3};
use crate::sphere_grid::{spherical_to_vector, vector_to_spherical, UnitVec3};

/// Relative tolerance on depth agreement when counting co-visible pixels.
pub const OVERLAP_DEPTH_TOL: f64 = 0.02;
/// Neighboring panorama ranges within this ratio are treated as one surface and
/// interpolated; across larger jumps depth falls back to the nearest sample.
pub const DEPTH_EDGE_RATIO: f64 = 1.25;
/// Elevation band for the first look-at direction.
pub const LOOKAT_ELEVATION_DEG: f64 = 45.0;

const MAX_RESAMPLES: usize = 10_000;

/// Axis-aligned box room centered at the origin with checkerboard walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub half_extents: [f64; 3],
    pub cell_size: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            half_extents: [4.0, 3.0, 1.5],
            cell_size: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            return Err(Error::usage("room half-extents must be positive"));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::usage("checker cell size must be positive"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k].abs() < self.half_extents[k])
    }

    /// Two colors per face, faces ordered `-X, +X, -Y, +Y, -Z, +Z`.
    pub fn face_colors(&self) -> [[[f32; 3]; 2]; 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        std::array::from_fn(|_| {
            let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.9));
            let dark = base.map(|c| c * rng.random_range(0.25..0.6));
            [base, dark]
        })
    }

    /// Distance and face index where the ray from `origin` along `dir` leaves the room.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for k in 0..3 {
            if dir[k] == 0.0 {
                continue;
            }
            let side = if dir[k] > 0.0 { 1.0 } else { -1.0 };
            let t = (side * self.half_extents[k] - origin[k]) / dir[k];
            if t < best.0 {
                best = (t, 2 * k + usize::from(dir[k] > 0.0));
            }
        }
        best
    }

    /// Checkerboard parity of a point on face `face`.
    pub fn checker(&self, p: &Vector3<f64>, face: usize) -> usize {
        let axis = face / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let ia = (p[a] / self.cell_size).floor() as i64;
        let ib = (p[b] / self.cell_size).floor() as i64;
        (ia + ib).rem_euclid(2) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub color: ImageBuffer,
    /// Range (distance from the center) in meters.
    pub depth: ImageBuffer,
    pub center: Vector3<f64>,
}

/// Ray-casts an equirectangular panorama from `center`.
pub fn render_pano(scene: &SceneSpec, center: &Vector3<f64>, width: usize, height: usize) -> Result<Panorama> {
    scene.validate()?;
    if !scene.contains(center) {
        return Err(Error::usage(format!("panorama center {center:?} is outside the room")));
    }
    if width == 0 || height == 0 {
        return Err(Error::usage("panorama size must be at least 1x1"));
    }
    let palette = scene.face_colors();
    let mut color = vec![0f32; width * height * 3];
    let mut depth = vec![0f32; width * height];
    color
        .par_chunks_mut(width * 3)
        .zip(depth.par_chunks_mut(width))
        .enumerate()
        .for_each(|(i, (crow, drow))| {
            let theta = (2 * i + 1) as f64 * PI / (2 * height) as f64;
            for j in 0..width {
                let dir = spherical_to_vector(theta, 2.0 * PI * j as f64 / width as f64);
                let (t, face) = scene.intersect(center, &dir);
                let hit = center + dir * t;
                crow[3 * j..3 * j + 3].copy_from_slice(&palette[face][scene.checker(&hit, face)]);
                drow[j] = t as f32;
            }
        });
    Ok(Panorama {
        color: ImageBuffer::from_data(width, height, 3, color)?,
        depth: ImageBuffer::from_data(width, height, 1, depth)?,
        center: *center,
    })
}

/// `l1` area-uniform over the band of elevations within +-45 degrees, `l2` area-uniform
/// over the cap of half-angle `cone_aperture_deg` about `l1`.
pub fn sample_lookat_pair<R: Rng + ?Sized>(cone_aperture_deg: f64, rng: &mut R) -> Result<(UnitVec3, UnitVec3)> {
    if !(cone_aperture_deg > 0.0 && cone_aperture_deg <= 180.0) {
        return Err(Error::usage(format!("cone aperture must be in (0, 180], got {cone_aperture_deg}")));
    }
    let zmax = LOOKAT_ELEVATION_DEG.to_radians().sin();
    let z = rng.random_range(-zmax..=zmax);
    let phi = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    let l1 = UnitVec3::new(r * phi.cos(), r * phi.sin(), z)?;
    let l2 = sample_cap(&l1, cone_aperture_deg.to_radians(), rng);
    Ok((l1, l2))
}

/// Continuous equirectangular coordinates `(x, y)` of a world direction.
fn pano_coords(dir: &Vector3<f64>, width: usize, height: usize) -> (f64, f64) {
    let (theta, phi) = vector_to_spherical(dir);
    (phi * width as f64 / (2.0 * PI), theta * height as f64 / PI - 0.5)
}

fn bilinear_taps(w: usize, h: usize, x: f64, y: f64) -> ([(usize, usize); 4], [f32; 4]) {
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0f, y0f) = (x.floor(), y.floor());
    let (ax, ay) = ((x - x0f) as f32, (y - y0f) as f32);
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let y0 = y0f as usize;
    let y1 = (y0 + 1).min(h - 1);
    (
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)],
        [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay],
    )
}

fn sample_pano_bilinear(img: &ImageBuffer, x: f64, y: f64, out: &mut [f32]) {
    let (taps, weights) = bilinear_taps(img.width(), img.height(), x, y);
    for (c, o) in out.iter_mut().enumerate().take(img.channels()) {
        *o = taps.iter().zip(weights).map(|(&(tx, ty), wt)| img.pixel(tx, ty)[c] * wt).sum();
    }
}

/// Range at a continuous panorama position: bilinear in inverse range (exact to first
/// order on planes) on a continuous surface, nearest sample across a depth
/// discontinuity.
fn sample_pano_range(depth: &ImageBuffer, x: f64, y: f64) -> f64 {
    let (w, h) = (depth.width(), depth.height());
    let (taps, weights) = bilinear_taps(w, h, x, y);
    let ranges = taps.map(|(tx, ty)| depth.pixel(tx, ty)[0] as f64);
    let lo = ranges.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ranges.iter().cloned().fold(0.0, f64::max);
    if lo > 0.0 && hi <= lo * DEPTH_EDGE_RATIO {
        return 1.0 / ranges.iter().zip(weights).map(|(r, wt)| wt as f64 / r).sum::<f64>();
    }
    let nx = (x.round() as i64).rem_euclid(w as i64) as usize;
    let ny = (y.round().max(0.0) as usize).min(h - 1);
    depth.pixel(nx, ny)[0] as f64
}

/// Perspective color and z-depth of a camera at the panorama center with the given
/// camera-to-world orientation. Color is bilinear; depth is bilinear within a surface
/// and nearest-neighbor across depth jumps (see [`DEPTH_EDGE_RATIO`]).
pub fn pano_to_perspective(pano: &Panorama, orientation: &Rotation3, k: &Intrinsics) -> (ImageBuffer, ImageBuffer) {
    let (pw, ph) = (pano.color.width(), pano.color.height());
    let mut color = ImageBuffer::new(k.width, k.height, 3);
    let mut depth = ImageBuffer::new(k.width, k.height, 1);
    let rows: Vec<(Vec<f32>, Vec<f32>)> = (0..k.height)
        .into_par_iter()
        .map(|v| {
            let mut crow = vec![0f32; k.width * 3];
            let mut drow = vec![0f32; k.width];
            for u in 0..k.width {
                let ray = k.pixel_ray(u as f64, v as f64);
                let dir = orientation.apply(&ray);
                let (x, y) = pano_coords(&dir, pw, ph);
                sample_pano_bilinear(&pano.color, x, y, &mut crow[3 * u..3 * u + 3]);
                drow[u] = (sample_pano_range(&pano.depth, x, y) / ray.norm()) as f32;
            }
            (crow, drow)
        })
        .collect();
    for (v, (crow, drow)) in rows.into_iter().enumerate() {
        for u in 0..k.width {
            color.pixel_mut(u, v).copy_from_slice(&crow[3 * u..3 * u + 3]);
            depth.pixel_mut(u, v)[0] = drow[u];
        }
    }
    (color, depth)
}

/// Where the two views of a pair came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub pano0: String,
    pub pano1: String,
    pub center0: [f64; 3],
    pub center1: [f64; 3],
    pub look0: [f64; 3],
    pub look1: [f64; 3],
    pub baseline_m: f64,
}

impl PairMeta {
    pub fn centers(&self) -> (Vector3<f64>, Vector3<f64>) {
        (Vector3::from(self.center0), Vector3::from(self.center1))
    }

    /// Camera-to-world orientations of both views.
    pub fn orientations(&self) -> Result<(Rotation3, Rotation3)> {
        let up = Vector3::z();
        let l0 = UnitVec3::try_from(self.look0)?;
        let l1 = UnitVec3::try_from(self.look1)?;
        Ok((from_lookat(&l0, &up)?, from_lookat(&l1, &up)?))
    }

    /// Metric translation `s t` with `X1 = R X0 + s t`.
    pub fn metric_translation(&self) -> Result<Vector3<f64>> {
        let (c0, c1) = self.centers();
        let (_, r1) = self.orientations()?;
        Ok(r1.transpose().apply(&(c0 - c1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePair {
    pub id: String,
    pub img0: ImageBuffer,
    pub img1: ImageBuffer,
    pub depth0: ImageBuffer,
    pub depth1: ImageBuffer,
    pub pose: RelativePose,
    pub fov_deg: f64,
    pub overlap: f64,
    pub meta: PairMeta,
}

impl PosePair {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::from_fov(self.fov_deg, self.img0.width(), self.img0.height())
    }
}

/// Relative pose from two camera-to-world orientations and centers. Translation is
/// undefined for coincident centers.
pub fn relative_pose(r0: &Rotation3, c0: &Vector3<f64>, r1: &Rotation3, c1: &Vector3<f64>) -> Result<RelativePose> {
    let rotation = r1.transpose() * *r0;
    let t = r1.transpose().apply(&(c0 - c1));
    if t.norm() < 1e-12 {
        return Err(Error::usage("coincident camera centers leave the translation undefined"));
    }
    Ok(RelativePose::new(rotation, UnitVec3::new_unchecked(t.normalize())))
}

fn covisible_fraction(
    depth_a: &ImageBuffer,
    depth_b: &ImageBuffer,
    k: &Intrinsics,
    rot: &Rotation3,
    trans: &Vector3<f64>,
) -> f64 {
    let hits: usize = (0..k.height)
        .into_par_iter()
        .map(|v| {
            (0..k.width)
                .filter(|&u| {
                    let z = depth_a.pixel(u, v)[0] as f64;
                    if z <= 0.0 {
                        return false;
                    }
                    let p = rot.apply(&(k.pixel_ray(u as f64, v as f64) * z)) + trans;
                    let Some((pu, pv)) = k.project(&p) else {
                        return false;
                    };
                    if !k.contains(pu, pv) {
                        return false;
                    }
                    let (nu, nv) = (pu.round() as usize, pv.round() as usize);
                    let zb = depth_b.pixel(nu.min(k.width - 1), nv.min(k.height - 1))[0] as f64;
                    zb > 0.0 && (zb + p.z).abs() <= OVERLAP_DEPTH_TOL * zb
                })
                .count()
        })
        .sum();
    hits as f64 / (k.width * k.height) as f64
}

/// `min(|I0 n I1| / |I0|, |I0 n I1| / |I1|)`, counting pixels whose unprojected depth
/// lands inside the other image with depth agreement within [`OVERLAP_DEPTH_TOL`].
pub fn compute_overlap(pair: &PosePair) -> Result<f64> {
    let k = pair.intrinsics()?;
    for d in [&pair.depth0, &pair.depth1] {
        if d.channels() != 1 || d.width() != k.width || d.height() != k.height {
            return Err(Error::usage("overlap needs single-channel depth maps matching the images"));
        }
        if d.data().iter().all(|z| *z <= 0.0) {
            return Err(Error::usage("overlap needs depth maps"));
        }
    }
    let st = pair.meta.metric_translation()?;
    let r = pair.pose.rotation;
    let forward = covisible_fraction(&pair.depth0, &pair.depth1, &k, &r, &st);
    let backward = covisible_fraction(&pair.depth1, &pair.depth0, &k, &r.transpose(), &-r.transpose().apply(&st));
    Ok(forward.min(backward).clamp(0.0, 1.0))
}

/// Renders both panoramas and cuts the perspective pair for the given viewpoints.
/// Coincident centers are accepted; the translation is then reported as +X.
#[allow(clippy::too_many_arguments)]
pub fn render_pair(
    scene: &SceneSpec,
    id: &str,
    centers: (Vector3<f64>, Vector3<f64>),
    looks: (UnitVec3, UnitVec3),
    fov_deg: f64,
    resolution: usize,
    pano_width: usize,
) -> Result<PosePair> {
    let k = Intrinsics::from_fov(fov_deg, resolution, resolution)?;
    let up = Vector3::z();
    let r0 = from_lookat(&looks.0, &up)?;
    let r1 = from_lookat(&looks.1, &up)?;
    let pano_height = (pano_width / 2).max(1);
    let p0 = render_pano(scene, &centers.0, pano_width, pano_height)?;
    let p1 = render_pano(scene, &centers.1, pano_width, pano_height)?;
    let (img0, depth0) = pano_to_perspective(&p0, &r0, &k);
    let (img1, depth1) = pano_to_perspective(&p1, &r1, &k);
    let pose = relative_pose(&r0, &centers.0, &r1, &centers.1)
        .unwrap_or_else(|_| RelativePose::new(r1.transpose() * r0, UnitVec3::x_axis()));
    let mut pair = PosePair {
        id: id.to_string(),
        img0,
        img1,
        depth0,
        depth1,
        pose,
        fov_deg,
        overlap: 0.0,
        meta: PairMeta {
            pano0: format!("{id}_pano0"),
            pano1: format!("{id}_pano1"),
            center0: centers.0.into(),
            center1: centers.1.into(),
            look0: looks.0.into(),
            look1: looks.1.into(),
            baseline_m: (centers.0 - centers.1).norm(),
        },
    };
    pair.overlap = compute_overlap(&pair)?;
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneSpec,
    pub n_pairs: usize,
    pub cone_aperture_deg: f64,
    pub baseline_m: f64,
    pub fov_deg: f64,
    pub resolution: usize,
    /// Equirectangular width; height is half of it.
    pub pano_width: usize,
    /// Pairs whose relative rotation exceeds this are resampled.
    pub max_rotation_deg: Option<f64>,
    /// Pairs with less overlap are resampled.
    pub min_overlap: f64,
    /// Minimum distance from camera centers to the walls.
    pub wall_margin_m: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneSpec::default(),
            n_pairs: 100,
            cone_aperture_deg: 45.0,
            baseline_m: 2.25,
            fov_deg: 90.0,
            resolution: 256,
            pano_width: 1024,
            max_rotation_deg: None,
            min_overlap: 0.1,
            wall_margin_m: 0.3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.n_pairs == 0 {
            return Err(Error::usage("number of pairs must be at least 1"));
        }
        if !(self.cone_aperture_deg > 0.0 && self.cone_aperture_deg <= 180.0) {
            return Err(Error::usage("cone aperture must be in (0, 180]"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::usage("field of view must be in (0, 180)"));
        }
        if self.resolution < 2 || self.pano_width < 4 {
            return Err(Error::usage("image resolution must be at least 2 and panorama width at least 4"));
        }
        if !(self.baseline_m.is_finite() && self.baseline_m > 0.0) {
            return Err(Error::usage("baseline must be positive: a zero baseline leaves the translation undefined"));
        }
        let [hx, hy, hz] = self.scene.half_extents;
        let m = self.wall_margin_m;
        if !(m >= 0.0 && m < hz) {
            return Err(Error::usage("wall margin must be non-negative and below the room half-height"));
        }
        if self.baseline_m / 2.0 >= hx.min(hy) - m {
            return Err(Error::usage(format!(
                "baseline {} m does not fit in every horizontal direction of a {}x{} m room",
                self.baseline_m,
                2.0 * hx,
                2.0 * hy
            )));
        }
        if let Some(max) = self.max_rotation_deg {
            if !(max > 0.0 && max <= 180.0) {
                return Err(Error::usage("maximum rotation must be in (0, 180]"));
            }
        }
        if !(0.0..1.0).contains(&self.min_overlap) {
            return Err(Error::usage("minimum overlap must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Random generator for pair `index`: stream `index` of the master seed.
pub fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_centers<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
    let [hx, hy, hz] = cfg.scene.half_extents;
    let m = cfg.wall_margin_m;
    let half = cfg.baseline_m / 2.0;
    let a = rng.random_range(0.0..2.0 * PI);
    let d = Vector3::new(a.cos(), a.sin(), 0.0) * half;
    let ex = hx - m - d.x.abs();
    let ey = hy - m - d.y.abs();
    let mid = Vector3::new(
        rng.random_range(-ex..=ex),
        rng.random_range(-ey..=ey),
        rng.random_range(-(hz - m)..=(hz - m)),
    );
    (mid - d, mid + d)
}

/// Pair `index` of the dataset; depends only on `(cfg, index)`.
pub fn generate_pair(cfg: &DatasetConfig, index: usize) -> Result<PosePair> {
    cfg.validate()?;
    let mut rng = pair_rng(cfg.seed, index as u64);
    let id = format!("pair_{index:06}");
    let up = Vector3::z();
    for _ in 0..MAX_RESAMPLES {
        let centers = sample_centers(cfg, &mut rng);
        let (l0, l1) = sample_lookat_pair(cfg.cone_aperture_deg, &mut rng)?;
        let (Ok(r0), Ok(r1)) = (from_lookat(&l0, &up), from_lookat(&l1, &up)) else {
            continue;
        };
        if let Some(max) = cfg.max_rotation_deg {
            if geodesic_distance(&(r1.transpose() * r0), &Rotation3::identity()).to_degrees() > max {
                continue;
            }
        }
        let pair = render_pair(&cfg.scene, &id, centers, (l0, l1), cfg.fov_deg, cfg.resolution, cfg.pano_width)?;
        if pair.overlap >= cfg.min_overlap {
            return Ok(pair);
        }
    }
    Err(Error::usage(format!(
        "no admissible pair after {MAX_RESAMPLES} attempts; relax the rotation or overlap limits"
    )))
}

/// All pairs of the dataset, generated in parallel and returned in index order.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<PosePair>> {
    cfg.validate()?;
    (0..cfg.n_pairs).into_par_iter().map(|i| generate_pair(cfg, i)).collect()
}

/// A pixel correspondence between the two views of a pair, found by ray-casting the
/// scene exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub px0: (f64, f64),
    pub px1: (f64, f64),
    /// Camera-frame points, `x1 = R x0 + s t`.
    pub x0: Vector3<f64>,
    pub x1: Vector3<f64>,
}

/// Samples up to `count` pixels of view 0 whose surface points are visible in view 1.
pub fn exact_correspondences<R: Rng + ?Sized>(
    scene: &SceneSpec,
    pair: &PosePair,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Correspondence>> {
    let k = pair.intrinsics()?;
    let (c0, c1) = pair.meta.centers();
    let (r0, r1) = pair.meta.orientations()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 200 {
        if out.len() == count {
            break;
        }
        let px0 = (
            rng.random_range(0.0..(k.width - 1) as f64),
            rng.random_range(0.0..(k.height - 1) as f64),
        );
        let ray = k.pixel_ray(px0.0, px0.1);
        let dir = r0.apply(&ray).normalize();
        let (t, _) = scene.intersect(&c0, &dir);
        let world = c0 + dir * t;
        let x1 = r1.transpose().apply(&(world - c1));
        let Some(px1) = k.project(&x1) else { continue };
        if px1.0 < 0.0 || px1.1 < 0.0 || px1.0 > (k.width - 1) as f64 || px1.1 > (k.height - 1) as f64 {
            continue;
        }
        // A convex room hides nothing, but the exit point from c1 must be the same one.
        let (t1, _) = scene.intersect(&c1, &(world - c1).normalize());
        if (t1 - (world - c1).norm()).abs() > 1e-9 * t1.max(1.0) {
            continue;
        }
        out.push(Correspondence {
            px0,
            px1,
            x0: r0.transpose().apply(&(world - c0)),
            x1,
        });
    }
    Ok(out)
}
