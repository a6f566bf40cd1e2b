//! Essential matrices, pose error metrics, rank aggregation, the two-stage
//! rotation-then-translation pipeline and epipolar-line overlays.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{derotate_pair, ImageBuffer, Intrinsics, RelativePose};
use crate::error::{Error, Result};
use crate::grid_fit::{fit_direction, fit_rotation, FitConfig, RotationVariant};
use crate::pano::{pair_rng, PosePair};
use crate::so3::{geodesic_distance, perturb_rotation};
use crate::sphere_grid::{GridSpec, UnitVec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// `E = [t]x R`, so that `x1^T E x0 = 0` for `x1 = R x0 + s t`.
    pub fn from_pose(pose: &RelativePose) -> Self {
        EssentialMatrix(pose.translation.cross_matrix() * pose.rotation.matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> [f64; 3] {
        let mut s: Vec<f64> = self.0.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        [s[0], s[1], s[2]]
    }

    /// `x1^T E x0` for camera-frame rays.
    pub fn residual(&self, x0: &Vector3<f64>, x1: &Vector3<f64>) -> f64 {
        x1.dot(&(self.0 * x0))
    }
}

pub fn essential_from_pose(pose: &RelativePose) -> EssentialMatrix {
    EssentialMatrix::from_pose(pose)
}

/// Epipolar line `(a, b, c)` in image 1 of pixel `x0` of image 0, scaled so that
/// `a^2 + b^2 = 1`; `a u + b v + c` is then a signed pixel distance.
pub fn epipolar_line(e: &EssentialMatrix, x0: (f64, f64), k0: &Intrinsics, k1: &Intrinsics) -> [f64; 3] {
    let l = k1.inverse_matrix().transpose() * e.matrix() * k0.inverse_matrix() * Vector3::new(x0.0, x0.1, 1.0);
    normalize_line(l)
}

/// Epipolar line in image 0 of pixel `x1` of image 1.
pub fn epipolar_line_reverse(e: &EssentialMatrix, x1: (f64, f64), k0: &Intrinsics, k1: &Intrinsics) -> [f64; 3] {
    let l = k0.inverse_matrix().transpose() * e.matrix().transpose() * k1.inverse_matrix() * Vector3::new(x1.0, x1.1, 1.0);
    normalize_line(l)
}

fn normalize_line(l: Vector3<f64>) -> [f64; 3] {
    let n = l.x.hypot(l.y);
    if n == 0.0 {
        return [0.0, 0.0, 1.0];
    }
    [l.x / n, l.y / n, l.z / n]
}

pub fn point_line_distance(line: &[f64; 3], p: (f64, f64)) -> f64 {
    (line[0] * p.0 + line[1] * p.1 + line[2]).abs()
}

/// Rotation and translation-direction errors in degrees.
pub fn angular_errors(pred: &RelativePose, truth: &RelativePose) -> (f64, f64) {
    let rot = geodesic_distance(&pred.rotation, &truth.rotation).to_degrees();
    (rot, pred.translation.angle_to(&truth.translation).to_degrees())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub per_pair: Vec<f64>,
}

impl ErrorStats {
    pub fn from_errors(per_pair: Vec<f64>) -> Result<Self> {
        if per_pair.is_empty() {
            return Err(Error::usage("error statistics need at least one value"));
        }
        if per_pair.iter().any(|e| e.is_nan()) {
            return Err(Error::usage("errors must not be NaN"));
        }
        let n = per_pair.len();
        let mut sorted = per_pair.clone();
        sorted.sort_by(f64::total_cmp);
        let median_deg = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(ErrorStats {
            mean_deg: per_pair.iter().sum::<f64>() / n as f64,
            median_deg,
            per_pair,
        })
    }
}

/// Mean rank of each method over pairs; rank 1 is the smallest error and ties share
/// the average of their positions.
pub fn rank_methods(errors_by_method: &[(String, Vec<f64>)]) -> Result<Vec<(String, f64)>> {
    let Some((_, first)) = errors_by_method.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    if errors_by_method.iter().any(|(_, e)| e.len() != n) {
        return Err(Error::usage("all methods must be evaluated on the same pairs"));
    }
    if errors_by_method.iter().any(|(_, e)| e.iter().any(|v| v.is_nan())) {
        return Err(Error::usage("errors must not be NaN"));
    }
    let m = errors_by_method.len();
    let mut totals = vec![0.0; m];
    for p in 0..n {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| errors_by_method[a].1[p].total_cmp(&errors_by_method[b].1[p]));
        let mut start = 0;
        while start < m {
            let value = errors_by_method[order[start]].1[p];
            let mut end = start + 1;
            while end < m && errors_by_method[order[end]].1[p] == value {
                end += 1;
            }
            let rank = (start + 1 + end) as f64 / 2.0;
            for &k in &order[start..end] {
                totals[k] += rank;
            }
            start = end;
        }
    }
    Ok(errors_by_method
        .iter()
        .zip(totals)
        .map(|((name, _), t)| (name.clone(), if n == 0 { 0.0 } else { t / n as f64 }))
        .collect())
}

/// What a predictor sees: two images, their intrinsics and, for oracles only, the
/// ground-truth pose expressed in this view's frames.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub id: &'a str,
    pub index: usize,
    pub img0: &'a ImageBuffer,
    pub img1: &'a ImageBuffer,
    pub intrinsics: &'a Intrinsics,
    pub truth: &'a RelativePose,
}

/// A relative pose estimator.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn predict(&self, view: &PairView<'_>) -> Result<RelativePose>;

    /// Whether `predict` may run on several pairs at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Returns the ground truth.
#[derive(Debug, Clone, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, view: &PairView<'_>) -> Result<RelativePose> {
        Ok(*view.truth)
    }
}

/// Fits spherical grids to vMF targets around the ground truth and reads the pose back
/// out of the fitted distributions.
#[derive(Debug, Clone)]
pub struct GridFitPredictor {
    pub spec: GridSpec,
    pub kappa: f64,
    pub config: FitConfig,
    pub variant: RotationVariant,
}

impl Default for GridFitPredictor {
    fn default() -> Self {
        GridFitPredictor {
            spec: GridSpec::square(32).expect("valid grid"),
            kappa: 10.0,
            config: FitConfig {
                steps: 600,
                ..FitConfig::default()
            },
            variant: RotationVariant::Svd9d,
        }
    }
}

impl Predictor for GridFitPredictor {
    fn name(&self) -> &str {
        "gridfit"
    }

    fn predict(&self, view: &PairView<'_>) -> Result<RelativePose> {
        let cfg = FitConfig {
            seed: self.config.seed.wrapping_add(view.index as u64),
            ..self.config
        };
        let (rotation, _) = fit_rotation(&view.truth.rotation, self.kappa, self.spec, &cfg, self.variant)?;
        let t = fit_direction(&view.truth.translation, self.kappa, self.spec, &cfg)?;
        Ok(RelativePose::new(rotation, t.final_direction))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub estimate: RelativePose,
    pub rot_err_deg: f64,
    pub trans_err_deg: f64,
    /// The translation stage produced no direction; the error is set to 180 degrees.
    pub degenerate_translation: bool,
    pub half_rotation_deg: f64,
    /// Fraction of derotated image 0 that sampled inside the source image.
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub method: String,
    pub results: Vec<PairResult>,
    pub skipped: Vec<SkippedPair>,
}

impl PipelineReport {
    pub fn rotation_stats(&self) -> Result<ErrorStats> {
        ErrorStats::from_errors(self.results.iter().map(|r| r.rot_err_deg).collect())
    }

    pub fn translation_stats(&self) -> Result<ErrorStats> {
        ErrorStats::from_errors(self.results.iter().map(|r| r.trans_err_deg).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Rotation perturbation applied after the rotation stage, in degrees.
    pub perturb_deg: f64,
    pub seed: u64,
}

enum Outcome {
    Done(PairResult),
    Skipped(SkippedPair),
}

fn run_pair(
    index: usize,
    pair: &PosePair,
    rot: &dyn Predictor,
    trans: &dyn Predictor,
    cfg: &PipelineConfig,
    k_out: &Intrinsics,
) -> Result<Outcome> {
    let k_in = pair.intrinsics()?;
    let view = PairView {
        id: &pair.id,
        index,
        img0: &pair.img0,
        img1: &pair.img1,
        intrinsics: &k_in,
        truth: &pair.pose,
    };
    let mut r_est = rot.predict(&view)?.rotation;
    if cfg.perturb_deg > 0.0 {
        let mut rng: ChaCha8Rng = pair_rng(cfg.seed, index as u64);
        r_est = perturb_rotation(&r_est, cfg.perturb_deg.to_radians(), &mut rng)?;
    }
    let derotated = match derotate_pair(&pair.img0, &pair.img1, &r_est, &k_in, k_out) {
        Ok(d) => d,
        Err(e @ Error::AmbiguousHalfRotation { .. }) => {
            return Ok(Outcome::Skipped(SkippedPair {
                id: pair.id.clone(),
                reason: e.to_string(),
            }))
        }
        Err(e) => return Err(e),
    };
    let r = derotated.half;
    let truth_prime = pair.pose.derotated(&r);
    let view_prime = PairView {
        id: &pair.id,
        index,
        img0: &derotated.img0.image,
        img1: &derotated.img1.image,
        intrinsics: k_out,
        truth: &truth_prime,
    };
    let (t, degenerate) = match trans.predict(&view_prime) {
        Ok(p) => (Some(UnitVec3::new_unchecked(r.apply(&p.translation))), false),
        Err(Error::DegenerateDirection { .. }) => (None, true),
        Err(e) => return Err(e),
    };
    let estimate = RelativePose::new(r_est, t.unwrap_or_else(|| UnitVec3::new_unchecked(-*pair.pose.translation)));
    let (rot_err_deg, trans_err) = angular_errors(&estimate, &pair.pose);
    Ok(Outcome::Done(PairResult {
        id: pair.id.clone(),
        estimate,
        rot_err_deg,
        trans_err_deg: if degenerate { 180.0 } else { trans_err },
        degenerate_translation: degenerate,
        half_rotation_deg: r.angle().to_degrees(),
        valid_fraction: derotated.img0.valid_fraction(),
    }))
}

/// Rotation stage, optional perturbation, derotation by the half rotation `r`,
/// translation stage in the derotated frame, and mapping back with `t = r t'`.
///
/// Pairs whose estimated rotation is too close to a half turn to derotate are listed
/// in `skipped`. Results keep the input order.
pub fn run_two_stage(
    method: &str,
    pairs: &[PosePair],
    rot: &dyn Predictor,
    trans: &dyn Predictor,
    cfg: &PipelineConfig,
    k_out: &Intrinsics,
) -> Result<PipelineReport> {
    if !(cfg.perturb_deg >= 0.0 && cfg.perturb_deg < 90.0) {
        return Err(Error::usage("perturbation must be in [0, 90) degrees"));
    }
    let run = |(i, p): (usize, &PosePair)| run_pair(i, p, rot, trans, cfg, k_out);
    let outcomes: Vec<Outcome> = if rot.concurrent() && trans.concurrent() {
        pairs.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        pairs.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    let mut report = PipelineReport {
        method: method.to_string(),
        results: Vec::new(),
        skipped: Vec::new(),
    };
    for o in outcomes {
        match o {
            Outcome::Done(r) => report.results.push(r),
            Outcome::Skipped(s) => report.skipped.push(s),
        }
    }
    Ok(report)
}

/// Table of mean, median and mean rank per method. Ranks are computed over the pairs
/// every method completed.
pub fn results_csv(reports: &[PipelineReport]) -> Result<String> {
    let mut common: Option<Vec<String>> = None;
    for r in reports {
        let ids: Vec<String> = r.results.iter().map(|p| p.id.clone()).collect();
        common = Some(match common {
            None => ids,
            Some(c) => c.into_iter().filter(|id| ids.contains(id)).collect(),
        });
    }
    let common = common.unwrap_or_default();
    let pick = |r: &PipelineReport, f: fn(&PairResult) -> f64| -> Vec<f64> {
        let by_id: BTreeMap<&str, f64> = r.results.iter().map(|p| (p.id.as_str(), f(p))).collect();
        common.iter().map(|id| by_id[id.as_str()]).collect()
    };
    let rot_ranks = rank_methods(
        &reports
            .iter()
            .map(|r| (r.method.clone(), pick(r, |p| p.rot_err_deg)))
            .collect::<Vec<_>>(),
    )?;
    let trans_ranks = rank_methods(
        &reports
            .iter()
            .map(|r| (r.method.clone(), pick(r, |p| p.trans_err_deg)))
            .collect::<Vec<_>>(),
    )?;
    let mut out = String::from("method,mean_rot,med_rot,rank_rot,mean_trans,med_trans,rank_trans\n");
    for (i, r) in reports.iter().enumerate() {
        let rs = r.rotation_stats()?;
        let ts = r.translation_stats()?;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.3},{:.6},{:.6},{:.3}",
            r.method, rs.mean_deg, rs.median_deg, rot_ranks[i].1, ts.mean_deg, ts.median_deg, trans_ranks[i].1
        )
        .expect("write to string");
    }
    Ok(out)
}

/// Distinct, index-determined colors.
pub fn overlay_color(index: usize) -> [f32; 3] {
    const PALETTE: [[f32; 3]; 8] = [
        [1.0, 0.1, 0.1],
        [0.1, 0.9, 0.1],
        [0.2, 0.4, 1.0],
        [1.0, 0.9, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 0.5, 0.0],
        [1.0, 1.0, 1.0],
    ];
    PALETTE[index % PALETTE.len()]
}

/// Epipolar lines in image 0 of `points` in image 1 under `pose`.
pub fn overlay_lines(pair: &PosePair, pose: &RelativePose, points: &[(f64, f64)]) -> Result<Vec<[f64; 3]>> {
    let k = pair.intrinsics()?;
    let e = EssentialMatrix::from_pose(pose);
    Ok(points.iter().map(|p| epipolar_line_reverse(&e, *p, &k, &k)).collect())
}

fn draw_line(img: &mut ImageBuffer, x_offset: usize, width: usize, line: &[f64; 3], color: [f32; 3]) {
    let h = img.height();
    let [a, b, c] = *line;
    if b.abs() >= a.abs() {
        for u in 0..width {
            let v = (-(a * u as f64) - c) / b;
            if v > -0.5 && v < h as f64 - 0.5 {
                img.pixel_mut(x_offset + u, v.round() as usize).copy_from_slice(&color);
            }
        }
    } else {
        for v in 0..h {
            let u = (-(b * v as f64) - c) / a;
            if u > -0.5 && u < width as f64 - 0.5 {
                img.pixel_mut(x_offset + u.round() as usize, v).copy_from_slice(&color);
            }
        }
    }
}

/// Side-by-side `[img0 | img1]` with `points` marked on image 1 and, for every named
/// pose, their epipolar lines drawn on image 0. Point `i` and its lines share a color;
/// lines of later poses are drawn darker.
pub fn render_epipolar_overlay(
    pair: &PosePair,
    poses: &[(String, RelativePose)],
    points: &[(f64, f64)],
) -> Result<ImageBuffer> {
    let (w, h) = (pair.img0.width(), pair.img0.height());
    for &(u, v) in points {
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return Err(Error::usage(format!("point ({u}, {v}) is outside the image")));
        }
    }
    let mut out = pair.img0.side_by_side(&pair.img1)?;
    for (pi, (_, pose)) in poses.iter().enumerate() {
        let shade = 1.0 / (1.0 + pi as f32);
        for (i, line) in overlay_lines(pair, pose, points)?.iter().enumerate() {
            draw_line(&mut out, 0, w, line, overlay_color(i).map(|c| c * shade));
        }
    }
    for (i, &(u, v)) in points.iter().enumerate() {
        let (cu, cv) = (u.round() as i64, v.round() as i64);
        for dv in -2..=2 {
            for du in -2..=2 {
                let (x, y) = (cu + du, cv + dv);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    out.pixel_mut(w + x as usize, y as usize).copy_from_slice(&overlay_color(i));
                }
            }
        }
    }
    Ok(out)
}
