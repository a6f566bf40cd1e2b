//! Equirectangular discretization of the unit sphere.
//!
//! Cell `(i, j)` sits at colatitude `theta_i = (2i + 1) pi / (2H)` measured from +Z and
//! azimuth `phi_j = 2 pi j / W` measured from +X toward +Y. Grids are stored row-major,
//! one row per colatitude. Every cell carries the area weight `sin(theta_i)`; a
//! [`SphericalDistribution`] sums to one under that weighted measure.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this do not define a direction.
pub const DIRECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    height: usize,
    width: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            height: 64,
            width: 64,
        }
    }
}

impl GridSpec {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::usage(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(GridSpec { height, width })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn theta(&self, i: usize) -> f64 {
        (2 * i + 1) as f64 * PI / (2 * self.height) as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.width as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::usage(format!(
                "expected {} values for a {}x{} grid, got {len}",
                self.len(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Spherical direction for a colatitude/azimuth pair under the module convention.
pub fn spherical_to_vector(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Inverse of [`spherical_to_vector`]; azimuth in `[0, 2 pi)`.
pub fn vector_to_spherical(v: &Vector3<f64>) -> (f64, f64) {
    let n = v.norm();
    let theta = (v.z / n).clamp(-1.0, 1.0).acos();
    let mut phi = v.y.atan2(v.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi -= 2.0 * PI;
    }
    (theta, phi)
}

/// A direction in R^3, normalized on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVec3(Vector3<f64>);

impl UnitVec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        normalize_direction(&Vector3::new(x, y, z))
    }

    /// Wraps a vector the caller already knows is unit length.
    pub fn new_unchecked(v: Vector3<f64>) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-9, "not unit: {v:?}");
        UnitVec3(v)
    }

    pub fn x_axis() -> Self {
        UnitVec3(Vector3::x())
    }

    pub fn y_axis() -> Self {
        UnitVec3(Vector3::y())
    }

    pub fn z_axis() -> Self {
        UnitVec3(Vector3::z())
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    /// Great-circle angle to `other` in radians.
    pub fn angle_to(&self, other: &UnitVec3) -> f64 {
        // atan2 form stays accurate for tiny and near-pi angles.
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

impl Deref for UnitVec3 {
    type Target = Vector3<f64>;

    fn deref(&self) -> &Vector3<f64> {
        &self.0
    }
}

impl TryFrom<[f64; 3]> for UnitVec3 {
    type Error = Error;

    fn try_from(a: [f64; 3]) -> Result<Self> {
        UnitVec3::new(a[0], a[1], a[2])
    }
}

impl From<UnitVec3> for [f64; 3] {
    fn from(v: UnitVec3) -> [f64; 3] {
        [v.0.x, v.0.y, v.0.z]
    }
}

/// Unnormalized network-style output on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl RawGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_len(values.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("raw grid value at {k} is not finite")));
        }
        Ok(RawGrid { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        RawGrid {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `ln(1 + e^x)`.
    #[default]
    Softplus,
    /// `e^x`: the raw grid is read as log-probabilities (spherical soft-argmax).
    Exp,
}

impl Activation {
    /// Value and derivative.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Softplus => {
                let value = x.max(0.0) + (-x.abs()).exp().ln_1p();
                let slope = 1.0 / (1.0 + (-x).exp());
                (value, slope)
            }
            Activation::Exp => {
                let e = x.exp();
                (e, e)
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Activation::Softplus),
            "exp" => Ok(Activation::Exp),
            other => Err(Error::usage(format!("unknown activation {other:?}"))),
        }
    }
}

/// Non-negative probabilities that sum to one under the `sin(theta)` measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalDistribution {
    spec: GridSpec,
    probs: Vec<f64>,
}

impl SphericalDistribution {
    /// Validates that `probs` is already normalized.
    pub fn new(spec: GridSpec, probs: Vec<f64>) -> Result<Self> {
        spec.check_len(probs.len())?;
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::usage("probabilities must be finite and non-negative"));
        }
        let dist = SphericalDistribution { spec, probs };
        let mass = dist.total_mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("distribution mass is {mass}, expected 1")));
        }
        Ok(dist)
    }

    /// Rescales arbitrary non-negative weights to unit mass.
    pub fn from_weights(spec: GridSpec, mut weights: Vec<f64>) -> Result<Self> {
        spec.check_len(weights.len())?;
        if weights.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::usage("weights must be finite and non-negative"));
        }
        let mass = weighted_sum(spec, &weights);
        if mass <= 0.0 {
            return Err(Error::usage("weights have zero mass"));
        }
        weights.iter_mut().for_each(|w| *w /= mass);
        Ok(SphericalDistribution {
            spec,
            probs: weights,
        })
    }

    pub fn uniform(spec: GridSpec) -> Self {
        Self::from_weights(spec, vec![1.0; spec.len()]).expect("uniform weights are valid")
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[self.spec.index(i, j)]
    }

    /// `sum p[i][j] sin(theta_i)`; one for every valid distribution.
    pub fn total_mass(&self) -> f64 {
        weighted_sum(self.spec, &self.probs)
    }

    /// Row and column of the most probable cell.
    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (k / self.spec.width, k % self.spec.width)
    }
}

fn weighted_sum(spec: GridSpec, values: &[f64]) -> f64 {
    values
        .chunks_exact(spec.width)
        .enumerate()
        .map(|(i, row)| spec.theta(i).sin() * row.iter().sum::<f64>())
        .sum()
}

/// Per-cell geometry shared by the normalization, expectation and loss code.
#[derive(Debug, Clone)]
pub struct GridGeometry {
    spec: GridSpec,
    row_sin: Vec<f64>,
    dirs: Vec<Vector3<f64>>,
}

impl GridGeometry {
    pub fn new(spec: GridSpec) -> Self {
        let row_sin = (0..spec.height).map(|i| spec.theta(i).sin()).collect();
        let dirs = (0..spec.height)
            .flat_map(|i| (0..spec.width).map(move |j| (i, j)))
            .map(|(i, j)| spherical_to_vector(spec.theta(i), spec.phi(j)))
            .collect();
        GridGeometry { spec, row_sin, dirs }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// `sin(theta)` of the row containing flat cell index `k`.
    #[inline]
    pub fn cell_sin(&self, k: usize) -> f64 {
        self.row_sin[k / self.spec.width]
    }

    #[inline]
    pub fn cell_dir(&self, k: usize) -> &Vector3<f64> {
        &self.dirs[k]
    }

    /// Normalization with cached geometry. Also returns each cell's activation slope
    /// divided by the normalizer, which is what the loss gradients need.
    pub(crate) fn normalize_with_slopes(
        &self,
        raw: &RawGrid,
        activation: Activation,
    ) -> (SphericalDistribution, Vec<f64>) {
        assert_eq!(raw.spec, self.spec, "geometry/grid mismatch");
        let shift = match activation {
            Activation::Softplus => 0.0,
            Activation::Exp => raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let (mut probs, mut slopes): (Vec<f64>, Vec<f64>) = raw
            .values
            .iter()
            .map(|&u| activation.eval(u - shift))
            .unzip();
        let denom: f64 = probs
            .iter()
            .enumerate()
            .map(|(k, f)| f * self.cell_sin(k))
            .sum();
        probs.iter_mut().for_each(|p| *p /= denom);
        slopes.iter_mut().for_each(|s| *s /= denom);
        (
            SphericalDistribution {
                spec: self.spec,
                probs,
            },
            slopes,
        )
    }

    pub fn expectation(&self, dist: &SphericalDistribution) -> Vector3<f64> {
        assert_eq!(dist.spec, self.spec, "geometry/grid mismatch");
        dist.probs
            .iter()
            .enumerate()
            .fold(Vector3::zeros(), |acc, (k, p)| {
                acc + self.dirs[k] * (p * self.cell_sin(k))
            })
    }
}

/// Unit vector at the center of cell `(i, j)`.
pub fn cell_direction(spec: GridSpec, i: usize, j: usize) -> Result<UnitVec3> {
    if i >= spec.height || j >= spec.width {
        return Err(Error::usage(format!(
            "cell ({i}, {j}) outside {}x{} grid",
            spec.height, spec.width
        )));
    }
    Ok(UnitVec3(spherical_to_vector(spec.theta(i), spec.phi(j))))
}

/// Maps raw values to a distribution: `P = f(u) / sum f(u) sin(theta)`.
///
/// The exp activation subtracts the grid maximum before exponentiating; the
/// quotient is unchanged and nothing overflows.
pub fn normalize(raw: &RawGrid, activation: Activation) -> SphericalDistribution {
    GridGeometry::new(raw.spec)
        .normalize_with_slopes(raw, activation)
        .0
}

/// `sum rho(theta_i, phi_j) P(theta_i, phi_j) sin(theta_i)`. Norm is at most one.
pub fn expectation(dist: &SphericalDistribution) -> Vector3<f64> {
    GridGeometry::new(dist.spec).expectation(dist)
}

pub fn normalize_direction(v: &Vector3<f64>) -> Result<UnitVec3> {
    let norm = v.norm();
    if !norm.is_finite() || norm <= DIRECTION_EPS {
        return Err(Error::DegenerateDirection {
            norm,
            threshold: DIRECTION_EPS,
        });
    }
    Ok(UnitVec3(v / norm))
}

/// Von Mises-Fisher target `P ∝ exp(kappa mean·rho)`, normalized under the grid measure.
pub fn vmf_target(spec: GridSpec, mean: &UnitVec3, kappa: f64) -> Result<SphericalDistribution> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::usage(format!("kappa must be positive, got {kappa}")));
    }
    let geom = GridGeometry::new(spec);
    // Exponent shifted by -kappa so the peak is exp(0).
    let weights = (0..spec.len())
        .map(|k| (kappa * (mean.dot(geom.cell_dir(k)) - 1.0)).exp())
        .collect();
    SphericalDistribution::from_weights(spec, weights)
}

/// Pads an equirectangular grid so that border cells see their true spherical
/// neighbours.
///
/// Columns wrap around in azimuth. Rows past a pole reflect back (row `-k` reads row
/// `k - 1`) with the azimuth advanced by half a turn. Corner cells apply the azimuth
/// wrap first and then the pole crossing.
pub fn spherical_pad<T: Copy>(spec: GridSpec, values: &[T], pad: usize) -> Result<Vec<T>> {
    spec.check_len(values.len())?;
    let (h, w) = (spec.height as isize, spec.width as isize);
    if w % 2 != 0 {
        return Err(Error::usage("spherical padding needs an even grid width"));
    }
    if pad == 0 || pad as isize >= w / 2 || pad as isize > h {
        return Err(Error::usage(format!(
            "pad must satisfy 0 < pad < W/2 and pad <= H, got {pad} for {h}x{w}"
        )));
    }
    let p = pad as isize;
    let mut out = Vec::with_capacity(((h + 2 * p) * (w + 2 * p)) as usize);
    for r in 0..h + 2 * p {
        for c in 0..w + 2 * p {
            let (mut i, mut j) = (r - p, (c - p).rem_euclid(w));
            if i < 0 {
                i = -i - 1;
                j = (j + w / 2) % w;
            } else if i >= h {
                i = 2 * h - 1 - i;
                j = (j + w / 2) % w;
            }
            out.push(values[(i * w + j) as usize]);
        }
    }
    Ok(out)
}

/// Removes `pad` cells from every side of a padded grid of the given inner size.
pub fn crop_padding<T: Copy>(spec: GridSpec, padded: &[T], pad: usize) -> Result<Vec<T>> {
    let pw = spec.width + 2 * pad;
    if padded.len() != (spec.height + 2 * pad) * pw {
        return Err(Error::usage("padded buffer has the wrong size"));
    }
    Ok((0..spec.height)
        .flat_map(|i| {
            let start = (i + pad) * pw + pad;
            padded[start..start + spec.width].iter().copied()
        })
        .collect())
}
