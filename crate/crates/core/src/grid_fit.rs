//! Fits raw spherical grids directly to von Mises-Fisher targets by gradient descent.
//!
//! This stands in for a learned decoder: each grid cell is a free parameter, so the
//! fit shows how well the distribution head, the expectation read-out and the SO(3)
//! projections recover directions and rotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DegeneratePolicy, DirectionalLoss, LossBreakdown, LossWeights};
use crate::so3::{geodesic_distance, gram_schmidt_project, procrustes_project, Rotation3};
use crate::sphere_grid::{normalize_direction, vmf_target, Activation, GridSpec, RawGrid, UnitVec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain `u -= lr * g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub activation: Activation,
    pub weights: LossWeights,
    pub seed: u64,
    /// Half-width of the zero-mean uniform initialization.
    pub init_scale: f64,
    pub optimizer: Optimizer,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 5e-2,
            steps: 2000,
            activation: Activation::Softplus,
            weights: LossWeights::default(),
            seed: 0,
            init_scale: 1e-3,
            optimizer: Optimizer::adam(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::usage("steps must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be positive and finite"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::usage("init scale must be non-negative"));
        }
        LossWeights::new(self.weights.lambda_d, self.weights.lambda_sigma)?;
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::usage("invalid Adam parameters"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_direction: UnitVec3,
    pub final_loss: LossBreakdown,
    /// Total loss before each update.
    pub loss_trace: Vec<f64>,
    pub angular_error_deg: f64,
}

/// One raw grid under optimization against a fixed target.
#[derive(Debug, Clone)]
pub struct DirectionFitter {
    loss: DirectionalLoss,
    raw: RawGrid,
    optimizer: Optimizer,
    learning_rate: f64,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    steps_taken: usize,
}

impl DirectionFitter {
    /// `stream` selects an independent random stream for the initialization.
    pub fn new(
        target_dir: &UnitVec3,
        kappa: f64,
        spec: GridSpec,
        cfg: &FitConfig,
        stream: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let target = vmf_target(spec, target_dir, kappa)?;
        let loss = DirectionalLoss::new(target, cfg.weights, cfg.activation)?
            .with_policy(DegeneratePolicy::Skip);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let values = (0..spec.len())
            .map(|_| cfg.init_scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Ok(DirectionFitter {
            loss,
            raw: RawGrid::new(spec, values)?,
            optimizer: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            moment1: vec![0.0; spec.len()],
            moment2: vec![0.0; spec.len()],
            steps_taken: 0,
        })
    }

    pub fn raw(&self) -> &RawGrid {
        &self.raw
    }

    pub fn loss(&self) -> Result<LossBreakdown> {
        self.loss.evaluate(&self.raw)
    }

    /// Evaluates the loss at the current grid, then takes one update. Returns the
    /// pre-update loss.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let (loss, grad) = self.loss.evaluate_with_grad(&self.raw)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedFit {
                step: self.steps_taken,
            });
        }
        self.steps_taken += 1;
        let lr = self.learning_rate;
        let values = self.raw.values_mut();
        match self.optimizer {
            Optimizer::Sgd => {
                for (u, g) in values.iter_mut().zip(&grad) {
                    *u -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.steps_taken as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for (k, g) in grad.iter().enumerate() {
                    self.moment1[k] = beta1 * self.moment1[k] + (1.0 - beta1) * g;
                    self.moment2[k] = beta2 * self.moment2[k] + (1.0 - beta2) * g * g;
                    let m = self.moment1[k] / c1;
                    let v = self.moment2[k] / c2;
                    values[k] -= lr * m / (v.sqrt() + eps);
                }
            }
        }
        if values.iter().any(|u| !u.is_finite()) {
            return Err(Error::DivergedFit {
                step: self.steps_taken - 1,
            });
        }
        Ok(loss)
    }

    /// Normalized expectation of the current distribution.
    pub fn direction(&self) -> Result<UnitVec3> {
        let (dist, _) = self
            .loss
            .geometry()
            .normalize_with_slopes(&self.raw, self.loss.activation());
        normalize_direction(&self.loss.geometry().expectation(&dist))
    }

    fn run(mut self, steps: usize, target_dir: &UnitVec3) -> Result<FitReport> {
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            trace.push(self.step()?.total);
        }
        let final_loss = self.loss()?;
        if !final_loss.total.is_finite() {
            return Err(Error::DivergedFit { step: steps });
        }
        let final_direction = self.direction()?;
        Ok(FitReport {
            final_direction,
            final_loss,
            loss_trace: trace,
            angular_error_deg: final_direction.angle_to(target_dir).to_degrees(),
        })
    }
}

/// Fits one grid to `vmf(target_dir, kappa)` and reports the recovered direction.
pub fn fit_direction(
    target_dir: &UnitVec3,
    kappa: f64,
    spec: GridSpec,
    cfg: &FitConfig,
) -> Result<FitReport> {
    DirectionFitter::new(target_dir, kappa, spec, cfg, 0)?.run(cfg.steps, target_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationVariant {
    /// Three column grids projected with SVD.
    Svd9d,
    /// Two column grids projected with Gram-Schmidt.
    Gs6d,
}

impl RotationVariant {
    pub fn grids(self) -> usize {
        match self {
            RotationVariant::Svd9d => 3,
            RotationVariant::Gs6d => 2,
        }
    }

    /// Projects fitted column directions onto SO(3).
    pub fn project(self, cols: &[UnitVec3]) -> Result<Rotation3> {
        match self {
            RotationVariant::Svd9d => {
                let m = nalgebra::Matrix3::from_columns(&[*cols[0], *cols[1], *cols[2]]);
                procrustes_project(&m)
            }
            RotationVariant::Gs6d => gram_schmidt_project(&cols[0], &cols[1]),
        }
    }
}

impl std::str::FromStr for RotationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd9d" | "rot9d" => Ok(RotationVariant::Svd9d),
            "gs6d" | "rot6d" => Ok(RotationVariant::Gs6d),
            other => Err(Error::usage(format!("unknown rotation variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationFitReport {
    pub variant: RotationVariant,
    pub rotation: Rotation3,
    pub geodesic_error_deg: f64,
    /// One report per fitted column, in column order.
    pub columns: Vec<FitReport>,
}

/// Fits one grid per predicted column of `target` and projects the recovered
/// directions onto SO(3).
pub fn fit_rotation(
    target: &Rotation3,
    kappa: f64,
    spec: GridSpec,
    cfg: &FitConfig,
    variant: RotationVariant,
) -> Result<(Rotation3, RotationFitReport)> {
    cfg.validate()?;
    let columns = (0..variant.grids())
        .into_par_iter()
        .map(|k| {
            let col = target.column(k);
            DirectionFitter::new(&col, kappa, spec, cfg, k as u64)?.run(cfg.steps, &col)
        })
        .collect::<Result<Vec<_>>>()?;
    let dirs: Vec<UnitVec3> = columns.iter().map(|r| r.final_direction).collect();
    let rotation = variant.project(&dirs)?;
    let report = RotationFitReport {
        variant,
        rotation,
        geodesic_error_deg: geodesic_distance(&rotation, target).to_degrees(),
        columns,
    };
    Ok((rotation, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FitConfig {
        FitConfig {
            steps: 300,
            ..FitConfig::default()
        }
    }

    #[test]
    fn sgd_descends() {
        let spec = GridSpec::square(16).unwrap();
        let cfg = FitConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e-3,
            ..small_cfg()
        };
        let r = fit_direction(&UnitVec3::y_axis(), 10.0, spec, &cfg).unwrap();
        assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        let spec = GridSpec::square(16).unwrap();
        let cfg = FitConfig {
            steps: 0,
            ..FitConfig::default()
        };
        assert!(matches!(
            fit_direction(&UnitVec3::z_axis(), 10.0, spec, &cfg),
            Err(Error::Usage(_))
        ));
        let cfg = FitConfig {
            learning_rate: f64::NAN,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cold_start_from_constant_grid() {
        let spec = GridSpec::square(16).unwrap();
        let cfg = FitConfig {
            init_scale: 0.0,
            ..small_cfg()
        };
        let report = fit_direction(&UnitVec3::z_axis(), 10.0, spec, &cfg).unwrap();
        assert_eq!(report.loss_trace.len(), cfg.steps);
        assert!(report.loss_trace.last().unwrap() < &report.loss_trace[0]);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let spec = GridSpec::square(16).unwrap();
        let cfg = small_cfg();
        let d = UnitVec3::new(0.3, -0.4, 0.2).unwrap();
        let a = fit_direction(&d, 10.0, spec, &cfg).unwrap();
        let b = fit_direction(&d, 10.0, spec, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        let c = fit_direction(&d, 10.0, spec, &FitConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.loss_trace, c.loss_trace);
    }

    #[test]
    fn divergence_is_reported() {
        let spec = GridSpec::square(16).unwrap();
        let cfg = FitConfig {
            weights: LossWeights::new(f64::MAX, 0.1).unwrap(),
            ..small_cfg()
        };
        match fit_direction(&UnitVec3::x_axis(), 10.0, spec, &cfg) {
            Err(Error::DivergedFit { step }) => assert!(step < cfg.steps),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn adam_fit_converges() {
        let spec = GridSpec::square(32).unwrap();
        let cfg = FitConfig {
            steps: 600,
            ..FitConfig::default()
        };
        let d = UnitVec3::new(1.0, 2.0, -0.5).unwrap();
        let report = fit_direction(&d, 10.0, spec, &cfg).unwrap();
        assert!(report.angular_error_deg < 1.0, "{}", report.angular_error_deg);
    }
}
