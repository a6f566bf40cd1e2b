//! Directional supervision for one spherical distribution and its gradient with
//! respect to the raw grid.
//!
//! The total for one direction is
//! `-cos(E[P], E[P*]) + lambda_d * mse_sin(P, P*) + lambda_sigma * (1 - |E[P]|)`.
//! Gradients are derived by hand through the activation, the normalizing quotient and
//! the weighted expectation sum.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere_grid::{
    Activation, GridGeometry, RawGrid, SphericalDistribution, DIRECTION_EPS,
};

/// Expectations shorter than this make the direction and spread terms undefined.
pub const EXPECTATION_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 8e7,
            lambda_sigma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_d: f64, lambda_sigma: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(lambda_d) && ok(lambda_sigma)) {
            return Err(Error::usage("loss weights must be finite and non-negative"));
        }
        Ok(LossWeights {
            lambda_d,
            lambda_sigma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub direction: f64,
    pub distribution: f64,
    pub spread: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(direction: f64, distribution: f64, spread: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            direction,
            distribution,
            spread,
            total: direction + w.lambda_d * distribution + w.lambda_sigma * spread,
        }
    }
}

/// What to do when the prediction's expectation is shorter than [`EXPECTATION_GUARD`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Error,
    /// Drop the direction term, clamp spread to 1, and supervise through the
    /// distribution term alone. Used to start fits from a constant grid.
    Skip,
}

/// Negative cosine similarity.
pub fn direction_loss(p1: &Vector3<f64>, p2: &Vector3<f64>) -> Result<f64> {
    let (n1, n2) = (p1.norm(), p2.norm());
    for n in [n1, n2] {
        if n <= DIRECTION_EPS {
            return Err(Error::DegenerateDirection {
                norm: n,
                threshold: DIRECTION_EPS,
            });
        }
    }
    Ok(-(p1.dot(p2) / (n1 * n2)).clamp(-1.0, 1.0))
}

/// `(1 / HW) sum (P1 - P2)^2 sin(theta)`.
pub fn distribution_loss(p1: &SphericalDistribution, p2: &SphericalDistribution) -> Result<f64> {
    let spec = p1.spec();
    if spec != p2.spec() {
        return Err(Error::usage("distribution grids differ"));
    }
    let w = spec.width();
    let sum: f64 = p1
        .probs()
        .chunks_exact(w)
        .zip(p2.probs().chunks_exact(w))
        .enumerate()
        .map(|(i, (a, b))| {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            sq * spec.theta(i).sin()
        })
        .sum();
    Ok(sum / spec.len() as f64)
}

/// `1 - |p|` for an expectation vector.
pub fn spread_loss(p: &Vector3<f64>) -> f64 {
    1.0 - p.norm()
}

/// The combined loss against one fixed target, with cached grid geometry.
#[derive(Debug, Clone)]
pub struct DirectionalLoss {
    geom: GridGeometry,
    target: SphericalDistribution,
    target_dir: Vector3<f64>,
    weights: LossWeights,
    activation: Activation,
    policy: DegeneratePolicy,
}

impl DirectionalLoss {
    pub fn new(
        target: SphericalDistribution,
        weights: LossWeights,
        activation: Activation,
    ) -> Result<Self> {
        let geom = GridGeometry::new(target.spec());
        let e = geom.expectation(&target);
        let n = e.norm();
        if n <= EXPECTATION_GUARD {
            return Err(Error::DegenerateDirection {
                norm: n,
                threshold: EXPECTATION_GUARD,
            });
        }
        Ok(DirectionalLoss {
            geom,
            target,
            target_dir: e / n,
            weights,
            activation,
            policy: DegeneratePolicy::Error,
        })
    }

    pub fn with_policy(mut self, policy: DegeneratePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn target(&self) -> &SphericalDistribution {
        &self.target
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn evaluate(&self, raw: &RawGrid) -> Result<LossBreakdown> {
        self.run(raw, false).map(|(b, _)| b)
    }

    /// Loss and `d total / d raw` for every cell.
    pub fn evaluate_with_grad(&self, raw: &RawGrid) -> Result<(LossBreakdown, Vec<f64>)> {
        self.run(raw, true)
            .map(|(b, g)| (b, g.expect("gradient requested")))
    }

    fn run(&self, raw: &RawGrid, want_grad: bool) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
        if raw.spec() != self.target.spec() {
            return Err(Error::usage("raw grid and target grid differ"));
        }
        let (pred, slopes) = self.geom.normalize_with_slopes(raw, self.activation);
        let e = self.geom.expectation(&pred);
        let e_norm = e.norm();
        let dist = distribution_loss(&pred, &self.target)?;

        // d(direction + lambda_sigma * spread) / dE, or None when those terms are skipped.
        let (direction, spread, d_e) = if e_norm > EXPECTATION_GUARD {
            let e_hat = e / e_norm;
            let cos = e_hat.dot(&self.target_dir);
            let d_dir = -(self.target_dir - e_hat * cos) / e_norm;
            let d_spread = -e_hat * self.weights.lambda_sigma;
            (-cos.clamp(-1.0, 1.0), 1.0 - e_norm, Some(d_dir + d_spread))
        } else {
            match self.policy {
                DegeneratePolicy::Error => {
                    return Err(Error::DegenerateDirection {
                        norm: e_norm,
                        threshold: EXPECTATION_GUARD,
                    })
                }
                DegeneratePolicy::Skip => (0.0, 1.0, None),
            }
        };
        let breakdown = LossBreakdown::assemble(direction, dist, spread, &self.weights);
        if !want_grad {
            return Ok((breakdown, None));
        }

        // dL/dP_k, then through P = f(u) / Z:
        // dL/du_l = f'(u_l)/Z * (G_l - sin_l * sum_k G_k P_k).
        let n = self.geom.spec().len() as f64;
        let probs = pred.probs();
        let target = self.target.probs();
        let d_dist = 2.0 * self.weights.lambda_d / n;
        let dl_dp: Vec<f64> = (0..probs.len())
            .map(|k| {
                let s = self.geom.cell_sin(k);
                let mut g = d_dist * (probs[k] - target[k]) * s;
                if let Some(d_e) = &d_e {
                    g += d_e.dot(self.geom.cell_dir(k)) * s;
                }
                g
            })
            .collect();
        let coupling: f64 = dl_dp.iter().zip(probs).map(|(g, p)| g * p).sum();
        let grad = dl_dp
            .iter()
            .enumerate()
            .map(|(l, g)| slopes[l] * (g - self.geom.cell_sin(l) * coupling))
            .collect();
        Ok((breakdown, Some(grad)))
    }
}

/// Combined loss with the default softplus activation; a degenerate prediction is an
/// error.
pub fn combined_loss(
    raw: &RawGrid,
    target: &SphericalDistribution,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    DirectionalLoss::new(target.clone(), *weights, Activation::Softplus)?.evaluate(raw)
}

/// Gradient of [`combined_loss`] with respect to every raw cell.
pub fn combined_loss_grad(
    raw: &RawGrid,
    target: &SphericalDistribution,
    weights: &LossWeights,
) -> Result<RawGrid> {
    let (_, g) = DirectionalLoss::new(target.clone(), *weights, Activation::Softplus)?
        .evaluate_with_grad(raw)?;
    RawGrid::new(raw.spec(), g)
}

/// Sum of the combined losses of the three rotation columns.
pub fn rotation_loss(
    grids: &[RawGrid; 3],
    targets: &[SphericalDistribution; 3],
    weights: &LossWeights,
) -> Result<f64> {
    let spec = grids[0].spec();
    if grids.iter().any(|g| g.spec() != spec) || targets.iter().any(|t| t.spec() != spec) {
        return Err(Error::usage("rotation loss grids differ"));
    }
    grids
        .iter()
        .zip(targets)
        .map(|(g, t)| combined_loss(g, t, weights).map(|b| b.total))
        .sum()
}
