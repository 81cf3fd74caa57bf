//! Paired MSE, pairwise ranking hinge, and their weighted combination.
//!
//! For a batch of `N` same-identity pairs with predictions `(y1, y2)` and
//! labels `(t1, t2)`:
//!
//! ```text
//! mse      = 1/N Σ_i ‖t1_i - y1_i‖² + ‖t2_i - y2_i‖²
//! ranking  = 1/N Σ_i Σ_d max(0, -sgn(t2_i^d - t1_i^d) · (y2_i^d - y1_i^d))
//! combined = β · mse + (1 - β) · ranking
//! ```
//!
//! Tied labels give `sgn = 0` and contribute nothing to the ranking term.

use crate::error::{Error, Result};
use crate::head::{PoseAngles, NUM_ANGLES};

pub const DEFAULT_BETA: f64 = 0.5;

/// Predictions and labels for the two members of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPrediction {
    pub y1: PoseAngles,
    pub y2: PoseAngles,
    pub t1: PoseAngles,
    pub t2: PoseAngles,
}

impl PairPrediction {
    pub fn new(y1: PoseAngles, y2: PoseAngles, t1: PoseAngles, t2: PoseAngles) -> Self {
        Self { y1, y2, t1, t2 }
    }

    /// The same pair with its members swapped.
    pub fn swapped(self) -> Self {
        Self::new(self.y2, self.y1, self.t2, self.t1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    beta: f64,
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidConfig(format!("beta {beta} must lie in [0, 1]")));
        }
        Ok(Self { beta })
    }

    /// β = 1: MSE only.
    pub fn mse_only() -> Self {
        Self { beta: 1.0 }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub ranking: f64,
    pub combined: f64,
}

/// Gradient of the combined loss w.r.t. both predictions of one pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairGrad {
    pub y1: PoseAngles,
    pub y2: PoseAngles,
}

/// `sgn` with an exact zero for ties.
pub fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check(batch: &[PairPrediction]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(batch.len() as f64)
}

fn pair_squared_error(p: &PairPrediction) -> f64 {
    let (y1, y2, t1, t2) = (p.y1.to_array(), p.y2.to_array(), p.t1.to_array(), p.t2.to_array());
    (0..NUM_ANGLES)
        .map(|d| (t1[d] - y1[d]).powi(2) + (t2[d] - y2[d]).powi(2))
        .sum()
}

/// Hinge argument per angle: positive when the predicted order contradicts
/// the label order.
pub fn hinge_arguments(p: &PairPrediction) -> [f64; NUM_ANGLES] {
    let (y1, y2, t1, t2) = (p.y1.to_array(), p.y2.to_array(), p.t1.to_array(), p.t2.to_array());
    std::array::from_fn(|d| -sign(t2[d] - t1[d]) * (y2[d] - y1[d]))
}

fn pair_ranking(p: &PairPrediction) -> f64 {
    hinge_arguments(p).iter().map(|h| h.max(0.0)).sum()
}

pub fn mse_loss(batch: &[PairPrediction]) -> Result<f64> {
    let n = check(batch)?;
    Ok(batch.iter().map(pair_squared_error).sum::<f64>() / n)
}

pub fn ranking_loss(batch: &[PairPrediction]) -> Result<f64> {
    let n = check(batch)?;
    Ok(batch.iter().map(pair_ranking).sum::<f64>() / n)
}

pub fn combined_loss(batch: &[PairPrediction], cfg: &LossConfig) -> Result<LossBreakdown> {
    let mse = mse_loss(batch)?;
    let ranking = ranking_loss(batch)?;
    Ok(LossBreakdown {
        mse,
        ranking,
        combined: cfg.beta * mse + (1.0 - cfg.beta) * ranking,
    })
}

/// Per-pair gradients of [`combined_loss`]`.combined`.
///
/// The hinge subgradient is 0 at its boundary and on tied labels.
pub fn loss_backward(batch: &[PairPrediction], cfg: &LossConfig) -> Result<Vec<PairGrad>> {
    let n = check(batch)?;
    let beta = cfg.beta;
    let grads = batch
        .iter()
        .map(|p| {
            let (y1, y2, t1, t2) =
                (p.y1.to_array(), p.y2.to_array(), p.t1.to_array(), p.t2.to_array());
            let hinge = hinge_arguments(p);
            let mut g1 = [0.0; NUM_ANGLES];
            let mut g2 = [0.0; NUM_ANGLES];
            for d in 0..NUM_ANGLES {
                g1[d] = beta * 2.0 * (y1[d] - t1[d]) / n;
                g2[d] = beta * 2.0 * (y2[d] - t2[d]) / n;
                if hinge[d] > 0.0 {
                    // ∂/∂y2 of -s·(y2 - y1) is -s, ∂/∂y1 is +s
                    let s = sign(t2[d] - t1[d]);
                    g1[d] += (1.0 - beta) * s / n;
                    g2[d] -= (1.0 - beta) * s / n;
                }
            }
            PairGrad {
                y1: PoseAngles::from_array(g1),
                y2: PoseAngles::from_array(g2),
            }
        })
        .collect();
    Ok(grads)
}
