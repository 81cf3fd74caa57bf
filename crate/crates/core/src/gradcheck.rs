//! Finite-difference verification of the full pipeline gradient
//! (backbone → head → combined loss).
//!
//! Each parameter is perturbed by ±h and the central difference compared with
//! the analytic batch gradient. Coordinates whose perturbation flips a ReLU,
//! a hinge, or the arccos clamp are skipped and counted, since the loss is not
//! differentiable across those kinks.

use std::fmt;

use crate::data::{generate_synthetic, Dataset, PairBatch, PairSampler, SyntheticConfig};
use crate::error::Result;
use crate::head::{HeadKind, NormMode};
use crate::losses::{self, LossConfig};
use crate::model::PoseModel;
use crate::network::{Activation, BackboneConfig};
use crate::parallel::{self, Execution};
use crate::seed;
use crate::trainer;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckCase {
    pub seed: u64,
    pub head: HeadKind,
    pub beta: f64,
    pub activation: Activation,
}

impl fmt::Display for GradcheckCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} head={} beta={} activation={}",
            self.seed, self.head, self.beta, self.activation
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub case: GradcheckCase,
    pub num_params: usize,
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.worst_rel_error <= tolerance
    }
}

/// Activation pattern of every non-smooth point the loss passes through.
fn kink_signature(model: &PoseModel, data: &Dataset, batch: &PairBatch, cfg: &LossConfig) -> Result<(f64, Vec<bool>)> {
    let mut sig = Vec::new();
    let mut preds = Vec::with_capacity(batch.len());
    for &(a, b) in &batch.pairs {
        let mut ys = [Default::default(); 2];
        for (slot, idx) in [a, b].into_iter().enumerate() {
            let s = &data.samples()[idx];
            let (y, trace) = model.forward(&s.features, NormMode::Training)?;
            if model.backbone.config().activation == Activation::Relu {
                for z in trace.backbone.pre_activations.iter().flatten() {
                    sig.push(*z > 0.0);
                }
            }
            sig.extend(model.head.clamp_active(&trace.features, NormMode::Training)?);
            ys[slot] = y;
        }
        preds.push(losses::PairPrediction::new(ys[0], ys[1], data.samples()[a].pose, data.samples()[b].pose));
    }
    for p in &preds {
        sig.extend(losses::hinge_arguments(p).map(|h| h > 0.0));
    }
    let loss = losses::combined_loss(&preds, cfg)?.combined;
    Ok((loss, sig))
}

fn fixture(case: &GradcheckCase) -> Result<(PoseModel, Dataset, PairBatch)> {
    let data = generate_synthetic(&SyntheticConfig {
        num_identities: 4,
        samples_per_identity: 3,
        input_dim: 6,
        nuisance_dim: 3,
        seed: seed::derive_seed(case.seed, "gradcheck-data"),
        ..SyntheticConfig::default()
    })?;
    let backbone = BackboneConfig {
        input_dim: 6,
        hidden_dims: vec![16, 10],
        activation: case.activation,
        seed: seed::derive_seed(case.seed, "gradcheck-init"),
    };
    let model = PoseModel::init(&backbone, case.head)?;
    let batch = PairSampler::new(&data)?.sample(4, &mut seed::stream(case.seed, "gradcheck-pairs"));
    Ok((model, data, batch))
}

pub fn check_case(case: GradcheckCase, step: f64) -> Result<GradcheckReport> {
    let (model, data, batch) = fixture(&case)?;
    let cfg = LossConfig::new(case.beta)?;
    let analytic = trainer::batch_gradient(&model, &data, &batch, &cfg, NormMode::Training, Execution::Sequential)?
        .grad
        .flatten();
    let (_, base_sig) = kink_signature(&model, &data, &batch, &cfg)?;
    let theta = model.flatten();

    let mut report = GradcheckReport {
        case,
        num_params: theta.len(),
        checked: 0,
        skipped: 0,
        worst_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = model.clone();
    let mut shifted = theta.clone();
    for k in 0..theta.len() {
        shifted[k] = theta[k] + step;
        probe.assign_flat(&shifted)?;
        let (plus, sig_plus) = kink_signature(&probe, &data, &batch, &cfg)?;
        shifted[k] = theta[k] - step;
        probe.assign_flat(&shifted)?;
        let (minus, sig_minus) = kink_signature(&probe, &data, &batch, &cfg)?;
        shifted[k] = theta[k];
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = relative_error(analytic[k], numeric);
        report.checked += 1;
        if rel > report.worst_rel_error {
            report.worst_rel_error = rel;
            report.worst_index = k;
            report.worst_analytic = analytic[k];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

/// Every seed × head × β ∈ {0, 0.5, 1} × activation.
pub fn suite_cases(seeds: &[u64]) -> Vec<GradcheckCase> {
    let mut cases = Vec::new();
    for &seed in seeds {
        for head in HeadKind::ALL {
            for beta in [0.0, 0.5, 1.0] {
                for activation in [Activation::Tanh, Activation::Relu] {
                    cases.push(GradcheckCase {
                        seed,
                        head,
                        beta,
                        activation,
                    });
                }
            }
        }
    }
    cases
}

pub fn run_suite(seeds: &[u64], exec: Execution) -> Result<Vec<GradcheckReport>> {
    let cases = suite_cases(seeds);
    parallel::map_ordered(&cases, exec, |&c| check_case(c, DEFAULT_STEP))
        .into_iter()
        .collect()
}
