//! Backbone and head composed into one shared-parameter model.

use crate::error::{Error, Result};
use crate::head::{HeadGrad, HeadKind, NormMode, OutputHead, PoseAngles};
use crate::network::{Backbone, BackboneConfig, BackboneGrad, ForwardTrace};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct PoseModel {
    pub backbone: Backbone,
    pub head: OutputHead,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub backbone: ForwardTrace,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad {
    pub backbone: BackboneGrad,
    pub head: Vec<f64>,
}

impl ModelGrad {
    pub fn zeros_like(model: &PoseModel) -> Self {
        Self {
            backbone: BackboneGrad::zeros_like(&model.backbone),
            head: vec![0.0; model.head.weights().len()],
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrad) {
        self.backbone.add_assign(&other.backbone);
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            *a += b;
        }
    }

    /// Gradient tensors in the same order as [`PoseModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.backbone.layers.len() + 1);
        for l in &self.backbone.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.head.as_slice());
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

impl PoseModel {
    /// Fresh model; backbone and head weights come from `cfg.seed`.
    pub fn init(cfg: &BackboneConfig, kind: HeadKind) -> Result<Self> {
        let backbone = Backbone::init(cfg)?;
        let mut rng = seed::stream(cfg.seed, "head");
        let head = OutputHead::init(kind, cfg.feature_dim(), &mut rng)?;
        Self::new(backbone, head)
    }

    pub fn new(backbone: Backbone, head: OutputHead) -> Result<Self> {
        if backbone.feature_dim() != head.dim() {
            return Err(Error::dims("head input width", backbone.feature_dim(), head.dim()));
        }
        Ok(Self { backbone, head })
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.config().input_dim
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params() + self.head.weights().len()
    }

    pub fn forward(&self, x: &[f64], mode: NormMode) -> Result<(PoseAngles, ModelTrace)> {
        let (features, trace) = self.backbone.forward(x)?;
        let y = self.head.forward(&features, mode)?;
        Ok((
            y,
            ModelTrace {
                backbone: trace,
                features,
            },
        ))
    }

    /// Inference: strict normalization.
    pub fn predict(&self, x: &[f64]) -> Result<PoseAngles> {
        Ok(self.forward(x, NormMode::Strict)?.0)
    }

    pub fn backward(&self, trace: &ModelTrace, upstream: PoseAngles, mode: NormMode) -> Result<ModelGrad> {
        let HeadGrad { weights, features } = self.head.backward(&trace.features, upstream, mode)?;
        let (backbone, _) = self.backbone.backward(&trace.backbone, &features)?;
        Ok(ModelGrad {
            backbone,
            head: weights,
        })
    }

    /// Mutable parameter tensors: per layer weights then bias, head last.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.backbone.layers_mut() {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.head.weights_mut());
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .backbone
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        out.push(self.head.weights().len());
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.backbone.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.head.weights());
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        let mut rest = values;
        for s in self.param_slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}
