//! Multilayer perceptron backbone with exact backpropagation.
//!
//! Every layer is affine followed by the configured activation, including the
//! last one, whose output is the feature vector handed to the head.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// ReLU uses 0 at the kink.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation '{other}' (expected relu or tanh)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dims: vec![128, 64],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be > 0".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig("at least one hidden layer is required".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be > 0".into()));
        }
        Ok(())
    }

    /// Width of the feature vector (last hidden layer).
    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated config has a hidden layer")
    }
}

/// One affine layer; `weights` is row-major `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            fan_in,
            fan_out,
            weights,
            bias: vec![0.0; fan_out],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        z
    }
}

/// Activations retained from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    layers: Vec<Dense>,
}

impl Backbone {
    /// Glorot-uniform weights, zero biases; deterministic in `cfg.seed`.
    pub fn init(cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng_from(cfg.seed);
        let mut fan_in = cfg.input_dim;
        let mut layers = Vec::with_capacity(cfg.hidden_dims.len());
        for &width in &cfg.hidden_dims {
            layers.push(Dense::glorot(fan_in, width, &mut rng));
            fan_in = width;
        }
        Ok(Self {
            config: cfg.clone(),
            layers,
        })
    }

    pub fn from_layers(cfg: BackboneConfig, layers: Vec<Dense>) -> Result<Self> {
        cfg.validate()?;
        if layers.len() != cfg.hidden_dims.len() {
            return Err(Error::dims("backbone layer count", cfg.hidden_dims.len(), layers.len()));
        }
        let mut fan_in = cfg.input_dim;
        for (k, (layer, &width)) in layers.iter().zip(&cfg.hidden_dims).enumerate() {
            if layer.fan_in != fan_in || layer.fan_out != width {
                return Err(Error::InvalidConfig(format!(
                    "layer {k} is {}x{}, expected {fan_in}x{width}",
                    layer.fan_in, layer.fan_out
                )));
            }
            if layer.weights.len() != fan_in * width || layer.bias.len() != width {
                return Err(Error::InvalidConfig(format!("layer {k} has malformed arrays")));
            }
            fan_in = width;
        }
        Ok(Self { config: cfg, layers })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if x.len() != self.config.input_dim {
            return Err(Error::dims("backbone input", self.config.input_dim, x.len()));
        }
        let act = self.config.activation;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let z = layer.affine(input);
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let f = post.last().cloned().unwrap_or_default();
        Ok((
            f,
            ForwardTrace {
                input: x.to_vec(),
                pre_activations: pre,
                activations: post,
            },
        ))
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.input.len() != self.config.input_dim {
            return Err(Error::TraceMismatch(format!(
                "input width {} vs {}",
                trace.input.len(),
                self.config.input_dim
            )));
        }
        if trace.activations.len() != self.layers.len()
            || trace.pre_activations.len() != self.layers.len()
        {
            return Err(Error::TraceMismatch(format!(
                "{} traced layers vs {}",
                trace.activations.len(),
                self.layers.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if trace.activations[k].len() != layer.fan_out
                || trace.pre_activations[k].len() != layer.fan_out
            {
                return Err(Error::TraceMismatch(format!("layer {k} width differs")));
            }
        }
        Ok(())
    }

    /// Gradients w.r.t. every parameter and the input, given `∂L/∂F`.
    pub fn backward(&self, trace: &ForwardTrace, grad_f: &[f64]) -> Result<(BackboneGrad, Vec<f64>)> {
        self.check_trace(trace)?;
        if grad_f.len() != self.feature_dim() {
            return Err(Error::TraceMismatch(format!(
                "feature gradient width {} vs {}",
                grad_f.len(),
                self.feature_dim()
            )));
        }
        let act = self.config.activation;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_f.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&trace.pre_activations[k])
                .zip(&trace.activations[k])
                .map(|((g, &z), &a)| g * act.derivative(z, a))
                .collect();
            let input = if k == 0 {
                &trace.input
            } else {
                &trace.activations[k - 1]
            };
            let mut g = Dense::zeros(layer.fan_in, layer.fan_out);
            let mut grad_in = vec![0.0; layer.fan_in];
            for (i, xi) in input.iter().enumerate() {
                let row = i * layer.fan_out..(i + 1) * layer.fan_out;
                for ((gw, w), dj) in g.weights[row.clone()]
                    .iter_mut()
                    .zip(&layer.weights[row])
                    .zip(&delta)
                {
                    *gw = xi * dj;
                    grad_in[i] += w * dj;
                }
            }
            g.bias = delta;
            grads.push(g);
            upstream = grad_in;
        }
        grads.reverse();
        Ok((BackboneGrad { layers: grads }, upstream))
    }
}

/// Parameter gradients shaped like the backbone's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneGrad {
    pub layers: Vec<Dense>,
}

impl BackboneGrad {
    pub fn zeros_like(backbone: &Backbone) -> Self {
        Self {
            layers: backbone
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &BackboneGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;

    fn cfg(input_dim: usize, hidden: &[usize], activation: Activation, seed: u64) -> BackboneConfig {
        BackboneConfig {
            input_dim,
            hidden_dims: hidden.to_vec(),
            activation,
            seed,
        }
    }

    // Naive triple loop, independent of Dense::affine.
    fn forward_oracle(net: &Backbone, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.fan_out];
            for j in 0..layer.fan_out {
                let mut z = layer.bias[j];
                for i in 0..layer.fan_in {
                    z += a[i] * layer.weights[i * layer.fan_out + j];
                }
                next[j] = match net.config().activation {
                    Activation::Relu => {
                        if z > 0.0 {
                            z
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => z.tanh(),
                };
            }
            a = next;
        }
        a
    }

    #[test]
    fn init_is_deterministic() {
        let c = cfg(8, &[16, 4], Activation::Relu, 42);
        assert_eq!(Backbone::init(&c).unwrap(), Backbone::init(&c).unwrap());
        let other = cfg(8, &[16, 4], Activation::Relu, 43);
        assert_ne!(Backbone::init(&c).unwrap(), Backbone::init(&other).unwrap());
    }

    #[test]
    fn init_shapes() {
        let net = Backbone::init(&cfg(2, &[4], Activation::Relu, 0)).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.layers()[0].weights.len(), 8);
        assert_eq!(net.layers()[0].bias, vec![0.0; 4]);
        assert_eq!(net.num_params(), 12);
    }

    #[test]
    fn init_respects_glorot_bound() {
        let net = Backbone::init(&cfg(3, &[3], Activation::Tanh, 9)).unwrap();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= 1.0));
        let net = Backbone::init(&cfg(32, &[128, 64], Activation::Relu, 9)).unwrap();
        let b0 = (6.0f64 / 160.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= b0));
    }

    #[test]
    fn invalid_configs() {
        assert!(Backbone::init(&cfg(0, &[4], Activation::Relu, 0)).is_err());
        assert!(Backbone::init(&cfg(2, &[], Activation::Relu, 0)).is_err());
        assert!(Backbone::init(&cfg(2, &[4, 0], Activation::Relu, 0)).is_err());
    }

    #[test]
    fn zero_network_gives_zero_features() {
        let c = cfg(3, &[5, 2], Activation::Relu, 0);
        let layers = vec![Dense::zeros(3, 5), Dense::zeros(5, 2)];
        let net = Backbone::from_layers(c, layers).unwrap();
        let (f, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
    }

    #[test]
    fn tanh_identity_on_zero_input() {
        let c = cfg(3, &[3], Activation::Tanh, 0);
        let mut layer = Dense::zeros(3, 3);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let net = Backbone::from_layers(c, vec![layer]).unwrap();
        assert_eq!(net.forward(&[0.0; 3]).unwrap().0, vec![0.0; 3]);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = rng_from(5);
        for seed in 0..10 {
            for act in [Activation::Relu, Activation::Tanh] {
                let net = Backbone::init(&cfg(7, &[11, 6, 5], act, seed)).unwrap();
                let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (f, trace) = net.forward(&x).unwrap();
                let oracle = forward_oracle(&net, &x);
                for (a, b) in f.iter().zip(&oracle) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
                assert_eq!(trace.num_layers(), 3);
            }
        }
    }

    #[test]
    fn input_width_is_checked() {
        let net = Backbone::init(&cfg(4, &[3], Activation::Relu, 0)).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 4, actual: 1, .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Backbone::init(&cfg(4, &[6, 3], Activation::Tanh, 1)).unwrap();
        let (_, trace) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let (g, gx) = net.backward(&trace, &[0.0; 3]).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0)));
        assert_eq!(gx, vec![0.0; 4]);
    }

    #[test]
    fn single_active_layer_gradient_is_outer_product() {
        let c = cfg(2, &[2], Activation::Relu, 0);
        let layer = Dense {
            fan_in: 2,
            fan_out: 2,
            weights: vec![1.0, 0.5, 0.5, 1.0],
            bias: vec![0.1, 0.1],
        };
        let net = Backbone::from_layers(c, vec![layer]).unwrap();
        let x = [2.0, 3.0];
        let (_, trace) = net.forward(&x).unwrap();
        let gf = [0.7, -1.3];
        let (g, _) = net.backward(&trace, &gf).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(g.layers[0].weights[i * 2 + j], x[i] * gf[j]);
            }
        }
        assert_eq!(g.layers[0].bias, gf.to_vec());
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let a = Backbone::init(&cfg(4, &[6, 3], Activation::Tanh, 1)).unwrap();
        let b = Backbone::init(&cfg(4, &[5, 3], Activation::Tanh, 1)).unwrap();
        let (_, trace) = b.forward(&[0.0; 4]).unwrap();
        assert!(matches!(a.backward(&trace, &[0.0; 3]), Err(Error::TraceMismatch(_))));
        let (_, trace) = a.forward(&[0.0; 4]).unwrap();
        assert!(matches!(a.backward(&trace, &[0.0; 2]), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let step = 1e-5;
        let mut rng = rng_from(77);
        for seed in 0..5 {
            let mut net = Backbone::init(&cfg(4, &[7, 5], Activation::Tanh, seed)).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |net: &Backbone, x: &[f64]| -> f64 {
                let (f, _) = net.forward(x).unwrap();
                f.iter().zip(&probe).map(|(a, b)| a * b).sum()
            };
            let (_, trace) = net.forward(&x).unwrap();
            let (g, gx) = net.backward(&trace, &probe).unwrap();
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            for k in 0..net.layers().len() {
                for idx in 0..net.layers()[k].weights.len() {
                    let orig = net.layers()[k].weights[idx];
                    net.layers_mut()[k].weights[idx] = orig + step;
                    let fp = objective(&net, &x);
                    net.layers_mut()[k].weights[idx] = orig - step;
                    let fm = objective(&net, &x);
                    net.layers_mut()[k].weights[idx] = orig;
                    let num = (fp - fm) / (2.0 * step);
                    assert!(rel(g.layers[k].weights[idx], num) <= 1e-6);
                }
                for idx in 0..net.layers()[k].bias.len() {
                    let orig = net.layers()[k].bias[idx];
                    net.layers_mut()[k].bias[idx] = orig + step;
                    let fp = objective(&net, &x);
                    net.layers_mut()[k].bias[idx] = orig - step;
                    let fm = objective(&net, &x);
                    net.layers_mut()[k].bias[idx] = orig;
                    let num = (fp - fm) / (2.0 * step);
                    assert!(rel(g.layers[k].bias[idx], num) <= 1e-6);
                }
            }
            for i in 0..4 {
                let mut xp = x.clone();
                xp[i] += step;
                let mut xm = x.clone();
                xm[i] -= step;
                let num = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * step);
                assert!(rel(gx[i], num) <= 1e-6);
            }
        }
    }
}
