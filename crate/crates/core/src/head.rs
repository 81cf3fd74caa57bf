//! Output heads mapping a backbone feature vector to (yaw, pitch, roll).
//!
//! Three transforms are provided:
//!
//! | kind     | output                                        | range            |
//! |----------|-----------------------------------------------|------------------|
//! | `Dot`    | `W_jᵀ F`                                      | unbounded        |
//! | `Cosine` | `α · Ŵ_jᵀ F̂` with `α = π/2`                   | `[-π/2, π/2]`    |
//! | `Arccos` | `arccos(clamp(Ŵ_jᵀ F̂)) - π/2`                 | `(-π/2, π/2)`    |
//!
//! `F̂` and `Ŵ_j` are L2-normalized inside the forward pass, so gradients flow
//! through the normalization and the optimizer works on raw, unconstrained
//! weights.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Norms at or below this are rejected in strict mode and used as the
/// stabilizer in training mode.
pub const NORM_EPSILON: f64 = 1e-12;

/// Default clamp applied to the inner product before `arccos`.
pub const CLAMP_EPSILON: f64 = 1e-7;

/// Number of regressed angles.
pub const NUM_ANGLES: usize = 3;

pub const ANGLE_NAMES: [&str; NUM_ANGLES] = ["yaw", "pitch", "roll"];

/// Euler angles in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseAngles {
    pub const ZERO: PoseAngles = PoseAngles {
        yaw: 0.0,
        pitch: 0.0,
        roll: 0.0,
    };

    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn from_array(a: [f64; NUM_ANGLES]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; NUM_ANGLES] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn get(&self, d: usize) -> f64 {
        self.to_array()[d]
    }

    /// True when every component lies in the closed Euler range.
    pub fn in_euler_range(&self) -> bool {
        self.to_array().iter().all(|a| a.abs() <= FRAC_PI_2)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|a| a.is_finite())
    }
}

/// How degenerate norms are handled during normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Inference and tests: a norm `<= NORM_EPSILON` is an error.
    Strict,
    /// Training: divide by `‖v‖ + NORM_EPSILON`, never fails.
    Training,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn divisor(n: f64, mode: NormMode) -> Result<f64> {
    match mode {
        NormMode::Strict if n <= NORM_EPSILON => Err(Error::ZeroNormVector { norm: n }),
        NormMode::Strict => Ok(n),
        NormMode::Training => Ok(n + NORM_EPSILON),
    }
}

/// Rescales `v` to unit L2 length.
pub fn l2_normalize(v: &[f64], mode: NormMode) -> Result<Vec<f64>> {
    let s = divisor(norm(v), mode)?;
    Ok(v.iter().map(|x| x / s).collect())
}

/// Pulls `grad_u` (gradient w.r.t. `u = v / s`) back to a gradient w.r.t. `v`.
///
/// With `s = ‖v‖ (+ε)`: `∂u/∂v = I/s - v vᵀ / (‖v‖ s²)`.
pub fn l2_normalize_backward(v: &[f64], grad_u: &[f64], mode: NormMode) -> Result<Vec<f64>> {
    let n = norm(v);
    let s = divisor(n, mode)?;
    let proj = if n > 0.0 {
        v.iter().zip(grad_u).map(|(a, b)| a * b).sum::<f64>() / (n * s * s)
    } else {
        0.0
    };
    Ok(v.iter().zip(grad_u).map(|(x, g)| g / s - x * proj).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Dot,
    Cosine,
    Arccos,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Dot, HeadKind::Cosine, HeadKind::Arccos];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Dot => "dot",
            HeadKind::Cosine => "cosine",
            HeadKind::Arccos => "arccos",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dot" => Ok(HeadKind::Dot),
            "cosine" | "cos" => Ok(HeadKind::Cosine),
            "arccos" | "acos" => Ok(HeadKind::Arccos),
            other => Err(Error::InvalidConfig(format!(
                "unknown head kind '{other}' (expected dot, cosine or arccos)"
            ))),
        }
    }
}

/// Gradients returned by [`OutputHead::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    /// Same row-major `D×3` layout as [`OutputHead::weights`].
    pub weights: Vec<f64>,
    pub features: Vec<f64>,
}

/// Final layer: a `D×3` weight matrix plus the output transform.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    kind: HeadKind,
    dim: usize,
    /// Row-major `D×3`; column `j` holds the weights for angle `j`.
    weights: Vec<f64>,
    alpha: f64,
    clamp_epsilon: f64,
}

impl OutputHead {
    pub fn new(kind: HeadKind, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("head input dimension must be > 0".into()));
        }
        if weights.len() != dim * NUM_ANGLES {
            return Err(Error::dims("head weights", dim * NUM_ANGLES, weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("head weights must be finite".into()));
        }
        Ok(Self {
            kind,
            dim,
            weights,
            alpha: FRAC_PI_2,
            clamp_epsilon: CLAMP_EPSILON,
        })
    }

    /// Glorot-uniform initialization with fan-in `dim` and fan-out 3.
    pub fn init(kind: HeadKind, dim: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (6.0 / (dim + NUM_ANGLES) as f64).sqrt();
        let weights = (0..dim * NUM_ANGLES)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self::new(kind, dim, weights)
    }

    pub fn with_clamp_epsilon(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "clamp epsilon {eps} must lie in (0, 1)"
            )));
        }
        self.clamp_epsilon = eps;
        Ok(self)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn clamp_epsilon(&self) -> f64 {
        self.clamp_epsilon
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.weights[i * NUM_ANGLES + j]).collect()
    }

    fn check_features(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim {
            return Err(Error::dims("feature vector", self.dim, f.len()));
        }
        Ok(())
    }

    /// Inner products `Ŵ_jᵀ F̂` (normalized kinds) or `W_jᵀ F` (dot), before
    /// any transform.
    fn projections(&self, f: &[f64], mode: NormMode) -> Result<Projections> {
        self.check_features(f)?;
        match self.kind {
            HeadKind::Dot => {
                let mut raw = [0.0; NUM_ANGLES];
                for (i, fi) in f.iter().enumerate() {
                    for (j, r) in raw.iter_mut().enumerate() {
                        *r += self.weights[i * NUM_ANGLES + j] * fi;
                    }
                }
                Ok(Projections {
                    raw,
                    f_hat: Vec::new(),
                    w_hat: Vec::new(),
                })
            }
            HeadKind::Cosine | HeadKind::Arccos => {
                let f_hat = l2_normalize(f, mode)?;
                let mut w_hat = Vec::with_capacity(NUM_ANGLES);
                let mut raw = [0.0; NUM_ANGLES];
                for (j, r) in raw.iter_mut().enumerate() {
                    let col = l2_normalize(&self.column(j), mode)?;
                    *r = col.iter().zip(&f_hat).map(|(a, b)| a * b).sum();
                    w_hat.push(col);
                }
                Ok(Projections { raw, f_hat, w_hat })
            }
        }
    }

    fn clamp_bounds(&self) -> (f64, f64) {
        (-1.0 + self.clamp_epsilon, 1.0 - self.clamp_epsilon)
    }

    pub fn forward(&self, f: &[f64], mode: NormMode) -> Result<PoseAngles> {
        let p = self.projections(f, mode)?;
        let (lo, hi) = self.clamp_bounds();
        let out = p.raw.map(|x| match self.kind {
            HeadKind::Dot => x,
            HeadKind::Cosine => self.alpha * x,
            HeadKind::Arccos => x.clamp(lo, hi).acos() - FRAC_PI_2,
        });
        Ok(PoseAngles::from_array(out))
    }

    /// Which angles currently sit in the clamped (zero-gradient) region.
    pub fn clamp_active(&self, f: &[f64], mode: NormMode) -> Result<[bool; NUM_ANGLES]> {
        if self.kind != HeadKind::Arccos {
            self.check_features(f)?;
            return Ok([false; NUM_ANGLES]);
        }
        let p = self.projections(f, mode)?;
        let (lo, hi) = self.clamp_bounds();
        Ok(p.raw.map(|x| x < lo || x > hi))
    }

    /// Exact partial derivatives of [`forward`](Self::forward) contracted with
    /// `upstream`.
    pub fn backward(&self, f: &[f64], upstream: PoseAngles, mode: NormMode) -> Result<HeadGrad> {
        let p = self.projections(f, mode)?;
        let up = upstream.to_array();
        let d = self.dim;

        if self.kind == HeadKind::Dot {
            let mut gw = vec![0.0; d * NUM_ANGLES];
            let mut gf = vec![0.0; d];
            for i in 0..d {
                for j in 0..NUM_ANGLES {
                    gw[i * NUM_ANGLES + j] = up[j] * f[i];
                    gf[i] += up[j] * self.weights[i * NUM_ANGLES + j];
                }
            }
            return Ok(HeadGrad {
                weights: gw,
                features: gf,
            });
        }

        let (lo, hi) = self.clamp_bounds();
        let grad_x: [f64; NUM_ANGLES] = std::array::from_fn(|j| {
            let x = p.raw[j];
            let dydx = match self.kind {
                HeadKind::Cosine => self.alpha,
                HeadKind::Arccos if x < lo || x > hi => 0.0,
                HeadKind::Arccos => -1.0 / (1.0 - x * x).sqrt(),
                HeadKind::Dot => unreachable!(),
            };
            up[j] * dydx
        });

        let mut grad_f_hat = vec![0.0; d];
        let mut gw = vec![0.0; d * NUM_ANGLES];
        for j in 0..NUM_ANGLES {
            for (g, w) in grad_f_hat.iter_mut().zip(&p.w_hat[j]) {
                *g += grad_x[j] * w;
            }
            let grad_w_hat: Vec<f64> = p.f_hat.iter().map(|x| grad_x[j] * x).collect();
            let col = self.column(j);
            let grad_col = l2_normalize_backward(&col, &grad_w_hat, mode)?;
            for (i, g) in grad_col.into_iter().enumerate() {
                gw[i * NUM_ANGLES + j] = g;
            }
        }
        let gf = l2_normalize_backward(f, &grad_f_hat, mode)?;
        Ok(HeadGrad {
            weights: gw,
            features: gf,
        })
    }
}

struct Projections {
    raw: [f64; NUM_ANGLES],
    f_hat: Vec<f64>,
    w_hat: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn head_with_columns(kind: HeadKind, cols: [&[f64]; 3]) -> OutputHead {
        let d = cols[0].len();
        let mut w = vec![0.0; d * 3];
        for (j, c) in cols.iter().enumerate() {
            for i in 0..d {
                w[i * 3 + j] = c[i];
            }
        }
        OutputHead::new(kind, d, w).unwrap()
    }

    #[test]
    fn normalize_pythagorean() {
        let u = l2_normalize(&[3.0, 4.0], NormMode::Strict).unwrap();
        assert_eq!(u, vec![0.6, 0.8]);
        let u = l2_normalize(&[1.0, 0.0, 0.0], NormMode::Strict).unwrap();
        assert_eq!(u, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector() {
        assert!(matches!(
            l2_normalize(&[0.0, 0.0], NormMode::Strict),
            Err(Error::ZeroNormVector { .. })
        ));
        assert_eq!(
            l2_normalize(&[0.0, 0.0], NormMode::Training).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn cosine_colinear_gives_half_pi() {
        let h = head_with_columns(HeadKind::Cosine, [&[2.0, 0.0], &[1.0, 0.0], &[5.0, 0.0]]);
        let y = h.forward(&[3.0, 0.0], NormMode::Strict).unwrap();
        assert_eq!(y.to_array(), [FRAC_PI_2; 3]);
    }

    #[test]
    fn arccos_orthogonal_is_zero() {
        let h = head_with_columns(HeadKind::Arccos, [&[0.0, 1.0], &[0.0, 2.0], &[0.0, -1.0]]);
        let y = h.forward(&[1.0, 0.0], NormMode::Strict).unwrap();
        for a in y.to_array() {
            assert_abs_diff_eq!(a, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn arccos_antipodal_is_clamped_near_half_pi() {
        let h = head_with_columns(HeadKind::Arccos, [&[-1.0, 0.0], &[-1.0, 0.0], &[-1.0, 0.0]]);
        let y = h.forward(&[1.0, 0.0], NormMode::Strict).unwrap();
        let expected = (-1.0 + CLAMP_EPSILON).acos() - FRAC_PI_2;
        for a in y.to_array() {
            assert_eq!(a, expected);
            assert!(a < FRAC_PI_2);
            // distance to the exact limit is arccos(1 - ε) ≈ √(2ε)
            assert!(FRAC_PI_2 - a <= (2.0 * CLAMP_EPSILON).sqrt() * (1.0 + 1e-6));
        }
        // clamped region has zero gradient
        let g = h
            .backward(&[1.0, 0.0], PoseAngles::new(1.0, 1.0, 1.0), NormMode::Strict)
            .unwrap();
        assert!(g.weights.iter().chain(&g.features).all(|&x| x == 0.0));
        assert_eq!(h.clamp_active(&[1.0, 0.0], NormMode::Strict).unwrap(), [true; 3]);
    }

    #[test]
    fn dot_is_plain_inner_product() {
        let h = head_with_columns(HeadKind::Dot, [&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let y = h.forward(&[3.0, 4.0], NormMode::Strict).unwrap();
        assert_eq!(y.to_array(), [11.0; 3]);
    }

    #[test]
    fn dot_backward_is_outer_product() {
        let h = head_with_columns(HeadKind::Dot, [&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0]]);
        let up = PoseAngles::new(0.5, -2.0, 1.0);
        let g = h.backward(&[3.0, 4.0], up, NormMode::Strict).unwrap();
        for j in 0..3 {
            assert_eq!(g.weights[j], up.get(j) * 3.0);
            assert_eq!(g.weights[3 + j], up.get(j) * 4.0);
        }
        assert_eq!(g.features, vec![0.5 * 1.0 - 2.0 * 0.5 + 3.0, 0.5 * 2.0 + 2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rng_from(3);
        let h = OutputHead::init(HeadKind::Cosine, 5, &mut rng).unwrap();
        let f = l2_normalize(&[1.0, -2.0, 0.5, 0.3, 2.0], NormMode::Strict).unwrap();
        let g = h.backward(&f, PoseAngles::ZERO, NormMode::Strict).unwrap();
        assert!(g.weights.iter().chain(&g.features).all(|&x| x == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = rng_from(3);
        let h = OutputHead::init(HeadKind::Arccos, 4, &mut rng).unwrap();
        assert!(matches!(
            h.forward(&[1.0, 2.0], NormMode::Strict),
            Err(Error::DimensionMismatch { expected: 4, actual: 2, .. })
        ));
        assert!(OutputHead::new(HeadKind::Dot, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn strict_mode_rejects_zero_features() {
        let mut rng = rng_from(3);
        let h = OutputHead::init(HeadKind::Cosine, 3, &mut rng).unwrap();
        assert!(matches!(
            h.forward(&[0.0; 3], NormMode::Strict),
            Err(Error::ZeroNormVector { .. })
        ));
        let y = h.forward(&[0.0; 3], NormMode::Training).unwrap();
        assert_eq!(y, PoseAngles::ZERO);
    }

    // Central differences of a scalar probe `upstream · forward`.
    fn fd_check(kind: HeadKind, seed: u64) {
        let mut rng = rng_from(seed);
        let d = 6;
        let h = OutputHead::init(kind, d, &mut rng).unwrap();
        let f: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up = PoseAngles::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let probe = |h: &OutputHead, f: &[f64]| -> f64 {
            let y = h.forward(f, NormMode::Strict).unwrap();
            y.to_array().iter().zip(up.to_array()).map(|(a, b)| a * b).sum()
        };
        let g = h.backward(&f, up, NormMode::Strict).unwrap();
        let step = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        for k in 0..h.weights.len() {
            let mut hp = h.clone();
            hp.weights[k] += step;
            let mut hm = h.clone();
            hm.weights[k] -= step;
            let num = (probe(&hp, &f) - probe(&hm, &f)) / (2.0 * step);
            assert!(rel(g.weights[k], num) <= 1e-6, "{kind} w[{k}]: {} vs {num}", g.weights[k]);
        }
        for k in 0..d {
            let mut fp = f.clone();
            fp[k] += step;
            let mut fm = f.clone();
            fm[k] -= step;
            let num = (probe(&h, &fp) - probe(&h, &fm)) / (2.0 * step);
            assert!(rel(g.features[k], num) <= 1e-6, "{kind} f[{k}]: {} vs {num}", g.features[k]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            for kind in HeadKind::ALL {
                fd_check(kind, seed);
            }
        }
    }

    #[test]
    fn normalize_backward_training_mode_matches_fd() {
        let v = [0.3, -0.7, 1.1];
        let g = [0.2, 0.5, -0.4];
        let probe = |v: &[f64]| -> f64 {
            let u = l2_normalize(v, NormMode::Training).unwrap();
            u.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let an = l2_normalize_backward(&v, &g, NormMode::Training).unwrap();
        for k in 0..3 {
            let mut p = v;
            p[k] += 1e-6;
            let mut m = v;
            m[k] -= 1e-6;
            let num = (probe(&p) - probe(&m)) / 2e-6;
            assert_abs_diff_eq!(an[k], num, epsilon = 1e-9);
        }
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, d)
    }

    proptest! {
        #[test]
        fn normalized_heads_are_scale_invariant(
            f in vec_strategy(5),
            w in vec_strategy(15),
            c in prop_oneof![Just(1e-3), Just(1.0), Just(1e3), 1e-2..1e2f64],
        ) {
            prop_assume!(f.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            prop_assume!((0..3).all(|j| (0..5).map(|i| w[i * 3 + j].powi(2)).sum::<f64>() > 1e-6));
            for kind in [HeadKind::Cosine, HeadKind::Arccos] {
                let h = OutputHead::new(kind, 5, w.clone()).unwrap();
                let scaled: Vec<f64> = f.iter().map(|x| c * x).collect();
                let a = h.forward(&f, NormMode::Strict).unwrap().to_array();
                let b = h.forward(&scaled, NormMode::Strict).unwrap().to_array();
                for d in 0..3 {
                    prop_assert!((a[d] - b[d]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn normalized_heads_are_bounded(f in vec_strategy(4), w in vec_strategy(12)) {
            prop_assume!(f.iter().any(|x| x.abs() > 1e-3));
            prop_assume!((0..3).all(|j| (0..4).any(|i| w[i * 3 + j].abs() > 1e-3)));
            let a = OutputHead::new(HeadKind::Arccos, 4, w.clone()).unwrap()
                .forward(&f, NormMode::Strict).unwrap();
            prop_assert!(a.to_array().iter().all(|y| y.abs() < FRAC_PI_2));
            let c = OutputHead::new(HeadKind::Cosine, 4, w).unwrap()
                .forward(&f, NormMode::Strict).unwrap();
            prop_assert!(c.to_array().iter().all(|y| y.abs() <= FRAC_PI_2));
        }

        #[test]
        fn arccos_decreasing_cosine_increasing(x1 in -0.999..0.999f64, x2 in -0.999..0.999f64) {
            prop_assume!((x1 - x2).abs() > 1e-9);
            // unit feature e0; column chosen so that Ŵᵀ F̂ equals x
            let out = |kind, x: f64| {
                let col = [x, (1.0 - x * x).sqrt()];
                let h = head_with_columns(kind, [&col, &col, &col]);
                h.forward(&[1.0, 0.0], NormMode::Strict).unwrap().yaw
            };
            let (lo, hi) = if x1 < x2 { (x1, x2) } else { (x2, x1) };
            prop_assert!(out(HeadKind::Arccos, lo) > out(HeadKind::Arccos, hi));
            prop_assert!(out(HeadKind::Cosine, lo) < out(HeadKind::Cosine, hi));
        }
    }
}
