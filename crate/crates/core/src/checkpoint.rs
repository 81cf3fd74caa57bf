//! Text checkpoint container for a [`TrainState`].
//!
//! ```text
//! # rankpose-checkpoint v1
//! input_dim = 32
//! hidden_dims = 128,64
//! activation = relu
//! init_seed = 1234
//! head = arccos
//! clamp_epsilon = 0.0000001
//! adam.lr0 = 0.001
//! adam.beta1 = 0.9
//! adam.beta2 = 0.999
//! adam.eps = 0.00000001
//! adam.total_steps = 480
//! adam.t = 480
//! epochs_completed = 30
//! tensor backbone.0.weights 32x128
//! <row-major values, comma separated, one line>
//! tensor backbone.0.bias 128
//! ...
//! tensor head.weights 64x3
//! tensor adam.m.0 4096
//! ...
//! tensor adam.v.4 192
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip rendering, so a load restores every
//! value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::head::{HeadKind, OutputHead, NUM_ANGLES};
use crate::model::PoseModel;
use crate::network::{Activation, Backbone, BackboneConfig, Dense};
use crate::optimizer::{AdamConfig, AdamState};
use crate::trainer::TrainState;

pub const CHECKPOINT_MAGIC: &str = "# rankpose-checkpoint v1";

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

pub fn format_checkpoint(state: &TrainState) -> String {
    let cfg = state.model.backbone.config();
    let head = &state.model.head;
    let adam = &state.adam_config;
    let mut s = String::new();
    let hidden: Vec<String> = cfg.hidden_dims.iter().map(usize::to_string).collect();
    writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(s, "input_dim = {}", cfg.input_dim).unwrap();
    writeln!(s, "hidden_dims = {}", hidden.join(",")).unwrap();
    writeln!(s, "activation = {}", cfg.activation).unwrap();
    writeln!(s, "init_seed = {}", cfg.seed).unwrap();
    writeln!(s, "head = {}", head.kind()).unwrap();
    writeln!(s, "clamp_epsilon = {}", head.clamp_epsilon()).unwrap();
    writeln!(s, "adam.lr0 = {}", adam.lr0).unwrap();
    writeln!(s, "adam.beta1 = {}", adam.beta1).unwrap();
    writeln!(s, "adam.beta2 = {}", adam.beta2).unwrap();
    writeln!(s, "adam.eps = {}", adam.eps).unwrap();
    writeln!(s, "adam.total_steps = {}", adam.total_steps).unwrap();
    writeln!(s, "adam.t = {}", state.adam.t).unwrap();
    writeln!(s, "epochs_completed = {}", state.epochs_completed).unwrap();
    for (k, layer) in state.model.backbone.layers().iter().enumerate() {
        writeln!(s, "tensor backbone.{k}.weights {}x{}", layer.fan_in, layer.fan_out).unwrap();
        writeln!(s, "{}", join(&layer.weights)).unwrap();
        writeln!(s, "tensor backbone.{k}.bias {}", layer.fan_out).unwrap();
        writeln!(s, "{}", join(&layer.bias)).unwrap();
    }
    writeln!(s, "tensor head.weights {}x{NUM_ANGLES}", head.dim()).unwrap();
    writeln!(s, "{}", join(head.weights())).unwrap();
    for (name, buffers) in [("m", &state.adam.m), ("v", &state.adam.v)] {
        for (k, b) in buffers.iter().enumerate() {
            writeln!(s, "tensor adam.{name}.{k} {}", b.len()).unwrap();
            writeln!(s, "{}", join(b)).unwrap();
        }
    }
    s.push_str("end\n");
    s
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    fs::write(path, format_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, record: usize, message: impl Into<String>) -> Error {
        Error::MalformedRecord {
            path: self.path.to_path_buf(),
            record,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| self.err(0, "unexpected end of checkpoint"))
    }

    fn key<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, line) = self.next_line()?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| self.err(n, format!("expected '{key} = ...'")))?;
        if k.trim() != key {
            return Err(self.err(n, format!("expected key '{key}', found '{}'", k.trim())));
        }
        v.trim()
            .parse()
            .map_err(|_| self.err(n, format!("bad value for '{key}': '{}'", v.trim())))
    }

    fn tensor(&mut self, name: &str, expected: usize) -> Result<Vec<f64>> {
        let (n, header) = self.next_line()?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name) {
            return Err(self.err(n, format!("expected tensor '{name}', found '{header}'")));
        }
        let (n, body) = self.next_line()?;
        let values = if body.trim().is_empty() {
            Vec::new()
        } else {
            body.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| self.err(n, format!("bad number in tensor '{name}'")))?
        };
        if values.len() != expected {
            return Err(Error::dims(format!("checkpoint tensor {name}"), expected, values.len()));
        }
        Ok(values)
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<TrainState> {
    let mut r = Reader {
        lines: text.lines().enumerate().peekable(),
        path,
    };
    let (n, magic) = r.next_line()?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(r.err(n, format!("expected '{CHECKPOINT_MAGIC}'")));
    }
    let input_dim: usize = r.key("input_dim")?;
    let hidden: String = r.key("hidden_dims")?;
    let hidden_dims = hidden
        .split(',')
        .map(|h| h.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| r.err(3, format!("bad hidden_dims '{hidden}'")))?;
    let activation: String = r.key("activation")?;
    let activation: Activation = activation.parse()?;
    let init_seed: u64 = r.key("init_seed")?;
    let head_kind: String = r.key("head")?;
    let head_kind: HeadKind = head_kind.parse()?;
    let clamp_epsilon: f64 = r.key("clamp_epsilon")?;
    let adam_config = AdamConfig {
        lr0: r.key("adam.lr0")?,
        beta1: r.key("adam.beta1")?,
        beta2: r.key("adam.beta2")?,
        eps: r.key("adam.eps")?,
        total_steps: r.key("adam.total_steps")?,
    };
    adam_config.validate()?;
    let t: u64 = r.key("adam.t")?;
    let epochs_completed: usize = r.key("epochs_completed")?;

    let cfg = BackboneConfig {
        input_dim,
        hidden_dims,
        activation,
        seed: init_seed,
    };
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.hidden_dims.len());
    let mut fan_in = input_dim;
    for (k, &fan_out) in cfg.hidden_dims.iter().enumerate() {
        let weights = r.tensor(&format!("backbone.{k}.weights"), fan_in * fan_out)?;
        let bias = r.tensor(&format!("backbone.{k}.bias"), fan_out)?;
        layers.push(Dense {
            fan_in,
            fan_out,
            weights,
            bias,
        });
        fan_in = fan_out;
    }
    let feature_dim = cfg.feature_dim();
    let backbone = Backbone::from_layers(cfg, layers)?;
    let head_weights = r.tensor("head.weights", feature_dim * NUM_ANGLES)?;
    let head = OutputHead::new(head_kind, feature_dim, head_weights)?.with_clamp_epsilon(clamp_epsilon)?;
    let model = PoseModel::new(backbone, head)?;

    let shapes = model.param_shapes();
    let mut adam = AdamState::new(&shapes);
    adam.t = t;
    for (k, &len) in shapes.iter().enumerate() {
        adam.m[k] = r.tensor(&format!("adam.m.{k}"), len)?;
    }
    for (k, &len) in shapes.iter().enumerate() {
        adam.v[k] = r.tensor(&format!("adam.v.{k}"), len)?;
    }
    let (n, end) = r.next_line()?;
    if end.trim() != "end" {
        return Err(r.err(n, "expected 'end'"));
    }
    Ok(TrainState {
        model,
        adam,
        adam_config,
        epochs_completed,
    })
}
