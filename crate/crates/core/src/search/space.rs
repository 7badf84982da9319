//! Hyperparameter dimensions, sampling and mapping to model/train configs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MtlbError, Result};
use crate::model::{EncoderConfig, EncoderKind, Pooling};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum Dist {
    /// Integer drawn uniformly from `lo..=hi`.
    QInt { lo: i64, hi: i64 },
    Uniform { lo: f64, hi: f64 },
    /// `exp(Normal(mu, sigma))`.
    LogNormal { mu: f64, sigma: f64 },
    /// `exp(Uniform(lo, hi))`: the bounds are exponents.
    LogUniform { lo: f64, hi: f64 },
    Choice { options: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Text(_) => None,
        }
    }
}

/// One configuration: dimension name to value.
pub type Point = BTreeMap<String, Value>;

impl Dist {
    pub fn sample(&self, rng: &mut impl Rng) -> Value {
        match self {
            Dist::QInt { lo, hi } => Value::Int(rng.random_range(*lo..=*hi)),
            Dist::Uniform { lo, hi } => Value::Float(rng.random_range(*lo..=*hi)),
            Dist::LogNormal { mu, sigma } => Value::Float(Normal::new(*mu, *sigma).expect("sigma > 0").sample(rng).exp()),
            Dist::LogUniform { lo, hi } => Value::Float(rng.random_range(*lo..=*hi).exp()),
            Dist::Choice { options } => Value::Text(options[rng.random_range(0..options.len())].clone()),
        }
    }

    pub fn is_choice(&self) -> bool {
        matches!(self, Dist::Choice { .. })
    }

    /// Position on the axis the density model works in: the value itself,
    /// its log for the log-scaled dimensions, or the option index.
    pub fn coord(&self, v: &Value) -> Option<f64> {
        match (self, v) {
            (Dist::Choice { options }, Value::Text(s)) => options.iter().position(|o| o == s).map(|i| i as f64),
            (Dist::Choice { .. }, _) => None,
            (Dist::LogNormal { .. } | Dist::LogUniform { .. }, v) => v.as_f64().filter(|x| *x > 0.0).map(f64::ln),
            (_, v) => v.as_f64(),
        }
    }

    /// Inverse of [`Dist::coord`], clamped and rounded into the support.
    pub fn from_coord(&self, x: f64) -> Value {
        match self {
            Dist::QInt { lo, hi } => Value::Int((x.round() as i64).clamp(*lo, *hi)),
            Dist::Uniform { lo, hi } => Value::Float(x.clamp(*lo, *hi)),
            Dist::LogNormal { .. } => Value::Float(x.exp()),
            Dist::LogUniform { lo, hi } => Value::Float(x.clamp(*lo, *hi).exp()),
            Dist::Choice { options } => Value::Text(options[(x.round().max(0.0) as usize).min(options.len() - 1)].clone()),
        }
    }

    /// Bounds on the coordinate axis; `None` when unbounded.
    pub fn coord_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Dist::QInt { lo, hi } => Some((*lo as f64, *hi as f64)),
            Dist::Uniform { lo, hi } | Dist::LogUniform { lo, hi } => Some((*lo, *hi)),
            Dist::LogNormal { .. } => None,
            Dist::Choice { options } => Some((0.0, (options.len() - 1) as f64)),
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (self, v) {
            (Dist::QInt { lo, hi }, Value::Int(i)) => (*lo..=*hi).contains(i),
            (Dist::Uniform { lo, hi }, Value::Float(f)) => (*lo..=*hi).contains(f),
            (Dist::LogNormal { .. }, Value::Float(f)) => *f > 0.0 && f.is_finite(),
            (Dist::LogUniform { lo, hi }, Value::Float(f)) => *f > 0.0 && (*lo..=*hi).contains(&f.ln()),
            (Dist::Choice { options }, Value::Text(s)) => options.contains(s),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub dist: Dist,
    /// Only sampled when this architecture is chosen.
    pub arch: Option<EncoderKind>,
}

pub const ARCH_DIM: &str = "architecture";

pub fn arch_name(kind: EncoderKind) -> &'static str {
    match kind {
        EncoderKind::LinearConcat => "linear",
        EncoderKind::Gru => "gru",
        EncoderKind::Transformer => "transformer",
    }
}

pub fn parse_arch(s: &str) -> Result<EncoderKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "linear" | "linear-concat" => Ok(EncoderKind::LinearConcat),
        "gru" => Ok(EncoderKind::Gru),
        "transformer" => Ok(EncoderKind::Transformer),
        other => Err(MtlbError::Config(format!("unknown architecture {other:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// The architecture choice comes first, conditional dimensions after.
    pub dims: Vec<Dim>,
}

fn dim(name: &str, dist: Dist, arch: Option<EncoderKind>) -> Dim {
    Dim {
        name: name.into(),
        dist,
        arch,
    }
}

fn qint(lo: i64, hi: i64) -> Dist {
    Dist::QInt { lo, hi }
}

fn choice(opts: &[&str]) -> Dist {
    Dist::Choice {
        options: opts.iter().map(|s| s.to_string()).collect(),
    }
}

impl SearchSpace {
    /// The full search space, restricted to `archs`.
    pub fn standard(archs: &[EncoderKind]) -> Result<Self> {
        if archs.is_empty() {
            return Err(MtlbError::Config("search needs at least one architecture".into()));
        }
        let names: Vec<&str> = archs.iter().map(|&a| arch_name(a)).collect();
        let (t, g) = (Some(EncoderKind::Transformer), Some(EncoderKind::Gru));
        let all = vec![
            dim(ARCH_DIM, choice(&names), None),
            dim("epochs", qint(15, 30), None),
            dim("batch_size", qint(4, 64), None),
            dim("learning_rate", Dist::LogNormal { mu: -7.0, sigma: 0.5 }, None),
            dim("lr_decay", Dist::LogUniform { lo: -2.3, hi: 0.0 }, None),
            dim("lr_step", qint(1, 25), None),
            dim("dropout", Dist::Uniform { lo: 0.0, hi: 0.5 }, None),
            dim("hidden_size", qint(8, 256), None),
            dim("weight_decay", Dist::Uniform { lo: 0.0, hi: 1.0 }, None),
            dim("window_hours", qint(12, 168), None),
            dim("tf_multiplier", qint(4, 32), t),
            dim("tf_intermediate", qint(32, 256), t),
            dim("tf_heads", qint(2, 24), t),
            dim("tf_layers", qint(1, 4), t),
            dim("tf_use_cls", choice(&["true", "false"]), t),
            dim("gru_bidirectional", choice(&["true", "false"]), g),
            dim("gru_layers", qint(1, 3), g),
            dim("gru_hidden", qint(16, 512), g),
            dim("gru_fc_layers", qint(0, 3), g),
            dim("gru_pooling", choice(&["max", "avg", "last"]), g),
            dim("gru_fc_base", qint(32, 512), g),
            dim("gru_fc_growth", Dist::LogUniform { lo: -1.1, hi: 1.1 }, g),
        ];
        let dims = all
            .into_iter()
            .filter(|d| d.arch.is_none_or(|a| archs.contains(&a)))
            .collect();
        Ok(Self { dims })
    }

    pub fn dim(&self, name: &str) -> Option<&Dim> {
        self.dims.iter().find(|d| d.name == name)
    }

    /// Dimensions sampled once the architecture is `arch`.
    pub fn active_dims(&self, arch: EncoderKind) -> impl Iterator<Item = &Dim> {
        self.dims.iter().filter(move |d| d.arch.is_none_or(|a| a == arch))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Point {
        let mut p = Point::new();
        let arch_dim = &self.dims[0];
        let arch_v = arch_dim.dist.sample(rng);
        let arch = match &arch_v {
            Value::Text(s) => parse_arch(s).expect("space lists known architectures"),
            _ => unreachable!("architecture is a choice"),
        };
        p.insert(ARCH_DIM.into(), arch_v);
        for d in self.active_dims(arch).skip(1) {
            p.insert(d.name.clone(), d.dist.sample(rng));
        }
        p
    }

    /// Every active dimension present and in bounds, nothing extra.
    pub fn check(&self, p: &Point) -> Result<()> {
        let arch = point_arch(p)?;
        let mut expected = 0;
        for d in self.active_dims(arch) {
            expected += 1;
            let v = p
                .get(&d.name)
                .ok_or_else(|| MtlbError::Config(format!("configuration lacks {}", d.name)))?;
            if !d.dist.contains(v) {
                return Err(MtlbError::Config(format!("{} = {v:?} lies outside the search space", d.name)));
            }
        }
        if p.len() != expected {
            return Err(MtlbError::Config("configuration has dimensions that do not apply to its architecture".into()));
        }
        Ok(())
    }
}

pub fn point_arch(p: &Point) -> Result<EncoderKind> {
    match p.get(ARCH_DIM) {
        Some(Value::Text(s)) => parse_arch(s),
        _ => Err(MtlbError::Config("configuration lacks an architecture".into())),
    }
}

fn get_f(p: &Point, k: &str) -> Result<f64> {
    p.get(k)
        .and_then(Value::as_f64)
        .ok_or_else(|| MtlbError::Config(format!("configuration lacks numeric {k}")))
}

fn get_u(p: &Point, k: &str) -> Result<usize> {
    match p.get(k) {
        Some(Value::Int(i)) if *i >= 0 => Ok(*i as usize),
        _ => Err(MtlbError::Config(format!("configuration lacks integer {k}"))),
    }
}

fn get_s<'a>(p: &'a Point, k: &str) -> Result<&'a str> {
    match p.get(k) {
        Some(Value::Text(s)) => Ok(s),
        _ => Err(MtlbError::Config(format!("configuration lacks choice {k}"))),
    }
}

fn get_b(p: &Point, k: &str) -> Result<bool> {
    get_s(p, k)?
        .parse()
        .map_err(|_| MtlbError::Config(format!("{k} must be true or false")))
}

/// Builds the encoder and training configuration a point describes. The
/// shared hidden size is the embedding width; the transformer's width is
/// its multiplier times its head count instead.
pub fn to_configs(p: &Point) -> Result<(EncoderConfig, TrainConfig)> {
    let window = get_u(p, "window_hours")? as u32;
    let hidden = get_u(p, "hidden_size")?;
    let mut enc = match point_arch(p)? {
        EncoderKind::LinearConcat => EncoderConfig::linear(hidden, window),
        EncoderKind::Gru => {
            let mut e = EncoderConfig::gru(hidden, get_u(p, "gru_hidden")?, get_u(p, "gru_layers")?, window);
            e.bidirectional = get_b(p, "gru_bidirectional")?;
            e.pooling = match get_s(p, "gru_pooling")? {
                "max" => Pooling::Max,
                "avg" => Pooling::Avg,
                "last" => Pooling::Last,
                o => return Err(MtlbError::Config(format!("unknown gru pooling {o:?}"))),
            };
            e.fc_layers = get_u(p, "gru_fc_layers")?;
            e.fc_base = get_u(p, "gru_fc_base")?;
            e.fc_growth = get_f(p, "gru_fc_growth")?;
            e
        }
        EncoderKind::Transformer => {
            let mut e = EncoderConfig::transformer(
                get_u(p, "tf_multiplier")?,
                get_u(p, "tf_heads")?,
                get_u(p, "tf_layers")?,
                get_u(p, "tf_intermediate")?,
                window,
            );
            e.use_cls = get_b(p, "tf_use_cls")?;
            e.pooling = if e.use_cls { Pooling::Cls } else { Pooling::Avg };
            e
        }
    };
    enc.dropout = get_f(p, "dropout")?;
    enc.validate()?;
    let train = TrainConfig {
        epochs: get_u(p, "epochs")?,
        batch_size: get_u(p, "batch_size")?,
        learning_rate: get_f(p, "learning_rate")?,
        lr_decay: get_f(p, "lr_decay")?,
        lr_step: get_u(p, "lr_step")?,
        weight_decay: get_f(p, "weight_decay")?,
        ..TrainConfig::default()
    };
    train.validate()?;
    Ok((enc, train))
}

pub const PRESETS: [&str; 3] = ["linear-tuned", "gru-tuned", "transformer-tuned"];

/// The tuned optimum of each architecture. Unstated fields take the
/// neutral value: no decay, no weight decay, a 48-hour window.
pub fn preset(name: &str) -> Result<Point> {
    let i = Value::Int;
    let f = Value::Float;
    let s = |x: &str| Value::Text(x.into());
    let shared = |arch: &str, epochs, batch, lr, dropout, hidden| -> Point {
        [
            (ARCH_DIM, s(arch)),
            ("epochs", i(epochs)),
            ("batch_size", i(batch)),
            ("learning_rate", f(lr)),
            ("lr_decay", f(1.0)),
            ("lr_step", i(1)),
            ("dropout", f(dropout)),
            ("hidden_size", i(hidden)),
            ("weight_decay", f(0.0)),
            ("window_hours", i(48)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    };
    let p = match name {
        "linear-tuned" => shared("linear", 22, 16, 0.00024, 0.22, 140),
        "gru-tuned" => {
            let mut p = shared("gru", 18, 254, 0.001, 0.42, 233);
            p.extend([
                ("gru_bidirectional".to_string(), s("false")),
                ("gru_layers".to_string(), i(2)),
                ("gru_hidden".to_string(), i(126)),
                ("gru_fc_layers".to_string(), i(0)),
                ("gru_pooling".to_string(), s("last")),
                ("gru_fc_base".to_string(), i(32)),
                ("gru_fc_growth".to_string(), f(1.0)),
            ]);
            p
        }
        "transformer-tuned" => {
            let mut p = shared("transformer", 24, 30, 0.002, 0.18, 72);
            p.extend([
                ("tf_multiplier".to_string(), i(6)),
                ("tf_heads".to_string(), i(12)),
                ("tf_layers".to_string(), i(1)),
                ("tf_intermediate".to_string(), i(55)),
                ("tf_use_cls".to_string(), s("true")),
            ]);
            p
        }
        other => {
            return Err(MtlbError::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(p)
}
