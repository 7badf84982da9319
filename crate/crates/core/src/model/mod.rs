//! Shared encoders and per-task decoders.
//!
//! A [`ModelBundle`] owns one [`ParamStore`]. Encoder parameters are named
//! `encoder.*` and every decoder lives under `decoder.<TASK>.*`, so freezing
//! and checksumming work by prefix.

mod encoders;
mod fts;

use std::collections::BTreeMap;

use mtlb_autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::INPUT_DIM;
use crate::error::{MtlbError, Result};
use crate::tasks::TaskId;

pub use encoders::EncoderParams;
pub use fts::{FtsBatch, FtsDecoder, FTS_START, MAX_FTS_HIDDEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    LinearConcat,
    Gru,
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Last,
    Max,
    Avg,
    Cls,
}

fn default_growth() -> f64 {
    1.0
}

fn default_fc_base() -> usize {
    64
}

/// Architecture of the shared encoder. Fields that do not apply to `kind`
/// are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub bidirectional: bool,
    pub pooling: Pooling,
    pub dropout: f64,
    pub window_hours: u32,
    #[serde(default)]
    pub num_heads: usize,
    #[serde(default)]
    pub intermediate_dim: usize,
    #[serde(default)]
    pub use_cls: bool,
    /// Fully connected layers after GRU pooling.
    #[serde(default)]
    pub fc_layers: usize,
    #[serde(default = "default_fc_base")]
    pub fc_base: usize,
    /// Width multiplier from one FC layer to the next.
    #[serde(default = "default_growth")]
    pub fc_growth: f64,
}

impl EncoderConfig {
    pub fn gru(embed_dim: usize, hidden_dim: usize, num_layers: usize, window_hours: u32) -> Self {
        Self {
            kind: EncoderKind::Gru,
            embed_dim,
            hidden_dim,
            num_layers,
            bidirectional: false,
            pooling: Pooling::Last,
            dropout: 0.0,
            window_hours,
            num_heads: 0,
            intermediate_dim: 0,
            use_cls: false,
            fc_layers: 0,
            fc_base: default_fc_base(),
            fc_growth: 1.0,
        }
    }

    pub fn linear(embed_dim: usize, window_hours: u32) -> Self {
        Self {
            kind: EncoderKind::LinearConcat,
            hidden_dim: embed_dim,
            num_layers: 0,
            pooling: Pooling::Last,
            ..Self::gru(embed_dim, embed_dim, 0, window_hours)
        }
    }

    /// Transformer whose width is `multiplier × heads`.
    pub fn transformer(multiplier: usize, heads: usize, layers: usize, intermediate: usize, window_hours: u32) -> Self {
        let width = multiplier * heads;
        Self {
            kind: EncoderKind::Transformer,
            embed_dim: width,
            hidden_dim: width,
            num_layers: layers,
            pooling: Pooling::Cls,
            num_heads: heads,
            intermediate_dim: intermediate,
            use_cls: true,
            ..Self::gru(width, width, layers, window_hours)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MtlbError::Config(m));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(12..=168).contains(&self.window_hours) {
            return bad(format!("window_hours {} outside [12, 168]", self.window_hours));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.pooling == Pooling::Cls && self.kind != EncoderKind::Transformer {
            return bad("cls pooling is only available to the transformer".into());
        }
        match self.kind {
            EncoderKind::LinearConcat => {}
            EncoderKind::Gru => {
                if self.hidden_dim == 0 || self.num_layers == 0 {
                    return bad("gru needs hidden_dim > 0 and num_layers > 0".into());
                }
                if self.fc_layers > 0 && (self.fc_base == 0 || !(self.fc_growth > 0.0)) {
                    return bad("gru fc stack needs fc_base > 0 and fc_growth > 0".into());
                }
            }
            EncoderKind::Transformer => {
                if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
                    return bad(format!(
                        "transformer hidden_dim {} is not divisible by {} heads",
                        self.hidden_dim, self.num_heads
                    ));
                }
                if self.embed_dim != self.hidden_dim {
                    return bad("transformer embed_dim must equal hidden_dim".into());
                }
                if self.num_layers == 0 || self.intermediate_dim == 0 {
                    return bad("transformer needs num_layers > 0 and intermediate_dim > 0".into());
                }
                let want = if self.use_cls { Pooling::Cls } else { Pooling::Avg };
                if self.pooling != want {
                    return bad(format!("transformer with use_cls={} must pool by {:?}", self.use_cls, want));
                }
            }
        }
        Ok(())
    }

    /// Widths of the GRU fully connected stack.
    pub fn fc_widths(&self) -> Vec<usize> {
        (0..self.fc_layers)
            .map(|i| ((self.fc_base as f64) * self.fc_growth.powi(i as i32)).round().max(1.0) as usize)
            .collect()
    }

    /// Length of the vector handed to the decoders.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::LinearConcat => self.window_hours as usize * self.embed_dim,
            EncoderKind::Transformer => self.hidden_dim,
            EncoderKind::Gru => match self.fc_widths().last() {
                Some(&w) => w,
                None => self.hidden_dim * if self.bidirectional { 2 } else { 1 },
            },
        }
    }
}

/// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_weight(rng: &mut ChaCha8Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub(crate) fn add_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<(ParamId, ParamId)> {
    let w = store.add(format!("{name}.w"), init_weight(rng, fan_in, &[fan_in, fan_out]))?;
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
    Ok((w, b))
}

/// Output layer of a decoder, initialised to zero.
///
/// A fresh head then scores every example identically, so the first
/// updates set its direction from the data instead of nudging a random
/// projection. This matters for short fine-tuning runs, where a handful of
/// steps cannot outweigh a random initial direction and the ranking metric
/// only sees direction.
pub(crate) fn add_output(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<(ParamId, ParamId)> {
    let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
    Ok((w, b))
}

pub(crate) fn apply_linear(tape: &mut Tape, store: &ParamStore, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    Ok(tape.linear(x, wv, Some(bv))?)
}

/// Prefix of every parameter belonging to `task`'s decoder.
pub fn decoder_prefix(task: TaskId) -> String {
    format!("decoder.{}.", task.name())
}

pub const ENCODER_PREFIX: &str = "encoder.";

enum Decoder {
    Head((ParamId, ParamId)),
    Fts(FtsDecoder),
}

/// Encoder plus one decoder per task of the suite.
pub struct ModelBundle {
    pub config: EncoderConfig,
    pub tasks: Vec<TaskId>,
    pub store: ParamStore,
    encoder: EncoderParams,
    decoders: BTreeMap<TaskId, Decoder>,
}

impl Clone for ModelBundle {
    fn clone(&self) -> Self {
        // Parameter ids are positional, so rebuilding and copying values is exact.
        let mut out = ModelBundle::new(&self.config, &self.tasks, 0).expect("config was valid");
        out.store = self.store.clone();
        out
    }
}

impl ModelBundle {
    pub fn new(config: &EncoderConfig, tasks: &[TaskId], seed: u64) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(MtlbError::Config("a model needs at least one task".into()));
        }
        let mut tasks = tasks.to_vec();
        tasks.sort();
        tasks.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(config, &mut store, &mut rng)?;
        let out_dim = config.output_dim();
        let mut decoders = BTreeMap::new();
        for &t in &tasks {
            let name = format!("decoder.{}", t.name());
            let d = if t == TaskId::Fts {
                Decoder::Fts(FtsDecoder::new(&mut store, &mut rng, &name, out_dim)?)
            } else {
                let width = t.spec().label_type.head_width();
                Decoder::Head(add_output(&mut store, &name, out_dim, width)?)
            };
            decoders.insert(t, d);
        }
        Ok(Self {
            config: config.clone(),
            tasks,
            store,
            encoder,
            decoders,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Encodes a `[B × T × INPUT_DIM]` batch into `[B × output_dim]`.
    /// Dropout applies to the embedding and the encoder output when `train`.
    pub fn encode(&self, tape: &mut Tape, x: &Tensor, train: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        let s = x.shape();
        if s.len() != 3 || s[2] != INPUT_DIM {
            return Err(MtlbError::Schema(format!(
                "input batch has shape {s:?}, the embedding expects [batch, hours, {INPUT_DIM}]"
            )));
        }
        if self.config.kind == EncoderKind::LinearConcat && s[1] != self.config.window_hours as usize {
            return Err(MtlbError::Usage(format!(
                "linear encoder needs exactly {} hours, got {}",
                self.config.window_hours, s[1]
            )));
        }
        let xv = tape.constant(x.clone());
        self.encoder.forward(tape, &self.store, &self.config, xv, train, rng)
    }

    /// Logits of a single-layer head; FTS has its own decoder.
    pub fn head(&self, tape: &mut Tape, task: TaskId, encoded: Var) -> Result<Var> {
        match self.decoders.get(&task) {
            Some(Decoder::Head(p)) => apply_linear(tape, &self.store, encoded, *p),
            Some(Decoder::Fts(_)) => Err(MtlbError::Usage("FTS uses the sequence decoder".into())),
            None => Err(MtlbError::Config(format!("model has no decoder for task {task}"))),
        }
    }

    /// Teacher-forced step logits for FTS, stacked step-major as `[S·B × 9]`.
    pub fn fts(&self, tape: &mut Tape, encoded: Var, batch: &FtsBatch) -> Result<Var> {
        match self.decoders.get(&TaskId::Fts) {
            Some(Decoder::Fts(d)) => d.forward(tape, &self.store, encoded, batch),
            _ => Err(MtlbError::Config("model has no FTS decoder".into())),
        }
    }

    /// Embedding alone, `[B × T × E]`; exposed for linearity checks.
    pub fn embed(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let xv = tape.constant(x.clone());
        self.encoder.embed(tape, &self.store, xv)
    }

    /// Overwrites parameter values from a checkpoint, skipping names that
    /// start with any of `skip`.
    pub fn load_from(&mut self, entries: &[(String, Tensor)], skip: &[String]) -> Result<()> {
        let kept: Vec<(String, Tensor)> = entries
            .iter()
            .filter(|(n, _)| !skip.iter().any(|s| n.starts_with(s.as_str())))
            .cloned()
            .collect();
        for (n, t) in &kept {
            let id = self
                .store
                .id(n)
                .ok_or_else(|| MtlbError::Checkpoint(format!("checkpoint parameter {n} is not part of this model")))?;
            if self.store.get(id).value.shape() != t.shape() {
                return Err(MtlbError::Checkpoint(format!(
                    "checkpoint parameter {n} has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.store.get(id).value.shape()
                )));
            }
        }
        self.store.load_values(&kept)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rng: &mut ChaCha8Rng, b: usize, t: usize) -> Tensor {
        let data = (0..b * t * INPUT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![b, t, INPUT_DIM], data).unwrap()
    }

    #[test]
    fn output_dims() {
        assert_eq!(EncoderConfig::linear(140, 48).output_dim(), 6720);
        assert_eq!(EncoderConfig::gru(233, 126, 2, 48).output_dim(), 126);
        let mut c = EncoderConfig::gru(8, 10, 1, 24);
        c.bidirectional = true;
        assert_eq!(c.output_dim(), 20);
        c.fc_layers = 2;
        c.fc_base = 32;
        c.fc_growth = 0.5;
        assert_eq!(c.fc_widths(), vec![32, 16]);
        assert_eq!(c.output_dim(), 16);
        assert_eq!(EncoderConfig::transformer(6, 12, 1, 55, 48).output_dim(), 72);
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::gru(8, 8, 1, 24);
        c.pooling = Pooling::Cls;
        assert!(c.validate().is_err());
        let mut t = EncoderConfig::transformer(2, 3, 1, 8, 24);
        t.hidden_dim = 7;
        assert!(t.validate().is_err());
        assert!(EncoderConfig::gru(8, 8, 1, 200).validate().is_err());
    }

    #[test]
    fn head_widths_and_zero_weights() {
        let m = ModelBundle::new(&EncoderConfig::gru(6, 5, 1, 12), &[TaskId::Acu, TaskId::Dis24, TaskId::Mor24], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = batch(&mut rng, 2, 12);
        let mut tape = Tape::new();
        let e = m.encode(&mut tape, &x, false, &mut rng).unwrap();
        let acu = m.head(&mut tape, TaskId::Acu, e).unwrap();
        let dis = m.head(&mut tape, TaskId::Dis24, e).unwrap();
        assert_eq!(tape.shape(acu), &[2, 18]);
        assert_eq!(tape.shape(dis), &[2, 17]);
        assert!(m.head(&mut tape, TaskId::Los, e).is_err());

        let mut z = m.clone();
        let w = z.store.id("decoder.ACU.w").unwrap();
        z.store.get_mut(w).value = Tensor::zeros(&[5, 18]);
        let mut tape = Tape::new();
        let e = z.encode(&mut tape, &x, false, &mut rng).unwrap();
        let l = z.head(&mut tape, TaskId::Acu, e).unwrap();
        let p = tape.softmax(l).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| (v - 1.0 / 18.0).abs() < 1e-15));
    }

    #[test]
    fn channel_mismatch_is_schema_error() {
        let m = ModelBundle::new(&EncoderConfig::gru(4, 4, 1, 12), &[TaskId::Mor24], 1).unwrap();
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = m.encode(&mut tape, &Tensor::zeros(&[1, 12, 100]), false, &mut rng).unwrap_err();
        assert!(matches!(err, MtlbError::Schema(_)));
    }

    #[test]
    fn embedding_is_affine() {
        let m = ModelBundle::new(&EncoderConfig::gru(7, 4, 1, 12), &[TaskId::Mor24], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = batch(&mut rng, 1, 12);
        let b = batch(&mut rng, 1, 12);
        let sum = Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let mut tape = Tape::new();
        let ea = m.embed(&mut tape, &a).unwrap();
        let eb = m.embed(&mut tape, &b).unwrap();
        let es = m.embed(&mut tape, &sum).unwrap();
        let e0 = m.embed(&mut tape, &Tensor::zeros(a.shape())).unwrap();
        for i in 0..tape.value(ea).len() {
            let lhs = tape.value(es).data()[i];
            let rhs = tape.value(ea).data()[i] + tape.value(eb).data()[i] - tape.value(e0).data()[i];
            assert!((lhs - rhs).abs() < 1e-12);
        }
        // Zero bias and zero input give a zero embedding.
        assert!(tape.value(e0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn other_decoders_do_not_affect_a_task() {
        let tasks = [TaskId::Mor24, TaskId::Los, TaskId::Acu];
        let m = ModelBundle::new(&EncoderConfig::gru(5, 4, 1, 12), &tasks, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = batch(&mut rng, 3, 12);
        let run = |m: &ModelBundle| {
            let mut tape = Tape::new();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let e = m.encode(&mut tape, &x, false, &mut r).unwrap();
            let l = m.head(&mut tape, TaskId::Mor24, e).unwrap();
            tape.value(l).data().to_vec()
        };
        let before = run(&m);
        let mut p = m.clone();
        for (_, par) in p.store.iter_mut() {
            if par.name.starts_with("decoder.LOS") || par.name.starts_with("decoder.ACU") {
                par.value = par.value.map(|v| v * 3.0 + 1.0);
            }
        }
        assert_eq!(before, run(&p));
    }
}
