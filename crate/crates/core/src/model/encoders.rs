//! Input embedding plus the linear, GRU and transformer encoders.

use mtlb_autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{add_linear, apply_linear, init_weight, EncoderConfig, EncoderKind, Pooling};
use crate::data::INPUT_DIM;
use crate::error::Result;

type Linear = (ParamId, ParamId);

/// One GRU direction: input-to-gates and hidden-to-gates maps, gate order r|z|n.
struct GruCell {
    ih: Linear,
    hh: Linear,
}

struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln1: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
    ln2: (ParamId, ParamId),
}

enum Body {
    Linear,
    Gru {
        layers: Vec<Vec<GruCell>>,
        fc: Vec<Linear>,
    },
    Transformer {
        cls: Option<ParamId>,
        blocks: Vec<Block>,
    },
}

pub struct EncoderParams {
    embed: Linear,
    body: Body,
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.add(format!("{name}.gamma"), Tensor::ones(&[d]))?,
        store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?,
    ))
}

impl EncoderParams {
    pub fn new(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let e = cfg.embed_dim;
        let embed = add_linear(store, rng, "encoder.embed", INPUT_DIM, e)?;
        let body = match cfg.kind {
            EncoderKind::LinearConcat => Body::Linear,
            EncoderKind::Gru => {
                let h = cfg.hidden_dim;
                let dirs = if cfg.bidirectional { 2 } else { 1 };
                let mut layers = Vec::new();
                for l in 0..cfg.num_layers {
                    let input = if l == 0 { e } else { h * dirs };
                    let mut cells = Vec::new();
                    for d in 0..dirs {
                        let name = format!("encoder.gru.l{l}.{}", if d == 0 { "fwd" } else { "bwd" });
                        let ih = add_linear(store, rng, &format!("{name}.ih"), input, 3 * h)?;
                        let hh = add_linear(store, rng, &format!("{name}.hh"), h, 3 * h)?;
                        cells.push(GruCell { ih, hh });
                    }
                    layers.push(cells);
                }
                let mut fc = Vec::new();
                let mut width = h * dirs;
                for (i, w) in cfg.fc_widths().into_iter().enumerate() {
                    fc.push(add_linear(store, rng, &format!("encoder.fc{i}"), width, w)?);
                    width = w;
                }
                Body::Gru { layers, fc }
            }
            EncoderKind::Transformer => {
                let cls = if cfg.use_cls {
                    Some(store.add("encoder.cls", init_weight(rng, e, &[e]))?)
                } else {
                    None
                };
                let mut blocks = Vec::new();
                for l in 0..cfg.num_layers {
                    let n = format!("encoder.block{l}");
                    blocks.push(Block {
                        q: add_linear(store, rng, &format!("{n}.q"), e, e)?,
                        k: add_linear(store, rng, &format!("{n}.k"), e, e)?,
                        v: add_linear(store, rng, &format!("{n}.v"), e, e)?,
                        o: add_linear(store, rng, &format!("{n}.o"), e, e)?,
                        ln1: layer_norm_params(store, &format!("{n}.ln1"), e)?,
                        ff1: add_linear(store, rng, &format!("{n}.ff1"), e, cfg.intermediate_dim)?,
                        ff2: add_linear(store, rng, &format!("{n}.ff2"), cfg.intermediate_dim, e)?,
                        ln2: layer_norm_params(store, &format!("{n}.ln2"), e)?,
                    });
                }
                Body::Transformer { cls, blocks }
            }
        };
        Ok(Self { embed, body })
    }

    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        apply_linear(tape, store, x, self.embed)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &EncoderConfig,
        x: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let emb = self.embed(tape, store, x)?;
        let emb = tape.dropout(emb, cfg.dropout, train, rng)?;
        let (b, t, e) = {
            let s = tape.shape(emb);
            (s[0], s[1], s[2])
        };
        let out = match &self.body {
            Body::Linear => tape.reshape(emb, &[b, t * e])?,
            Body::Gru { layers, fc } => {
                let mut seq = emb;
                let mut pooled = None;
                for (l, cells) in layers.iter().enumerate() {
                    let last_layer = l + 1 == layers.len();
                    let mut outs = Vec::new();
                    let mut finals = Vec::new();
                    for (d, cell) in cells.iter().enumerate() {
                        let (steps, h_final) = gru_direction(tape, store, cell, seq, d == 1)?;
                        outs.push(steps);
                        finals.push(h_final);
                    }
                    let stacked = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
                    if last_layer {
                        pooled = Some(match cfg.pooling {
                            Pooling::Last => {
                                if finals.len() == 1 {
                                    finals[0]
                                } else {
                                    tape.concat(&finals, 1)?
                                }
                            }
                            Pooling::Avg => tape.mean_axis(stacked, 1)?,
                            Pooling::Max => tape.max_axis(stacked, 1)?,
                            Pooling::Cls => unreachable!("validated"),
                        });
                    }
                    seq = stacked;
                }
                let mut h = pooled.expect("at least one layer");
                for layer in fc {
                    let z = apply_linear(tape, store, h, *layer)?;
                    h = tape.relu(z);
                }
                h
            }
            Body::Transformer { cls, blocks } => {
                let mut h = emb;
                let mut s = t;
                if let Some(c) = cls {
                    let cv = tape.param(store, *c);
                    let zeros = tape.constant(Tensor::zeros(&[b, 1, e]));
                    let tok = tape.add(zeros, cv)?;
                    h = tape.concat(&[tok, h], 1)?;
                    s += 1;
                }
                for blk in blocks {
                    h = transformer_block(tape, store, blk, h, b, s, e, cfg.num_heads, cfg.dropout, train, rng)?;
                }
                if cls.is_some() {
                    tape.select(h, 1, 0)?
                } else {
                    tape.mean_axis(h, 1)?
                }
            }
        };
        Ok(tape.dropout(out, cfg.dropout, train, rng)?)
    }
}

/// Runs one direction over `[B × T × D]`; returns the per-step outputs
/// `[B × T × H]` in time order and the state after the last processed step.
fn gru_direction(
    tape: &mut Tape,
    store: &ParamStore,
    cell: &GruCell,
    seq: Var,
    reverse: bool,
) -> Result<(Var, Var)> {
    let t = tape.shape(seq)[1];
    let xg = apply_linear(tape, store, seq, cell.ih)?;
    let w_hh = tape.param(store, cell.hh.0);
    let b_hh = tape.param(store, cell.hh.1);
    let steps = tape.gru_sequence(xg, w_hh, b_hh, reverse)?;
    let last = tape.select(steps, 1, if reverse { 0 } else { t - 1 })?;
    Ok((steps, last))
}

#[allow(clippy::too_many_arguments)]
fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    blk: &Block,
    h: Var,
    b: usize,
    s: usize,
    e: usize,
    heads: usize,
    dropout: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let dh = e / heads;
    let split = |tape: &mut Tape, v: Var, key: bool| -> Result<Var> {
        let r = tape.reshape(v, &[b, s, heads, dh])?;
        let axes: &[usize] = if key { &[0, 2, 3, 1] } else { &[0, 2, 1, 3] };
        let p = tape.permute(r, axes)?;
        let shape: &[usize] = if key { &[b * heads, dh, s] } else { &[b * heads, s, dh] };
        Ok(tape.reshape(p, shape)?)
    };
    let q = apply_linear(tape, store, h, blk.q)?;
    let k = apply_linear(tape, store, h, blk.k)?;
    let v = apply_linear(tape, store, h, blk.v)?;
    let (q, k, v) = (split(tape, q, false)?, split(tape, k, true)?, split(tape, v, false)?);
    let scores = tape.bmm(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let att = tape.softmax(scores)?;
    let ctx = tape.bmm(att, v)?;
    let ctx = tape.reshape(ctx, &[b, heads, s, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, s, e])?;
    let attn_out = apply_linear(tape, store, ctx, blk.o)?;
    let attn_out = tape.dropout(attn_out, dropout, train, rng)?;
    let res = tape.add(h, attn_out)?;
    let g1 = tape.param(store, blk.ln1.0);
    let b1 = tape.param(store, blk.ln1.1);
    let h1 = tape.layer_norm(res, g1, b1)?;
    let ff = apply_linear(tape, store, h1, blk.ff1)?;
    let ff = tape.gelu(ff);
    let ff = apply_linear(tape, store, ff, blk.ff2)?;
    let ff = tape.dropout(ff, dropout, train, rng)?;
    let res2 = tape.add(h1, ff)?;
    let g2 = tape.param(store, blk.ln2.0);
    let b2 = tape.param(store, blk.ln2.1);
    Ok(tape.layer_norm(res2, g2, b2)?)
}
