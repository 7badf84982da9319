//! Teacher-forced LSTM decoder for future treatment sequences.

use mtlb_autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{add_linear, add_output, apply_linear, init_weight};
use crate::error::{MtlbError, Result};
use crate::tasks::{FTS_EOS, FTS_VOCAB};

/// Input index of the start token; output vocabulary stays at 9.
pub const FTS_START: usize = FTS_VOCAB;
/// Widest LSTM state; wider encoders are bridged down to this.
pub const MAX_FTS_HIDDEN: usize = 256;

type Linear = (ParamId, ParamId);

pub struct FtsDecoder {
    hidden: usize,
    bridge: Option<Linear>,
    /// `[vocab+1 × 4H]` input table, gate order i|f|g|o.
    input: ParamId,
    recur: Linear,
    out: Linear,
}

/// Teacher-forcing inputs and step-major targets for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FtsBatch {
    pub batch: usize,
    pub steps: usize,
    /// `inputs[k][b]`: token fed at step `k` to row `b`.
    pub inputs: Vec<Vec<usize>>,
    /// Index `k·B + b`.
    pub targets: Vec<usize>,
    pub mask: Vec<f64>,
}

impl FtsBatch {
    /// `None` rows are masked out entirely.
    pub fn new(seqs: &[Option<&[u8]>]) -> Result<Self> {
        let batch = seqs.len();
        let steps = seqs.iter().flatten().map(|s| s.len()).max().unwrap_or(0).max(1);
        let mut inputs = vec![vec![FTS_EOS as usize; batch]; steps];
        let mut targets = vec![0usize; steps * batch];
        let mut mask = vec![0.0; steps * batch];
        for (b, s) in seqs.iter().enumerate() {
            let Some(s) = s else { continue };
            for (k, &tok) in s.iter().enumerate() {
                if tok as usize >= FTS_VOCAB {
                    return Err(MtlbError::Data(format!("treatment token {tok} outside the vocabulary of {FTS_VOCAB}")));
                }
                inputs[k][b] = if k == 0 { FTS_START } else { s[k - 1] as usize };
                targets[k * batch + b] = tok as usize;
                mask[k * batch + b] = 1.0;
            }
        }
        Ok(Self {
            batch,
            steps,
            inputs,
            targets,
            mask,
        })
    }
}

impl FtsDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, encoded_dim: usize) -> Result<Self> {
        let hidden = encoded_dim.min(MAX_FTS_HIDDEN);
        let bridge = if hidden != encoded_dim {
            Some(add_linear(store, rng, &format!("{name}.bridge"), encoded_dim, hidden)?)
        } else {
            None
        };
        let input = store.add(format!("{name}.input"), init_weight(rng, hidden, &[FTS_VOCAB + 1, 4 * hidden]))?;
        let recur = add_linear(store, rng, &format!("{name}.recur"), hidden, 4 * hidden)?;
        let out = add_output(store, &format!("{name}.out"), hidden, FTS_VOCAB)?;
        Ok(Self {
            hidden,
            bridge,
            input,
            recur,
            out,
        })
    }

    /// Step logits `[steps·B × 9]`, step-major to line up with `batch.targets`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, encoded: Var, batch: &FtsBatch) -> Result<Var> {
        let hd = self.hidden;
        let mut h = match self.bridge {
            Some(l) => apply_linear(tape, store, encoded, l)?,
            None => encoded,
        };
        let mut c = tape.constant(Tensor::zeros(&[batch.batch, hd]));
        let table = tape.param(store, self.input);
        let w = tape.param(store, self.recur.0);
        let b = tape.param(store, self.recur.1);
        let mut logits = Vec::with_capacity(batch.steps);
        for k in 0..batch.steps {
            let xg = tape.gather_rows(table, &batch.inputs[k])?;
            let hg = tape.linear(h, w, Some(b))?;
            let g = tape.add(xg, hg)?;
            let i = tape.narrow(g, 1, 0, hd)?;
            let f = tape.narrow(g, 1, hd, hd)?;
            let cand = tape.narrow(g, 1, 2 * hd, hd)?;
            let o = tape.narrow(g, 1, 3 * hd, hd)?;
            let (i, f, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o));
            let cand = tape.tanh(cand);
            let fc = tape.mul(f, c)?;
            let ic = tape.mul(i, cand)?;
            c = tape.add(fc, ic)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
            logits.push(apply_linear(tape, store, h, self.out)?);
        }
        if logits.len() == 1 {
            Ok(logits[0])
        } else {
            Ok(tape.concat(&logits, 0)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_layout_is_step_major_with_start_token() {
        let a = [3u8, 5, FTS_EOS];
        let b = [FTS_EOS];
        let fb = FtsBatch::new(&[Some(&a), None, Some(&b)]).unwrap();
        assert_eq!(fb.steps, 3);
        assert_eq!(fb.inputs[0], vec![FTS_START, FTS_EOS as usize, FTS_START]);
        assert_eq!(fb.inputs[1][0], 3);
        assert_eq!(fb.inputs[2][0], 5);
        assert_eq!(fb.targets[0], 3);
        assert_eq!(fb.targets[2], FTS_EOS as usize);
        assert_eq!(fb.mask, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(FtsBatch::new(&[Some(&[9u8][..])]).is_err());
    }
}
