//! Fused GRU recurrence.
//!
//! Recording each gate of each step as separate tape nodes costs a dozen
//! small allocations per step, which dominates training time for short
//! hidden sizes. This op runs the whole recurrence in one node and
//! back-propagates through time directly.

use crate::error::{shape_err, Result};
use crate::tape::{sigmoid, Op, Tape, Var};
use crate::tensor::{gemm, Tensor};

/// Saved forward state, laid out in processing order.
#[derive(Clone, Debug)]
pub(crate) struct GruTrace {
    pub(crate) batch: usize,
    pub(crate) steps: usize,
    pub(crate) hidden: usize,
    pub(crate) reverse: bool,
    /// `(steps + 1) × batch × hidden`; slot 0 is the zero initial state.
    states: Vec<f64>,
    /// `steps × batch × 4·hidden`: r, z, n and the hidden part of the candidate.
    gates: Vec<f64>,
}

impl GruTrace {
    fn time(&self, s: usize) -> usize {
        if self.reverse {
            self.steps - 1 - s
        } else {
            s
        }
    }
}

impl Tape {
    /// GRU over a sequence from a zero initial state.
    ///
    /// `xg` is `[B × T × 3H]` holding the input contributions (with their
    /// bias) for gates ordered r|z|n; `w_hh` is `[H × 3H]` and `b_hh` is
    /// `[3H]`. Returns the states `[B × T × H]` in time order; with
    /// `reverse` the recurrence starts at the last step.
    pub fn gru_sequence(&mut self, xg: Var, w_hh: Var, b_hh: Var, reverse: bool) -> Result<Var> {
        let xs = self.shape(xg).to_vec();
        let ws = self.shape(w_hh).to_vec();
        if xs.len() != 3 || xs[2] % 3 != 0 || ws != [xs[2] / 3, xs[2]] || self.shape(b_hh) != [xs[2]] {
            return shape_err("gru_sequence", &xs, &ws);
        }
        let (b, t, h) = (xs[0], xs[1], xs[2] / 3);
        let x = self.value(xg).data();
        let w = self.value(w_hh).data();
        let bias = self.value(b_hh).data();
        let mut trace = GruTrace {
            batch: b,
            steps: t,
            hidden: h,
            reverse,
            states: vec![0.0; (t + 1) * b * h],
            gates: vec![0.0; t * b * 4 * h],
        };
        let mut hg = vec![0.0; b * 3 * h];
        for s in 0..t {
            let tt = trace.time(s);
            let (prev, next) = trace.states.split_at_mut((s + 1) * b * h);
            let prev = &prev[s * b * h..];
            let next = &mut next[..b * h];
            for row in hg.chunks_mut(3 * h) {
                row.copy_from_slice(bias);
            }
            gemm(b, h, 3 * h, prev, (h, 1), w, (3 * h, 1), &mut hg, 1.0);
            let gates = &mut trace.gates[s * b * 4 * h..(s + 1) * b * 4 * h];
            for i in 0..b {
                let xr = &x[(i * t + tt) * 3 * h..][..3 * h];
                let hr = &hg[i * 3 * h..][..3 * h];
                let g = &mut gates[i * 4 * h..][..4 * h];
                let hp = &prev[i * h..][..h];
                let out = &mut next[i * h..][..h];
                for j in 0..h {
                    let r = sigmoid(xr[j] + hr[j]);
                    let z = sigmoid(xr[h + j] + hr[h + j]);
                    let hn = hr[2 * h + j];
                    let n = (xr[2 * h + j] + r * hn).tanh();
                    g[j] = r;
                    g[h + j] = z;
                    g[2 * h + j] = n;
                    g[3 * h + j] = hn;
                    out[j] = n + z * (hp[j] - n);
                }
            }
        }
        let mut out = vec![0.0; b * t * h];
        for s in 0..t {
            let tt = trace.time(s);
            for i in 0..b {
                out[(i * t + tt) * h..][..h].copy_from_slice(&trace.states[((s + 1) * b + i) * h..][..h]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, t, h], out),
            Op::GruSeq {
                xg,
                w_hh,
                b_hh,
                trace: Box::new(trace),
            },
        ))
    }
}

/// Gradients of the fused recurrence. `dx`, `dw`, `db` are accumulated into
/// when present.
pub(crate) fn gru_backward(
    tr: &GruTrace,
    w: &[f64],
    gout: &[f64],
    mut dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (b, t, h) = (tr.batch, tr.steps, tr.hidden);
    // Pre-activation gradients of the hidden-side products, per step.
    let mut dhg_all = vec![0.0; t * b * 3 * h];
    let mut carry = vec![0.0; b * h];
    let mut dh = vec![0.0; b * h];
    for s in (0..t).rev() {
        let tt = tr.time(s);
        let prev = &tr.states[s * b * h..][..b * h];
        let gates = &tr.gates[s * b * 4 * h..][..b * 4 * h];
        let dhg = &mut dhg_all[s * b * 3 * h..][..b * 3 * h];
        for i in 0..b {
            let go = &gout[(i * t + tt) * h..][..h];
            let g = &gates[i * 4 * h..][..4 * h];
            let hp = &prev[i * h..][..h];
            let c = &mut carry[i * h..][..h];
            let d = &mut dhg[i * 3 * h..][..3 * h];
            for j in 0..h {
                let (r, z, n, hn) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dho = go[j] + c[j];
                let dn = dho * (1.0 - z) * (1.0 - n * n);
                let dz = dho * (hp[j] - n) * z * (1.0 - z);
                let dr = dn * hn * r * (1.0 - r);
                d[j] = dr;
                d[h + j] = dz;
                d[2 * h + j] = dn * r;
                c[j] = dho * z;
                if let Some(dx) = dx.as_deref_mut() {
                    let row = &mut dx[(i * t + tt) * 3 * h..][..3 * h];
                    row[j] += dr;
                    row[h + j] += dz;
                    row[2 * h + j] += dn;
                }
            }
        }
        // carry += dhg · Wᵀ
        dh.copy_from_slice(&carry);
        gemm(b, 3 * h, h, dhg, (3 * h, 1), w, (1, 3 * h), &mut dh, 1.0);
        std::mem::swap(&mut carry, &mut dh);
    }
    if let Some(dw) = dw {
        // dW += Hprevᵀ · dHG over every step at once
        gemm(h, t * b, 3 * h, &tr.states, (1, h), &dhg_all, (3 * h, 1), dw, 1.0);
    }
    if let Some(db) = db {
        for row in dhg_all.chunks(3 * h) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
}
