//! Adam with decoupled weight decay, global-norm clipping and step decay.

use std::collections::BTreeMap;

use mtlb_autodiff::{ParamId, ParamStore, Tensor};

use crate::error::{MtlbError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning rate for `epoch` (0-based): `base · decay^⌊epoch / step⌋`.
pub fn lr_at(base: f64, decay: f64, step: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / step.max(1)) as i32)
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<ParamId, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One update of every non-frozen parameter that has a gradient. Parameters
/// without a gradient keep their value and optimizer state.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<ParamId, Tensor>, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some((id, _)) = grads.iter().find(|(_, g)| g.has_nan()) {
        return Err(MtlbError::Numeric(format!(
            "NaN gradient for parameter {}",
            store.get(*id).name
        )));
    }
    for (&id, g) in grads {
        let p = store.get_mut(id);
        if p.frozen {
            continue;
        }
        p.step += 1;
        let bc1 = 1.0 - BETA1.powi(p.step as i32);
        let bc2 = 1.0 - BETA2.powi(p.step as i32);
        let m = p.moment1.data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
        }
        let v = p.moment2.data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
        }
        let (m, v) = (p.moment1.data().to_vec(), p.moment2.data());
        for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(&m).zip(v) {
            let update = (mi / bc1) / ((vi / bc2).sqrt() + EPSILON);
            *w -= lr * (update + weight_decay * *w);
        }
    }
    Ok(())
}
