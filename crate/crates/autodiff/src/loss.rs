//! Masked losses. Each returns the mean over mask-valid entries as a scalar
//! node; an all-zero mask yields a zero loss with zero gradient.

use crate::error::{shape_err, AutodiffError, Result};
use crate::ops::softmax_row;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn check_finite(op: &'static str, what: &str, data: &[f64]) -> Result<()> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(AutodiffError::Numeric {
            op,
            detail: format!("NaN in {what}"),
        });
    }
    Ok(())
}

fn check_mask(op: &'static str, mask: &[f64]) -> Result<f64> {
    if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(AutodiffError::Usage(format!("{op}: mask entries must be 0 or 1")));
    }
    Ok(mask.iter().sum())
}

impl Tape {
    /// Binary cross-entropy on raw logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        const OP: &str = "bce_with_logits";
        let xv = self.value(logits);
        if xv.shape() != target.shape() || xv.shape() != mask.shape() {
            return shape_err(OP, xv.shape(), target.shape());
        }
        check_finite(OP, "logits", xv.data())?;
        check_finite(OP, "target", target.data())?;
        let count = check_mask(OP, mask.data())?;
        let mut total = 0.0;
        for ((&x, &y), &m) in xv.data().iter().zip(target.data()).zip(mask.data()) {
            if m != 0.0 {
                total += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            }
        }
        let value = if count > 0.0 { total / count } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                logits,
                target: target.clone(),
                mask: mask.clone(),
                count,
            },
        ))
    }

    /// Categorical cross-entropy over the last axis of `[N×C]` logits.
    /// `mask` has one entry per row; targets of masked rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[f64]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let xv = self.value(logits);
        if xv.rank() != 2 || xv.shape()[0] != targets.len() || targets.len() != mask.len() {
            return shape_err(OP, xv.shape(), &[targets.len(), mask.len()]);
        }
        check_finite(OP, "logits", xv.data())?;
        let count = check_mask(OP, mask)?;
        let c = xv.shape()[1];
        let mut probs = xv.data().to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if mask[r] != 0.0 {
                let t = targets[r];
                if t >= c {
                    return Err(AutodiffError::Usage(format!("{OP}: class {t} out of range for {c} classes")));
                }
                total += lse - row[t];
            }
            softmax_row(row);
        }
        let value = if count > 0.0 { total / count } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Mean squared error over mask-valid entries.
    pub fn mse(&mut self, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        const OP: &str = "mse";
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.shape() != mask.shape() {
            return shape_err(OP, pv.shape(), target.shape());
        }
        check_finite(OP, "prediction", pv.data())?;
        let count = check_mask(OP, mask.data())?;
        let mut total = 0.0;
        for ((&p, &y), &m) in pv.data().iter().zip(target.data()).zip(mask.data()) {
            if m != 0.0 {
                check_finite(OP, "target", &[y])?;
                total += (p - y) * (p - y);
            }
        }
        let value = if count > 0.0 { total / count } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(value),
            Op::Mse {
                pred,
                target: target.clone(),
                mask: mask.clone(),
                count,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::scalar(0.0));
        let l = t
            .bce_with_logits(x, &Tensor::scalar(1.0), &Tensor::scalar(1.0))
            .unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_gives_zero_loss_and_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap());
        let l = t
            .bce_with_logits(x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]))
            .unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));

        let logits = t.variable(Tensor::zeros(&[2, 4]));
        let ce = t.cross_entropy(logits, &[1, 99], &[0.0, 0.0]).unwrap();
        assert_eq!(t.value(ce).item(), 0.0);
        let g = t.backward(ce).unwrap();
        assert!(g.wrt(logits).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_mean_matches_subset() {
        let logits = [0.3, -1.2, 2.5, 0.7, -0.1];
        let targets = [1.0, 0.0, 1.0, 1.0, 0.0];
        let mask = [1.0, 0.0, 1.0, 0.0, 1.0];
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![5], logits.to_vec()).unwrap());
        let full = t
            .bce_with_logits(
                x,
                &Tensor::new(vec![5], targets.to_vec()).unwrap(),
                &Tensor::new(vec![5], mask.to_vec()).unwrap(),
            )
            .unwrap();
        let keep: Vec<usize> = (0..5).filter(|&i| mask[i] == 1.0).collect();
        let sub = t.constant(Tensor::new(vec![3], keep.iter().map(|&i| logits[i]).collect()).unwrap());
        let subset = t
            .bce_with_logits(
                sub,
                &Tensor::new(vec![3], keep.iter().map(|&i| targets[i]).collect()).unwrap(),
                &Tensor::ones(&[3]),
            )
            .unwrap();
        assert_eq!(t.value(full).item(), t.value(subset).item());
    }

    #[test]
    fn nan_input_is_numeric_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(f64::NAN));
        let err = t
            .bce_with_logits(x, &Tensor::scalar(1.0), &Tensor::scalar(1.0))
            .unwrap_err();
        assert!(matches!(err, AutodiffError::Numeric { .. }));
        let err = t.mse(x, &Tensor::scalar(1.0), &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, AutodiffError::Numeric { .. }));
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 3], vec![5.0, -3.0, 0.1, 40.0, -40.0, 0.0]).unwrap());
        let ce = t.cross_entropy(x, &[0, 2], &[1.0, 1.0]).unwrap();
        assert!(t.value(ce).item() >= 0.0);
        let b = t
            .bce_with_logits(x, &Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.5]).unwrap(), &Tensor::ones(&[2, 3]))
            .unwrap();
        assert!(t.value(b).item() >= 0.0);
    }
}
