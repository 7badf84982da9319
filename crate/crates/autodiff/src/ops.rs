//! Forward constructors for every recorded op.

use rand::Rng;

use crate::error::{shape_err, AutodiffError, Result};
use crate::tape::{gelu, permute_data, sigmoid, split_axis, Broadcast, Op, Tape, Var};
use crate::tensor::{gemm, Tensor};

/// Layer-norm epsilon shared by every caller.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn broadcast(op: &'static str, a: &[usize], b: &[usize], commutative: bool) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    let suffix = |long: &[usize], short: &[usize]| {
        short.len() < long.len() && long[long.len() - short.len()..] == *short
    };
    if suffix(a, b) {
        Ok(Broadcast::Rhs)
    } else if commutative && suffix(b, a) {
        Ok(Broadcast::Lhs)
    } else {
        shape_err(op, a, b)
    }
}

/// `f(long[i], short[i mod short.len()])` without a division per element.
fn tiled(long: &[f64], short: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(long.len());
    for row in long.chunks(short.len().max(1)) {
        out.extend(row.iter().zip(short).map(|(&x, &y)| f(x, y)));
    }
    out
}

impl Tape {
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        commutative: bool,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = broadcast(name, self.shape(a), self.shape(b), commutative)?;
        let av = self.value(a);
        let bv = self.value(b);
        let (shape, data) = match bc {
            Broadcast::Same => (
                av.shape().to_vec(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::Rhs => (av.shape().to_vec(), tiled(av.data(), bv.data(), |x, y| f(x, y))),
            Broadcast::Lhs => (bv.shape().to_vec(), tiled(bv.data(), av.data(), |y, x| f(x, y))),
        };
        Ok(self.push(Tensor::from_parts(shape, data), make(a, b, bc)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op)
    }

    /// Elementwise sum; either operand may be a trailing-suffix broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, true, |x, y| x + y, Op::Add)
    }

    /// `a - b`, with `b` optionally broadcast over `a`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, false, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product; either operand may be a trailing-suffix broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, true, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    /// Inverted dropout. In eval mode (`train == false`) or with `p == 0`
    /// this returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::Usage(format!("dropout p={p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout(x, mask)))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = match xv.shape().last() {
            Some(&c) if c >= 1 => c,
            _ => return shape_err("softmax", xv.shape(), &[]),
        };
        let mut data = xv.data().to_vec();
        data.chunks_mut(c).for_each(softmax_row);
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err("layer_norm", xv.shape(), self.shape(gamma));
        }
        let gam = self.value(gamma).data();
        let bet = self.value(beta).data();
        let rows = xv.len() / d.max(1);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                out.push(h * gam[j] + bet[j]);
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// `[m×k]·[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return shape_err("matmul", av.shape(), bv.shape());
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), &mut out, 0.0);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// Batched product `[b×m×k]·[b×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1] {
            return shape_err("bmm", av.shape(), bv.shape());
        }
        let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[s * m * k..],
                (k, 1),
                &bv.data()[s * k * n..],
                (n, 1),
                &mut out[s * m * n..],
                0.0,
            );
        }
        Ok(self.push(Tensor::from_parts(vec![batch, m, n], out), Op::BatchMatMul(a, b)))
    }

    /// Affine map over the last axis: `x·w + b` for `x` of shape `[.., in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let in_dim = *shape.last().unwrap_or(&0);
        let rows = shape.iter().product::<usize>() / in_dim.max(1);
        let flat = if shape.len() == 2 { x } else { self.reshape(x, &[rows, in_dim])? };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        if shape.len() != 2 {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = self.shape(w)[1];
            y = self.reshape(y, &out_shape)?;
        }
        Ok(y)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut seen = vec![false; xv.rank()];
        if axes.len() != xv.rank() || axes.iter().any(|&a| a >= seen.len() || std::mem::replace(&mut seen[a], true)) {
            return shape_err("permute", xv.shape(), axes);
        }
        let (data, shape) = permute_data(xv.data(), xv.shape(), axes);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Permute(x, axes.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        if r < 2 {
            return shape_err("transpose", self.shape(x), &[]);
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start + len > xv.shape()[axis] {
            return shape_err("narrow", xv.shape(), &[axis, start, len]);
        }
        let (outer, len_in, inner) = split_axis(xv.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * len_in + start) * inner;
            data.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Narrow { x, axis, start }))
    }

    /// Select one index along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let sliced = self.narrow(x, axis, index, 1)?;
        let mut shape = self.shape(sliced).to_vec();
        shape.remove(axis);
        self.reshape(sliced, &shape)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(AutodiffError::Usage("concat of nothing".into())),
        };
        if axis >= first.len() {
            return shape_err("concat", &first, &[axis]);
        }
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            let same_rest = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same_rest {
                return shape_err("concat", &first, s);
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let xv = self.value(*v);
                let len = xv.shape()[axis];
                data.extend_from_slice(&xv.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(xs.to_vec(), axis)))
    }

    /// Stack equally shaped tensors along a new axis.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(xs.len());
        for &v in xs {
            let mut s = self.shape(v).to_vec();
            if axis > s.len() {
                return shape_err("stack", &s, &[axis]);
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(v, &s)?);
        }
        self.concat(&expanded, axis)
    }

    /// Rows `idx` of a `[V×D]` table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return shape_err("gather_rows", tv.shape(), &[]);
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= v {
                return Err(AutodiffError::Usage(format!("row {i} out of range for table of {v}")));
            }
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), d], data),
            Op::GatherRows(table, idx.to_vec()),
        ))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || xv.shape()[axis] == 0 {
            return shape_err("mean_axis", xv.shape(), &[axis]);
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for k in 0..inner {
                    data[o * inner + k] += xv.data()[(o * len + j) * inner + k];
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MeanAxis(x, axis)))
    }

    /// Max over `axis`; ties resolve to the earliest index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || xv.shape()[axis] == 0 {
            return shape_err("max_axis", xv.shape(), &[axis]);
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for k in 0..inner {
                    let v = xv.data()[(o * len + j) * inner + k];
                    if v > data[o * inner + k] {
                        data[o * inner + k] = v;
                        argmax[o * inner + k] = j;
                    }
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, data), Op::MaxAxis(x, axis, argmax)))
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        let y = t.softmax(x).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
        let y = t.softmax(x).unwrap();
        let v = t.value(y).data();
        assert!(v.iter().all(|v| v.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![4], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        let y = t.dropout(x, 0.42, false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert_eq!(t.value(y).data(), &[1.0, -2.0, 3.5, 0.25]);
    }

    #[test]
    fn dropout_rejects_p_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(1.0));
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_train_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[10_000], 2.0));
        let y = t.dropout(x, 0.42, true, &mut rng).unwrap();
        let mean = t.value(y).sum() / 10_000.0;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn broadcast_bias_and_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(Tensor::new(vec![2], vec![10.0, 20.0]).unwrap());
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let c = t.add(b, a).unwrap();
        assert_eq!(t.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let bad = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, bad), Err(AutodiffError::Shape { .. })));
        assert!(t.sub(b, a).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = t.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let p = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.shape(p), &[4, 2, 3]);
        // element [k, i, j] == x[i, j, k]
        assert_eq!(t.value(p).data()[1 * 6 + 1 * 3 + 2], data[1 * 12 + 2 * 4 + 1]);
        let back = t.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(t.value(back).data(), &data[..]);
    }

    #[test]
    fn narrow_concat_inverse() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let x = t.constant(Tensor::new(vec![2, 6], data.clone()).unwrap());
        let a = t.narrow(x, 1, 0, 2).unwrap();
        let b = t.narrow(x, 1, 2, 4).unwrap();
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &data[..]);
    }
}
