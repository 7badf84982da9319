//! Central finite-difference checks against reverse-mode gradients.
//!
//! Only forward evaluation is used on the finite-difference side, so a
//! passing check does not depend on any backward rule being right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Norms below this are treated as zero when forming relative errors.
const NORM_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per checked tensor.
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < NORM_FLOOR {
        diff
    } else {
        diff / denom
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Checks `d f / d input` for every input tensor. `f` must return a scalar
/// and be deterministic (seed any dropout RNG inside the closure).
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let up = eval(&work, &f)?;
            work[k].data_mut()[j] = orig - h;
            let down = eval(&work, &f)?;
            work[k].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckReport { rel_errors })
}

/// Same check, but over every non-frozen parameter of a store.
pub fn check_params<F>(store: &ParamStore, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;

    let mut work = store.clone();
    let mut rel_errors = Vec::new();
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let analytic = grads
            .param(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; p.value.len()]);
        let mut numeric = vec![0.0; p.value.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = p.value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + h;
            let up = {
                let mut t = Tape::new();
                let o = f(&mut t, &work)?;
                t.value(o).item()
            };
            work.get_mut(id).value.data_mut()[j] = orig - h;
            let down = {
                let mut t = Tape::new();
                let o = f(&mut t, &work)?;
                t.value(o).item()
            };
            work.get_mut(id).value.data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckReport { rel_errors })
}

/// Outcome of one seeded case of [`op_suite`].
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub op: &'static str,
    pub seed: u64,
    pub rel_error: f64,
}

/// Finite-difference checks of every differentiable op on random shapes
/// and values, one case per (op, seed).
pub fn op_suite(seeds: std::ops::Range<u64>) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for (op, case) in cases() {
        for seed in seeds.clone() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            out.push(SuiteCase {
                op,
                seed,
                rel_error: case(&mut rng)?,
            });
        }
    }
    Ok(out)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=8)
}

fn shape2(rng: &mut ChaCha8Rng) -> [usize; 2] {
    [dim(rng), dim(rng)]
}

/// Random projection so the checked scalar depends on every output entry.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let w = t.constant(rand_tensor(&mut rng, &shape));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "matmul",
            Box::new(|rng| {
                let (m, k, n) = (dim(rng), dim(rng), dim(rng));
                let ins = [rand_tensor(rng, &[m, k]), rand_tensor(rng, &[k, n])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.matmul(v[0], v[1])?;
                    project(t, y, 1)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "bmm",
            Box::new(|rng| {
                let (b, m, k, n) = (dim(rng).min(3), dim(rng), dim(rng), dim(rng));
                let ins = [rand_tensor(rng, &[b, m, k]), rand_tensor(rng, &[b, k, n])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.bmm(v[0], v[1])?;
                    project(t, y, 2)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "add/sub/mul broadcast",
            Box::new(|rng| {
                let (m, n) = (dim(rng), dim(rng));
                let ins = [rand_tensor(rng, &[m, n]), rand_tensor(rng, &[n]), rand_tensor(rng, &[m, n])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let a = t.add(v[0], v[1])?;
                    let b = t.mul(v[1], a)?;
                    let c = t.sub(b, v[2])?;
                    let d = t.sub(c, v[1])?;
                    project(t, d, 3)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "scale/add_scalar/one_minus",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let a = t.scale(v[0], -2.5);
                    let b = t.add_scalar(a, 0.3);
                    let c = t.one_minus(b);
                    project(t, c, 4)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "sigmoid",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.sigmoid(v[0]);
                    project(t, y, 5)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "tanh",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.tanh(v[0]);
                    project(t, y, 6)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "relu",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.relu(v[0]);
                    project(t, y, 17)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "gelu",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.gelu(v[0]);
                    project(t, y, 7)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "dropout(train, fixed mask)",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
                    let y = t.dropout(v[0], 0.42, true, &mut mask_rng)?;
                    project(t, y, 8)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "softmax",
            Box::new(|rng| {
                let ins = [{ let sh = shape2(rng); rand_tensor(rng, &sh) }];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.softmax(v[0])?;
                    project(t, y, 9)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "layer_norm",
            Box::new(|rng| {
                let (m, n) = (dim(rng), dim(rng).max(2));
                let ins = [rand_tensor(rng, &[m, n]), rand_tensor(rng, &[n]), rand_tensor(rng, &[n])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2])?;
                    project(t, y, 10)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "reshape/permute/transpose",
            Box::new(|rng| {
                let (a, b, c) = (dim(rng).min(4), dim(rng).min(4), dim(rng).min(4));
                let ins = [rand_tensor(rng, &[a, b, c])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let p = t.permute(v[0], &[1, 2, 0])?;
                    let q = t.transpose(p)?;
                    let r = t.reshape(q, &[b * a * c])?;
                    project(t, r, 11)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "narrow/select/concat/stack",
            Box::new(|rng| {
                let (m, n) = (dim(rng), dim(rng).max(2));
                let ins = [rand_tensor(rng, &[m, n]), rand_tensor(rng, &[m, n])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let a = t.narrow(v[0], 1, 1, n - 1)?;
                    let b = t.concat(&[v[1], a], 1)?;
                    let c = t.select(v[1], 0, 0)?;
                    let d = t.stack(&[c, c], 0)?;
                    let pb = project(t, b, 12)?;
                    let pd = project(t, d, 13)?;
                    t.add(pb, pd)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "gather_rows",
            Box::new(|rng| {
                let (v_rows, d) = (dim(rng), dim(rng));
                let idx: Vec<usize> = (0..dim(rng)).map(|_| rng.random_range(0..v_rows)).collect();
                let ins = [rand_tensor(rng, &[v_rows, d])];
                check(&ins, DEFAULT_STEP, move |t, v| {
                    let y = t.gather_rows(v[0], &idx)?;
                    project(t, y, 14)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "mean_axis/max_axis",
            Box::new(|rng| {
                let (a, b, c) = (dim(rng).min(4), dim(rng), dim(rng).min(4));
                let ins = [rand_tensor(rng, &[a, b, c])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let m = t.mean_axis(v[0], 1)?;
                    let x = t.max_axis(v[0], 1)?;
                    let pm = project(t, m, 15)?;
                    let px = project(t, x, 16)?;
                    t.add(pm, px)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "bce_with_logits",
            Box::new(|rng| {
                let shape = [dim(rng), dim(rng)];
                let n = shape[0] * shape[1];
                let target = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
                let mut mask = Tensor::new(shape.to_vec(), (0..n).map(|_| f64::from(rng.random_bool(0.7))).collect()).unwrap();
                mask.data_mut()[0] = 1.0;
                let ins = [rand_tensor(rng, &shape)];
                check(&ins, DEFAULT_STEP, move |t, v| t.bce_with_logits(v[0], &target, &mask)).map(|r| r.max_rel_error())
            }),
        ),
        (
            "cross_entropy",
            Box::new(|rng| {
                let (n, c) = (dim(rng), dim(rng).max(2));
                let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
                let mut mask: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.7))).collect();
                mask[0] = 1.0;
                let ins = [rand_tensor(rng, &[n, c])];
                check(&ins, DEFAULT_STEP, move |t, v| t.cross_entropy(v[0], &targets, &mask)).map(|r| r.max_rel_error())
            }),
        ),
        (
            "mse",
            Box::new(|rng| {
                let shape = [dim(rng), dim(rng)];
                let target = rand_tensor(rng, &shape);
                let n = shape[0] * shape[1];
                let mut mask = Tensor::new(shape.to_vec(), (0..n).map(|_| f64::from(rng.random_bool(0.7))).collect()).unwrap();
                mask.data_mut()[0] = 1.0;
                let ins = [rand_tensor(rng, &shape)];
                check(&ins, DEFAULT_STEP, move |t, v| t.mse(v[0], &target, &mask)).map(|r| r.max_rel_error())
            }),
        ),
        (
            "gru_sequence",
            Box::new(|rng| {
                let (b, t_len, h) = (dim(rng).min(3), dim(rng).min(5), dim(rng).min(4));
                let reverse = rng.random_bool(0.5);
                let ins = [
                    rand_tensor(rng, &[b, t_len, 3 * h]),
                    rand_tensor(rng, &[h, 3 * h]),
                    rand_tensor(rng, &[3 * h]),
                ];
                check(&ins, DEFAULT_STEP, move |t, v| {
                    let y = t.gru_sequence(v[0], v[1], v[2], reverse)?;
                    project(t, y, 18)
                }).map(|r| r.max_rel_error())
            }),
        ),
        (
            "linear (rank 3)",
            Box::new(|rng| {
                let (b, s, i, o) = (dim(rng).min(3), dim(rng).min(4), dim(rng), dim(rng));
                let ins = [rand_tensor(rng, &[b, s, i]), rand_tensor(rng, &[i, o]), rand_tensor(rng, &[o])];
                check(&ins, DEFAULT_STEP, |t, v| {
                    let y = t.linear(v[0], v[1], Some(v[2]))?;
                    project(t, y, 17)
                }).map(|r| r.max_rel_error())
            }),
        ),
    ]
}

