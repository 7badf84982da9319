use mtlb_autodiff::gradcheck::{check_params, op_suite, DEFAULT_STEP};
use mtlb_autodiff::{ParamStore, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Random projection so the checked scalar depends on every output entry.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(y).to_vec();
    let w = t.constant(rand_tensor(&mut rng, &shape));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

#[test]
fn every_op_matches_finite_differences() {
    let cases = op_suite(0..8).unwrap();
    for c in &cases {
        assert!(c.rel_error < TOL, "{} seed {}: rel err {:e}", c.op, c.seed, c.rel_error);
    }
    assert!(cases.len() >= 100, "only {} cases", cases.len());
}

#[test]
fn sum_of_parameter_has_unit_gradient_and_disconnected_is_absent() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::full(&[3, 2], 0.7)).unwrap();
    let q = store.add("q", Tensor::full(&[2], 0.1)).unwrap();
    let mut t = Tape::new();
    let pv = t.param(&store, p);
    let _qv = t.param(&store, q);
    let s = t.sum(pv);
    let g = t.backward(s).unwrap();
    assert_eq!(g.param(p).unwrap().data(), &[1.0; 6]);
    assert!(g.param(q).is_none());
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::full(&[2], 0.7)).unwrap();
    store.get_mut(p).frozen = true;
    let mut t = Tape::new();
    let pv = t.param(&store, p);
    let s = t.sum(pv);
    assert!(t.backward(s).unwrap().param(p).is_none());
}

#[test]
fn non_scalar_root_is_usage_error() {
    let mut t = Tape::new();
    let x = t.variable(Tensor::zeros(&[2]));
    assert!(t.backward(x).is_err());
}

#[test]
fn gru_step_with_parameters_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, e, h) = (3, 4, 5);
    let mut store = ParamStore::new();
    let wi = store.add("wi", rand_tensor(&mut rng, &[e, 3 * h])).unwrap();
    let wh = store.add("wh", rand_tensor(&mut rng, &[h, 3 * h])).unwrap();
    let bi = store.add("bi", rand_tensor(&mut rng, &[3 * h])).unwrap();
    let x = rand_tensor(&mut rng, &[b, e]);
    let h0 = rand_tensor(&mut rng, &[b, h]);
    let report = check_params(&store, DEFAULT_STEP, |t, s| {
        let (wi, wh, bi) = (t.param(s, wi), t.param(s, wh), t.param(s, bi));
        let xv = t.constant(x.clone());
        let hv = t.constant(h0.clone());
        let gi = t.linear(xv, wi, Some(bi))?;
        let gh = t.matmul(hv, wh)?;
        let zr_i = t.narrow(gi, 1, 0, 2 * h)?;
        let zr_h = t.narrow(gh, 1, 0, 2 * h)?;
        let zr_sum = t.add(zr_i, zr_h)?;
        let zr = t.sigmoid(zr_sum);
        let z = t.narrow(zr, 1, 0, h)?;
        let r = t.narrow(zr, 1, h, h)?;
        let n_i = t.narrow(gi, 1, 2 * h, h)?;
        let n_h = t.narrow(gh, 1, 2 * h, h)?;
        let rn = t.mul(r, n_h)?;
        let pre = t.add(n_i, rn)?;
        let n = t.tanh(pre);
        let diff = t.sub(hv, n)?;
        let zd = t.mul(z, diff)?;
        let hn = t.add(n, zd)?;
        project(t, hn, 21)
    })
    .unwrap();
    assert!(report.max_rel_error() < TOL, "{:?}", report.rel_errors);
}

#[test]
fn backward_is_bit_identical_across_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[6, 5]);
    let b = rand_tensor(&mut rng, &[5, 4]);
    let run = || {
        let mut t = Tape::new();
        let av = t.variable(a.clone());
        let bv = t.variable(b.clone());
        let c = t.matmul(av, bv).unwrap();
        let s = t.softmax(c).unwrap();
        let y = project(&mut t, s, 4).unwrap();
        let g1 = t.backward(y).unwrap();
        let g2 = t.backward(y).unwrap();
        let bits = |g: &Tensor| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g1.wrt(av).unwrap()), bits(g2.wrt(av).unwrap()));
        bits(g1.wrt(av).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let y = t.softmax(x).unwrap();
        for row in t.value(y).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn losses_nonnegative(n in 1usize..6, c in 2usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let logits = rand_tensor(&mut rng, &[n, c]);
        let x = t.constant(logits.scale_for_test(20.0));
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let ce = t.cross_entropy(x, &targets, &vec![1.0; n]).unwrap();
        prop_assert!(t.value(ce).item() >= 0.0);
        let y = Tensor::new(vec![n, c], (0..n * c).map(|_| f64::from(rng.random_bool(0.5))).collect()).unwrap();
        let b = t.bce_with_logits(x, &y, &Tensor::ones(&[n, c])).unwrap();
        prop_assert!(t.value(b).item() >= 0.0);
    }
}

trait ScaleForTest {
    fn scale_for_test(&self, c: f64) -> Tensor;
}

impl ScaleForTest for Tensor {
    fn scale_for_test(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }
}
