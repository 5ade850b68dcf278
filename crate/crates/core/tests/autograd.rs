use drgaze::gradcheck::{finite_diff_gradient, relative_error};
use drgaze::ops;
use drgaze::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Values bounded away from zero so kinked ops stay differentiable under
/// the finite-difference step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Checks the tape gradient of `sum(build(inputs) * r)` for every input
/// against central differences; `r` is a fixed random projection.
fn check(inputs: Vec<Tensor<f64>>, seed: u64, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scalar_loss = |tensors: &[Tensor<f64>], r: Option<&Tensor<f64>>| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = r.map(|r| {
            let r = tape.leaf(r.clone());
            let prod = tape.mul(out, r).unwrap();
            tape.sum(prod)
        });
        (tape, vars, out, loss)
    };
    let (probe, _, out, _) = scalar_loss(&inputs, None);
    let r = random(probe.shape(out), &mut rng);

    let (tape, vars, _, loss) = scalar_loss(&inputs, Some(&r));
    let loss = loss.unwrap();
    let grads = tape.backward(loss).unwrap();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var, inputs[k].shape());
        let mut flat = inputs[k].to_f64_vec();
        let numeric = finite_diff_gradient(
            |p| {
                let mut ts = inputs.clone();
                ts[k] = Tensor::new(inputs[k].shape().to_vec(), p.to_vec()).unwrap();
                let (tape, _, _, loss) = scalar_loss(&ts, Some(&r));
                tape.value(loss.unwrap()).item()
            },
            &mut flat,
            STEP,
        );
        for (i, (a, n)) in analytic.data().iter().zip(&numeric).enumerate() {
            let err = relative_error(*a, *n);
            assert!(
                err <= TOL || (a - n).abs() < 1e-9,
                "input {k} element {i}: analytic {a} numeric {n} (rel {err})"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_gradients(
        batch in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 2usize..8, w in 2usize..8, k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3, seed in any::<u64>(),
    ) {
        let padding = (k - 1) / 2;
        prop_assume!((h + 2 * padding - k) % stride == 0 && (w + 2 * padding - k) % stride == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![
            random(&[batch, cin, h, w], &mut rng),
            random(&[cout, cin, k, k], &mut rng),
            random(&[cout], &mut rng),
        ];
        check(inputs, seed, |t, v| t.conv2d(v[0], v[1], v[2], stride, padding).unwrap());
    }

    #[test]
    fn linear_gradients(batch in 1usize..4, n in 1usize..8, m in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&[batch, n], &mut rng), random(&[m, n], &mut rng), random(&[m], &mut rng)];
        check(inputs, seed, |t, v| t.linear(v[0], v[1], v[2]).unwrap());
    }

    #[test]
    fn relu_gradients(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(vec![away_from_zero(&shape, &mut rng)], seed, |t, v| t.relu(v[0]));
    }

    #[test]
    fn add_and_mul_gradients(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&shape, &mut rng), random(&shape, &mut rng)];
        check(inputs.clone(), seed, |t, v| t.add(v[0], v[1]).unwrap());
        check(inputs, seed, |t, v| t.mul(v[0], v[1]).unwrap());
    }

    #[test]
    fn concat_gradients(a in 1usize..5, b in 1usize..5, rows in 1usize..4, cols in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&[rows, a, cols], &mut rng), random(&[rows, b, cols], &mut rng)];
        check(inputs, seed, |t, v| t.concat(v, 1).unwrap());
    }

    #[test]
    fn flatten_gradients(shape in prop::collection::vec(1usize..5, 2..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check(vec![random(&shape, &mut rng)], seed, |t, v| t.flatten_batch(v[0]).unwrap());
    }

    #[test]
    fn l1_loss_gradients(rows in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random(&[rows, 2], &mut rng);
        let offset = away_from_zero(&[rows, 2], &mut rng);
        let pred = ops::add(&truth, &offset).unwrap();
        check(vec![pred, truth], seed, |t, v| t.l1_loss(v[0], v[1]).unwrap());
    }
}

#[test]
fn conv_with_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 5, 4], &mut rng);
    let mut weight = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        weight.data_mut()[c * 3 + c] = 1.0;
    }
    let y = ops::conv2d(&x, &weight, &Tensor::zeros(&[3]), 1, 0).unwrap();
    assert_eq!(y, x);
}

#[test]
fn split_inverts_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 1, 4], &mut rng);
    let joined = ops::concat(&[&a, &b], 1).unwrap();
    let parts = ops::split(&joined, 1, &[3, 1]).unwrap();
    assert_eq!(parts, vec![a, b]);
}

#[test]
fn adding_zeros_is_bitwise_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 7], &mut rng).cast::<f32>();
    let y = ops::add(&x, &Tensor::zeros(&[3, 7])).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&x), bits(&y));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[1, 2, 6, 6], &mut rng).cast::<f32>();
    let w = random(&[3, 2, 3, 3], &mut rng).cast::<f32>();
    let run = || {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.leaf(x.clone()),
            tape.leaf(w.clone()),
            tape.leaf(Tensor::zeros(&[3])),
        );
        let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        let y = tape.relu(y);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        (g.wrt(xv, &[1, 2, 6, 6]), g.wrt(wv, &[3, 2, 3, 3]))
    };
    assert_eq!(run(), run());
}
