//! Finite-difference checks of every primitive and the conv1d oracle.

mod common;

use common::{flat2, flat3, max_abs_diff, project, rand_tensor, rng, ConvCase};
use proptest::prelude::*;
use somnoflow::autodiff::{grad_check, grad_check_many, BatchNormMode, ConvGeometry, Padding, Tape, Tensor, Var};
use somnoflow::Result;

const CASES: u64 = 20;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Runs `f` on `CASES` random draws of inputs with the given shapes and
/// returns the worst relative error. `lo..hi` bounds the input values.
fn worst<F>(shapes: &[&[usize]], lo: f64, hi: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    (0..CASES)
        .map(|seed| {
            let mut r = rng(1000 + seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut r, s, lo, hi)).collect();
            // projection weights are drawn after the inputs, inside `f`'s reach
            grad_check_many(&f, &inputs, EPS).unwrap()
        })
        .fold(0.0, f64::max)
}

/// `f` followed by a fixed random projection of its output.
fn projected<G>(out_shape: &'static [usize], g: G) -> impl Fn(&mut Tape, &[Var]) -> Result<Var>
where
    G: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let r = rand_tensor(&mut rng(7), out_shape, -1.0, 1.0);
    move |tape, v| {
        let y = g(tape, v)?;
        project(tape, y, &r)
    }
}

#[test]
fn binary_ops() {
    let e = worst(&[&[3, 4], &[4, 2]], -1.0, 1.0, projected(&[3, 2], |t, v| t.matmul(v[0], v[1])));
    assert!(e < TOL, "matmul {e}");
    let e = worst(&[&[3, 4], &[5, 4]], -1.0, 1.0, projected(&[3, 5], |t, v| t.matmul_nt(v[0], v[1])));
    assert!(e < TOL, "matmul_nt {e}");
    let e = worst(&[&[2, 3], &[2, 3]], -1.0, 1.0, projected(&[2, 3], |t, v| t.add(v[0], v[1])));
    assert!(e < TOL, "add {e}");
    let e = worst(&[&[2, 3], &[2, 3]], -1.0, 1.0, projected(&[2, 3], |t, v| t.sub(v[0], v[1])));
    assert!(e < TOL, "sub {e}");
    let e = worst(&[&[2, 3], &[2, 3]], -1.0, 1.0, projected(&[2, 3], |t, v| t.mul(v[0], v[1])));
    assert!(e < TOL, "mul {e}");
    let e = worst(&[&[4, 3], &[3]], -1.0, 1.0, projected(&[4, 3], |t, v| t.add_row_bias(v[0], v[1])));
    assert!(e < TOL, "add_row_bias {e}");
    let e = worst(&[&[2, 3, 5], &[3]], -1.0, 1.0, projected(&[2, 3, 5], |t, v| t.add_channel_bias(v[0], v[1])));
    assert!(e < TOL, "add_channel_bias {e}");
}

#[test]
fn unary_ops() {
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.scale(v[0], -1.7))));
    assert!(e < TOL, "scale {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.add_scalar(v[0], 0.3))));
    assert!(e < TOL, "add_scalar {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.relu(v[0]))));
    assert!(e < TOL, "relu {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.tanh(v[0]))));
    assert!(e < TOL, "tanh {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.exp(v[0]))));
    assert!(e < TOL, "exp {e}");
    let e = worst(&[&[3, 4]], 0.2, 3.0, projected(&[3, 4], |t, v| Ok(t.log(v[0]))));
    assert!(e < TOL, "log {e}");
    let e = worst(&[&[3, 4]], 0.2, 3.0, projected(&[3, 4], |t, v| Ok(t.powf(v[0], 2.5))));
    assert!(e < TOL, "powf {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| Ok(t.clamp_min(v[0], 0.1))));
    assert!(e < TOL, "clamp_min {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| t.softmax(v[0], 1)));
    assert!(e < TOL, "softmax rows {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3, 4], |t, v| t.softmax(v[0], 0)));
    assert!(e < TOL, "softmax columns {e}");
}

#[test]
fn reductions_and_shape_ops() {
    let e = worst(&[&[3, 4]], -2.0, 2.0, |t, v| Ok(t.sum(v[0])));
    assert!(e < 1e-10, "sum {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, |t, v| Ok(t.mean(v[0])));
    assert!(e < TOL, "mean {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[3], |t, v| t.sum_last(v[0])));
    assert!(e < TOL, "sum_last {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[4, 3], |t, v| t.transpose(v[0])));
    assert!(e < TOL, "transpose {e}");
    let e = worst(&[&[3, 4]], -2.0, 2.0, projected(&[2, 6], |t, v| t.reshape(v[0], &[2, 6])));
    assert!(e < TOL, "reshape {e}");
    let e = worst(&[&[2, 3], &[2, 2]], -2.0, 2.0, projected(&[2, 5], |t, v| t.concat(&[v[0], v[1]], 1)));
    assert!(e < TOL, "concat {e}");
    let e = worst(&[&[5, 3]], -2.0, 2.0, projected(&[2, 3], |t, v| t.slice(v[0], 0, 1, 3)));
    assert!(e < TOL, "slice {e}");
}

#[test]
fn network_primitives() {
    let geom = ConvGeometry::new(2, 2, Padding::symmetric(1));
    let e = worst(
        &[&[2, 3, 11], &[4, 3, 3], &[4]],
        -1.0,
        1.0,
        projected(&[2, 4, 5], move |t, v| t.conv1d(v[0], v[1], Some(v[2]), geom)),
    );
    assert!(e < TOL, "conv1d {e}");

    // second record has four valid positions out of six
    let mask: Vec<f64> = [[1.0; 6], [1.0, 1.0, 1.0, 1.0, 0.0, 0.0]].concat();
    let e = worst(
        &[&[2, 3, 6], &[3], &[3]],
        -1.0,
        1.0,
        projected(&[2, 3, 6], move |t, v| {
            Ok(t.batch_norm(v[0], v[1], v[2], &mask, BatchNormMode::Batch)?.0)
        }),
    );
    assert!(e < TOL, "batch_norm {e}");

    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![0.5, 1.5, 2.0]);
    let e = worst(
        &[&[2, 3, 6], &[3], &[3]],
        -1.0,
        1.0,
        projected(&[2, 3, 6], move |t, v| {
            let mode = BatchNormMode::Running { mean: &mean, var: &var };
            Ok(t.batch_norm(v[0], v[1], v[2], &[1.0; 12], mode)?.0)
        }),
    );
    assert!(e < TOL, "batch_norm running {e}");

    let e = worst(
        &[&[4, 6], &[6], &[6]],
        -1.0,
        1.0,
        projected(&[4, 6], |t, v| t.layer_norm(v[0], v[1], v[2])),
    );
    assert!(e < TOL, "layer_norm {e}");
}

#[test]
fn reused_tensor_accumulates_both_paths() {
    // f(x) = sum(x * x + tanh(x)); x feeds three uses
    let f = |t: &mut Tape, x: Var| -> Result<Var> {
        let sq = t.mul(x, x)?;
        let th = t.tanh(x);
        let s = t.add(sq, th)?;
        Ok(t.sum(s))
    };
    for seed in 0..CASES {
        let x = rand_tensor(&mut rng(seed), &[5], -2.0, 2.0);
        assert!(grad_check(f, &x, EPS).unwrap() < TOL);

        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = f(&mut tape, v).unwrap();
        tape.backward(y).unwrap();
        let expected: Vec<f64> = x.data().iter().map(|a| 2.0 * a + 1.0 - a.tanh().powi(2)).collect();
        assert!(max_abs_diff(tape.grad(v).unwrap().data(), &expected) < 1e-12);
    }
}

#[test]
fn matmul_examples() {
    let mut t = Tape::new();
    let m = Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap();
    let i = t.constant(Tensor::eye(2));
    let mv = t.constant(m.clone());
    let out = t.matmul(i, mv).unwrap();
    assert_eq!(t.value(out), &m);

    let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = t.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let out = t.matmul(a, b).unwrap();
    assert_eq!(t.value(out).data(), &[2.0, 4.0]);
}

#[test]
fn conv1d_matches_nested_loop_oracle() {
    let mut r = rng(2024);
    for case in 0..100 {
        let c = ConvCase::random(&mut r);
        let (c_out, c_in, k) = (c.w.len(), c.x.len(), c.w[0][0].len());
        let l = c.x[0].len();
        let out_len = c.out_len();
        let gy: Vec<Vec<f64>> = rand_tensor(&mut r, &[c_out, out_len], -1.0, 1.0)
            .data()
            .chunks(out_len)
            .map(<[f64]>::to_vec)
            .collect();

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![c_in, l], flat2(&c.x)).unwrap());
        let w = tape.leaf(Tensor::new(vec![c_out, c_in, k], flat3(&c.w)).unwrap());
        let b = tape.leaf(Tensor::vector(c.bias.clone()));
        let geom = ConvGeometry::new(c.dilation, c.stride, Padding::symmetric(c.padding));
        let y = tape.conv1d(x, w, Some(b), geom).unwrap();
        assert_eq!(tape.shape(y), &[c_out, out_len], "case {case}");
        let fwd = max_abs_diff(tape.value(y).data(), &flat2(&c.forward()));
        assert!(fwd <= 1e-10, "case {case}: forward differs by {fwd}");

        let gyt = Tensor::new(vec![c_out, out_len], flat2(&gy)).unwrap();
        let loss = project(&mut tape, y, &gyt).unwrap();
        tape.backward(loss).unwrap();
        let (gx, gw, gb) = c.backward(&gy);
        for (name, var, want) in [("x", x, flat2(&gx)), ("w", w, flat3(&gw)), ("bias", b, gb)] {
            let d = max_abs_diff(tape.grad(var).unwrap().data(), &want);
            assert!(d <= 1e-10, "case {case}: grad {name} differs by {d}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..9,
        seed in any::<u64>(),
        spread in 0.0f64..800.0,
    ) {
        let x = rand_tensor(&mut rng(seed), &[rows, cols], -spread - 1e-9, spread + 1e-9);
        let mut t = Tape::new();
        let v = t.constant(x);
        let s = t.softmax(v, 1).unwrap();
        for row in t.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            // exp of a gap up to 1600 underflows to 0, so positivity is
            // checked within the range where it is representable
            if spread < 300.0 {
                prop_assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }
}
