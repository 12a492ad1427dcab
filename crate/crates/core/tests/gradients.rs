mod support;

use std::sync::Arc;

use hskan_core::{ConvSpec, KanConvLayer, KanLinearLayer, Module, Result, SplineGrid, Tape, Tensor, Var};
use rand::Rng;
use support::{grad_check, random_tensor, rng};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// `Σ y ⊙ r` for a fixed pseudo-random `r`, so every output element matters.
fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var> {
    let r = random_tensor(&mut rng(99), tape.shape(y), -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn grid() -> Arc<SplineGrid> {
    Arc::new(SplineGrid::default())
}

fn kan_params(rng: &mut impl Rng, edges: usize, nb: usize) -> Vec<Tensor> {
    vec![
        random_tensor(rng, &[edges], -1.0, 1.0),
        random_tensor(rng, &[edges], -1.0, 1.0),
        random_tensor(rng, &[edges, nb], -1.0, 1.0),
    ]
}

#[test]
fn silu() {
    let x = random_tensor(&mut rng(1), &[4, 8], -4.0, 4.0);
    let err = grad_check(&[x], H, |t, v| {
        let y = t.silu(v[0])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_and_structural_ops() {
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let err = grad_check(&[a, b], H, |t, v| {
        let s = t.add(v[0], v[1])?;
        let m = t.mul(s, v[0])?;
        let m = t.scale(m, -1.7)?;
        let p = t.pad(m, &[(1, 0), (2, 1)])?;
        let c = t.slice(p, &[(0, 3), (1, 6)])?;
        let c = t.reshape(c, &[15])?;
        weighted_sum(t, c)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn matmul_and_linear() {
    let mut r = rng(3);
    let a = random_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let b = random_tensor(&mut r, &[5, 4], -1.0, 1.0);
    let w = random_tensor(&mut r, &[2, 4], -1.0, 1.0);
    let err = grad_check(&[a, b, w], H, |t, v| {
        let ab = t.matmul(v[0], v[1])?;
        let y = t.linear(ab, v[2])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn max_pool() {
    let x = random_tensor(&mut rng(4), &[2, 6, 5], -1.0, 1.0);
    let err = grad_check(&[x], H, |t, v| {
        let y = t.max_pool(v[0], &[2, 2], &[2, 2])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
    let x3 = random_tensor(&mut rng(5), &[1, 4, 4, 4], -1.0, 1.0);
    let err = grad_check(&[x3], H, |t, v| {
        let y = t.max_pool(v[0], &[3, 3, 3], &[1, 1, 1])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn cross_entropy() {
    let logits = random_tensor(&mut rng(6), &[6, 5], -3.0, 3.0);
    let targets = [0usize, 4, 2, 2, 1, 3];
    let err = grad_check(&[logits], H, |t, v| t.cross_entropy(v[0], &targets));
    assert!(err < TOL, "{err}");
}

#[test]
fn kan_linear() {
    let mut r = rng(7);
    for _ in 0..3 {
        let (b, p_in, p_out) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));
        let layer = KanLinearLayer::new(p_in, p_out, grid()).unwrap();
        let x = random_tensor(&mut r, &[b, p_in], -1.3, 1.3);
        let mut inputs = vec![x];
        inputs.extend(kan_params(&mut r, p_in * p_out, 8));
        let err = grad_check(&inputs, H, |t, v| {
            let y = layer.forward(t, v[0], &v[1..])?;
            weighted_sum(t, y)
        });
        assert!(err < TOL, "b={b} p_in={p_in} p_out={p_out}: {err}");
    }
}

fn check_kan_conv(seed: u64, x_shape: &[usize], cout: usize, kernel: &[usize], stride: &[usize], pad: &[usize]) {
    let mut r = rng(seed);
    let spec = ConvSpec::new(x_shape[1], cout, kernel, stride, pad).unwrap();
    let layer = KanConvLayer::new(spec, grid()).unwrap();
    let x = random_tensor(&mut r, x_shape, -1.2, 1.2);
    assert!(x.len() <= 64);
    let mut inputs = vec![x];
    inputs.extend(kan_params(&mut r, layer.edges.len(), 8));
    let err = grad_check(&inputs, H, |t, v| {
        let y = layer.forward(t, v[0], &v[1..])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{x_shape:?} k={kernel:?}: {err}");
}

#[test]
fn kan_conv_1d() {
    check_kan_conv(8, &[2, 3, 7], 2, &[3], &[2], &[1]);
    check_kan_conv(9, &[1, 2, 9], 3, &[2], &[1], &[0]);
}

#[test]
fn kan_conv_2d() {
    check_kan_conv(10, &[1, 2, 5, 5], 2, &[3, 3], &[2, 2], &[1, 1]);
    check_kan_conv(11, &[2, 1, 4, 5], 2, &[2, 3], &[1, 2], &[0, 1]);
}

#[test]
fn kan_conv_3d() {
    check_kan_conv(12, &[1, 2, 3, 3, 3], 2, &[2, 2, 2], &[1, 1, 1], &[0, 0, 0]);
    check_kan_conv(13, &[1, 1, 4, 4, 4], 2, &[1, 1, 4], &[1, 1, 1], &[0, 0, 0]);
}

#[test]
fn classical_conv() {
    let mut r = rng(14);
    let x = random_tensor(&mut r, &[2, 2, 5, 4], -1.0, 1.0);
    let k = random_tensor(&mut r, &[3, 2, 3, 2], -1.0, 1.0);
    let err = grad_check(&[x, k], H, |t, v| {
        let y = hskan_core::layers::classical_conv_forward(t, v[0], v[1], &[1, 2], &[1, 0])?;
        weighted_sum(t, y)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn reuse_doubles_gradient() {
    let x = Tensor::new(&[3], vec![0.3, -0.2, 1.5]).unwrap();
    let grad_of = |twice: bool| {
        let mut t = Tape::new();
        let v = t.param(&x);
        let s = t.silu(v).unwrap();
        let y = if twice { t.add(s, s).unwrap() } else { s };
        let l = t.sum(y).unwrap();
        t.backward(l).unwrap().get(v).unwrap().to_vec()
    };
    let (once, twice) = (grad_of(false), grad_of(true));
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
}
