mod support;

use std::sync::Arc;

use hskan_core::{ConvLayer, ConvSpec, EdgeFunction, KanConvLayer, KanLinearLayer, Module, SplineGrid, Tape, Tensor};
use rand::Rng;
use support::{conv_oracle, kan_conv_oracle, max_pool_oracle, phi, random_tensor, rng};

/// Input shape, kernel, stride, padding.
type Case<'a> = (&'a [usize], &'a [usize], &'a [usize], &'a [usize]);

fn grid() -> Arc<SplineGrid> {
    Arc::new(SplineGrid::default())
}

fn random_edges(layer_edges: &mut hskan_core::EdgeSet, rng: &mut impl Rng) {
    let g = layer_edges.grid().clone();
    for e in 0..layer_edges.len() {
        let coeffs = (0..g.basis_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = EdgeFunction::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), coeffs, g.clone()).unwrap();
        layer_edges.set_edge(e, &f).unwrap();
    }
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn linear_phi_reduces_to_classical_conv() {
    let mut r = rng(1);
    let cases: [Case; 3] = [
        (&[2, 3, 9], &[3], &[2], &[1]),
        (&[2, 2, 7, 6], &[3, 3], &[2, 1], &[1, 1]),
        (&[1, 2, 5, 5, 4], &[2, 3, 2], &[1, 2, 1], &[0, 1, 1]),
    ];
    for (xs, kernel, stride, pad) in cases {
        let (cin, cout) = (xs[1], 3);
        let spec = ConvSpec::new(cin, cout, kernel, stride, pad).unwrap();
        let mut kshape = vec![cout, cin];
        kshape.extend_from_slice(kernel);
        let k = random_tensor(&mut r, &kshape, -1.0, 1.0);
        let mut kan = KanConvLayer::new(spec.clone(), grid()).unwrap();
        for (e, &a) in k.data().iter().enumerate() {
            kan.edges.set_edge(e, &EdgeFunction::linear(a, grid()).unwrap()).unwrap();
        }
        let classical = ConvLayer::with_kernel(spec, k.clone()).unwrap();
        let x = random_tensor(&mut r, xs, -1.0, 1.0);
        let diff = max_abs_diff(&kan.apply(&x).unwrap(), &classical.apply(&x).unwrap());
        assert!(diff < 1e-10, "{xs:?}: {diff}");
    }
}

#[test]
fn identity_phi_sums_receptive_field() {
    let spec = ConvSpec::new(1, 1, &[3, 3], &[1, 1], &[0, 0]).unwrap();
    let mut kan = KanConvLayer::new(spec, grid()).unwrap();
    for e in 0..9 {
        kan.edges.set_edge(e, &EdgeFunction::linear(1.0, grid()).unwrap()).unwrap();
    }
    let y = kan.apply(&Tensor::full(&[1, 1, 5, 5], 1.0).unwrap()).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|v| (v - 9.0).abs() < 1e-10));
}

#[test]
fn kan_conv_matches_loop_oracle() {
    let mut r = rng(2);
    let cases: [(Case, usize); 4] = [
        ((&[2, 3, 8], &[3], &[1], &[1]), 2),
        ((&[2, 3, 8, 8], &[3, 3], &[2, 2], &[1, 1]), 2),
        ((&[2, 3, 8, 8, 8], &[3, 2, 3], &[2, 1, 3], &[1, 0, 1]), 2),
        ((&[1, 2, 5, 5, 6], &[1, 1, 6], &[1, 1, 1], &[0, 0, 0]), 3),
    ];
    for ((xs, kernel, stride, pad), cout) in cases {
        let spec = ConvSpec::new(xs[1], cout, kernel, stride, pad).unwrap();
        let mut kan = KanConvLayer::new(spec, grid()).unwrap();
        random_edges(&mut kan.edges, &mut r);
        let x = random_tensor(&mut r, xs, -1.5, 1.5);
        let got = kan.apply(&x).unwrap();
        let want =
            kan_conv_oracle(&x, |co, ci, t| kan.edges.edge(kan.edge_index(co, ci, t)), cout, kernel, stride, pad);
        let diff = max_abs_diff(&got, &want);
        assert!(diff < 1e-12, "{xs:?}: {diff}");
    }
}

#[test]
fn nine_term_expansion() {
    let mut r = rng(3);
    let spec = ConvSpec::new(1, 1, &[3, 3], &[1, 1], &[0, 0]).unwrap();
    let mut kan = KanConvLayer::new(spec, grid()).unwrap();
    random_edges(&mut kan.edges, &mut r);
    let x = random_tensor(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
    let o = kan.apply(&x).unwrap();
    assert_eq!(o.shape(), &[1, 1, 1, 1]);
    let xv = |m: usize, n: usize| x.data()[m * 3 + n];
    let p = |m: usize, n: usize| phi(&kan.edges.edge(m * 3 + n), xv(m, n));
    let expanded = p(0, 0) + p(0, 1) + p(0, 2) + p(1, 0) + p(1, 1) + p(1, 2) + p(2, 0) + p(2, 1) + p(2, 2);
    assert!((o.data()[0] - expanded).abs() < 1e-13, "{} vs {expanded}", o.data()[0]);
}

#[test]
fn classical_conv_examples() {
    let spec = ConvSpec::new(1, 1, &[1, 1], &[1, 1], &[0, 0]).unwrap();
    let id = ConvLayer::with_kernel(spec, Tensor::full(&[1, 1, 1, 1], 1.0).unwrap()).unwrap();
    let x = random_tensor(&mut rng(4), &[1, 1, 4, 4], -1.0, 1.0);
    assert_eq!(id.apply(&x).unwrap(), x);

    let spec = ConvSpec::new(1, 1, &[3, 3], &[1, 1], &[0, 0]).unwrap();
    let ones = ConvLayer::with_kernel(spec.clone(), Tensor::full(&[1, 1, 3, 3], 1.0).unwrap()).unwrap();
    let y = ones.apply(&Tensor::full(&[1, 1, 5, 5], 1.0).unwrap()).unwrap();
    assert!(y.data().iter().all(|&v| v == 9.0));

    let mut r = rng(5);
    let k = random_tensor(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
    let x = random_tensor(&mut r, &[1, 1, 5, 5], -1.0, 1.0);
    let conv = ConvLayer::with_kernel(spec, k.clone()).unwrap();
    let mut direct = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            for m in 0..3 {
                for n in 0..3 {
                    direct[i * 3 + j] += x.data()[(i + m) * 5 + j + n] * k.data()[m * 3 + n];
                }
            }
        }
    }
    let got = conv.apply(&x).unwrap();
    for (a, b) in got.data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
    let oracle = conv_oracle(&x, &k, &[1, 1], &[0, 0]);
    assert!(max_abs_diff(&got, &oracle) < 1e-12);
}

#[test]
fn strided_padded_classical_conv_matches_oracle() {
    let mut r = rng(6);
    let k = random_tensor(&mut r, &[4, 3, 3, 2, 2], -1.0, 1.0);
    let x = random_tensor(&mut r, &[2, 3, 6, 5, 7], -1.0, 1.0);
    let spec = ConvSpec::new(3, 4, &[3, 2, 2], &[2, 1, 3], &[1, 0, 1]).unwrap();
    let got = ConvLayer::with_kernel(spec, k.clone()).unwrap().apply(&x).unwrap();
    assert!(max_abs_diff(&got, &conv_oracle(&x, &k, &[2, 1, 3], &[1, 0, 1])) < 1e-12);
}

#[test]
fn max_pool_matches_oracle() {
    let mut r = rng(7);
    let x = random_tensor(&mut r, &[3, 6, 6], -1.0, 1.0);
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let y = t.max_pool(v, &[2, 2], &[2, 2]).unwrap();
    assert_eq!(t.value(y), &max_pool_oracle(&x, &[2, 2], &[2, 2]));

    let x = random_tensor(&mut r, &[2, 64, 5, 5], -1.0, 1.0);
    let v = t.constant(x.clone());
    let y = t.max_pool(v, &[3, 3], &[3, 3]).unwrap();
    assert_eq!(t.shape(y), &[2, 64, 1, 1]);
    assert_eq!(t.value(y), &max_pool_oracle(&x, &[3, 3], &[3, 3]));

    let c = t.constant(Tensor::full(&[1, 4, 4], 0.25).unwrap());
    let y = t.max_pool(c, &[2, 2], &[1, 1]).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.25));
    assert!(matches!(t.max_pool(c, &[5, 5], &[1, 1]), Err(hskan_core::Error::Config(_))));
}

#[test]
fn kan_linear_matches_double_loop() {
    let mut r = rng(8);
    let mut layer = KanLinearLayer::new(3, 2, grid()).unwrap();
    random_edges(&mut layer.edges, &mut r);
    let x = random_tensor(&mut r, &[4, 3], -1.5, 1.5);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let ps: Vec<_> = layer.params().into_iter().map(|p| t.constant(p.clone())).collect();
    let y = layer.forward(&mut t, xv, &ps).unwrap();
    for b in 0..4 {
        for j in 0..2 {
            let mut o = 0.0;
            for i in 0..3 {
                o += phi(&layer.edges.edge(layer.edge_index(j, i)), x.data()[b * 3 + i]);
            }
            assert!((t.value(y).data()[b * 2 + j] - o).abs() < 1e-12);
        }
    }
}

#[test]
fn parameter_count_closed_form() {
    let mut r = rng(9);
    for _ in 0..20 {
        let (k, g) = (r.random_range(1..5), r.random_range(1..9));
        let grid = Arc::new(SplineGrid::new(k, g, -1.0, 1.0).unwrap());
        let kernel: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(1..4)).collect();
        let (cin, cout) = (r.random_range(1..5), r.random_range(1..5));
        let rank = kernel.len();
        let spec = ConvSpec::new(cin, cout, &kernel, &vec![1; rank], &vec![0; rank]).unwrap();
        let conv = KanConvLayer::new(spec, grid.clone()).unwrap();
        assert_eq!(conv.param_count(), cout * cin * kernel.iter().product::<usize>() * (2 + g + k));
        let lin = KanLinearLayer::new(cin, cout, grid).unwrap();
        assert_eq!(lin.param_count(), cin * cout * (2 + g + k));
    }
}
