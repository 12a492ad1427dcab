//! Reference implementations used as test oracles.
//!
//! Everything here is written from the textbook definitions with plain loops
//! and deliberately shares no code with the library's fast paths.

#![allow(dead_code)]

use hskan_core::{EdgeFunction, Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Clamped uniform knot vector built from its definition.
pub fn knots(order: usize, intervals: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut t = vec![lo; order];
    for i in 0..=intervals {
        t.push(lo + (hi - lo) * i as f64 / intervals as f64);
    }
    t.extend(std::iter::repeat_n(hi, order));
    t
}

/// Cox–de Boor recursion for `B_{i,k}(x)`. The right end of the domain is
/// folded into the last non-empty interval.
pub fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        let hi = *t.last().unwrap();
        let last_open = t.iter().rposition(|&v| v < hi).unwrap();
        let inside = t[i] <= x && x < t[i + 1];
        let at_end = x == hi && i == last_open;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + k] - t[i];
    if d1 > 0.0 {
        v += (x - t[i]) / d1 * cox_de_boor(t, i, k - 1, x);
    }
    let d2 = t[i + k + 1] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + k + 1] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x);
    }
    v
}

pub fn basis_oracle(t: &[f64], k: usize, x: f64) -> Vec<f64> {
    (0..t.len() - k - 1).map(|i| cox_de_boor(t, i, k, x)).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `φ(x)` from its definition, clamping `x` into the spline domain.
pub fn phi(f: &EdgeFunction, x: f64) -> f64 {
    let (lo, hi) = f.grid.domain();
    let t = knots(f.grid.order(), f.grid.intervals(), lo, hi);
    let b = basis_oracle(&t, f.grid.order(), x.clamp(lo, hi));
    f.base * silu(x) + f.scale * b.iter().zip(&f.coeffs).map(|(b, c)| b * c).sum::<f64>()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Every multi-index of `shape`, row-major.
pub fn indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &d in shape {
        out = out.into_iter().flat_map(|p| (0..d).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    out
}

fn at(x: &Tensor, idx: &[usize]) -> f64 {
    let s = strides(x.shape());
    x.data()[idx.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
}

/// Input value seen by tap `tap` of output position `pos`, zero outside.
fn tap_value(x: &Tensor, b: usize, c: usize, pos: &[usize], tap: &[usize], stride: &[usize], pad: &[usize]) -> f64 {
    let spatial = &x.shape()[2..];
    let mut idx = vec![b, c];
    for a in 0..pos.len() {
        let p = (pos[a] * stride[a] + tap[a]) as isize - pad[a] as isize;
        if p < 0 || p >= spatial[a] as isize {
            return 0.0;
        }
        idx.push(p as usize);
    }
    at(x, &idx)
}

fn out_extent(input: &[usize], kernel: &[usize], stride: &[usize], pad: &[usize]) -> Vec<usize> {
    (0..kernel.len()).map(|a| (input[a] + 2 * pad[a] - kernel[a]) / stride[a] + 1).collect()
}

/// `o[b,co,p] = Σ_ci Σ_tap φ_{co,ci,tap}(x[b,ci,p·s+tap−pad])` one element at a time.
pub fn kan_conv_oracle(
    x: &Tensor,
    edge: impl Fn(usize, usize, usize) -> EdgeFunction,
    cout: usize,
    kernel: &[usize],
    stride: &[usize],
    pad: &[usize],
) -> Tensor {
    let (batch, cin) = (x.shape()[0], x.shape()[1]);
    let out_sp = out_extent(&x.shape()[2..], kernel, stride, pad);
    let taps = indices(kernel);
    let mut shape = vec![batch, cout];
    shape.extend(&out_sp);
    let mut data = Vec::new();
    for b in 0..batch {
        for co in 0..cout {
            for pos in indices(&out_sp) {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for (t, tap) in taps.iter().enumerate() {
                        acc += phi(&edge(co, ci, t), tap_value(x, b, ci, &pos, tap, stride, pad));
                    }
                }
                data.push(acc);
            }
        }
    }
    Tensor::new(&shape, data).unwrap()
}

/// `o[b,co,p] = Σ_ci Σ_tap x[b,ci,p·s+tap−pad]·K[co,ci,tap]`.
pub fn conv_oracle(x: &Tensor, k: &Tensor, stride: &[usize], pad: &[usize]) -> Tensor {
    let kernel = &k.shape()[2..];
    let (cout, cin) = (k.shape()[0], k.shape()[1]);
    let taps = indices(kernel);
    let out_sp = out_extent(&x.shape()[2..], kernel, stride, pad);
    let mut shape = vec![x.shape()[0], cout];
    shape.extend(&out_sp);
    let mut data = Vec::new();
    for b in 0..x.shape()[0] {
        for co in 0..cout {
            for pos in indices(&out_sp) {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for tap in &taps {
                        let widx = [vec![co, ci], tap.clone()].concat();
                        acc += tap_value(x, b, ci, &pos, tap, stride, pad) * at(k, &widx);
                    }
                }
                data.push(acc);
            }
        }
    }
    Tensor::new(&shape, data).unwrap()
}

/// Max over each window of the trailing `window.len()` axes.
pub fn max_pool_oracle(x: &Tensor, window: &[usize], stride: &[usize]) -> Tensor {
    let r = window.len();
    let lead = &x.shape()[..x.ndim() - r];
    let spatial = &x.shape()[x.ndim() - r..];
    let out_sp = out_extent(spatial, window, stride, &vec![0; r]);
    let mut shape = lead.to_vec();
    shape.extend(&out_sp);
    let mut data = Vec::new();
    for l in indices(lead) {
        for pos in indices(&out_sp) {
            let mut m = f64::NEG_INFINITY;
            for tap in indices(window) {
                let idx: Vec<usize> = l.iter().copied().chain((0..r).map(|a| pos[a] * stride[a] + tap[a])).collect();
                m = m.max(at(x, &idx));
            }
            data.push(m);
        }
    }
    Tensor::new(&shape, data).unwrap()
}

/// Mean of `−ln(softmax(row)[target])`, computed literally.
pub fn cross_entropy_oracle(logits: &Tensor, targets: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let mut total = 0.0;
    for (row, &t) in logits.data().chunks(c).zip(targets) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[t].exp() / z).ln();
    }
    total / targets.len() as f64
}

/// Largest `|analytic − fd| / max(1, |fd|)` over every element of every input.
///
/// `f` maps the recorded inputs to a scalar loss; central differences use `h`.
pub fn grad_check(inputs: &[Tensor], h: f64, f: impl Fn(&mut Tape, &[Var]) -> hskan_core::Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vs: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let l = f(&mut tape, &vs).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (n, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[n].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[n].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[n].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max((a - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

/// Cyclic Jacobi on a dense symmetric matrix; eigenvalues descending with
/// eigenvectors as columns. Uses the classical `θ = ½·atan2(2a_pq, a_qq − a_pp)`
/// rotation so it differs in form from the library solver.
pub fn jacobi_oracle(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p * n + q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * m[p * n + q]).atan2(m[q * n + q] - m[p * n + p]);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap());
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&j| (0..n).map(|k| v[k * n + j]).collect()).collect();
    (values, vectors)
}
