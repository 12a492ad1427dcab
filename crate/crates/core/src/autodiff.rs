//! Reverse-mode differentiation over a per-pass tape.
//!
//! Every operation appends a node to a [`Tape`], so node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep. Nodes
//! only keep backward context when some operand requires gradients; inference
//! passes record values alone.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::math::{silu, silu_deriv};
use crate::spline::{SplineGrid, MAX_ORDER};
use crate::tensor::{check_shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial geometry of a strided, unpadded convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl Window {
    fn new(spatial: &[usize], kernel: &[usize], stride: &[usize], what: &str) -> Result<Self> {
        let r = spatial.len();
        if r == 0 || r > 3 || kernel.len() != r || stride.len() != r {
            bail!(Shape, "{what}: spatial rank {r} with kernel {kernel:?} and stride {stride:?}");
        }
        // Right-aligned so the innermost loop runs along the fastest axis.
        let mut w = Window { input: [1; 3], kernel: [1; 3], stride: [1; 3], output: [1; 3] };
        let shift = 3 - r;
        for (a, dst) in (0..r).zip(shift..3) {
            if kernel[a] == 0 || stride[a] == 0 {
                bail!(Config, "{what}: kernel and stride must be positive");
            }
            if kernel[a] > spatial[a] {
                bail!(Config, "{what}: kernel {kernel:?} does not fit input extent {spatial:?} (output extent < 1)");
            }
            w.input[dst] = spatial[a];
            w.kernel[dst] = kernel[a];
            w.stride[dst] = stride[a];
            w.output[dst] = (spatial[a] - kernel[a]) / stride[a] + 1;
        }
        Ok(w)
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn volume(&self) -> usize {
        self.input.iter().product()
    }

    /// Input offsets of each window origin and of each tap relative to it.
    fn offset_tables(&self) -> (Vec<usize>, Vec<usize>) {
        let [_, i1, i2] = self.input;
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [o0, o1, o2] = self.output;
        let mut origins = Vec::with_capacity(self.positions());
        for p0 in 0..o0 {
            for p1 in 0..o1 {
                for p2 in 0..o2 {
                    origins.push((p0 * s0 * i1 + p1 * s1) * i2 + p2 * s2);
                }
            }
        }
        let mut taps = Vec::with_capacity(self.taps());
        for t0 in 0..k0 {
            for t1 in 0..k1 {
                for t2 in 0..k2 {
                    taps.push((t0 * i1 + t1) * i2 + t2);
                }
            }
        }
        (origins, taps)
    }

    /// Calls `f(position, tap, input_offset)` for every window element, in
    /// row-major position order then row-major tap order.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [_, i1, i2] = self.input;
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [o0, o1, o2] = self.output;
        let mut p = 0;
        for p0 in 0..o0 {
            for p1 in 0..o1 {
                for p2 in 0..o2 {
                    let mut t = 0;
                    for t0 in 0..k0 {
                        for t1 in 0..k1 {
                            let row = ((p0 * s0 + t0) * i1 + p1 * s1 + t1) * i2 + p2 * s2;
                            for t2 in 0..k2 {
                                f(p, t, row + t2);
                                t += 1;
                            }
                        }
                    }
                    p += 1;
                }
            }
        }
    }
}

#[derive(Debug)]
struct ConvCtx {
    batch: usize,
    cin: usize,
    cout: usize,
    window: Window,
    cols: Vec<f64>,
}

#[derive(Debug)]
struct ExpandCtx {
    features: usize,
    inner: usize,
    order: usize,
    first: Vec<u32>,
    dlocal: Vec<f64>,
    dsilu: Vec<f64>,
    inside: Vec<bool>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, trans_b: bool },
    Reshape(Var),
    Pad { input: Var, pads: Vec<(usize, usize)> },
    Slice { input: Var, ranges: Vec<(usize, usize)> },
    Sum(Var),
    Silu(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    Conv { input: Var, weight: Var, ctx: ConvCtx },
    KanExpand { input: Var, ctx: ExpandCtx },
    KanWeights { base: Var, scale: Var, coeffs: Var, edges: usize, basis: usize, taps: usize },
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Records a forward pass for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric { op, detail: format!("non-finite value {} at flat index {i}", data[i]) }),
    }
}

/// `c = α·a·b + β·c` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs + 1;
    if k > 0 {
        assert!(a.len() >= span(m, k, rsa, csa) && b.len() >= span(k, n, rsb, csb));
    }
    assert!(c.len() >= span(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Walks the innermost rows of `small`, embedded in `big` at `offsets`,
/// calling `f(small_offset, big_offset, row_len)`.
fn for_each_row(small: &[usize], big: &[usize], offsets: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let r = small.len();
    let row = small[r - 1];
    let rows: usize = small[..r - 1].iter().product();
    let mut idx = vec![0usize; r - 1];
    for i in 0..rows {
        let mut off = 0;
        for a in 0..r - 1 {
            off = off * big[a] + idx[a] + offsets[a];
        }
        off = off * big[r - 1] + offsets[r - 1];
        f(i * row, off, row);
        for a in (0..r - 1).rev() {
            idx[a] += 1;
            if idx[a] < small[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t`; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let mut value = t;
        value.set_requires_grad(false);
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Records a copy of a parameter tensor with gradient tracking on.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut v = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
        v.set_requires_grad(true);
        self.leaf(v)
    }

    /// Records a value that is never differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut v = t;
        v.set_requires_grad(false);
        self.leaf(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn emit(&mut self, name: &'static str, shape: &[usize], data: Vec<f64>, rg: bool, op: Op) -> Result<Var> {
        finite(name, &data)?;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, rg, op))
    }

    /// For ops whose outputs are finite whenever their inputs are.
    fn emit_unchecked(&mut self, shape: &[usize], data: Vec<f64>, rg: bool, op: Op) -> Result<Var> {
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, rg, op))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Shape, "{name}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracks(a) || self.tracks(b);
        self.emit("add", &shape, data, rg, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracks(a) || self.tracks(b);
        self.emit("mul", &shape, data, rg, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.data(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracks(a);
        self.emit("scale", &shape, data, rg, Op::Scale(a, s))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            bail!(Shape, "matmul needs rank-2 operands, got {sa:?} and {sb:?}");
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, kb) = if trans_b { (sb[0], sb[1]) } else { (sb[1], sb[0]) };
        if k != kb {
            bail!(Shape, "matmul inner dimensions differ: {sa:?} x {sb:?}{}", if trans_b { "ᵀ" } else { "" });
        }
        let mut out = vec![0.0; m * n];
        let bs = if trans_b { (1, k) } else { (n, 1) };
        gemm(m, k, n, self.data(a), (k, 1), self.data(b), bs, 0.0, &mut out, (n, 1));
        let rg = self.tracks(a) || self.tracks(b);
        self.emit("matmul", &[m, n], out, rg, Op::MatMul { a, b, m, k, n, trans_b })
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `x · wᵀ` for `x: [m, k]`, `w: [n, k]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul_impl(x, w, true)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len = check_shape(shape)?;
        if len != self.value(a).len() {
            bail!(Shape, "cannot reshape {:?} into {shape:?}", self.shape(a));
        }
        let data = self.data(a).to_vec();
        let rg = self.tracks(a);
        self.emit_unchecked(shape, data, rg, Op::Reshape(a))
    }

    /// Zero padding; `pads[d] = (before, after)` for every dimension.
    pub fn pad(&mut self, a: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if pads.len() != shape.len() {
            bail!(Shape, "pad: {} pad pairs for rank {}", pads.len(), shape.len());
        }
        let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(d, (b, e))| d + b + e).collect();
        let mut out = vec![0.0; out_shape.iter().product()];
        let src = self.data(a);
        let offsets: Vec<usize> = pads.iter().map(|p| p.0).collect();
        for_each_row(&shape, &out_shape, &offsets, |from, to, len| {
            out[to..to + len].copy_from_slice(&src[from..from + len]);
        });
        let rg = self.tracks(a);
        self.emit_unchecked(&out_shape, out, rg, Op::Pad { input: a, pads: pads.to_vec() })
    }

    /// Sub-block `ranges[d] = (start, end)` (end exclusive) of every dimension.
    pub fn slice(&mut self, a: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if ranges.len() != shape.len() {
            bail!(Shape, "slice: {} ranges for rank {}", ranges.len(), shape.len());
        }
        if ranges.iter().zip(&shape).any(|(&(s, e), &d)| s >= e || e > d) {
            bail!(Shape, "slice ranges {ranges:?} invalid for shape {shape:?}");
        }
        let out_shape: Vec<usize> = ranges.iter().map(|(s, e)| e - s).collect();
        let mut out = vec![0.0; out_shape.iter().product()];
        let src = self.data(a);
        let offsets: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        for_each_row(&out_shape, &shape, &offsets, |to, from, len| {
            out[to..to + len].copy_from_slice(&src[from..from + len]);
        });
        let rg = self.tracks(a);
        self.emit_unchecked(&out_shape, out, rg, Op::Slice { input: a, ranges: ranges.to_vec() })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        let rg = self.tracks(a);
        self.emit("sum", &[1], vec![s], rg, Op::Sum(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let data = self.data(a).iter().map(|&x| silu(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.tracks(a);
        self.emit("silu", &shape, data, rg, Op::Silu(a))
    }

    /// Max over windows of the trailing `window.len()` dimensions. Gradients
    /// route to the first maximal element in row-major window order.
    pub fn max_pool(&mut self, a: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = window.len();
        if r == 0 || r > shape.len() {
            bail!(Shape, "max_pool: window rank {r} for input of rank {}", shape.len());
        }
        let lead = shape.len() - r;
        let geom = Window::new(&shape[lead..], window, stride, "max_pool")?;
        let outer: usize = shape[..lead].iter().product();
        let (vol, npos) = (geom.volume(), geom.positions());
        let src = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; outer * npos];
        let mut argmax = vec![0usize; outer * npos];
        for o in 0..outer {
            let base = o * vol;
            geom.for_each(|p, _, off| {
                let v = src[base + off];
                let slot = o * npos + p;
                if v > out[slot] {
                    out[slot] = v;
                    argmax[slot] = base + off;
                }
            });
        }
        let mut out_shape = shape[..lead].to_vec();
        out_shape.extend_from_slice(&geom.output[3 - r..]);
        let rg = self.tracks(a);
        self.emit("max_pool", &out_shape, out, rg, Op::MaxPool { input: a, argmax })
    }

    /// Unpadded strided cross-correlation.
    ///
    /// `x: [batch, c_in, s...]`, `w: [c_out, c_in, k...]` with 1 to 3 spatial
    /// axes; returns `[batch, c_out, o...]` with `o = (s − k)/stride + 1`.
    pub fn conv(&mut self, x: Var, w: Var, stride: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() < 3 || xs.len() > 5 || ws.len() != xs.len() {
            bail!(Shape, "conv: input {xs:?} and kernel {ws:?} need matching rank 3..=5");
        }
        let (batch, cin, cout) = (xs[0], xs[1], ws[0]);
        if ws[1] != cin {
            bail!(Shape, "conv: kernel expects {} input channels, input has {cin}", ws[1]);
        }
        let window = Window::new(&xs[2..], &ws[2..], stride, "conv")?;
        let (npos, taps, vol) = (window.positions(), window.taps(), window.volume());
        let kdim = cin * taps;
        let rows = batch * npos;
        let src = self.data(x);
        let (origins, tap_offs) = window.offset_tables();
        let mut cols = vec![0.0; rows * kdim];
        for (row, dst) in cols.chunks_exact_mut(kdim).enumerate() {
            let (b, p) = (row / npos, row % npos);
            for (c, dst) in dst.chunks_exact_mut(taps).enumerate() {
                let plane = &src[(b * cin + c) * vol + origins[p]..];
                for (d, &t) in dst.iter_mut().zip(&tap_offs) {
                    *d = plane[t];
                }
            }
        }
        let mut mat = vec![0.0; rows * cout];
        gemm(rows, kdim, cout, &cols, (kdim, 1), self.data(w), (1, kdim), 0.0, &mut mat, (cout, 1));
        let mut out = vec![0.0; batch * cout * npos];
        for b in 0..batch {
            for p in 0..npos {
                let r = &mat[(b * npos + p) * cout..(b * npos + p + 1) * cout];
                for (co, &v) in r.iter().enumerate() {
                    out[(b * cout + co) * npos + p] = v;
                }
            }
        }
        let mut out_shape = vec![batch, cout];
        out_shape.extend_from_slice(&window.output[5 - xs.len()..]);
        let rg = self.tracks(x) || self.tracks(w);
        let ctx = ConvCtx { batch, cin, cout, window, cols: if rg { cols } else { Vec::new() } };
        self.emit("conv", &out_shape, out, rg, Op::Conv { input: x, weight: w, ctx })
    }

    /// Expands every element `x` of `[batch, c, s...]` into the edge-function
    /// features `[silu(x), B_0(x̂), ..., B_{n−1}(x̂)]` with `x̂ = clamp(x)`,
    /// giving `[batch, c·(n+1), s...]` (feature-major inside each channel).
    pub fn kan_expand(&mut self, x: Var, grid: &SplineGrid) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            bail!(Shape, "kan_expand needs [batch, channels, ...], got {shape:?}");
        }
        let nb = grid.basis_count();
        let features = nb + 1;
        let k = grid.order();
        let inner: usize = shape[2..].iter().product();
        let blocks = shape[0] * shape[1];
        let n_el = blocks * inner;
        let rg = self.tracks(x);
        let src = self.data(x);
        let mut out = vec![0.0; n_el * features];
        let mut ctx = ExpandCtx {
            features,
            inner,
            order: k,
            first: Vec::new(),
            dlocal: Vec::new(),
            dsilu: Vec::new(),
            inside: Vec::new(),
        };
        if rg {
            ctx.first = vec![0; n_el];
            ctx.dlocal = vec![0.0; n_el * (k + 1)];
            ctx.dsilu = vec![0.0; n_el];
            ctx.inside = vec![false; n_el];
        }
        let mut vals = [0.0; MAX_ORDER + 1];
        let mut ders = [0.0; MAX_ORDER + 1];
        for blk in 0..blocks {
            let obase = blk * features * inner;
            for s in 0..inner {
                let el = blk * inner + s;
                let v = src[el];
                if !v.is_finite() {
                    return Err(Error::Numeric { op: "kan_expand", detail: format!("non-finite input {v}") });
                }
                out[obase + s] = silu(v);
                let xc = grid.clamp(v);
                let first = if rg {
                    let f = grid.local_basis(xc, &mut vals, Some(&mut ders));
                    ctx.first[el] = f as u32;
                    ctx.dlocal[el * (k + 1)..(el + 1) * (k + 1)].copy_from_slice(&ders[..=k]);
                    ctx.dsilu[el] = silu_deriv(v);
                    ctx.inside[el] = grid.contains(v);
                    f
                } else {
                    grid.local_basis(xc, &mut vals, None)
                };
                for r in 0..=k {
                    out[obase + (1 + first + r) * inner + s] = vals[r];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[1] *= features;
        self.emit_unchecked(&out_shape, out, rg, Op::KanExpand { input: x, ctx })
    }

    /// Assembles effective kernel weights from per-edge parameters.
    ///
    /// Edges are indexed `(o, i, t)` for `out_shape = [o, i, t...]`; `base` and
    /// `scale` hold one value per edge and `coeffs` one row of `basis` values
    /// per edge. The result has shape `[o, i·(basis+1), t...]` with entries
    /// `w_b` in feature slot 0 and `w_s·c_j` in slot `1 + j`, matching
    /// [`Tape::kan_expand`]'s layout.
    pub fn kan_weights(&mut self, base: Var, scale: Var, coeffs: Var, out_shape: &[usize]) -> Result<Var> {
        if out_shape.len() < 2 {
            bail!(Shape, "kan_weights: edge shape {out_shape:?} needs [out, in, taps...]");
        }
        let edges: usize = out_shape.iter().product();
        let taps: usize = out_shape[2..].iter().product();
        let cs = self.shape(coeffs);
        if cs.len() != 2 || cs[0] != edges || self.value(base).len() != edges || self.value(scale).len() != edges {
            bail!(
                Shape,
                "kan_weights: {edges} edges but base {:?}, scale {:?}, coeffs {cs:?}",
                self.shape(base),
                self.shape(scale)
            );
        }
        let basis = cs[1];
        let features = basis + 1;
        let (wb, ws, c) = (self.data(base), self.data(scale), self.data(coeffs));
        let mut out = vec![0.0; edges * features];
        for e in 0..edges {
            let (oi, t) = (e / taps, e % taps);
            let row = oi * features * taps;
            out[row + t] = wb[e];
            for j in 0..basis {
                out[row + (1 + j) * taps + t] = ws[e] * c[e * basis + j];
            }
        }
        let mut shape = out_shape.to_vec();
        shape[1] *= features;
        let rg = self.tracks(base) || self.tracks(scale) || self.tracks(coeffs);
        self.emit("kan_weights", &shape, out, rg, Op::KanWeights { base, scale, coeffs, edges, basis, taps })
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            bail!(Shape, "cross_entropy: logits {shape:?} for {} targets", targets.len());
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            bail!(Data, "target class {t} out of range for {c} classes");
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = crate::math::exp(row[j] - m);
                probs[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                probs[i * c + j] /= s;
            }
            loss += m + crate::math::ln(s) - row[targets[i]];
        }
        loss /= b as f64;
        let rg = self.tracks(logits);
        self.emit("cross_entropy", &[1], vec![loss], rg, Op::CrossEntropy { logits, probs, targets: targets.to_vec() })
    }

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.backprop(&node.op, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.tracks(v) {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(g);
    }

    fn backprop(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * db[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * da[i];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            &Op::MatMul { a, b, m, k, n, trans_b } => {
                let (da, db) = (self.data(a), self.data(b));
                // dA = G·Bᵀ  (or G·B when B was transposed)
                self.accumulate(grads, a, |ga| {
                    let bs = if trans_b { (k, 1) } else { (1, n) };
                    gemm(m, n, k, g, (n, 1), db, bs, 1.0, ga, (k, 1));
                });
                // dB = Aᵀ·G  (or Gᵀ·A)
                self.accumulate(grads, b, |gb| {
                    if trans_b {
                        gemm(n, m, k, g, (1, n), da, (k, 1), 1.0, gb, (k, 1));
                    } else {
                        gemm(k, m, n, da, (1, k), g, (n, 1), 1.0, gb, (n, 1));
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Pad { input, pads } => {
                let shape = self.shape(*input).to_vec();
                let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(d, (b, e))| d + b + e).collect();
                let offsets: Vec<usize> = pads.iter().map(|p| p.0).collect();
                self.accumulate(grads, *input, |gi| {
                    for_each_row(&shape, &out_shape, &offsets, |to, from, len| {
                        gi[to..to + len].iter_mut().zip(&g[from..from + len]).for_each(|(a, b)| *a += b);
                    });
                });
            }
            Op::Slice { input, ranges } => {
                let shape = self.shape(*input).to_vec();
                let out_shape: Vec<usize> = ranges.iter().map(|(s, e)| e - s).collect();
                let offsets: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                self.accumulate(grads, *input, |gi| {
                    for_each_row(&out_shape, &shape, &offsets, |from, to, len| {
                        gi[to..to + len].iter_mut().zip(&g[from..from + len]).for_each(|(a, b)| *a += b);
                    });
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Silu(a) => {
                let x = self.data(*a);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * silu_deriv(x[i]);
                    }
                });
            }
            Op::MaxPool { input, argmax } => {
                self.accumulate(grads, *input, |gi| {
                    for (slot, &src) in argmax.iter().enumerate() {
                        gi[src] += g[slot];
                    }
                });
            }
            Op::Conv { input, weight, ctx } => {
                let ConvCtx { batch, cin, cout, window, ref cols } = *ctx;
                let (npos, taps, vol) = (window.positions(), window.taps(), window.volume());
                let kdim = cin * taps;
                let w = self.data(*weight);
                let rows = batch * npos;
                let mut dmat = vec![0.0; rows * cout];
                for b in 0..batch {
                    for co in 0..cout {
                        let src = &g[(b * cout + co) * npos..(b * cout + co + 1) * npos];
                        for (p, &v) in src.iter().enumerate() {
                            dmat[(b * npos + p) * cout + co] = v;
                        }
                    }
                }
                self.accumulate(grads, *weight, |gw| {
                    gemm(cout, rows, kdim, &dmat, (1, cout), cols, (kdim, 1), 1.0, gw, (kdim, 1));
                });
                if self.tracks(*input) {
                    let mut dcols = vec![0.0; rows * kdim];
                    gemm(rows, cout, kdim, &dmat, (cout, 1), w, (kdim, 1), 0.0, &mut dcols, (kdim, 1));
                    let (origins, tap_offs) = window.offset_tables();
                    self.accumulate(grads, *input, |gi| {
                        for (row, src) in dcols.chunks_exact(kdim).enumerate() {
                            let (b, p) = (row / npos, row % npos);
                            for (c, src) in src.chunks_exact(taps).enumerate() {
                                let plane = &mut gi[(b * cin + c) * vol + origins[p]..];
                                for (&v, &t) in src.iter().zip(&tap_offs) {
                                    plane[t] += v;
                                }
                            }
                        }
                    });
                }
            }
            Op::KanExpand { input, ctx } => {
                let ExpandCtx { features, inner, order, ref first, ref dlocal, ref dsilu, ref inside } = *ctx;
                self.accumulate(grads, *input, |gi| {
                    for (el, gx) in gi.iter_mut().enumerate() {
                        let (blk, s) = (el / inner, el % inner);
                        let gbase = blk * features * inner + s;
                        let mut acc = g[gbase] * dsilu[el];
                        if inside[el] {
                            let f0 = first[el] as usize;
                            for r in 0..=order {
                                acc += g[gbase + (1 + f0 + r) * inner] * dlocal[el * (order + 1) + r];
                            }
                        }
                        *gx += acc;
                    }
                });
            }
            &Op::KanWeights { base, scale, coeffs, edges, basis, taps } => {
                let features = basis + 1;
                let (ws, c) = (self.data(scale), self.data(coeffs));
                let at = |e: usize, f: usize| {
                    let (oi, t) = (e / taps, e % taps);
                    oi * features * taps + f * taps + t
                };
                self.accumulate(grads, base, |gb| {
                    for e in 0..edges {
                        gb[e] += g[at(e, 0)];
                    }
                });
                self.accumulate(grads, scale, |gs| {
                    for e in 0..edges {
                        gs[e] += (0..basis).map(|j| g[at(e, 1 + j)] * c[e * basis + j]).sum::<f64>();
                    }
                });
                self.accumulate(grads, coeffs, |gc| {
                    for e in 0..edges {
                        for j in 0..basis {
                            gc[e * basis + j] += g[at(e, 1 + j)] * ws[e];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, probs, targets } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                self.accumulate(grads, *logits, |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
