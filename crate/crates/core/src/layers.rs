//! KAN linear and convolution layers plus their classical counterparts.
//!
//! Every learnable edge evaluates `φ(x) = w_b·silu(x) + w_s·Σ_i c_i·B_i(x̂)`
//! where `x̂` is `x` clamped to the spline domain. A KAN layer stores its
//! edges as three parameter tensors (`w_b`, `w_s` and the coefficient rows)
//! indexed `(out, in, tap...)`; no layer carries a bias.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{bail, Error, Result};
use crate::math::{silu, sqrt};
use crate::spline::SplineGrid;
use crate::tensor::Tensor;

/// A learnable network stage that can be recorded on a [`Tape`].
pub trait Module {
    /// Learnable tensors in declaration order.
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Forward pass; `params` are the tape handles of [`Module::params`].
    fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var>;
    /// Per-sample output shape (batch axis excluded).
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// One edge function `φ`, detached from its layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunction {
    pub base: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    pub grid: Arc<SplineGrid>,
}

impl EdgeFunction {
    pub fn new(base: f64, scale: f64, coeffs: Vec<f64>, grid: Arc<SplineGrid>) -> Result<Self> {
        if coeffs.len() != grid.basis_count() {
            bail!(Shape, "edge needs {} coefficients, got {}", grid.basis_count(), coeffs.len());
        }
        Ok(EdgeFunction { base, scale, coeffs, grid })
    }

    /// `x ↦ a·x` on the grid domain: no base term, spline fitted to the line.
    pub fn linear(a: f64, grid: Arc<SplineGrid>) -> Result<Self> {
        let (lo, hi) = grid.domain();
        let n = 4 * grid.basis_count() + 1;
        let samples: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let coeffs = grid.fit_coefficients(&samples, |x| a * x)?;
        Ok(EdgeFunction { base: 0.0, scale: 1.0, coeffs, grid })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let b = self.grid.basis_eval(x)?;
        let spline: f64 = b.iter().zip(&self.coeffs).map(|(b, c)| b * c).sum();
        Ok(self.base * silu(x) + self.scale * spline)
    }
}

/// Parameters of a dense block of edge functions.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    grid: Arc<SplineGrid>,
    /// `w_b`, one per edge.
    pub base: Tensor,
    /// `w_s`, one per edge.
    pub scale: Tensor,
    /// `[edges, basis_count]`.
    pub coeffs: Tensor,
}

impl EdgeSet {
    /// Zeroed parameters for `edges` edges.
    pub fn zeros(edges: usize, grid: Arc<SplineGrid>) -> Result<Self> {
        let nb = grid.basis_count();
        Ok(EdgeSet {
            base: Tensor::zeros(&[edges])?,
            scale: Tensor::zeros(&[edges])?,
            coeffs: Tensor::zeros(&[edges, nb])?,
            grid,
        })
    }

    /// `w_b ~ U(±√(6/(fan_in+fan_out)))`, `w_s = 1`, `c ~ N(0, 0.1/n_basis)`.
    pub fn init(&mut self, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let nb = self.grid.basis_count();
        let normal = Normal::new(0.0, 0.1 / nb as f64).expect("positive std");
        self.base.data_mut().iter_mut().for_each(|v| *v = uni.sample(rng));
        self.scale.data_mut().iter_mut().for_each(|v| *v = 1.0);
        self.coeffs.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
    }

    pub fn grid(&self) -> &Arc<SplineGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn edge(&self, e: usize) -> EdgeFunction {
        let nb = self.grid.basis_count();
        EdgeFunction {
            base: self.base.data()[e],
            scale: self.scale.data()[e],
            coeffs: self.coeffs.data()[e * nb..(e + 1) * nb].to_vec(),
            grid: self.grid.clone(),
        }
    }

    pub fn set_edge(&mut self, e: usize, f: &EdgeFunction) -> Result<()> {
        let nb = self.grid.basis_count();
        if e >= self.len() || f.coeffs.len() != nb {
            bail!(Shape, "edge {e} out of range or coefficient length mismatch");
        }
        self.base.data_mut()[e] = f.base;
        self.scale.data_mut()[e] = f.scale;
        self.coeffs.data_mut()[e * nb..(e + 1) * nb].copy_from_slice(&f.coeffs);
        Ok(())
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.base, &self.scale, &self.coeffs]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.base, &mut self.scale, &mut self.coeffs]
    }
}

fn bind<const N: usize>(params: &[Var], what: &str) -> Result<[Var; N]> {
    params
        .try_into()
        .map_err(|_| Error::Contract(format!("{what}: expected {N} parameter handles, got {}", params.len())))
}

fn check_input(tape: &Tape, x: Var, channels: usize, rank: usize, what: &str) -> Result<()> {
    let s = tape.shape(x);
    if s.len() != rank + 2 || s[1] != channels {
        bail!(Shape, "{what}: expected [batch, {channels}, <{rank} spatial axes>], got {s:?}");
    }
    Ok(())
}

/// Shape rule shared by every convolution: `⌊(in + 2·pad − k)/stride⌋ + 1`.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry shared by KAN and classical convolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
    ) -> Result<Self> {
        let r = kernel.len();
        if !(1..=3).contains(&r) || stride.len() != r || padding.len() != r {
            bail!(Config, "convolution needs 1 to 3 spatial axes with matching kernel/stride/padding");
        }
        if in_channels == 0 || out_channels == 0 || kernel.contains(&0) || stride.contains(&0) {
            bail!(Config, "convolution channels, kernel and stride must be positive");
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        })
    }

    pub fn rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn output_shape(&self, input: &[usize], what: &str) -> Result<Vec<usize>> {
        if input.len() != self.rank() + 1 || input[0] != self.in_channels {
            bail!(Shape, "{what}: expected [{}, <{} spatial axes>], got {input:?}", self.in_channels, self.rank());
        }
        let mut out = vec![self.out_channels];
        for a in 0..self.rank() {
            match conv_extent(input[a + 1], self.kernel[a], self.stride[a], self.padding[a]) {
                Some(e) => out.push(e),
                None => bail!(
                    Config,
                    "{what}: kernel {:?} with padding {:?} leaves no output for input {input:?}",
                    self.kernel,
                    self.padding
                ),
            }
        }
        Ok(out)
    }

    fn pad(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.padding.iter().all(|&p| p == 0) {
            return Ok(x);
        }
        let mut pads = vec![(0, 0), (0, 0)];
        pads.extend(self.padding.iter().map(|&p| (p, p)));
        tape.pad(x, &pads)
    }

    fn edge_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }
}

/// Dense KAN layer: `o_j = Σ_i φ_{j,i}(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLinearLayer {
    pub p_in: usize,
    pub p_out: usize,
    /// Edges indexed `j·p_in + i`.
    pub edges: EdgeSet,
}

impl KanLinearLayer {
    pub fn new(p_in: usize, p_out: usize, grid: Arc<SplineGrid>) -> Result<Self> {
        if p_in == 0 || p_out == 0 {
            bail!(Config, "KAN linear layer dimensions must be positive");
        }
        Ok(KanLinearLayer { p_in, p_out, edges: EdgeSet::zeros(p_in * p_out, grid)? })
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.edges.init(self.p_in, self.p_out, rng);
    }

    pub fn edge_index(&self, out: usize, input: usize) -> usize {
        out * self.p_in + input
    }
}

impl Module for KanLinearLayer {
    fn params(&self) -> Vec<&Tensor> {
        self.edges.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.edges.params_mut()
    }

    fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let [base, scale, coeffs] = bind(params, "kan_linear")?;
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.p_in {
            bail!(Shape, "kan_linear: expected [batch, {}], got {s:?}", self.p_in);
        }
        let feats = tape.kan_expand(x, self.edges.grid())?;
        let w = tape.kan_weights(base, scale, coeffs, &[self.p_out, self.p_in])?;
        tape.linear(feats, w)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.p_in] {
            bail!(Shape, "kan_linear: expected [{}], got {input:?}", self.p_in);
        }
        Ok(vec![self.p_out])
    }
}

/// KAN convolution over 1, 2 or 3 spatial axes.
///
/// `o[c_out, p] = Σ_{c_in} Σ_tap φ_{c_out,c_in,tap}(x[c_in, p·stride + tap − pad])`;
/// padded positions hold 0 and pass through `φ` like any other input.
#[derive(Debug, Clone, PartialEq)]
pub struct KanConvLayer {
    pub spec: ConvSpec,
    /// Edges indexed `(c_out, c_in, tap...)` row-major.
    pub edges: EdgeSet,
}

impl KanConvLayer {
    pub fn new(spec: ConvSpec, grid: Arc<SplineGrid>) -> Result<Self> {
        let n = spec.out_channels * spec.in_channels * spec.taps();
        Ok(KanConvLayer { edges: EdgeSet::zeros(n, grid)?, spec })
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let taps = self.spec.taps();
        self.edges.init(self.spec.in_channels * taps, self.spec.out_channels * taps, rng);
    }

    pub fn edge_index(&self, out: usize, input: usize, tap: usize) -> usize {
        (out * self.spec.in_channels + input) * self.spec.taps() + tap
    }

    /// Evaluates the layer on a plain tensor without recording gradients.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ps: Vec<Var> = self.params().into_iter().map(|p| tape.constant(p.clone())).collect();
        let y = self.forward(&mut tape, xv, &ps)?;
        Ok(tape.value(y).clone())
    }
}

impl Module for KanConvLayer {
    fn params(&self) -> Vec<&Tensor> {
        self.edges.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.edges.params_mut()
    }

    fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let [base, scale, coeffs] = bind(params, "kan_conv")?;
        check_input(tape, x, self.spec.in_channels, self.spec.rank(), "kan_conv")?;
        self.output_shape(&tape.shape(x)[1..])?;
        let xp = self.spec.pad(tape, x)?;
        let feats = tape.kan_expand(xp, self.edges.grid())?;
        let w = tape.kan_weights(base, scale, coeffs, &self.spec.edge_shape())?;
        tape.conv(feats, w, &self.spec.stride)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.spec.output_shape(input, "kan_conv")
    }
}

/// Classical cross-correlation `o = Σ x·K` (no kernel flip, no bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    /// `[c_out, c_in, k...]`.
    pub weight: Tensor,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec) -> Result<Self> {
        let weight = Tensor::zeros(&spec.edge_shape())?;
        Ok(ConvLayer { spec, weight })
    }

    pub fn with_kernel(spec: ConvSpec, weight: Tensor) -> Result<Self> {
        if weight.shape() != spec.edge_shape().as_slice() {
            bail!(Shape, "kernel shape {:?} does not match {:?}", weight.shape(), spec.edge_shape());
        }
        Ok(ConvLayer { spec, weight })
    }

    /// Glorot-uniform kernel.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let taps = self.spec.taps();
        let bound = sqrt(6.0 / ((self.spec.in_channels + self.spec.out_channels) * taps) as f64);
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        self.weight.data_mut().iter_mut().for_each(|v| *v = uni.sample(rng));
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(self.weight.clone());
        let y = self.forward(&mut tape, xv, &[w])?;
        Ok(tape.value(y).clone())
    }
}

impl Module for ConvLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight]
    }

    fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let [w] = bind(params, "conv")?;
        check_input(tape, x, self.spec.in_channels, self.spec.rank(), "conv")?;
        self.output_shape(&tape.shape(x)[1..])?;
        let xp = self.spec.pad(tape, x)?;
        tape.conv(xp, w, &self.spec.stride)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.spec.output_shape(input, "conv")
    }
}

/// Dense `x·Wᵀ` layer without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub p_in: usize,
    pub p_out: usize,
    /// `[p_out, p_in]`.
    pub weight: Tensor,
}

impl LinearLayer {
    pub fn new(p_in: usize, p_out: usize) -> Result<Self> {
        Ok(LinearLayer { p_in, p_out, weight: Tensor::zeros(&[p_out, p_in])? })
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let bound = sqrt(6.0 / (self.p_in + self.p_out) as f64);
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        self.weight.data_mut().iter_mut().for_each(|v| *v = uni.sample(rng));
    }
}

impl Module for LinearLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight]
    }

    fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let [w] = bind(params, "linear")?;
        tape.linear(x, w)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.p_in] {
            bail!(Shape, "linear: expected [{}], got {input:?}", self.p_in);
        }
        Ok(vec![self.p_out])
    }
}

/// Max pooling over the trailing spatial axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxPool {
    pub window: Vec<usize>,
    pub stride: Vec<usize>,
}

impl Module for MaxPool {
    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }

    fn forward(&self, tape: &mut Tape, x: Var, _: &[Var]) -> Result<Var> {
        tape.max_pool(x, &self.window, &self.stride)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let r = self.window.len();
        if input.len() < r {
            bail!(Shape, "max_pool: window rank {r} exceeds input {input:?}");
        }
        let lead = input.len() - r;
        let mut out = input[..lead].to_vec();
        for a in 0..r {
            match conv_extent(input[lead + a], self.window[a], self.stride[a], 0) {
                Some(e) => out.push(e),
                None => bail!(Config, "max_pool: window {:?} larger than input {input:?}", self.window),
            }
        }
        Ok(out)
    }
}

/// Records the classical baseline convolution of `x` with `kernel`.
pub fn classical_conv_forward(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    stride: &[usize],
    padding: &[usize],
) -> Result<Var> {
    let ks = tape.shape(kernel).to_vec();
    if ks.len() < 3 {
        bail!(Shape, "kernel {ks:?} needs [c_out, c_in, k...]");
    }
    let spec = ConvSpec::new(ks[1], ks[0], &ks[2..], stride, padding)?;
    check_input(tape, x, spec.in_channels, spec.rank(), "conv")?;
    spec.output_shape(&tape.shape(x)[1..], "conv")?;
    let xp = spec.pad(tape, x)?;
    tape.conv(xp, kernel, stride)
}
