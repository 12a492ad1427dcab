//! HybridKAN and its classical-convolution twin.
//!
//! Layer stack for a `W×W×D` patch (per-sample shapes, `W = 9`):
//!
//! ```text
//! KAN3D-1   kernel 1×1×D  ->  (8, 9, 9, 1)
//! KAN3D-2   kernel 1×1×1  ->  (16, 9, 9, 1)
//! KAN3D-3   kernel 1×1×1  ->  (32, 9, 9, 1)
//! Reshape                 ->  (32, 9, 9)
//! KAN2D-1   3×3 / 2, pad 1 -> (64, 5, 5)
//! Max pool  3×3 / 3       ->  (64, 1, 1)
//! Flatten                 ->  (64)
//! KAN1D-1                 ->  (32)
//! KAN1D-2                 ->  (classes)
//! ```
//!
//! The first 3D layer spans the whole spectral axis, which is what collapses
//! it to extent 1. The twin swaps every KAN layer for a classical one of the
//! same geometry followed by `silu` (except on the logits).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{bail, Error, Result};
use crate::layers::{ConvLayer, ConvSpec, KanConvLayer, KanLinearLayer, LinearLayer, MaxPool, Module};
use crate::spline::SplineGrid;
use crate::tensor::Tensor;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Spatial patch size `W_p` (odd).
    pub window: usize,
    /// Spectral depth `D` after PCA.
    pub pca_components: usize,
    pub num_classes: usize,
    pub spline_order: usize,
    pub spline_intervals: usize,
    pub spline_lo: f64,
    pub spline_hi: f64,
    pub channels_3d: Vec<usize>,
    pub channels_2d: usize,
    pub hidden_1d: usize,
    pub conv2d_kernel: usize,
    pub conv2d_stride: usize,
    pub conv2d_padding: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 9,
            pca_components: 15,
            num_classes: 18,
            spline_order: 3,
            spline_intervals: 5,
            spline_lo: -1.0,
            spline_hi: 1.0,
            channels_3d: vec![8, 16, 32],
            channels_2d: 64,
            hidden_1d: 32,
            conv2d_kernel: 3,
            conv2d_stride: 2,
            conv2d_padding: 1,
            pool_window: 3,
            pool_stride: 3,
        }
    }
}

fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.spline_order, self.spline_intervals, self.spline_lo, self.spline_hi)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.window == 0 || self.window.is_multiple_of(2) {
            bail!(Config, "window must be odd and positive, got {}", self.window);
        }
        if self.pca_components == 0 || self.num_classes == 0 || self.hidden_1d == 0 || self.channels_2d == 0 {
            bail!(Config, "pca_components, num_classes, hidden_1d and channels_2d must be positive");
        }
        if self.channels_3d.is_empty() || self.channels_3d.contains(&0) {
            bail!(Config, "channels_3d must be a non-empty list of positive counts");
        }
        Ok(())
    }

    /// Keys and values as used by config files and checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let c3: Vec<String> = self.channels_3d.iter().map(|c| c.to_string()).collect();
        vec![
            ("window", self.window.to_string()),
            ("pca_components", self.pca_components.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("spline_order", self.spline_order.to_string()),
            ("spline_intervals", self.spline_intervals.to_string()),
            ("spline_lo", format!("{:?}", self.spline_lo)),
            ("spline_hi", format!("{:?}", self.spline_hi)),
            ("channels_3d", c3.join(",")),
            ("channels_2d", self.channels_2d.to_string()),
            ("hidden_1d", self.hidden_1d.to_string()),
            ("conv2d_kernel", self.conv2d_kernel.to_string()),
            ("conv2d_stride", self.conv2d_stride.to_string()),
            ("conv2d_padding", self.conv2d_padding.to_string()),
            ("pool_window", self.pool_window.to_string()),
            ("pool_stride", self.pool_stride.to_string()),
        ]
    }

    /// Sets one field by key. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "window" => self.window = parse(key, value)?,
            "pca_components" => self.pca_components = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "spline_order" => self.spline_order = parse(key, value)?,
            "spline_intervals" => self.spline_intervals = parse(key, value)?,
            "spline_lo" => self.spline_lo = parse(key, value)?,
            "spline_hi" => self.spline_hi = parse(key, value)?,
            "channels_3d" => {
                self.channels_3d = value.split(',').map(|v| parse(key, v)).collect::<Result<_>>()?;
            }
            "channels_2d" => self.channels_2d = parse(key, value)?,
            "hidden_1d" => self.hidden_1d = parse(key, value)?,
            "conv2d_kernel" => self.conv2d_kernel = parse(key, value)?,
            "conv2d_stride" => self.conv2d_stride = parse(key, value)?,
            "conv2d_padding" => self.conv2d_padding = parse(key, value)?,
            "pool_window" => self.pool_window = parse(key, value)?,
            "pool_stride" => self.pool_stride = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Which of the two architectures a [`Model`] is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    HybridKan,
    HybridSnLite,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::HybridKan => "hybridkan",
            ModelKind::HybridSnLite => "hybridsn-lite",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hybridkan" => Some(ModelKind::HybridKan),
            "hybridsn-lite" => Some(ModelKind::HybridSnLite),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Stage {
    KanConv(KanConvLayer),
    Conv(ConvLayer),
    KanLinear(KanLinearLayer),
    Linear(LinearLayer),
    Pool(MaxPool),
    Reshape,
    Flatten,
}

impl Stage {
    fn module(&self) -> Option<&dyn Module> {
        match self {
            Stage::KanConv(l) => Some(l),
            Stage::Conv(l) => Some(l),
            Stage::KanLinear(l) => Some(l),
            Stage::Linear(l) => Some(l),
            Stage::Pool(l) => Some(l),
            Stage::Reshape | Stage::Flatten => None,
        }
    }

    fn module_mut(&mut self) -> Option<&mut dyn Module> {
        match self {
            Stage::KanConv(l) => Some(l),
            Stage::Conv(l) => Some(l),
            Stage::KanLinear(l) => Some(l),
            Stage::Linear(l) => Some(l),
            Stage::Pool(l) => Some(l),
            Stage::Reshape | Stage::Flatten => None,
        }
    }
}

/// One row of the architecture summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kernel: Option<Vec<usize>>,
    pub stride: Option<Vec<usize>>,
    pub filters: Option<usize>,
    /// Per-sample output shape.
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    name: String,
    stage: Stage,
    activation: bool,
    output_shape: Vec<usize>,
}

/// Handles produced by a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    pub logits: Var,
    /// Hidden activations feeding the final layer.
    pub features: Var,
    /// Tape handles of [`Model::params`], in the same order.
    pub params: Vec<Var>,
}

/// A composed classifier mapping `[batch, 1, W, W, D]` patches to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    kind: ModelKind,
    layers: Vec<Layer>,
    initialized: bool,
}

/// Builds HybridKAN with zeroed parameters; call [`Model::init`] before use.
pub fn build_hybrid_kan(cfg: &ModelConfig) -> Result<Model> {
    Model::build(cfg, ModelKind::HybridKan)
}

/// Builds the classical twin with zeroed parameters.
pub fn build_hybrid_sn_lite(cfg: &ModelConfig) -> Result<Model> {
    Model::build(cfg, ModelKind::HybridSnLite)
}

impl Model {
    pub fn build(cfg: &ModelConfig, kind: ModelKind) -> Result<Model> {
        cfg.validate()?;
        let grid = Arc::new(cfg.grid()?);
        let kan = kind == ModelKind::HybridKan;
        let w = cfg.window;
        let mut layers = Vec::new();
        let mut shape = vec![1, w, w, cfg.pca_components];

        let mut push = |name: String, stage: Stage, activation: bool, shape: &mut Vec<usize>| -> Result<()> {
            let out = match &stage {
                Stage::Reshape => {
                    let mut s = shape.clone();
                    if s.last() != Some(&1) {
                        bail!(Config, "{name}: trailing spectral extent {:?} is not 1", s.last());
                    }
                    s.pop();
                    s
                }
                Stage::Flatten => vec![shape.iter().product()],
                other => other
                    .module()
                    .expect("parametric stage")
                    .output_shape(shape)
                    .map_err(|e| Error::Config(format!("layer {name}: {e}")))?,
            };
            *shape = out.clone();
            layers.push(Layer { name, stage, activation, output_shape: out });
            Ok(())
        };

        let mut cin = 1;
        for (i, &cout) in cfg.channels_3d.iter().enumerate() {
            let depth = if i == 0 { cfg.pca_components } else { 1 };
            let spec = ConvSpec::new(cin, cout, &[1, 1, depth], &[1, 1, 1], &[0, 0, 0])?;
            let (name, stage) = if kan {
                (format!("KAN3D-{}", i + 1), Stage::KanConv(KanConvLayer::new(spec, grid.clone())?))
            } else {
                (format!("Conv3D-{}", i + 1), Stage::Conv(ConvLayer::new(spec)?))
            };
            push(name, stage, !kan, &mut shape)?;
            cin = cout;
        }
        push("Reshape".into(), Stage::Reshape, false, &mut shape)?;
        let k = cfg.conv2d_kernel;
        let spec = ConvSpec::new(
            cin,
            cfg.channels_2d,
            &[k, k],
            &[cfg.conv2d_stride, cfg.conv2d_stride],
            &[cfg.conv2d_padding, cfg.conv2d_padding],
        )?;
        let (name, stage) = if kan {
            ("KAN2D-1".into(), Stage::KanConv(KanConvLayer::new(spec, grid.clone())?))
        } else {
            ("Conv2D-1".into(), Stage::Conv(ConvLayer::new(spec)?))
        };
        push(name, stage, !kan, &mut shape)?;
        let pool = MaxPool { window: vec![cfg.pool_window; 2], stride: vec![cfg.pool_stride; 2] };
        push("Max pooling".into(), Stage::Pool(pool), false, &mut shape)?;
        push("Flatten".into(), Stage::Flatten, false, &mut shape)?;
        let flat = shape[0];
        let dims = [(flat, cfg.hidden_1d), (cfg.hidden_1d, cfg.num_classes)];
        for (i, &(p_in, p_out)) in dims.iter().enumerate() {
            let last = i == dims.len() - 1;
            let (name, stage) = if kan {
                (format!("KAN1D-{}", i + 1), Stage::KanLinear(KanLinearLayer::new(p_in, p_out, grid.clone())?))
            } else {
                (format!("Dense-{}", i + 1), Stage::Linear(LinearLayer::new(p_in, p_out)?))
            };
            push(name, stage, !kan && !last, &mut shape)?;
        }
        Ok(Model { config: cfg.clone(), kind, layers, initialized: false })
    }

    /// Draws fresh parameters for every layer, in declaration order.
    pub fn init(&mut self, rng: &mut impl Rng) {
        for layer in &mut self.layers {
            match &mut layer.stage {
                Stage::KanConv(l) => l.init(rng),
                Stage::Conv(l) => l.init(rng),
                Stage::KanLinear(l) => l.init(rng),
                Stage::Linear(l) => l.init(rng),
                Stage::Pool(_) | Stage::Reshape | Stage::Flatten => {}
            }
        }
        self.initialized = true;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Marks externally loaded parameters as usable.
    pub fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [1, self.config.window, self.config.window, self.config.pca_components]
    }

    pub fn feature_width(&self) -> usize {
        self.config.hidden_1d
    }

    /// Per-layer description rows.
    pub fn layer_infos(&self) -> Vec<LayerInfo> {
        self.layers
            .iter()
            .map(|l| {
                let (kernel, stride, filters) = match &l.stage {
                    Stage::KanConv(c) => {
                        (Some(c.spec.kernel.clone()), Some(c.spec.stride.clone()), Some(c.spec.out_channels))
                    }
                    Stage::Conv(c) => {
                        (Some(c.spec.kernel.clone()), Some(c.spec.stride.clone()), Some(c.spec.out_channels))
                    }
                    Stage::KanLinear(c) => (None, None, Some(c.p_out)),
                    Stage::Linear(c) => (None, None, Some(c.p_out)),
                    Stage::Pool(p) => (Some(p.window.clone()), Some(p.stride.clone()), None),
                    Stage::Reshape | Stage::Flatten => (None, None, None),
                };
                LayerInfo {
                    name: l.name.clone(),
                    kernel,
                    stride,
                    filters,
                    output_shape: l.output_shape.clone(),
                    params: l.stage.module().map_or(0, |m| m.param_count()),
                }
            })
            .collect()
    }

    /// `(layer name, per-sample output shape)` for every layer.
    pub fn shape_trace(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().map(|l| (l.name.clone(), l.output_shape.clone())).collect()
    }

    /// Text table: layer, kernel size, stride, filters, output shape, params.
    pub fn summary(&self) -> String {
        fn dims(v: &Option<Vec<usize>>) -> String {
            match v {
                Some(v) => v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"),
                None => "-".into(),
            }
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} | {:<11} | {:<7} | {:<7} | {:<16} | {:>9}",
            "Layer (type)", "kernel size", "Stride", "Filters", "Output Shape", "Params"
        );
        let _ = writeln!(s, "{}", "-".repeat(78));
        for info in self.layer_infos() {
            let shape = info.output_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ");
            let filters = info.filters.map_or("-".into(), |f| f.to_string());
            let _ = writeln!(
                s,
                "{:<12} | {:<11} | {:<7} | {:<7} | {:<16} | {:>9}",
                info.name,
                dims(&info.kernel),
                dims(&info.stride),
                filters,
                format!("({shape})"),
                info.params
            );
        }
        let _ = writeln!(s, "Total number of parameters: {}", self.param_count());
        s
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().filter_map(|l| l.stage.module()).flat_map(|m| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().filter_map(|l| l.stage.module_mut()).flat_map(|m| m.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn clear_grads(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.clear_grad());
    }

    /// Adds tape gradients into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, grads: &Gradients, pass: &Pass) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != pass.params.len() {
            bail!(Contract, "pass recorded {} parameters, model has {}", pass.params.len(), params.len());
        }
        for (p, &v) in params.iter_mut().zip(&pass.params) {
            match grads.get(v) {
                Some(g) => p.accumulate_grad(g)?,
                None => p.accumulate_grad(&vec![0.0; p.len()])?,
            }
        }
        Ok(())
    }

    /// Records a forward pass of `x: [batch, 1, W, W, D]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, track_params: bool) -> Result<Pass> {
        let expected = self.input_shape();
        let s = tape.shape(x);
        if s.len() != 5 || s[1..] != expected {
            bail!(Shape, "model input must be [batch, {expected:?}...], got {s:?}");
        }
        let batch = s[0];
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| if track_params { tape.param(p) } else { tape.constant(p.clone()) })
            .collect();
        let mut cursor = 0;
        let mut h = x;
        let mut features = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut full = vec![batch];
            full.extend_from_slice(&layer.output_shape);
            h = match &layer.stage {
                Stage::Reshape | Stage::Flatten => tape.reshape(h, &full)?,
                stage => {
                    let m = stage.module().expect("parametric stage");
                    let n = m.params().len();
                    let y = m.forward(tape, h, &params[cursor..cursor + n])?;
                    cursor += n;
                    y
                }
            };
            if layer.activation {
                h = tape.silu(h)?;
            }
            if i + 1 == last {
                features = h;
            }
        }
        Ok(Pass { logits: h, features, params })
    }

    fn run(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let pass = self.forward(&mut tape, x, false)?;
        Ok((tape.value(pass.logits).clone(), tape.value(pass.features).clone()))
    }

    /// Logits `[batch, classes]` without gradient tracking.
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch)?.0)
    }

    /// Hidden activations `[batch, hidden_1d]`.
    pub fn penultimate(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch)?.1)
    }
}

/// Row-major `rows × width` feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Hidden-layer activations for every patch (each `[1, W, W, D]`).
pub fn export_penultimate_features(model: &Model, patches: &[Tensor], batch_size: usize) -> Result<FeatureMatrix> {
    if !model.is_initialized() {
        bail!(State, "cannot export features from an uninitialized model");
    }
    let width = model.feature_width();
    let mut data = Vec::with_capacity(patches.len() * width);
    for chunk in patches.chunks(batch_size.max(1)) {
        let batch = crate::data::stack_patches(chunk)?;
        data.extend_from_slice(model.penultimate(&batch)?.data());
    }
    Ok(FeatureMatrix { rows: patches.len(), width, data })
}
