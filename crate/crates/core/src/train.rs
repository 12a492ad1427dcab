//! Training loop, evaluation and classification maps.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{extract_patch, BandScaling, HsiCube, LabelRaster, PcaModel, SplitAssignment, Subset};
use crate::error::{bail, Error, Result};
use crate::math::exp;
use crate::metrics::{argmax, ConfusionMatrix, Metrics};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// PCA followed by per-band scaling onto the spline domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub pca: PcaModel,
    pub scaling: BandScaling,
}

impl Preprocessor {
    pub fn fit(cube: &HsiCube, components: usize) -> Result<Self> {
        let pca = PcaModel::fit(cube, components)?;
        let scaling = BandScaling::fit(&pca.transform(cube)?);
        Ok(Preprocessor { pca, scaling })
    }

    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        self.scaling.apply(&self.pca.transform(cube)?)
    }
}

/// Patches and class indices (0-based) for a set of pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    window: usize,
    depth: usize,
    patches: Vec<f64>,
    targets: Vec<usize>,
    pixels: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from a preprocessed cube. `pixels` are flat raster
    /// indices that must carry a label.
    pub fn from_scene(cube: &HsiCube, labels: &LabelRaster, pixels: &[usize], window: usize) -> Result<Self> {
        if !labels.matches(cube) {
            bail!(Data, "label raster does not match the cube extent");
        }
        let mut ds =
            Dataset { window, depth: cube.bands(), patches: Vec::new(), targets: Vec::new(), pixels: Vec::new() };
        for &px in pixels {
            let l = labels.labels()[px];
            if l == 0 {
                bail!(Data, "pixel {px} is unlabeled");
            }
            let p = extract_patch(cube, px / cube.width(), px % cube.width(), window)?;
            ds.patches.extend_from_slice(p.data());
            ds.targets.push(l as usize - 1);
            ds.pixels.push(px);
        }
        Ok(ds)
    }

    /// The pixels of one split subset.
    pub fn from_split(
        cube: &HsiCube,
        labels: &LabelRaster,
        split: &SplitAssignment,
        subset: Subset,
        window: usize,
    ) -> Result<Self> {
        Self::from_scene(cube, labels, &split.indices(subset), window)
    }

    /// Builds a dataset directly from `[1, W, W, D]` patches.
    pub fn from_patches(patches: &[Tensor], targets: &[usize]) -> Result<Self> {
        if patches.len() != targets.len() {
            bail!(Data, "{} patches for {} targets", patches.len(), targets.len());
        }
        let Some(first) = patches.first() else {
            bail!(Data, "empty patch list");
        };
        let s = first.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != s[2] {
            bail!(Shape, "patches must be [1, W, W, D], got {s:?}");
        }
        let mut ds = Dataset {
            window: s[1],
            depth: s[3],
            patches: Vec::new(),
            targets: targets.to_vec(),
            pixels: (0..patches.len()).collect(),
        };
        for p in patches {
            if p.shape() != s {
                bail!(Shape, "patch shapes differ");
            }
            ds.patches.extend_from_slice(p.data());
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    fn patch_len(&self) -> usize {
        self.window * self.window * self.depth
    }

    pub fn patch(&self, i: usize) -> Tensor {
        let n = self.patch_len();
        Tensor::new(&[1, self.window, self.window, self.depth], self.patches[i * n..(i + 1) * n].to_vec())
            .expect("stored patch")
    }

    /// `[indices.len(), 1, W, W, D]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let n = self.patch_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.patches[i * n..(i + 1) * n]);
        }
        Tensor::new(&[indices.len(), 1, self.window, self.window, self.depth], data)
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 40, batch_size: 64, adam: AdamConfig::default(), seed: 0 }
    }
}

/// Source of wall-clock time in seconds.
pub trait Clock {
    fn now(&mut self) -> f64;
}

/// A clock that never advances; useful where timings must not vary.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

/// One row per completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceLog {
    pub rows: Vec<EpochRecord>,
}

/// Everything needed to resume or reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub best_val_loss: f64,
    /// Seed of the stratified split the model was trained on.
    pub split_seed: u64,
    pub preprocessor: Option<Preprocessor>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: ConvergenceLog,
    /// State at the epoch of minimum validation loss.
    pub best: Checkpoint,
}

/// A run that stopped on an error; `last_good` is the best state reached.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub error: Error,
    pub log: ConvergenceLog,
    pub last_good: Checkpoint,
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Error {
        a.error
    }
}

/// Mean loss and accuracy of `model` over `data`.
pub fn loss_and_accuracy(model: &Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        bail!(Data, "empty dataset");
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| data.targets[i]).collect();
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let pass = model.forward(&mut tape, x, false)?;
        let l = tape.cross_entropy(pass.logits, &targets)?;
        loss += tape.value(l).data()[0] * chunk.len() as f64;
        correct += count_correct(tape.value(pass.logits), &targets);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn count_correct(logits: &Tensor, targets: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits.data().chunks_exact(c).zip(targets).filter(|(row, &t)| argmax(row) == t).count()
}

/// Trains `model` with Adam on softmax cross-entropy.
///
/// The model is initialized from the seeded generator if needed; the same
/// generator then draws the per-epoch shuffles, so a run is a pure function
/// of its inputs and seed. `on_epoch` sees each log row as it is produced.
// The abort carries the last good checkpoint by value; it is built once per run.
#[allow(clippy::result_large_err)]
pub fn train(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    clock: &mut dyn Clock,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> core::result::Result<TrainOutcome, TrainAbort> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if !model.is_initialized() {
        model.init(&mut rng);
    }
    let mut optimizer = Adam::new(cfg.adam);
    let mut log = ConvergenceLog::default();
    // Gradient buffers are scratch space and stay out of checkpoints.
    let snapshot = |model: &Model, opt: &Adam, epoch, rng: &ChaCha8Rng, best| {
        let mut model = model.clone();
        model.clear_grads();
        Checkpoint {
            model,
            optimizer: opt.clone(),
            epoch,
            rng: rng.clone(),
            best_val_loss: best,
            split_seed: cfg.seed,
            preprocessor: None,
        }
    };
    let mut best = snapshot(&model, &optimizer, 0, &rng, f64::INFINITY);
    if train_set.is_empty() {
        return Err(TrainAbort { error: Error::Data("empty training split".into()), log, last_good: best });
    }
    let batch_size = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = clock.now();
        let step = (|| -> Result<(f64, f64)> {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for chunk in order.chunks(batch_size) {
                let batch = train_set.batch(chunk)?;
                let targets: Vec<usize> = chunk.iter().map(|&i| train_set.targets[i]).collect();
                let mut tape = Tape::new();
                let x = tape.constant(batch);
                let pass = model.forward(&mut tape, x, true)?;
                let loss = tape.cross_entropy(pass.logits, &targets)?;
                let lv = tape.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(Error::Numeric { op: "train", detail: alloc::format!("loss {lv} at epoch {epoch}") });
                }
                loss_sum += lv * chunk.len() as f64;
                correct += count_correct(tape.value(pass.logits), &targets);
                let grads = tape.backward(loss)?;
                model.zero_grad();
                model.accumulate_grads(&grads, &pass)?;
                optimizer.step(&mut model.params_mut())?;
            }
            Ok((loss_sum / train_set.len() as f64, correct as f64 / train_set.len() as f64))
        })();
        let (train_loss, train_acc) = match step {
            Ok(v) => v,
            Err(error) => return Err(TrainAbort { error, log, last_good: best }),
        };
        let (val_loss, val_acc) = if val_set.is_empty() {
            (train_loss, train_acc)
        } else {
            match loss_and_accuracy(&model, val_set, batch_size.max(256)) {
                Ok(v) => v,
                Err(error) => return Err(TrainAbort { error, log, last_good: best }),
            }
        };
        let row = EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc, seconds: clock.now() - start };
        on_epoch(&row);
        log.rows.push(row);
        if val_loss < best.best_val_loss {
            best = snapshot(&model, &optimizer, epoch, &rng, val_loss);
        }
    }
    model.clear_grads();
    Ok(TrainOutcome { model, log, best })
}

/// Confusion matrix and derived scores of `model` on `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

pub fn evaluate(model: &Model, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if !model.is_initialized() {
        bail!(State, "cannot evaluate an uninitialized model");
    }
    if data.is_empty() {
        bail!(Data, "cannot evaluate an empty split");
    }
    let classes = model.config().num_classes;
    let mut confusion = ConfusionMatrix::new(classes);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = model.predict_logits(&data.batch(chunk)?)?;
        for (row, &i) in logits.data().chunks_exact(classes).zip(chunk) {
            confusion.add(data.targets[i], argmax(row))?;
        }
    }
    let metrics = confusion.metrics()?;
    Ok(Evaluation { confusion, metrics })
}

/// Per-pixel classes (`1..=C`) and softmax confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub labels: LabelRaster,
    pub confidence: Vec<f64>,
}

/// Classifies every pixel of a raw cube from its mirror-padded patch.
pub fn predict_map(model: &Model, cube: &HsiCube, pre: &Preprocessor, batch_size: usize) -> Result<PredictionMap> {
    if !model.is_initialized() {
        bail!(State, "cannot predict with an uninitialized model");
    }
    if cube.bands() != pre.pca.bands {
        bail!(Config, "cube has {} bands, the model was fitted on {}", cube.bands(), pre.pca.bands);
    }
    let reduced = pre.apply(cube)?;
    let window = model.config().window;
    let classes = model.config().num_classes;
    let n = cube.pixels();
    let mut labels = vec![0u16; n];
    let mut confidence = vec![0.0; n];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut patches = Vec::with_capacity(chunk.len());
        for &px in chunk {
            patches.push(extract_patch(&reduced, px / cube.width(), px % cube.width(), window)?);
        }
        let batch = crate::data::stack_patches(&patches)?;
        let logits = model.predict_logits(&batch)?;
        for (row, &px) in logits.data().chunks_exact(classes).zip(chunk) {
            let k = argmax(row);
            let z: f64 = row.iter().map(|v| exp(v - row[k])).sum();
            labels[px] = k as u16 + 1;
            confidence[px] = 1.0 / z;
        }
    }
    Ok(PredictionMap { labels: LabelRaster::new(cube.height(), cube.width(), labels)?, confidence })
}
