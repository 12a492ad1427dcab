//! The `hskan` command line.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then
//! flags. All randomness derives from `--seed`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hskan_core::data::{generate_synthetic, pca_reduce, stratified_split, HsiCube, LabelRaster, Subset, SynthParams};
use hskan_core::model::export_penultimate_features;
use hskan_core::train::{evaluate, predict_map, train, Checkpoint, Dataset, EpochRecord, Evaluation, TrainConfig};
use hskan_core::{Model, ModelConfig, ModelKind};

use crate::clock::WallClock;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::formats::{load_checkpoint, read_cube, read_labels, save_checkpoint, write_cube, write_labels, write_pca};
use crate::logs::{write_features, ConvergenceWriter};

/// Settings read by some command besides the model and optimizer keys.
/// A single file may therefore be shared by every command.
pub const COMMAND_KEYS: &[&str] = &["seed", "height", "width", "bands", "classes", "noise", "epochs", "batch_size"];

#[derive(Debug, Parser)]
#[command(name = "hskan", version, about = "Kolmogorov-Arnold networks for hyperspectral classification")]
pub struct Cli {
    /// Seed for the scene, split, initialization and shuffles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// File of key=value settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: cube.hsic and labels.hsil.
    Synth {
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        bands: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Reduce a cube to its principal components: reduced.hsic and pca.hsip.
    Pca {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Train HybridKAN, optionally alongside its classical twin.
    Train {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Spectral depth D after PCA.
        #[arg(long)]
        components: Option<usize>,
        /// Spatial patch size (odd).
        #[arg(long)]
        window: Option<usize>,
        /// Also train HybridSN-lite from the same seed.
        #[arg(long)]
        twin: bool,
        /// Extra model or optimizer setting.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a checkpoint on one subset of its split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify every pixel: prediction.hsil and confidence.hsic.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
    },
    /// Export hidden-layer activations of labeled pixels to features.csv.
    Features {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Print the per-layer parameter table.
    Params {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
        /// Print the classical twin as well.
        #[arg(long)]
        twin: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Debug)]
pub enum RunError {
    /// Bad command line; `clap` renders it and exits with status 2.
    Usage(clap::Error),
    Failed(Error),
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> std::result::Result<(), RunError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(RunError::Usage)?;
    execute(&cli, out).map_err(RunError::Failed)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(Error::io("<stdout>"))
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    Ok(dir)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.check_keys(COMMAND_KEYS)?;
    if let Some(seed) = cli.seed {
        s.set("seed", seed);
    }
    let seed: u64 = s.parse_or("seed", 0)?;
    match &cli.command {
        Command::Synth { height, width, bands, classes, noise } => {
            for (k, v) in [("height", height), ("width", width), ("bands", bands), ("classes", classes)] {
                if let Some(v) = v {
                    s.set(k, v);
                }
            }
            if let Some(n) = noise {
                s.set("noise", n);
            }
            s.check_keys(COMMAND_KEYS)?;
            let p = SynthParams {
                height: s.parse_or("height", 64)?,
                width: s.parse_or("width", 64)?,
                bands: s.parse_or("bands", 32)?,
                classes: s.parse_or("classes", 6)?,
                noise_sigma: s.parse_or("noise", 0.05)?,
                seed,
            };
            let (cube, labels) = generate_synthetic(&p)?;
            let dir = out_dir(cli)?;
            write_cube(&dir.join("cube.hsic"), &cube)?;
            write_labels(&dir.join("labels.hsil"), &labels)?;
            emit(
                out,
                &format!(
                    "wrote {}x{}x{} cube with {} classes to {}\n",
                    p.height,
                    p.width,
                    p.bands,
                    p.classes,
                    dir.display()
                ),
            )
        }
        Command::Pca { cube, components } => {
            if let Some(d) = components {
                s.set("pca_components", d);
            }
            s.check_keys(COMMAND_KEYS)?;
            let raw = read_cube(cube)?;
            let d = s.model_config()?.pca_components;
            let (reduced, model) = pca_reduce(&raw, d)?;
            let dir = out_dir(cli)?;
            write_cube(&dir.join("reduced.hsic"), &reduced)?;
            write_pca(&dir.join("pca.hsip"), &model)?;
            let total: f64 = model.explained_variance.iter().sum();
            emit(out, &format!("reduced {} bands to {d}; retained variance {total:.6}\n", raw.bands()))
        }
        Command::Train { cube, labels, epochs, batch_size, lr, components, window, twin, set } => {
            let flags = [
                ("epochs", epochs.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("lr", lr.map(|v| v.to_string())),
                ("pca_components", components.map(|v| v.to_string())),
                ("window", window.map(|v| v.to_string())),
            ];
            for (k, v) in flags {
                if let Some(v) = v {
                    s.set(k, v);
                }
            }
            s.extend_args(set)?;
            s.check_keys(COMMAND_KEYS)?;
            let (cube, labels) = load_scene(cube, labels)?;
            let mut mcfg = s.model_config()?;
            let classes = labels.num_classes();
            if s.get("num_classes").is_some() && mcfg.num_classes != classes {
                return Err(Error::Config(format!(
                    "num_classes {} disagrees with the {classes} classes in the labels",
                    mcfg.num_classes
                )));
            }
            mcfg.num_classes = classes;
            let tcfg = TrainConfig {
                epochs: s.parse_or("epochs", 40)?,
                batch_size: s.parse_or("batch_size", 64)?,
                adam: s.adam()?,
                seed,
            };
            let kinds: &[ModelKind] =
                if *twin { &[ModelKind::HybridKan, ModelKind::HybridSnLite] } else { &[ModelKind::HybridKan] };
            cmd_train(&cube, &labels, &mcfg, &tcfg, kinds, &out_dir(cli)?, out)
        }
        Command::Eval { checkpoint, cube, labels, split } => {
            let ck = load_checkpoint(checkpoint)?;
            let (cube, labels) = load_scene(cube, labels)?;
            let data = scene_subset(&ck, &cube, &labels, split)?;
            let eval = evaluate(&ck.model, &data, 256)?;
            emit(out, &report(&eval, &format!("{} on {split} ({} pixels)", ck.model.kind().name(), data.len())))
        }
        Command::Predict { checkpoint, cube } => {
            let ck = load_checkpoint(checkpoint)?;
            let raw = read_cube(cube)?;
            let pre =
                ck.preprocessor.as_ref().ok_or_else(|| Error::Config("checkpoint carries no preprocessor".into()))?;
            let map = predict_map(&ck.model, &raw, pre, 256)?;
            let dir = out_dir(cli)?;
            write_labels(&dir.join("prediction.hsil"), &map.labels)?;
            write_cube(&dir.join("confidence.hsic"), &HsiCube::new(raw.height(), raw.width(), 1, map.confidence)?)?;
            emit(out, &format!("classified {} pixels into {}\n", raw.pixels(), dir.display()))
        }
        Command::Features { checkpoint, cube, labels, split } => {
            let ck = load_checkpoint(checkpoint)?;
            let (cube, labels) = load_scene(cube, labels)?;
            let data = scene_subset(&ck, &cube, &labels, split)?;
            let patches: Vec<_> = (0..data.len()).map(|i| data.patch(i)).collect();
            let features = export_penultimate_features(&ck.model, &patches, 256)?;
            let dir = out_dir(cli)?;
            write_features(&dir.join("features.csv"), &features)?;
            emit(out, &format!("wrote {} feature rows of width {}\n", features.rows, features.width))
        }
        Command::Params { classes, components, twin, set } => {
            if let Some(c) = classes {
                s.set("num_classes", c);
            }
            if let Some(d) = components {
                s.set("pca_components", d);
            }
            s.extend_args(set)?;
            s.check_keys(COMMAND_KEYS)?;
            let cfg = s.model_config()?;
            let mut text = params_report(&Model::build(&cfg, ModelKind::HybridKan)?);
            if *twin {
                text.push('\n');
                text.push_str(&params_report(&Model::build(&cfg, ModelKind::HybridSnLite)?));
            }
            emit(out, &text)
        }
    }
}

fn load_scene(cube: &Path, labels: &Path) -> Result<(HsiCube, LabelRaster)> {
    let (cube, labels) = (read_cube(cube)?, read_labels(labels)?);
    if !labels.matches(&cube) {
        return Err(Error::Config(format!(
            "labels are {}x{} but the cube is {}x{}",
            labels.height(),
            labels.width(),
            cube.height(),
            cube.width()
        )));
    }
    Ok((cube, labels))
}

/// Patches of one subset of the checkpoint's own split.
fn scene_subset(ck: &Checkpoint, cube: &HsiCube, labels: &LabelRaster, split: &str) -> Result<Dataset> {
    let pre = ck.preprocessor.as_ref().ok_or_else(|| Error::Config("checkpoint carries no preprocessor".into()))?;
    let reduced = pre.apply(cube)?;
    let window = ck.model.config().window;
    if split == "all" {
        let pixels: Vec<usize> = (0..labels.labels().len()).filter(|&i| labels.labels()[i] > 0).collect();
        return Ok(Dataset::from_scene(&reduced, labels, &pixels, window)?);
    }
    let subset = Subset::from_name(split).ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
    let assignment = stratified_split(labels, ck.split_seed)?;
    Ok(Dataset::from_split(&reduced, labels, &assignment, subset, window)?)
}

fn cmd_train(
    cube: &HsiCube,
    labels: &LabelRaster,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    kinds: &[ModelKind],
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let pre = hskan_core::train::Preprocessor::fit(cube, mcfg.pca_components)?;
    let reduced = pre.apply(cube)?;
    let split = stratified_split(labels, tcfg.seed)?;
    let subset = |s| Dataset::from_split(&reduced, labels, &split, s, mcfg.window);
    let (tr, va, te) = (subset(Subset::Train)?, subset(Subset::Val)?, subset(Subset::Test)?);
    emit(
        out,
        &format!("split seed {}: {} train / {} val / {} test pixels\n", tcfg.seed, tr.len(), va.len(), te.len()),
    )?;

    let mut finals = Vec::new();
    for &kind in kinds {
        let name = kind.name();
        let model = Model::build(mcfg, kind)?;
        let mut csv = ConvergenceWriter::create(&dir.join(format!("{name}_convergence.csv")))?;
        let mut csv_error = None;
        let mut progress = |r: &EpochRecord| {
            if csv_error.is_none() {
                csv_error = csv.push(r).err();
            }
            let _ = writeln!(
                out,
                "{name} epoch {:>3}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} | {:.1} s",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
            );
        };
        let result = train(model, &tr, &va, tcfg, &mut WallClock::new(), &mut progress);
        if let Some(e) = csv_error {
            return Err(e);
        }
        let ck_path = dir.join(format!("{name}.kanc"));
        let outcome = match result {
            Ok(o) => o,
            Err(abort) => {
                let mut last = abort.last_good;
                last.preprocessor = Some(pre.clone());
                save_checkpoint(&ck_path, &last)?;
                return Err(abort.error.into());
            }
        };
        let mut best = outcome.best;
        best.preprocessor = Some(pre.clone());
        save_checkpoint(&ck_path, &best)?;
        let eval = evaluate(&best.model, &te, 256)?;
        emit(out, &report(&eval, &format!("{name} best epoch {} on test ({} pixels)", best.epoch, te.len())))?;
        finals.push((name, outcome.log.rows.last().copied()));
    }
    if let [(a, Some(ka)), (b, Some(kb))] = finals.as_slice() {
        let verdict = |better: bool| if better { "yes" } else { "no" };
        let mut s = String::from("\nconvergence comparison (final epoch)\n");
        let _ = writeln!(s, "{:<14} {:>10} {:>10} {:>10}", "model", "train_loss", "train_acc", "val_acc");
        for (n, r) in [(a, ka), (b, kb)] {
            let _ = writeln!(s, "{:<14} {:>10.4} {:>10.4} {:>10.4}", n, r.train_loss, r.train_acc, r.val_acc);
        }
        let _ = writeln!(
            s,
            "{a} lower train loss: {}; higher train accuracy: {}; higher val accuracy: {}",
            verdict(ka.train_loss < kb.train_loss),
            verdict(ka.train_acc > kb.train_acc),
            verdict(ka.val_acc > kb.val_acc)
        );
        emit(out, &s)?;
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// OA/AA/κ summary followed by the per-class accuracy table, in percent.
pub fn report(eval: &Evaluation, title: &str) -> String {
    let m = &eval.metrics;
    let mut s = format!("{title}\n");
    let _ = writeln!(s, "OA={}, AA={}, κ={}", pct(m.overall_accuracy), pct(m.average_accuracy), pct(m.kappa));
    let _ = writeln!(s, "{:<6} | {:>8} | {:>12}", "Class", "Pixels", "Accuracy (%)");
    for (c, acc) in m.per_class.iter().enumerate() {
        let pixels: u64 = (0..eval.confusion.classes()).map(|p| eval.confusion.get(c, p)).sum();
        let a = acc.map_or("-".into(), pct);
        let _ = writeln!(s, "{:<6} | {:>8} | {:>12}", c + 1, pixels, a);
    }
    for (k, v) in [("OA", m.overall_accuracy), ("AA", m.average_accuracy), ("Kappa", m.kappa)] {
        let _ = writeln!(s, "{:<6} | {:>8} | {:>12}", k, "", pct(v));
    }
    s
}

fn params_report(model: &Model) -> String {
    let cfg = model.config();
    let mut s = format!("{}\n", model.kind().name());
    s.push_str(&model.summary());
    if model.kind() == ModelKind::HybridKan {
        let _ = writeln!(
            s,
            "Note: this total uses D={}, k={}, G={}. The published HybridKAN total of 135,090 depends on \
             the spectral depth D, spline order k and grid size G, none of which are stated alongside it.",
            cfg.pca_components, cfg.spline_order, cfg.spline_intervals
        );
    }
    s
}
