//! Little-endian binary formats for cubes, label rasters, PCA models and
//! checkpoints.
//!
//! Every file opens with a four-byte magic and a `u16` format version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use hskan_core::data::{BandScaling, HsiCube, LabelRaster, PcaModel};
use hskan_core::optim::{Adam, AdamConfig};
use hskan_core::train::{Checkpoint, Preprocessor};
use hskan_core::{Model, ModelConfig, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const VERSION: u16 = 1;
const CUBE_MAGIC: &[u8; 4] = b"HSIC";
const LABEL_MAGIC: &[u8; 4] = b"HSIL";
const PCA_MAGIC: &[u8; 4] = b"HSIP";
const CHECKPOINT_MAGIC: &[u8; 4] = b"KANC";

/// Longest config block accepted when reading a checkpoint.
const MAX_CONFIG_BYTES: u32 = 1 << 20;

type Io<T> = std::io::Result<T>;

fn bad(detail: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, detail.into())
}

fn header(r: &mut impl Read, magic: &[u8; 4]) -> Io<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(bad(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = r.read_u16::<LE>()?;
    if v != VERSION {
        return Err(bad(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn write_header(w: &mut impl Write, magic: &[u8; 4]) -> Io<()> {
    w.write_all(magic)?;
    w.write_u16::<LE>(VERSION)
}

fn dim(r: &mut impl Read) -> Io<usize> {
    Ok(r.read_u32::<LE>()? as usize)
}

fn write_dim(w: &mut impl Write, d: usize) -> Io<()> {
    let d = u32::try_from(d).map_err(|_| bad(format!("dimension {d} exceeds u32")))?;
    w.write_u32::<LE>(d)
}

fn reals(r: &mut impl Read, n: usize) -> Io<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_reals(w: &mut impl Write, v: &[f64]) -> Io<()> {
    v.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn expect_end(r: &mut impl Read) -> Io<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(bad("trailing bytes after payload")),
    }
}

/// Opens `path`, runs `f` over a buffered reader and tags every failure
/// with the path.
fn read_file<T>(path: &Path, f: impl FnOnce(&mut BufReader<File>) -> Io<T>) -> Result<T> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    f(&mut r).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Format { path: path.into(), detail: e.to_string() },
        std::io::ErrorKind::UnexpectedEof => Error::Format { path: path.into(), detail: "truncated file".into() },
        _ => Error::Io { path: path.into(), source: e },
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Io<()>) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(Error::io(path))
}

fn core(e: hskan_core::Error) -> std::io::Error {
    bad(e.to_string())
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    write_file(path, |w| {
        write_header(w, CUBE_MAGIC)?;
        [cube.height(), cube.width(), cube.bands()].iter().try_for_each(|&d| write_dim(w, d))?;
        write_reals(w, cube.values())
    })
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    read_file(path, |r| {
        header(r, CUBE_MAGIC)?;
        let (h, w, b) = (dim(r)?, dim(r)?, dim(r)?);
        let n = h.checked_mul(w).and_then(|v| v.checked_mul(b)).ok_or_else(|| bad("cube size overflows"))?;
        let values = reals(r, n)?;
        expect_end(r)?;
        HsiCube::new(h, w, b, values).map_err(core)
    })
}

pub fn write_labels(path: &Path, labels: &LabelRaster) -> Result<()> {
    write_file(path, |w| {
        write_header(w, LABEL_MAGIC)?;
        write_dim(w, labels.height())?;
        write_dim(w, labels.width())?;
        labels.labels().iter().try_for_each(|&l| w.write_u16::<LE>(l))
    })
}

pub fn read_labels(path: &Path) -> Result<LabelRaster> {
    read_file(path, |r| {
        header(r, LABEL_MAGIC)?;
        let (h, w) = (dim(r)?, dim(r)?);
        let mut labels = vec![0u16; h.checked_mul(w).ok_or_else(|| bad("raster size overflows"))?];
        r.read_u16_into::<LE>(&mut labels)?;
        expect_end(r)?;
        LabelRaster::new(h, w, labels).map_err(core)
    })
}

/// Mean then a column-major `B × D` projection.
fn write_pca_body(w: &mut impl Write, pca: &PcaModel) -> Io<()> {
    write_dim(w, pca.bands)?;
    write_dim(w, pca.components)?;
    write_reals(w, &pca.mean)?;
    for d in 0..pca.components {
        for b in 0..pca.bands {
            w.write_f64::<LE>(pca.projection[b * pca.components + d])?;
        }
    }
    Ok(())
}

fn read_pca_body(r: &mut impl Read) -> Io<PcaModel> {
    let (bands, components) = (dim(r)?, dim(r)?);
    if bands == 0 || components == 0 || components > bands {
        return Err(bad(format!("invalid PCA dimensions B={bands} D={components}")));
    }
    let mean = reals(r, bands)?;
    let cols = reals(r, bands * components)?;
    let mut projection = vec![0.0; bands * components];
    for d in 0..components {
        for b in 0..bands {
            projection[b * components + d] = cols[d * bands + b];
        }
    }
    Ok(PcaModel { bands, components, mean, projection, explained_variance: Vec::new() })
}

/// The file holds the mean and projection only; `explained_variance` is
/// empty after a round trip.
pub fn write_pca(path: &Path, pca: &PcaModel) -> Result<()> {
    write_file(path, |w| {
        write_header(w, PCA_MAGIC)?;
        write_pca_body(w, pca)
    })
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    read_file(path, |r| {
        header(r, PCA_MAGIC)?;
        let pca = read_pca_body(r)?;
        expect_end(r)?;
        Ok(pca)
    })
}

fn config_block(ck: &Checkpoint) -> String {
    let mut s = format!("kind={}\n", ck.model.kind().name());
    for (k, v) in ck.model.config().to_pairs() {
        s.push_str(&format!("{k}={v}\n"));
    }
    let a = ck.optimizer.config;
    for (k, v) in [("lr", a.lr), ("beta1", a.beta1), ("beta2", a.beta2), ("eps", a.eps)] {
        s.push_str(&format!("{k}={v:?}\n"));
    }
    s
}

fn parse_config_block(text: &str) -> Io<(ModelKind, ModelConfig, AdamConfig)> {
    let mut kind = None;
    let mut cfg = ModelConfig::default();
    let mut adam = AdamConfig::default();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("config line {line:?} lacks '='")))?;
        let real = || v.parse::<f64>().map_err(|_| bad(format!("invalid {k} {v:?}")));
        match k {
            "kind" => kind = Some(ModelKind::from_name(v).ok_or_else(|| bad(format!("unknown model kind {v:?}")))?),
            "lr" => adam.lr = real()?,
            "beta1" => adam.beta1 = real()?,
            "beta2" => adam.beta2 = real()?,
            "eps" => adam.eps = real()?,
            _ => {
                if !cfg.set(k, v).map_err(core)? {
                    return Err(bad(format!("unknown config key {k:?}")));
                }
            }
        }
    }
    Ok((kind.ok_or_else(|| bad("config block lacks kind"))?, cfg, adam))
}

fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Io<()> {
    write_header(w, CHECKPOINT_MAGIC)?;
    let cfg = config_block(ck);
    write_dim(w, cfg.len())?;
    w.write_all(cfg.as_bytes())?;

    let params = ck.model.params();
    write_dim(w, params.len())?;
    for p in &params {
        write_dim(w, p.len())?;
        write_reals(w, p.data())?;
    }

    let opt = &ck.optimizer;
    w.write_u64::<LE>(opt.step)?;
    write_dim(w, opt.m.len())?;
    for (m, v) in opt.m.iter().zip(&opt.v) {
        write_dim(w, m.len())?;
        write_reals(w, m)?;
        write_reals(w, v)?;
    }

    w.write_all(&ck.rng.get_seed())?;
    w.write_u64::<LE>(ck.rng.get_stream())?;
    w.write_u128::<LE>(ck.rng.get_word_pos())?;

    w.write_u64::<LE>(ck.epoch as u64)?;
    w.write_f64::<LE>(ck.best_val_loss)?;
    w.write_u64::<LE>(ck.split_seed)?;

    match &ck.preprocessor {
        None => w.write_u8(0)?,
        Some(pre) => {
            w.write_u8(1)?;
            write_pca_body(w, &pre.pca)?;
            write_dim(w, pre.pca.explained_variance.len())?;
            write_reals(w, &pre.pca.explained_variance)?;
            write_reals(w, &pre.scaling.min)?;
            write_reals(w, &pre.scaling.max)?;
        }
    }
    Ok(())
}

fn read_checkpoint(r: &mut impl Read) -> Io<Checkpoint> {
    header(r, CHECKPOINT_MAGIC)?;
    let len = r.read_u32::<LE>()?;
    if len > MAX_CONFIG_BYTES {
        return Err(bad(format!("config block of {len} bytes")));
    }
    let mut text = vec![0u8; len as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| bad("config block is not UTF-8"))?;
    let (kind, cfg, adam) = parse_config_block(&text)?;

    let mut model = Model::build(&cfg, kind).map_err(core)?;
    let count = dim(r)?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(bad(format!("{count} parameter tensors for a model with {}", params.len())));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let n = dim(r)?;
        if n != p.len() {
            return Err(bad(format!("parameter {i} has {n} values, expected {}", p.len())));
        }
        r.read_f64_into::<LE>(p.data_mut())?;
    }
    model.mark_initialized();

    let mut optimizer = Adam::new(adam);
    optimizer.step = r.read_u64::<LE>()?;
    let buffers = dim(r)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    if buffers != 0 && buffers != sizes.len() {
        return Err(bad(format!("{buffers} optimizer buffers for {} parameters", sizes.len())));
    }
    for &want in sizes.iter().take(buffers) {
        let n = dim(r)?;
        if n != want {
            return Err(bad(format!("optimizer buffer of {n} values, expected {want}")));
        }
        optimizer.m.push(reals(r, n)?);
        optimizer.v.push(reals(r, n)?);
    }

    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.read_u64::<LE>()?);
    rng.set_word_pos(r.read_u128::<LE>()?);

    let epoch = r.read_u64::<LE>()? as usize;
    let best_val_loss = r.read_f64::<LE>()?;
    let split_seed = r.read_u64::<LE>()?;

    let preprocessor = match r.read_u8()? {
        0 => None,
        1 => {
            let mut pca = read_pca_body(r)?;
            let n = dim(r)?;
            if n > pca.components {
                return Err(bad("explained variance longer than the component count"));
            }
            pca.explained_variance = reals(r, n)?;
            let min = reals(r, pca.components)?;
            let max = reals(r, pca.components)?;
            Some(Preprocessor { pca, scaling: BandScaling { min, max } })
        }
        f => return Err(bad(format!("invalid preprocessor flag {f}"))),
    };
    if let Some(p) = &preprocessor {
        if p.pca.components != cfg.pca_components {
            return Err(bad("preprocessor depth does not match the model"));
        }
    }
    expect_end(r)?;
    Ok(Checkpoint { model, optimizer, epoch, rng, best_val_loss, split_seed, preprocessor })
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ck).map_err(|e| Error::Config(e.to_string()))?;
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = bytes;
    read_checkpoint(&mut r).map_err(|e| Error::Format { path: "<memory>".into(), detail: e.to_string() })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, |w| write_checkpoint(w, ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_file(path, read_checkpoint)
}
