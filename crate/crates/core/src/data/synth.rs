use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelRaster};
use crate::error::{bail, Result};
use crate::math::{exp, sqrt};

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

const MAX_ATTEMPTS: usize = 1000;
/// Smallest RMS distance between two class signatures.
const MIN_SIGNATURE_GAP: f64 = 0.1;

fn signature(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps = rng.random_range(2..=3);
    let b = bands as f64;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let amp = rng.random_range(0.2..1.0);
            let centre = rng.random_range(0.0..b);
            let width = rng.random_range((b / 10.0).max(0.5)..(b / 4.0).max(1.0));
            (amp, centre, width)
        })
        .collect();
    (0..bands)
        .map(|i| {
            let x = i as f64;
            0.1 + params.iter().map(|(a, c, w)| a * exp(-(x - c) * (x - c) / (2.0 * w * w))).sum::<f64>()
        })
        .collect()
}

fn rms_gap(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Voronoi scene with one smooth spectral signature per class.
///
/// Each of the `classes` regions covers at least 1 % of the pixels; pixels
/// get their class signature plus i.i.d. Gaussian noise.
pub fn generate_synthetic(p: &SynthParams) -> Result<(HsiCube, LabelRaster)> {
    let n = p.height * p.width;
    if p.classes < 2 {
        bail!(Config, "synthetic scene needs at least 2 classes, got {}", p.classes);
    }
    if p.bands == 0 || n < p.classes {
        bail!(Config, "{}x{} pixels cannot hold {} classes", p.height, p.width, p.classes);
    }
    if p.classes > u16::MAX as usize {
        bail!(Config, "at most {} classes", u16::MAX);
    }
    if !(p.noise_sigma.is_finite() && p.noise_sigma >= 0.0) {
        bail!(Config, "noise sigma must be finite and non-negative");
    }
    let min_cover = n.div_ceil(100);
    if p.classes * min_cover > n {
        bail!(Config, "{} classes cannot each cover 1% of {n} pixels", p.classes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut labels = None;
    for _ in 0..MAX_ATTEMPTS {
        let sites = rand::seq::index::sample(&mut rng, n, p.classes).into_vec();
        let mut lab = vec![0u16; n];
        let mut cover = vec![0usize; p.classes];
        for (px, l) in lab.iter_mut().enumerate() {
            let (r, c) = ((px / p.width) as isize, (px % p.width) as isize);
            let mut best = (isize::MAX, 0);
            for (k, &s) in sites.iter().enumerate() {
                let (sr, sc) = ((s / p.width) as isize, (s % p.width) as isize);
                let d = (r - sr) * (r - sr) + (c - sc) * (c - sc);
                if d < best.0 {
                    best = (d, k);
                }
            }
            *l = best.1 as u16 + 1;
            cover[best.1] += 1;
        }
        if cover.iter().all(|&c| c >= min_cover) {
            labels = Some(lab);
            break;
        }
    }
    let Some(labels) = labels else {
        bail!(Config, "could not place {} regions covering 1% each", p.classes);
    };

    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(p.classes);
    let mut attempts = 0;
    while signatures.len() < p.classes {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * p.classes {
            bail!(Config, "could not draw {} distinct signatures over {} bands", p.classes, p.bands);
        }
        let s = signature(p.bands, &mut rng);
        if signatures.iter().all(|o| rms_gap(o, &s) >= MIN_SIGNATURE_GAP) {
            signatures.push(s);
        }
    }

    let mut values = Vec::with_capacity(n * p.bands);
    let noise = (p.noise_sigma > 0.0).then(|| Normal::new(0.0, p.noise_sigma).expect("valid sigma"));
    for &l in &labels {
        let sig = &signatures[l as usize - 1];
        for &v in sig {
            values.push(match &noise {
                Some(d) => v + d.sample(&mut rng),
                None => v,
            });
        }
    }
    Ok((HsiCube::new(p.height, p.width, p.bands, values)?, LabelRaster::new(p.height, p.width, labels)?))
}
