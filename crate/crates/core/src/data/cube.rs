use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// `H × W × B` reflectance volume, row-major with bands fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            bail!(Data, "cube dimensions must be positive, got {height}x{width}x{bands}");
        }
        if values.len() != height * width * bands {
            bail!(Data, "cube {height}x{width}x{bands} needs {} values, got {}", height * width * bands, values.len());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(Data, "cube value at flat index {i} is not finite");
        }
        Ok(HsiCube { height, width, bands, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Spectrum of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.bands;
        &self.values[o..o + self.bands]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.values[(row * self.width + col) * self.bands + band]
    }
}

/// Ground truth per pixel: 0 is unlabeled, `1..=C` are classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelRaster {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            bail!(Data, "label raster {height}x{width} with {} labels", labels.len());
        }
        Ok(LabelRaster { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Highest class label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }
}

/// Per-band affine map onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BandScaling {
    pub fn fit(cube: &HsiCube) -> Self {
        let b = cube.bands;
        let mut min = vec![f64::INFINITY; b];
        let mut max = vec![f64::NEG_INFINITY; b];
        for px in cube.values.chunks_exact(b) {
            for (i, &v) in px.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        BandScaling { min, max }
    }

    /// `x ↦ 2(x − min)/(max − min) − 1`; constant bands map to 0.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let b = cube.bands;
        if self.min.len() != b {
            bail!(Config, "scaling fitted on {} bands applied to {b}", self.min.len());
        }
        let mut values = cube.values.clone();
        for px in values.chunks_exact_mut(b) {
            for (i, v) in px.iter_mut().enumerate() {
                let range = self.max[i] - self.min[i];
                *v = if range > 0.0 { 2.0 * (*v - self.min[i]) / range - 1.0 } else { 0.0 };
            }
        }
        HsiCube::new(cube.height, cube.width, b, values)
    }
}

/// Scales every band of `cube` to `[-1, 1]`.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    BandScaling::fit(cube).apply(cube).expect("scaling fitted on the same cube")
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// `[1, W, W, B]` neighbourhood centred on `(row, col)`, mirror padded.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, window: usize) -> Result<Tensor> {
    if window == 0 || window.is_multiple_of(2) {
        bail!(Config, "patch window must be odd, got {window}");
    }
    if row >= cube.height || col >= cube.width {
        bail!(Data, "pixel ({row}, {col}) outside {}x{} cube", cube.height, cube.width);
    }
    let half = (window / 2) as isize;
    let b = cube.bands;
    let mut data = Vec::with_capacity(window * window * b);
    for dr in -half..=half {
        let r = reflect(row as isize + dr, cube.height);
        for dc in -half..=half {
            let c = reflect(col as isize + dc, cube.width);
            data.extend_from_slice(cube.pixel(r, c));
        }
    }
    Tensor::new(&[1, window, window, b], data)
}

/// Stacks `[1, W, W, D]` patches into a `[n, 1, W, W, D]` batch.
pub fn stack_patches(patches: &[Tensor]) -> Result<Tensor> {
    let Some(first) = patches.first() else {
        bail!(Data, "cannot stack an empty list of patches");
    };
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(patches.len() * first.len());
    for p in patches {
        if p.shape() != shape.as_slice() {
            bail!(Shape, "patch shapes differ: {:?} vs {shape:?}", p.shape());
        }
        data.extend_from_slice(p.data());
    }
    let mut full = vec![patches.len()];
    full.extend_from_slice(&shape);
    Tensor::new(&full, data)
}
