use alloc::vec;
use alloc::vec::Vec;

use super::HsiCube;
use crate::error::{bail, Error, Result};
use crate::linalg::jacobi_eigen;

/// Fitted band reduction: `y = (x − mean)·P` with `P` of size `B × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub bands: usize,
    pub components: usize,
    pub mean: Vec<f64>,
    /// Row-major `B × D`; column `d` is the `d`-th principal axis.
    pub projection: Vec<f64>,
    /// Variance captured by each component, descending.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    /// Fits the top `components` eigenvectors of the band covariance.
    ///
    /// Eigenvectors are sign-normalized so that their largest-magnitude
    /// entry is positive.
    pub fn fit(cube: &HsiCube, components: usize) -> Result<Self> {
        let b = cube.bands();
        let n = cube.pixels();
        if components == 0 || components > b {
            bail!(Config, "PCA needs 1 <= D <= {b} bands, got D = {components}");
        }
        if n < components {
            bail!(Config, "PCA with D = {components} needs at least that many pixels, got {n}");
        }
        let mut mean = vec![0.0; b];
        for px in cube.values().chunks_exact(b) {
            mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; b * b];
        let mut centred = vec![0.0; b];
        for px in cube.values().chunks_exact(b) {
            for i in 0..b {
                centred[i] = px[i] - mean[i];
            }
            for i in 0..b {
                let ci = centred[i];
                for j in i..b {
                    cov[i * b + j] += ci * centred[j];
                }
            }
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        for i in 0..b {
            for j in i..b {
                let v = cov[i * b + j] / denom;
                cov[i * b + j] = v;
                cov[j * b + i] = v;
            }
        }
        let eig = jacobi_eigen(&cov, b)?;
        let top = eig.values[0].max(0.0);
        let tol = 1e-12 * top.max(f64::MIN_POSITIVE);
        if let Some(d) = (0..components).find(|&d| eig.values[d] <= tol) {
            return Err(Error::Numeric {
                op: "pca",
                detail: alloc::format!("covariance has rank {d}, fewer than the {components} requested components"),
            });
        }
        let mut projection = vec![0.0; b * components];
        for d in 0..components {
            let col: Vec<f64> = (0..b).map(|r| eig.vectors[r * b + d]).collect();
            let lead = col.iter().copied().reduce(|a, v| if v.abs() > a.abs() { v } else { a }).unwrap_or(1.0);
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            for r in 0..b {
                projection[r * components + d] = sign * col[r];
            }
        }
        Ok(PcaModel { bands: b, components, mean, projection, explained_variance: eig.values[..components].to_vec() })
    }

    pub fn transform(&self, cube: &HsiCube) -> Result<HsiCube> {
        let (b, d) = (self.bands, self.components);
        if cube.bands() != b {
            bail!(Config, "PCA model expects {b} bands, cube has {}", cube.bands());
        }
        let mut out = Vec::with_capacity(cube.pixels() * d);
        let mut centred = vec![0.0; b];
        for px in cube.values().chunks_exact(b) {
            for i in 0..b {
                centred[i] = px[i] - self.mean[i];
            }
            for k in 0..d {
                out.push((0..b).map(|i| centred[i] * self.projection[i * d + k]).sum());
            }
        }
        HsiCube::new(cube.height(), cube.width(), d, out)
    }

    /// Maps reduced spectra back to band space.
    pub fn inverse_transform(&self, reduced: &HsiCube) -> Result<HsiCube> {
        let (b, d) = (self.bands, self.components);
        if reduced.bands() != d {
            bail!(Config, "expected {d} components, cube has {}", reduced.bands());
        }
        let mut out = Vec::with_capacity(reduced.pixels() * b);
        for y in reduced.values().chunks_exact(d) {
            for i in 0..b {
                out.push(self.mean[i] + (0..d).map(|k| y[k] * self.projection[i * d + k]).sum::<f64>());
            }
        }
        HsiCube::new(reduced.height(), reduced.width(), b, out)
    }
}

/// Fits PCA on `cube` and returns the reduced cube together with the model.
pub fn pca_reduce(cube: &HsiCube, components: usize) -> Result<(HsiCube, PcaModel)> {
    let model = PcaModel::fit(cube, components)?;
    Ok((model.transform(cube)?, model))
}
