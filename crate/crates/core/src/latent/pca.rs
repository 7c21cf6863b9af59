use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{load_container, save_container, Tensor};

/// Linear embedding onto the top principal directions of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `[d, D]`, orthonormal rows.
    components: Vec<f64>,
    dim: usize,
    input_dim: usize,
}

impl PcaModel {
    /// Fits the top-`d` right singular vectors of the centered `[n, D]` data.
    pub fn fit(data: &[f64], n: usize, input_dim: usize, d: usize) -> Result<Self> {
        if data.len() != n * input_dim {
            return Err(Error::DimensionMismatch {
                expected: n * input_dim,
                found: data.len(),
            });
        }
        if d == 0 || d > n.min(input_dim) {
            return Err(Error::invalid(format!(
                "latent dimension {d} must be in 1..={}",
                n.min(input_dim)
            )));
        }
        let mut mean = vec![0.0; input_dim];
        for row in data.chunks_exact(input_dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centered = DMatrix::from_fn(n, input_dim, |i, j| data[i * input_dim + j] - mean[j]);
        if centered.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate("data has zero variance".into()));
        }
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

        let mut components = Vec::with_capacity(d * input_dim);
        for &k in order.iter().take(d) {
            let mut row: Vec<f64> = v_t.row(k).iter().copied().collect();
            // Sign convention: largest-magnitude entry positive.
            let pivot = row
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            components.extend(row);
        }
        Ok(PcaModel {
            mean,
            components,
            dim: d,
            input_dim,
        })
    }

    /// Fits on a tensor whose leading axis indexes samples.
    pub fn fit_tensor(images: &Tensor, d: usize) -> Result<Self> {
        PcaModel::fit(&images.to_f64(), images.rows(), images.row_len(), d)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.input_dim..(k + 1) * self.input_dim]
    }

    /// `(x - mean) · componentsᵀ` for one sample.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self
            .components
            .chunks_exact(self.input_dim)
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn embed_f32(&self, x: &[f32]) -> Result<Vec<f64>> {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        self.embed(&x)
    }

    /// `z · components + mean` for one latent.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &zk) in self.components.chunks_exact(self.input_dim).zip(z) {
            for (o, &cv) in out.iter_mut().zip(c) {
                *o += zk * cv;
            }
        }
        Ok(out)
    }

    /// Row-wise embedding of `[n, D]` data into `[n, d]`.
    pub fn transform(&self, data: &[f64]) -> Result<Vec<f64>> {
        if !data.len().is_multiple_of(self.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: data.len() % self.input_dim,
            });
        }
        let mut out = Vec::with_capacity(data.len() / self.input_dim * self.dim);
        for row in data.chunks_exact(self.input_dim) {
            out.extend(self.embed(row)?);
        }
        Ok(out)
    }

    /// Row-wise reconstruction of `[n, d]` latents into `[n, D]`.
    pub fn inverse(&self, latents: &[f64]) -> Result<Vec<f64>> {
        if !latents.len().is_multiple_of(self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: latents.len() % self.dim,
            });
        }
        let mut out = Vec::with_capacity(latents.len() / self.dim * self.input_dim);
        for z in latents.chunks_exact(self.dim) {
            out.extend(self.reconstruct(z)?);
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over all elements of `[n, D]` data.
    pub fn reconstruction_mse(&self, data: &[f64]) -> Result<f64> {
        let recon = self.inverse(&self.transform(data)?)?;
        let sum: f64 = data.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / data.len().max(1) as f64)
    }

    /// Persists as `<stem>_mean.hdat` and `<stem>_components.hdat`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        save_container(
            &Tensor::from_f64(vec![self.input_dim], &self.mean)?,
            dir.join(format!("{stem}_mean.hdat")),
        )?;
        save_container(
            &Tensor::from_f64(vec![self.dim, self.input_dim], &self.components)?,
            dir.join(format!("{stem}_components.hdat")),
        )
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let mean = load_container(dir.join(format!("{stem}_mean.hdat")))?;
        let comps = load_container(dir.join(format!("{stem}_components.hdat")))?;
        if mean.rank() != 1 || comps.rank() != 2 || comps.shape()[1] != mean.len() {
            return Err(Error::invalid(format!(
                "PCA containers have incompatible shapes {:?} / {:?}",
                mean.shape(),
                comps.shape()
            )));
        }
        Ok(PcaModel {
            input_dim: mean.len(),
            dim: comps.shape()[0],
            mean: mean.to_f64(),
            components: comps.to_f64(),
        })
    }
}
