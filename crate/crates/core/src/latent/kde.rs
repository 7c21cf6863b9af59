use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::LatentSet;
use crate::error::{Error, Result};

/// Equal-weight mixture of diagonal Gaussians, one per training latent,
/// each with its own per-dimension bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    dim: usize,
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
    /// `-d/2 ln 2π - Σ_j ln h_ij - ln n` per component.
    log_norm: Vec<f64>,
}

impl KdeModel {
    /// Builds the mixture from flat `[n, d]` centers and bandwidths.
    pub fn new(centers: Vec<f64>, bandwidths: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || centers.is_empty() {
            return Err(Error::invalid("KDE needs at least one latent of positive dimension"));
        }
        if !centers.len().is_multiple_of(dim) || centers.len() != bandwidths.len() {
            return Err(Error::DimensionMismatch {
                expected: centers.len(),
                found: bandwidths.len(),
            });
        }
        if let Some(i) = bandwidths.iter().position(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth at flat index {i} is not strictly positive"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite KDE center"));
        }
        let n = centers.len() / dim;
        let base = -0.5 * dim as f64 * (2.0 * PI).ln() - (n as f64).ln();
        let log_norm = bandwidths
            .chunks_exact(dim)
            .map(|h| base - h.iter().map(|v| v.ln()).sum::<f64>())
            .collect();
        Ok(KdeModel {
            dim,
            centers,
            bandwidths,
            log_norm,
        })
    }

    /// Adaptive bandwidths `h_i = σ_i` taken straight from encoder latents.
    pub fn fit(latents: &LatentSet) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::invalid("empty latent set"));
        }
        KdeModel::new(latents.means().to_f64(), latents.stds().to_f64(), latents.dim())
    }

    /// For latents without per-sample spread (e.g. PCA codes): a single
    /// Scott's-rule bandwidth per dimension shared by all components.
    pub fn fit_scott(points: &[f64], dim: usize) -> Result<Self> {
        let h = scott_bandwidths(points, dim)?;
        let n = points.len() / dim;
        let bandwidths = (0..n).flat_map(|_| h.iter().copied()).collect();
        KdeModel::new(points.to_vec(), bandwidths, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.log_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norm.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// `ln p(z)` evaluated with log-sum-exp; finite for any finite `z`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        let mut max = f64::NEG_INFINITY;
        let terms: Vec<f64> = self
            .centers
            .chunks_exact(self.dim)
            .zip(self.bandwidths.chunks_exact(self.dim))
            .zip(&self.log_norm)
            .map(|((c, h), &ln)| {
                let q: f64 = z
                    .iter()
                    .zip(c)
                    .zip(h)
                    .map(|((&zj, &cj), &hj)| {
                        let u = (zj - cj) / hj;
                        u * u
                    })
                    .sum();
                let t = ln - 0.5 * q;
                max = max.max(t);
                t
            })
            .collect();
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        Ok(max + sum.ln())
    }

    /// `p(z)`; underflows to 0 far from every center.
    pub fn density(&self, z: &[f64]) -> Result<f64> {
        Ok(self.log_density(z)?.exp())
    }

    /// Draws `count` latents: a uniformly chosen component, then its
    /// diagonal Gaussian. Deterministic in `rng_seed`.
    pub fn sample(&self, count: usize, rng_seed: u64) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut out = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let i = rng.random_range(0..self.len());
            let c = self.center(i);
            let h = &self.bandwidths[i * self.dim..(i + 1) * self.dim];
            for j in 0..self.dim {
                let e: f64 = rng.sample(StandardNormal);
                out.push(c[j] + h[j] * e);
            }
        }
        Ok(out)
    }
}

/// Scott's rule `n^(-1/(d+4)) · std_j` per dimension (sample std).
pub fn scott_bandwidths(points: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("points must be a non-empty [n, d] array"));
    }
    let n = points.len() / dim;
    if n < 2 {
        return Err(Error::Degenerate("Scott's rule needs at least 2 points".into()));
    }
    let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|j| {
            let col = points.iter().skip(j).step_by(dim);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            if var > 0.0 {
                Ok(factor * var.sqrt())
            } else {
                Err(Error::Degenerate(format!("latent dimension {j} has zero variance")))
            }
        })
        .collect()
}
