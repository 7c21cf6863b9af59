//! Perceptual quality metrics and the Fréchet distance between feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Upper end of the PSNR range mapped onto `[0, 1]` by [`quality_score`].
pub const PSNR_SCORE_CEILING_DB: f64 = 60.0;
const SSIM_L: f64 = 1.0;
const SSIM_C1: f64 = (0.01 * SSIM_L) * (0.01 * SSIM_L);
const SSIM_C2: f64 = (0.03 * SSIM_L) * (0.03 * SSIM_L);
const SSIM_C3: f64 = SSIM_C2 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptMetricKind {
    Mse,
    Psnr,
    Ssim,
}

impl std::str::FromStr for PerceptMetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(PerceptMetricKind::Mse),
            "psnr" => Ok(PerceptMetricKind::Psnr),
            "ssim" => Ok(PerceptMetricKind::Ssim),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for PerceptMetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerceptMetricKind::Mse => "mse",
            PerceptMetricKind::Psnr => "psnr",
            PerceptMetricKind::Ssim => "ssim",
        })
    }
}

fn same_len(x: &[f32], y: &[f32]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("images are empty"));
    }
    Ok(())
}

pub fn mse(x: &[f32], y: &[f32]) -> Result<f64> {
    same_len(x, y)?;
    Ok(raw_mse(x, y))
}

fn raw_mse(x: &[f32], y: &[f32]) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    sum / x.len() as f64
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (1.0 / mse.sqrt()).log10()).min(PSNR_CAP_DB)
}

/// Peak signal-to-noise ratio in dB for pixels in `[0, 1]` (MAX = 1),
/// capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &[f32], y: &[f32]) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

fn ssim_channel(x: &[f32], y: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let my = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let da = f64::from(a) - mx;
        let db = f64::from(b) - my;
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let (sx, sy) = (vx.sqrt(), vy.sqrt());
    let l = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
    let c = (2.0 * sx * sy + SSIM_C2) / (vx + vy + SSIM_C2);
    let s = (cxy + SSIM_C3) / (sx * sy + SSIM_C3);
    l * c * s
}

/// Whole-image SSIM (luminance · contrast · structure), averaged over
/// `channels` equally sized channel planes.
pub fn ssim(x: &[f32], y: &[f32], channels: usize) -> Result<f64> {
    same_len(x, y)?;
    if channels == 0 || !x.len().is_multiple_of(channels) {
        return Err(Error::invalid(format!(
            "{} pixels do not split into {channels} channels",
            x.len()
        )));
    }
    let plane = x.len() / channels;
    let total: f64 = x
        .chunks_exact(plane)
        .zip(y.chunks_exact(plane))
        .map(|(a, b)| ssim_channel(a, b))
        .sum();
    Ok(total / channels as f64)
}

/// Maps a metric into a closeness score in `[0, 1]`, 1 meaning `x' == x`.
///
/// * mse:  `1 - MSE / r²` (MSE ≤ r² inside the ball)
/// * psnr: `clamp(PSNR, 0, 60) / 60`
/// * ssim: `(SSIM + 1) / 2`
pub fn quality_score(kind: PerceptMetricKind, x: &[f32], x_adv: &[f32], r: f64, channels: usize) -> f64 {
    match kind {
        PerceptMetricKind::Mse => (1.0 - raw_mse(x, x_adv) / (r * r)).clamp(0.0, 1.0),
        PerceptMetricKind::Psnr => {
            psnr_from_mse(raw_mse(x, x_adv)).clamp(0.0, PSNR_SCORE_CEILING_DB) / PSNR_SCORE_CEILING_DB
        }
        PerceptMetricKind::Ssim => {
            let plane = x.len() / channels.max(1);
            let s: f64 = x
                .chunks_exact(plane)
                .zip(x_adv.chunks_exact(plane))
                .map(|(a, b)| ssim_channel(a, b))
                .sum::<f64>()
                / channels.max(1) as f64;
            ((s + 1.0) / 2.0).clamp(0.0, 1.0)
        }
    }
}

/// Mean and (unbiased) covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Estimates statistics from flat `[n, dim]` samples, `n >= 2`.
    pub fn from_samples(samples: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !samples.len().is_multiple_of(dim) {
            return Err(Error::invalid("samples must be a flat [n, d] array"));
        }
        let n = samples.len() / dim;
        if n < 2 {
            return Err(Error::invalid(format!(
                "FID needs at least 2 samples per set, got {n}"
            )));
        }
        let x = DMatrix::from_row_slice(n, dim, samples);
        let mean = DVector::from_iterator(dim, x.column_iter().map(|c| c.sum() / n as f64));
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// PSD square root via symmetric eigendecomposition, clamping negative
/// eigenvalues to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians:
/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let diff = &a.mean - &b.mean;
    let root_a = psd_sqrt(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let d = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// FID between two flat `[n, dim]` feature sets.
pub fn fid(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    frechet_distance(
        &GaussianStats::from_samples(a, dim)?,
        &GaussianStats::from_samples(b, dim)?,
    )
}
