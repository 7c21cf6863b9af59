//! Deterministic desk-scale fixture: a two-class 8×8 dataset rendered from
//! Gaussian latents split by the sign of the first axis, and a small MLP
//! trained on it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::classifier::{save_manifest, softmax, Activation, BuiltinNet, DenseLayer};
use crate::dataset::{write_labels, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::{save_container, Tensor};

pub const SIDE: usize = 8;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub latent_dim: usize,
    /// Half-width of the empty band around the class boundary on the first
    /// latent axis; class 0 lives below it, class 1 above.
    pub gap: f64,
    pub spread: f64,
    /// Pixel amplitude per latent unit.
    pub contrast: f64,
    pub noise: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 1000,
            latent_dim: 4,
            gap: 0.05,
            spread: 0.8,
            contrast: 0.12,
            noise: 0.02,
            rng_seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: LabeledDataset,
    /// Generating latents, flat `[n, latent_dim]`.
    pub latents: Vec<f64>,
    pub latent_dim: usize,
}

/// Low-frequency cosine pattern number `k`, values in `[-1, 1]`.
pub fn basis_pattern(k: usize) -> Vec<f64> {
    const FREQS: [(usize, usize); 8] = [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2)];
    let (fa, fb) = FREQS[k % FREQS.len()];
    let mut out = Vec::with_capacity(SIDE * SIDE);
    for i in 0..SIDE {
        for j in 0..SIDE {
            let a = (PI * fa as f64 * (i as f64 + 0.5) / SIDE as f64).cos();
            let b = (PI * fb as f64 * (j as f64 + 0.5) / SIDE as f64).cos();
            out.push(a * b);
        }
    }
    out
}

/// Draws `spec.samples` images with alternating labels.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.samples == 0 || spec.latent_dim == 0 || spec.latent_dim > 8 || !(spec.gap >= 0.0) {
        return Err(Error::invalid("synthetic spec needs samples > 0, latent_dim in 1..=8 and gap >= 0"));
    }
    let d = spec.latent_dim;
    let bases: Vec<Vec<f64>> = (0..d).map(basis_pattern).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut latents = Vec::with_capacity(spec.samples * d);
    let mut pixels = Vec::with_capacity(spec.samples * SIDE * SIDE);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let label = i % CLASSES;
        let z: Vec<f64> = (0..d)
            .map(|k| {
                let draw = spec.spread * rng.sample::<f64, _>(StandardNormal);
                match (k, label) {
                    (0, 0) => -(spec.gap + draw.abs()),
                    (0, _) => spec.gap + draw.abs(),
                    _ => draw,
                }
            })
            .collect();
        for p in 0..SIDE * SIDE {
            let signal: f64 = z.iter().zip(&bases).map(|(zk, b)| zk * b[p]).sum();
            let eps: f64 = rng.sample(StandardNormal);
            let v = 0.5 + spec.contrast * signal + spec.noise * eps;
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
        latents.extend(z);
        labels.push(label);
    }
    let images = Tensor::new(vec![spec.samples, 1, SIDE, SIDE], pixels)?;
    Ok(SyntheticData {
        dataset: LabeledDataset::new(images, labels, CLASSES)?,
        latents,
        latent_dim: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 16,
            epochs: 300,
            learning_rate: 0.05,
            momentum: 0.9,
            rng_seed: 11,
        }
    }
}

/// Full-batch gradient descent with momentum on mean cross-entropy for a
/// `D → hidden (relu) → K` network.
pub fn train_mlp(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<BuiltinNet> {
    if ds.is_empty() || cfg.hidden == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("training needs data, hidden > 0 and a positive learning rate"));
    }
    let input = ds.pixels_per_image();
    let k = ds.class_count();
    let h = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut init = |fan_in: usize, len: usize| -> Vec<f64> {
        let scale = (2.0 / fan_in as f64).sqrt();
        (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    // Parameters flattened as [w1, b1, w2, b2].
    let mut w1 = init(input, h * input);
    let mut b1 = vec![0.0; h];
    let mut w2 = init(h, k * h);
    let mut b2 = vec![0.0; k];
    let mut v = [vec![0.0; w1.len()], vec![0.0; h], vec![0.0; w2.len()], vec![0.0; k]];
    let data: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| ds.image(i).iter().map(|&p| f64::from(p)).collect())
        .collect();
    let n = ds.len() as f64;

    for _ in 0..cfg.epochs {
        let mut g = [vec![0.0; w1.len()], vec![0.0; h], vec![0.0; w2.len()], vec![0.0; k]];
        for (x, &y) in data.iter().zip(ds.labels()) {
            let pre: Vec<f64> = (0..h)
                .map(|j| b1[j] + w1[j * input..(j + 1) * input].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let logits: Vec<f64> = (0..k)
                .map(|c| b2[c] + w2[c * h..(c + 1) * h].iter().zip(&act).map(|(w, a)| w * a).sum::<f64>())
                .collect();
            let mut dl = softmax(&logits);
            dl[y] -= 1.0;
            let mut dact = vec![0.0; h];
            for c in 0..k {
                g[3][c] += dl[c];
                for j in 0..h {
                    g[2][c * h + j] += dl[c] * act[j];
                    dact[j] += dl[c] * w2[c * h + j];
                }
            }
            for j in 0..h {
                if pre[j] <= 0.0 {
                    continue;
                }
                g[1][j] += dact[j];
                for (gw, xv) in g[0][j * input..(j + 1) * input].iter_mut().zip(x) {
                    *gw += dact[j] * xv;
                }
            }
        }
        for (params, (grad, vel)) in [&mut w1, &mut b1, &mut w2, &mut b2]
            .into_iter()
            .zip(g.iter().zip(v.iter_mut()))
        {
            for ((p, gv), vv) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *vv = cfg.momentum * *vv - cfg.learning_rate * gv / n;
                *p += *vv;
            }
        }
    }
    let [c, hh, ww] = ds.image_shape();
    BuiltinNet::new(
        [c, hh, ww],
        vec![
            DenseLayer::new(input, h, w1, b1, Activation::Relu)?,
            DenseLayer::new(h, k, w2, b2, Activation::Identity)?,
        ],
    )
}

/// Paths of a bundle written by [`write_bundle`].
#[derive(Debug, Clone)]
pub struct Bundle {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub model: PathBuf,
}

/// Writes the default dataset (`images.hdat`, `labels.txt`) and a trained
/// model manifest (`model.txt`) into `dir`.
pub fn write_bundle(dir: impl AsRef<Path>, spec: &SyntheticSpec, train: &TrainConfig) -> Result<Bundle> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = generate(spec)?;
    let net = train_mlp(&data.dataset, train)?;
    let images = dir.join("images.hdat");
    let labels = dir.join("labels.txt");
    save_container(data.dataset.images(), &images)?;
    write_labels(data.dataset.labels(), &labels)?;
    let model = save_manifest(&net, dir, "model")?;
    Ok(Bundle { images, labels, model })
}
