//! Labeled image datasets and per-sample Gaussian latents.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images of shape `[n, c, h, w]` with pixels in `[0, 1]` and one class
/// index per image.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    /// Validates and wraps images and labels. Nothing is clamped: any pixel
    /// outside `[0, 1]` or label `>= class_count` rejects the whole set.
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [n, c, h, w], got shape {:?}",
                images.shape()
            )));
        }
        if class_count == 0 {
            return Err(Error::Dataset("class count must be positive".into()));
        }
        if images.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "count mismatch: {} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some((line, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                line: line + 1,
                label,
                class_count,
            });
        }
        if let Some(index) = images.first_non_finite() {
            return Err(Error::NonFinite(index));
        }
        if let Some((index, &value)) = images
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::PixelOutOfRange { index, value });
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    /// `[c, h, w]` of a single image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn pixels_per_image(&self) -> usize {
        self.images.row_len()
    }

    /// Copies the selected samples, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let rows: Vec<&[f32]> = indices.iter().map(|&i| self.image(i)).collect();
        let images = Tensor::stack(&self.image_shape(), &rows)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(images, labels, self.class_count)
    }

    /// Flattens images into an `[n, c*h*w]` tensor.
    pub fn flattened(&self) -> Tensor {
        Tensor::new(
            vec![self.len(), self.pixels_per_image()],
            self.images.data().to_vec(),
        )
        .expect("same element count")
    }

    /// Number of distinct labels present.
    pub fn classes_present(&self) -> usize {
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Parses decimal labels, one per line. Blank lines are ignored.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Dataset(format!("line {}: bad label {:?}: {e}", i + 1, l.trim())))
        })
        .collect()
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pairs an image container with a labels file.
pub fn assemble_dataset(
    images: Tensor,
    labels: impl AsRef<Path>,
    class_count: usize,
) -> Result<LabeledDataset> {
    let path = labels.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LabeledDataset::new(images, parse_labels(&text)?, class_count)
}

/// Normalizes 8-bit pixel values into `[0, 1]`.
pub fn images_from_u8(shape: Vec<usize>, bytes: &[u8]) -> Result<Tensor> {
    Tensor::new(shape, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
}

/// Per-sample diagonal Gaussian latents `(mean, std)`, aligned row-for-row
/// with a dataset.
#[derive(Debug, Clone)]
pub struct LatentSet {
    means: Tensor,
    stds: Tensor,
}

impl LatentSet {
    pub fn new(means: Tensor, stds: Tensor) -> Result<Self> {
        if means.rank() != 2 {
            return Err(Error::Dataset(format!(
                "latent means must be [n, d], got {:?}",
                means.shape()
            )));
        }
        if means.shape() != stds.shape() {
            return Err(Error::Dataset(format!(
                "latent means {:?} and stds {:?} differ in shape",
                means.shape(),
                stds.shape()
            )));
        }
        if let Some(i) = means.first_non_finite().or_else(|| stds.first_non_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = stds.data().iter().position(|&s| s <= 0.0) {
            return Err(Error::Dataset(format!(
                "latent std at flat index {i} is not strictly positive"
            )));
        }
        Ok(LatentSet { means, stds })
    }

    /// Like [`LatentSet::new`], additionally requiring `expected_rows` rows.
    pub fn aligned(means: Tensor, stds: Tensor, expected_rows: usize) -> Result<Self> {
        let set = LatentSet::new(means, stds)?;
        if set.len() != expected_rows {
            return Err(Error::Dataset(format!(
                "latent set has {} rows but dataset has {expected_rows}",
                set.len()
            )));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.means.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.means.shape()[1]
    }

    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn stds(&self) -> &Tensor {
        &self.stds
    }
}
