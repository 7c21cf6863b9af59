//! Global distribution over a latent space: PCA embedding, adaptive
//! Gaussian KDE, and min-max density normalization.

mod kde;
mod pca;

pub use kde::{scott_bandwidths, KdeModel};
pub use pca::PcaModel;

use crate::error::{Error, Result};

/// Min-max scales `values` into `[0, 1]`. A constant input maps to 0.5.
pub fn normalize_densities(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot normalize an empty sequence"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in values to normalize"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_max_examples() {
        assert_eq!(normalize_densities(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_densities(&[7.0, 7.0]).unwrap(), vec![0.5, 0.5]);
        assert!(normalize_densities(&[]).is_err());
        assert!(normalize_densities(&[1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn order_preserved(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let n = normalize_densities(&values).unwrap();
            for i in 0..values.len() {
                prop_assert!((0.0..=1.0).contains(&n[i]));
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(n[i] <= n[j]);
                    }
                }
            }
        }
    }
}
