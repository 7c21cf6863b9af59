//! Distribution-aware detection of adversarial examples for image
//! classifiers.
//!
//! The pipeline has three stages:
//!
//! 1. **Global distribution** ([`latent`]): an adaptive Gaussian KDE over
//!    latent embeddings scores how typical each input is.
//! 2. **Seed selection** ([`seeds`]): inputs are ranked by normalized
//!    density times a cheap unrobustness indicator, and the test budget is
//!    split across the chosen seeds.
//! 3. **Local generation** ([`ga`]): a two-step genetic algorithm searches
//!    the L∞ ball around each seed for misclassified inputs that remain
//!    perceptually close to the seed.
//!
//! [`robustness`] provides Monte-Carlo local robustness estimates and the
//! campaign report; [`metrics`] the perceptual metrics and FID.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod ga;
pub mod latent;
pub mod metrics;
pub mod robustness;
pub mod seeds;
pub mod stats;
pub mod synthetic;
pub mod tensor;

pub use classifier::{BackendKind, BuiltinNet, ClassifierHandle, Probs};
pub use dataset::{LabeledDataset, LatentSet};
pub use error::{Error, Result};
pub use ga::{GaConfig, GaMode, GaOutput, TestCase};
pub use latent::{KdeModel, PcaModel};
pub use metrics::PerceptMetricKind;
pub use robustness::{CampaignReport, LocalRobustnessEstimate};
pub use seeds::{Indicator, SeedScore};
pub use tensor::{load_container, save_container, Tensor};
