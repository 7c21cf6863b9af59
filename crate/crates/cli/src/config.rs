//! Campaign configuration: a TOML file of dotted sections, then CLI
//! overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::Context;
use hda_core::ga::{GaConfig, GaMode, PgdConfig};
use hda_core::seeds::Indicator;
use hda_core::PerceptMetricKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataSection,
    pub latent: LatentSection,
    pub backend: BackendSection,
    pub radius: RadiusSection,
    pub seeds: SeedsSection,
    pub ga: GaSection,
    pub pgd: PgdSection,
    pub robust: RobustSection,
    pub eval: EvalSection,
    pub sample: SampleSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub classes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            images: None,
            labels: None,
            classes: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSource {
    Pca,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentSection {
    pub source: LatentSource,
    /// PCA dimension.
    pub dim: usize,
    /// External `[n, d]` means and stds.
    pub means: Option<PathBuf>,
    pub stds: Option<PathBuf>,
}

impl Default for LatentSection {
    fn default() -> Self {
        LatentSection {
            source: LatentSource::Pca,
            dim: 4,
            means: None,
            stds: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    /// Builtin network manifest.
    pub model: Option<PathBuf>,
    /// Shell command of a model server.
    pub command: Option<String>,
    pub batch_cap: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusPolicy {
    Fixed,
    Rsep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusSection {
    pub policy: RadiusPolicy,
    pub value: f64,
    pub sample_cap: usize,
}

impl Default for RadiusSection {
    fn default() -> Self {
        RadiusSection {
            policy: RadiusPolicy::Fixed,
            value: 0.1,
            sample_cap: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub indicator: Indicator,
    pub k: usize,
    /// Total test budget `M`; defaults to `k · ga.outputs`.
    pub budget: Option<usize>,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            indicator: Indicator::Grad,
            k: 10,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    pub population: usize,
    pub max_iterations: usize,
    pub alpha: f64,
    pub metric: PerceptMetricKind,
    pub outputs: usize,
    pub mutation_rate: f64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    pub mode: GaMode,
}

impl Default for GaSection {
    fn default() -> Self {
        let d = GaConfig::default();
        GaSection {
            population: d.population,
            max_iterations: d.max_iterations,
            alpha: d.alpha,
            metric: d.metric,
            outputs: d.outputs,
            mutation_rate: d.mutation_rate,
            plateau_window: d.plateau_window,
            plateau_tolerance: d.plateau_tolerance,
            mode: d.mode,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdSection {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for PgdSection {
    fn default() -> Self {
        let d = PgdConfig::default();
        PgdSection {
            steps: d.steps,
            step_size: d.step_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustSection {
    pub samples: usize,
}

impl Default for RobustSection {
    fn default() -> Self {
        RobustSection { samples: 2000 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluation model manifest; defaults to the backend model.
    pub model: Option<PathBuf>,
    pub command: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub count: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { count: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out: PathBuf::from("hda-out"),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub metric: Option<PerceptMetricKind>,
    pub indicator: Option<Indicator>,
    pub k: Option<usize>,
    pub budget: Option<usize>,
}

/// Parsed configuration plus where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    /// Directory relative paths in the file are resolved against.
    pub base: PathBuf,
    pub source: Option<PathBuf>,
    out: PathBuf,
}

impl Loaded {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let (mut config, base, source) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(|e| CliError::Validation(format!("{e:#}")))?;
                let config: Config = toml::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, base, Some(p.to_path_buf()))
            }
            None => (Config::default(), PathBuf::new(), None),
        };
        if let Some(v) = ov.seed {
            config.run.seed = v;
        }
        let out = match &ov.out {
            Some(v) => {
                config.run.out = v.clone();
                v.clone()
            }
            None => base.join(&config.run.out),
        };
        if let Some(v) = ov.alpha {
            config.ga.alpha = v;
        }
        if let Some(v) = ov.metric {
            config.ga.metric = v;
        }
        if let Some(v) = ov.indicator {
            config.seeds.indicator = v;
        }
        if let Some(v) = ov.k {
            config.seeds.k = v;
        }
        if let Some(v) = ov.budget {
            config.seeds.budget = Some(v);
        }
        let loaded = Loaded {
            config,
            base,
            source,
            out,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let bad = |m: String| Err(CliError::Validation(m));
        if c.data.classes < 2 {
            return bad(format!("data.classes = {} must be at least 2", c.data.classes));
        }
        if c.seeds.k == 0 {
            return bad("seeds.k must be at least 1".into());
        }
        if let Some(m) = c.seeds.budget {
            if m < c.seeds.k {
                return bad(format!("seeds.budget = {m} is smaller than seeds.k = {}", c.seeds.k));
            }
        }
        if c.robust.samples < hda_core::robustness::MIN_MC_SAMPLES {
            return bad(format!("robust.samples must be at least {}", hda_core::robustness::MIN_MC_SAMPLES));
        }
        if !(c.radius.value > 0.0 && c.radius.value < 1.0) {
            return bad(format!("radius.value = {} must lie in (0, 1)", c.radius.value));
        }
        if c.latent.dim == 0 {
            return bad("latent.dim must be at least 1".into());
        }
        if !(c.pgd.step_size > 0.0) {
            return bad("pgd.step_size must be positive".into());
        }
        self.ga_config(c.radius.value, c.ga.outputs, 0)
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        for p in [&c.data.images, &c.data.labels, &c.backend.model, &c.latent.means, &c.latent.stds, &c.eval.model]
            .into_iter()
            .flatten()
        {
            let full = self.resolve(p);
            if !full.exists() {
                return bad(format!("path {} does not exist", full.display()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn ga_config(&self, radius: f64, outputs: usize, rng_seed: u64) -> GaConfig {
        let g = &self.config.ga;
        GaConfig {
            population: g.population,
            max_iterations: g.max_iterations,
            alpha: g.alpha,
            metric: g.metric,
            radius,
            outputs,
            rng_seed,
            mutation_rate: g.mutation_rate,
            plateau_window: g.plateau_window,
            plateau_tolerance: g.plateau_tolerance,
            mode: g.mode,
        }
    }

    pub fn budget(&self) -> usize {
        self.config
            .seeds
            .budget
            .unwrap_or(self.config.seeds.k * self.config.ga.outputs)
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-seed RNG stream derived from the run seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
