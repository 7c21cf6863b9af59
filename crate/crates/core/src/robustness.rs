//! Monte-Carlo local robustness, empirical global robustness and the
//! campaign report.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, ClassifierHandle};
use crate::error::{Error, Result};
use crate::ga::TestCase;
use crate::latent::{KdeModel, PcaModel};
use crate::metrics::fid;
use crate::seeds::DensityScale;

pub const MIN_MC_SAMPLES: usize = 100;
const MC_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalRobustnessEstimate {
    /// Fraction of sampled ball points still predicted as the seed label.
    pub estimate: f64,
    pub samples: usize,
    /// `log10(1 − R̂ + 1/N)`.
    pub log_complement: f64,
    pub rng_seed: u64,
}

/// Per-sample outcomes (`true` = classified as `y`) for `n` points drawn
/// uniformly from the ball `‖x' − x‖∞ ≤ r` intersected with `[0, 1]`.
///
/// Draws come from one stream in order, so the first `k` outcomes do not
/// depend on `n`.
pub fn mc_outcomes(
    h: &ClassifierHandle,
    x: &[f32],
    y: usize,
    r: f64,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<bool>> {
    let width = h.input_len();
    if x.len() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            found: x.len(),
        });
    }
    if !(r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let bounds: Vec<(f64, f64)> = x
        .iter()
        .map(|&p| {
            let p = f64::from(p);
            ((p - r).max(0.0), (p + r).min(1.0))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n);
    let mut batch = Vec::with_capacity(MC_CHUNK * width);
    while out.len() < n {
        let rows = MC_CHUNK.min(n - out.len());
        batch.clear();
        for _ in 0..rows {
            for &(lo, hi) in &bounds {
                let v = if hi > lo { rng.random_range(lo..hi) } else { lo };
                batch.push(v as f32);
            }
        }
        let probs = h.predict_flat(&batch, rows)?;
        out.extend(probs.iter_rows().map(|p| argmax(p) == y));
    }
    Ok(out)
}

/// Estimates local robustness of the ball around `(x, y)` from `n_mc`
/// uniform samples.
pub fn mc_local_robustness(
    h: &ClassifierHandle,
    x: &[f32],
    y: usize,
    r: f64,
    n_mc: usize,
    rng_seed: u64,
) -> Result<LocalRobustnessEstimate> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::invalid(format!(
            "at least {MIN_MC_SAMPLES} Monte-Carlo samples required, got {n_mc}"
        )));
    }
    let hits = mc_outcomes(h, x, y, r, n_mc, rng_seed)?
        .into_iter()
        .filter(|&b| b)
        .count();
    let estimate = hits as f64 / n_mc as f64;
    Ok(LocalRobustnessEstimate {
        estimate,
        samples: n_mc,
        log_complement: (1.0 - estimate + 1.0 / n_mc as f64).log10(),
        rng_seed,
    })
}

/// Density-weighted accuracy `Σ wᵢ accᵢ / Σ wᵢ`.
pub fn empirical_global_robustness(per_seed_acc: &[f64], weights: &[f64]) -> Result<f64> {
    if per_seed_acc.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: per_seed_acc.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("weights sum to zero"));
    }
    Ok(per_seed_acc.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / total)
}

/// Accuracy of `h` on each seed's adversarial examples, judged against the
/// seed label. Seeds without AEs score 1.
pub fn per_seed_accuracy(h: &ClassifierHandle, outcomes: &[SeedOutcome]) -> Result<Vec<f64>> {
    outcomes
        .iter()
        .map(|o| {
            let aes: Vec<&TestCase> = o.cases.iter().filter(|c| c.is_ae()).collect();
            if aes.is_empty() {
                return Ok(1.0);
            }
            let flat: Vec<f32> = aes.iter().flat_map(|c| c.image.iter().copied()).collect();
            let labels = h.predict_flat(&flat, aes.len())?.labels();
            Ok(labels.iter().filter(|&&l| l == o.label).count() as f64 / aes.len() as f64)
        })
        .collect()
}

/// Everything generated from one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed_index: usize,
    pub label: usize,
    pub seed_image: Vec<f32>,
    pub p_g_norm: f64,
    pub log_density: f64,
    pub cases: Vec<TestCase>,
    pub queries: u64,
    pub seconds: f64,
}

/// Where latent features for FID and AE densities come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    None,
    Pca(&'a PcaModel),
    /// Pre-computed `[seeds, dim]` and `[aes, dim]` features.
    External {
        seeds: &'a [f64],
        aes: &'a [f64],
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions<'a> {
    pub method: &'a str,
    pub radius: f64,
    pub features: FeatureSource<'a>,
    /// KDE and ranking scale used to score AE densities (PCA features only).
    pub density: Option<(&'a KdeModel, &'a DensityScale)>,
    /// Accuracy of an evaluation model on each seed's AEs.
    pub per_seed_accuracy: Option<&'a [f64]>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSeedSummary {
    pub seed_index: usize,
    pub label: usize,
    pub p_g_norm: f64,
    pub cases: usize,
    pub aes: usize,
    pub ae_proportion: f64,
    pub mean_pred_loss: Option<f64>,
    pub mean_epsilon: Option<f64>,
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub method: String,
    pub radius: f64,
    pub seeds: usize,
    pub total_cases: usize,
    pub total_aes: usize,
    /// Share of seeds with at least one AE.
    pub ae_prop: f64,
    /// Share of all generated cases that are AEs.
    pub case_ae_prop: f64,
    pub mean_pred_loss: Option<f64>,
    pub mean_p_g_seeds: f64,
    pub mean_p_g_aes: Option<f64>,
    pub mean_log_density_seeds: f64,
    pub mean_log_density_aes: Option<f64>,
    pub fid: Option<f64>,
    pub fid_omitted: Option<String>,
    /// Mean `‖x' − x‖∞` over AEs.
    pub mean_epsilon: Option<f64>,
    pub max_epsilon: Option<f64>,
    pub empirical_global_robustness: Option<f64>,
    pub wall_clock_seconds: f64,
    pub queries: u64,
    pub per_seed: Vec<PerSeedSummary>,
}

fn mean_opt(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates per-case records into a report. Pure in its inputs.
pub fn build_report(outcomes: &[SeedOutcome], opts: &ReportOptions<'_>) -> Result<CampaignReport> {
    if outcomes.is_empty() {
        return Err(Error::invalid("report needs at least one seed"));
    }
    let aes: Vec<(&SeedOutcome, &TestCase)> = outcomes
        .iter()
        .flat_map(|o| o.cases.iter().filter(|c| c.is_ae()).map(move |c| (o, c)))
        .collect();
    let total_cases: usize = outcomes.iter().map(|o| o.cases.len()).sum();

    let per_seed: Vec<PerSeedSummary> = outcomes
        .iter()
        .map(|o| {
            let ae: Vec<&TestCase> = o.cases.iter().filter(|c| c.is_ae()).collect();
            PerSeedSummary {
                seed_index: o.seed_index,
                label: o.label,
                p_g_norm: o.p_g_norm,
                cases: o.cases.len(),
                aes: ae.len(),
                ae_proportion: if o.cases.is_empty() {
                    0.0
                } else {
                    ae.len() as f64 / o.cases.len() as f64
                },
                mean_pred_loss: mean_opt(ae.iter().map(|c| c.loss)),
                mean_epsilon: mean_opt(ae.iter().map(|c| c.linf)),
                queries: o.queries,
            }
        })
        .collect();

    let (fid_value, fid_omitted, ae_logs) = match opts.features {
        FeatureSource::None => (None, Some("no latent features supplied".to_string()), None),
        FeatureSource::External { seeds, aes: feats, dim } => {
            let f = if seeds.len() / dim.max(1) < 2 || feats.len() / dim.max(1) < 2 {
                Err("fewer than 2 seeds or AEs".to_string())
            } else {
                fid(seeds, feats, dim).map_err(|e| e.to_string())
            };
            let (v, why) = split(f);
            (v, why, None)
        }
        FeatureSource::Pca(pca) => {
            let seed_feats = outcomes
                .iter()
                .map(|o| pca.embed_f32(&o.seed_image))
                .collect::<Result<Vec<_>>>()?;
            let ae_feats = aes
                .iter()
                .map(|(_, c)| pca.embed_f32(&c.image))
                .collect::<Result<Vec<_>>>()?;
            let f = if seed_feats.len() < 2 || ae_feats.len() < 2 {
                Err("fewer than 2 seeds or AEs".to_string())
            } else {
                fid(&seed_feats.concat(), &ae_feats.concat(), pca.dim()).map_err(|e| e.to_string())
            };
            let logs = match opts.density {
                Some((kde, _)) => Some(
                    ae_feats
                        .iter()
                        .map(|z| kde.log_density(z))
                        .collect::<Result<Vec<f64>>>()?,
                ),
                None => None,
            };
            let (v, why) = split(f);
            (v, why, logs)
        }
    };

    let empirical_global_robustness = match opts.per_seed_accuracy {
        Some(acc) => {
            let w: Vec<f64> = outcomes.iter().map(|o| o.p_g_norm).collect();
            let w = if w.iter().sum::<f64>() > 0.0 { w } else { vec![1.0; w.len()] };
            Some(empirical_global_robustness(acc, &w)?)
        }
        None => None,
    };

    Ok(CampaignReport {
        method: opts.method.to_string(),
        radius: opts.radius,
        seeds: outcomes.len(),
        total_cases,
        total_aes: aes.len(),
        ae_prop: per_seed.iter().filter(|s| s.aes > 0).count() as f64 / outcomes.len() as f64,
        case_ae_prop: if total_cases == 0 {
            0.0
        } else {
            aes.len() as f64 / total_cases as f64
        },
        mean_pred_loss: mean_opt(aes.iter().map(|(_, c)| c.loss)),
        mean_p_g_seeds: outcomes.iter().map(|o| o.p_g_norm).sum::<f64>() / outcomes.len() as f64,
        mean_p_g_aes: match (&ae_logs, opts.density) {
            (Some(l), Some((_, scale))) => mean_opt(l.iter().map(|&v| scale.normalize(v))),
            _ => None,
        },
        mean_log_density_seeds: outcomes.iter().map(|o| o.log_density).sum::<f64>()
            / outcomes.len() as f64,
        mean_log_density_aes: ae_logs.as_ref().and_then(|l| mean_opt(l.iter().copied())),
        fid: fid_value,
        fid_omitted,
        mean_epsilon: mean_opt(aes.iter().map(|(_, c)| c.linf)),
        max_epsilon: aes.iter().map(|(_, c)| c.linf).reduce(f64::max),
        empirical_global_robustness,
        wall_clock_seconds: opts.wall_clock_seconds,
        queries: outcomes.iter().map(|o| o.queries).sum(),
        per_seed,
    })
}

fn split(r: std::result::Result<f64, String>) -> (Option<f64>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(why) => (None, Some(why)),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Human-readable summary table.
pub fn render_text(r: &CampaignReport) -> String {
    let mut s = String::new();
    let rows: [(&str, String); 12] = [
        ("method", r.method.clone()),
        ("radius r", format!("{:.4}", r.radius)),
        ("seeds", r.seeds.to_string()),
        ("test cases / AEs", format!("{} / {}", r.total_cases, r.total_aes)),
        ("AE prop. (seeds)", format!("{:.4}", r.ae_prop)),
        ("AE prop. (cases)", format!("{:.4}", r.case_ae_prop)),
        ("pred. loss (AEs)", fmt_opt(r.mean_pred_loss)),
        (
            "p_g seeds / AEs",
            format!("{:.4} / {}", r.mean_p_g_seeds, fmt_opt(r.mean_p_g_aes)),
        ),
        (
            "FID (latent)",
            match (&r.fid, &r.fid_omitted) {
                (Some(v), _) => format!("{v:.4}"),
                (None, Some(why)) => format!("omitted ({why})"),
                (None, None) => "-".into(),
            },
        ),
        ("epsilon mean / max", format!("{} / {}", fmt_opt(r.mean_epsilon), fmt_opt(r.max_epsilon))),
        ("empirical R_g", fmt_opt(r.empirical_global_robustness)),
        (
            "queries / seconds",
            format!("{} / {:.2}", r.queries, r.wall_clock_seconds),
        ),
    ];
    for (k, v) in rows {
        writeln!(s, "{k:<20} {v}").expect("string write");
    }
    writeln!(s).expect("string write");
    writeln!(
        s,
        "{:>8} {:>6} {:>8} {:>6} {:>5} {:>8} {:>9} {:>9}",
        "seed", "label", "p_g", "cases", "AEs", "AE prop", "loss", "epsilon"
    )
    .expect("string write");
    for p in &r.per_seed {
        writeln!(
            s,
            "{:>8} {:>6} {:>8.4} {:>6} {:>5} {:>8.4} {:>9} {:>9}",
            p.seed_index,
            p.label,
            p.p_g_norm,
            p.cases,
            p.aes,
            p.ae_proportion,
            fmt_opt(p.mean_pred_loss),
            fmt_opt(p.mean_epsilon)
        )
        .expect("string write");
    }
    s
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CaseRecord {
    pub seed_index: usize,
    pub case: usize,
    pub label: usize,
    pub loss: f64,
    pub quality: f64,
    pub linf: f64,
    pub is_ae: bool,
}

pub fn case_records(outcomes: &[SeedOutcome]) -> Vec<CaseRecord> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.cases.iter().enumerate().map(move |(i, c)| CaseRecord {
                seed_index: o.seed_index,
                case: i,
                label: o.label,
                loss: c.loss,
                quality: c.quality,
                linf: c.linf,
                is_ae: c.is_ae(),
            })
        })
        .collect()
}

pub fn write_cases_csv(outcomes: &[SeedOutcome], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for rec in case_records(outcomes) {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
