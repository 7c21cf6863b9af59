//! Test seed selection: prediction loss, local robustness indicators,
//! r-separation and the density × unrobustness ranking.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, ClassifierHandle, Probs};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::latent::{normalize_densities, KdeModel};

/// `max_{i != y} p_i - p_y`. Non-negative exactly when `x` is an
/// adversarial example (a tie with the true class counts).
pub fn prediction_loss(probs: &[f64], y: usize) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::invalid("prediction loss needs at least 2 classes"));
    }
    if y >= probs.len() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(loss_unchecked(probs, y))
}

pub(crate) fn loss_unchecked(probs: &[f64], y: usize) -> f64 {
    let other = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    other - probs[y]
}

/// Gradient-based indicator `‖∇ₓ J(f(x), y)‖∞`.
pub fn indicator_grad(h: &ClassifierHandle, x: &[f32], y: usize) -> Result<f64> {
    let g = h.loss_gradient(x, y)?;
    Ok(g.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs())))
}

/// Cached model outputs over a reference pool, used for the separation
/// indicator.
#[derive(Debug, Clone)]
pub struct SepPool {
    probs: Probs,
    labels: Vec<usize>,
}

impl SepPool {
    /// Runs one batched prediction over `pool` and keeps the outputs.
    pub fn new(h: &ClassifierHandle, pool: &LabeledDataset) -> Result<Self> {
        let probs = h.predict_probs(pool.images())?;
        Ok(SepPool {
            probs,
            labels: pool.labels().to_vec(),
        })
    }

    pub fn from_parts(probs: Probs, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: probs.rows(),
            });
        }
        Ok(SepPool { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `min ‖f(x) − f(x̂)‖∞` over pool members whose label differs from `y`.
    pub fn separation(&self, fx: &[f64], y: usize) -> Result<f64> {
        let mut best: Option<f64> = None;
        for (row, &label) in self.probs.iter_rows().zip(&self.labels) {
            if label == y {
                continue;
            }
            let d = row
                .iter()
                .zip(fx)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            best = Some(best.map_or(d, |b| b.min(d)));
        }
        best.ok_or_else(|| {
            Error::invalid(format!("separation pool has no sample labeled other than {y}"))
        })
    }
}

/// Separation indicator for one input.
pub fn indicator_sep(h: &ClassifierHandle, x: &[f32], y: usize, pool: &SepPool) -> Result<f64> {
    let fx = h.predict_flat(x, 1)?;
    pool.separation(fx.row(0), y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSeparation {
    pub r: f64,
    /// Smallest L∞ distance between differently labeled images examined.
    pub min_distance: f64,
    pub subsampled: bool,
    pub pairs_examined: u64,
}

fn linf(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()))
        .into()
}

/// Half the smallest L∞ distance between differently labeled images.
///
/// All pairs are examined when `ds.len() <= sample_cap`; otherwise a seeded
/// random subset of `sample_cap` images is used, which can only overestimate.
pub fn r_separation(ds: &LabeledDataset, sample_cap: usize, rng_seed: u64) -> Result<RSeparation> {
    if ds.classes_present() < 2 {
        return Err(Error::Dataset("r-separation needs at least two classes".into()));
    }
    let subsampled = ds.len() > sample_cap;
    let idx: Vec<usize> = if subsampled {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut v = index::sample(&mut rng, ds.len(), sample_cap.max(2)).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..ds.len()).collect()
    };
    let (min, pairs) = idx
        .par_iter()
        .enumerate()
        .map(|(a, &i)| {
            let mut best = f64::INFINITY;
            let mut pairs = 0u64;
            for &j in &idx[a + 1..] {
                if ds.label(i) != ds.label(j) {
                    pairs += 1;
                    best = best.min(linf(ds.image(i), ds.image(j)));
                }
            }
            (best, pairs)
        })
        .reduce(|| (f64::INFINITY, 0), |a, b| (a.0.min(b.0), a.1 + b.1));
    if pairs == 0 {
        return Err(Error::Dataset(
            "subsample contains a single class; raise the sample cap".into(),
        ));
    }
    Ok(RSeparation {
        r: min / 2.0,
        min_distance: min,
        subsampled,
        pairs_examined: pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Indicator {
    Grad,
    Sep,
}

impl std::str::FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Indicator::Grad),
            "sep" => Ok(Indicator::Sep),
            other => Err(Error::invalid(format!("unknown indicator `{other}`"))),
        }
    }
}

/// Raw per-input inputs to the ranking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub label: usize,
    pub log_density: f64,
    pub indicator_raw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub index: usize,
    pub label: usize,
    pub log_density: f64,
    pub p_g_norm: f64,
    pub indicator_raw: f64,
    pub unrobustness_norm: f64,
    pub combined: f64,
}

/// Maps log-densities onto the normalized scale of a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityScale {
    pub max_log: f64,
    pub min_rel: f64,
    pub max_rel: f64,
}

impl DensityScale {
    fn from_logs(logs: &[f64]) -> Self {
        let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rel: Vec<f64> = logs.iter().map(|l| (l - max_log).exp()).collect();
        let min_rel = rel.iter().copied().fold(f64::INFINITY, f64::min);
        let max_rel = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        DensityScale {
            max_log,
            min_rel,
            max_rel,
        }
    }

    /// Normalized density of a log-density, clamped into `[0, 1]`.
    pub fn normalize(&self, log_density: f64) -> f64 {
        let span = self.max_rel - self.min_rel;
        if !(span > 0.0) {
            return 0.5;
        }
        (((log_density - self.max_log).exp() - self.min_rel) / span).clamp(0.0, 1.0)
    }
}

/// Normalizes densities and indicators over all candidates, then keeps the
/// top `k` by `p_g_norm · unrobustness_norm` (ties: lower index first).
///
/// Densities are compared as `exp(ln p − max ln p)`, a positive rescaling of
/// `p` that survives underflow and leaves min-max normalized values intact.
pub fn rank_candidates(candidates: &[Candidate], indicator: Indicator, k: usize) -> Result<Vec<SeedScore>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > candidates.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} correctly classified candidates",
            candidates.len()
        )));
    }
    let logs: Vec<f64> = candidates.iter().map(|c| c.log_density).collect();
    let scale = DensityScale::from_logs(&logs);
    let rel: Vec<f64> = logs.iter().map(|l| (l - scale.max_log).exp()).collect();
    let p_norm = normalize_densities(&rel)?;
    let raw: Vec<f64> = candidates.iter().map(|c| c.indicator_raw).collect();
    let ind_norm = normalize_densities(&raw)?;

    let mut scores: Vec<SeedScore> = candidates
        .iter()
        .zip(p_norm.iter().zip(&ind_norm))
        .map(|(c, (&p, &s))| {
            let unrobust = match indicator {
                Indicator::Grad => s,
                Indicator::Sep => 1.0 - s,
            };
            SeedScore {
                index: c.index,
                label: c.label,
                log_density: c.log_density,
                p_g_norm: p,
                indicator_raw: c.indicator_raw,
                unrobustness_norm: unrobust,
                combined: p * unrobust,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.combined.total_cmp(&a.combined).then(a.index.cmp(&b.index)));
    scores.truncate(k);
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct SeedRanking {
    pub scores: Vec<SeedScore>,
    pub scale: DensityScale,
    /// Number of correctly classified candidates ranked.
    pub candidates: usize,
    pub misclassified: usize,
}

/// Ranks every correctly classified sample of `ds` and returns the top `k`.
///
/// `latents` holds one `[d]` row per sample of `ds`, in order.
pub fn rank_seeds(
    h: &ClassifierHandle,
    ds: &LabeledDataset,
    latents: &[f64],
    kde: &KdeModel,
    indicator: Indicator,
    pool: Option<&SepPool>,
    k: usize,
) -> Result<SeedRanking> {
    let d = kde.dim();
    if latents.len() != ds.len() * d {
        return Err(Error::DimensionMismatch {
            expected: ds.len() * d,
            found: latents.len(),
        });
    }
    if indicator == Indicator::Grad && !h.supports_gradient() {
        return Err(Error::GradientUnsupported);
    }
    let probs = h.predict_probs(ds.images())?;
    let correct: Vec<usize> = (0..ds.len())
        .filter(|&i| argmax(probs.row(i)) == ds.label(i))
        .collect();
    let candidates = correct
        .par_iter()
        .map(|&i| {
            let y = ds.label(i);
            let log_density = kde.log_density(&latents[i * d..(i + 1) * d])?;
            let indicator_raw = match indicator {
                Indicator::Grad => indicator_grad(h, ds.image(i), y)?,
                Indicator::Sep => pool
                    .ok_or_else(|| Error::invalid("separation indicator needs a reference pool"))?
                    .separation(probs.row(i), y)?,
            };
            Ok(Candidate {
                index: i,
                label: y,
                log_density,
                indicator_raw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = rank_candidates(&candidates, indicator, k)?;
    let logs: Vec<f64> = candidates.iter().map(|c| c.log_density).collect();
    Ok(SeedRanking {
        scores,
        scale: DensityScale::from_logs(&logs),
        candidates: candidates.len(),
        misclassified: ds.len() - correct.len(),
    })
}

/// Splits `total` test cases across seeds in proportion to `weights`
/// (largest-remainder rounding), giving every seed at least one.
pub fn allocate_by_weight(weights: &[f64], total: usize) -> Result<Vec<usize>> {
    let k = weights.len();
    if k == 0 {
        return Err(Error::invalid("no seeds to allocate budget to"));
    }
    if total < k {
        return Err(Error::invalid(format!(
            "budget {total} is smaller than the {k} seeds"
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("budget weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    let uniform = vec![1.0; k];
    let (weights, sum) = if sum > 0.0 { (weights, sum) } else { (&uniform[..], k as f64) };

    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    while let Some(z) = alloc.iter().position(|&m| m == 0) {
        let donor = (0..k)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .expect("non-empty");
        alloc[donor] -= 1;
        alloc[z] += 1;
    }
    Ok(alloc)
}

/// Budget allocation by normalized global density of the selected seeds.
pub fn allocate_budget(scores: &[SeedScore], total: usize) -> Result<Vec<usize>> {
    let w: Vec<f64> = scores.iter().map(|s| s.p_g_norm).collect();
    allocate_by_weight(&w, total)
}

#[derive(Debug, Serialize)]
struct SeedRow {
    index: usize,
    label: usize,
    p_g_norm: f64,
    indicator_raw: f64,
    unrobustness_norm: f64,
    combined: f64,
    allocated_m: usize,
}

pub fn write_ranking_csv(scores: &[SeedScore], budget: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if scores.len() != budget.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: budget.len(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    for (s, &m) in scores.iter().zip(budget) {
        w.serialize(SeedRow {
            index: s.index,
            label: s.label,
            p_g_norm: s.p_g_norm,
            indicator_raw: s.indicator_raw,
            unrobustness_norm: s.unrobustness_norm,
            combined: s.combined,
            allocated_m: m,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct SeedRowIn {
    index: usize,
    label: usize,
    p_g_norm: f64,
    indicator_raw: f64,
    unrobustness_norm: f64,
    combined: f64,
    allocated_m: usize,
}

/// Reads a ranking written by [`write_ranking_csv`]. Log-densities are not
/// persisted and come back as NaN.
pub fn read_ranking_csv(path: impl AsRef<Path>) -> Result<(Vec<SeedScore>, Vec<usize>)> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut scores = Vec::new();
    let mut budget = Vec::new();
    for row in r.deserialize() {
        let row: SeedRowIn = row?;
        scores.push(SeedScore {
            index: row.index,
            label: row.label,
            log_density: f64::NAN,
            p_g_norm: row.p_g_norm,
            indicator_raw: row.indicator_raw,
            unrobustness_norm: row.unrobustness_norm,
            combined: row.combined,
        });
        budget.push(row.allocated_m);
    }
    Ok((scores, budget))
}
