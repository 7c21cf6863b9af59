//! Local test case generation inside the L∞ ball around a seed.
//!
//! The two-step genetic algorithm selects parents by the prediction loss
//! `F1 = J` while most of the population is still correctly classified, and
//! by `F2 = J + α·L` (loss plus perceptual closeness) once adversarial
//! examples dominate. Regular mode always uses `F2`.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, ClassifierHandle};
use crate::error::{Error, Result};
use crate::metrics::{quality_score, PerceptMetricKind};
use crate::seeds::loss_unchecked;

/// Offset added after shifting fitness by its minimum so every individual
/// keeps a non-zero selection probability.
pub const FITNESS_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaMode {
    TwoStep,
    Regular,
}

impl std::str::FromStr for GaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_step" | "two-step" => Ok(GaMode::TwoStep),
            "regular" => Ok(GaMode::Regular),
            other => Err(Error::invalid(format!("unknown GA mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// Population size `N`.
    pub population: usize,
    /// Generation limit `T`.
    pub max_iterations: usize,
    /// Weight of the perceptual term in `F2`.
    pub alpha: f64,
    pub metric: PerceptMetricKind,
    /// L∞ radius `r` in pixel units.
    pub radius: f64,
    /// Number of test cases `m` returned.
    pub outputs: usize,
    pub rng_seed: u64,
    /// Per-pixel probability of re-drawing the offset in a child.
    pub mutation_rate: f64,
    /// Plateau window `W` in generations.
    pub plateau_window: usize,
    /// Minimum improvement of the best `F2` over the window.
    pub plateau_tolerance: f64,
    pub mode: GaMode,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 1000,
            max_iterations: 500,
            alpha: 1.0,
            metric: PerceptMetricKind::Mse,
            radius: 0.1,
            outputs: 10,
            rng_seed: 0,
            mutation_rate: 0.01,
            plateau_window: 50,
            plateau_tolerance: 1e-4,
            mode: GaMode::TwoStep,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.population < 2 {
            return bad(format!("population {} must be at least 2", self.population));
        }
        if self.outputs == 0 || self.outputs > self.population {
            return bad(format!(
                "outputs m = {} must be in 1..={}",
                self.outputs, self.population
            ));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.radius > 0.0 && self.radius < 1.0) {
            return bad(format!("radius {} must lie in (0, 1)", self.radius));
        }
        if !(self.mutation_rate > 0.0 && self.mutation_rate < 1.0) {
            return bad(format!("mutation rate {} must lie in (0, 1)", self.mutation_rate));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be non-negative", self.alpha));
        }
        if self.plateau_window == 0 || !(self.plateau_tolerance >= 0.0) {
            return bad("plateau window must be positive and tolerance non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub image: Vec<f32>,
    /// Prediction loss `J`; `>= 0` marks an adversarial example.
    pub loss: f64,
    /// Perceptual closeness score `L` in `[0, 1]`.
    pub quality: f64,
    /// `‖x' − x‖∞`.
    pub linf: f64,
}

impl TestCase {
    pub fn is_ae(&self) -> bool {
        self.loss >= 0.0
    }
}

/// Per-generation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    pub max_loss: f64,
    pub mean_loss: f64,
    pub max_f2: f64,
    pub ae_proportion: f64,
    /// 1 when parents were selected by `F1`, 2 for `F2`; 0 on the final row.
    pub active_fitness: u8,
}

#[derive(Debug, Clone)]
pub struct GaOutput {
    /// Top-`m` individuals of the final population by `F2`.
    pub cases: Vec<TestCase>,
    pub trace: Vec<TraceRow>,
    pub generations: usize,
    pub converged: bool,
    /// Share of the final population with `J >= 0`.
    pub final_ae_proportion: f64,
    pub queries: u64,
}

/// Adversarial subset of `cases` and its share of all cases.
pub fn ae_filter(cases: &[TestCase]) -> (Vec<&TestCase>, f64) {
    let aes: Vec<&TestCase> = cases.iter().filter(|c| c.is_ae()).collect();
    let prop = if cases.is_empty() {
        0.0
    } else {
        aes.len() as f64 / cases.len() as f64
    };
    (aes, prop)
}

pub fn linf_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (&p, &q)| m.max((f64::from(p) - f64::from(q)).abs()))
}

struct Ball<'a> {
    seed: &'a [f32],
    lo: Vec<f32>,
    hi: Vec<f32>,
}

impl<'a> Ball<'a> {
    fn new(seed: &'a [f32], r: f64) -> Self {
        let lo = seed.iter().map(|&v| (f64::from(v) - r).max(0.0) as f32).collect();
        let hi = seed.iter().map(|&v| (f64::from(v) + r).min(1.0) as f32).collect();
        Ball { seed, lo, hi }
    }

    fn clip(&self, j: usize, v: f64) -> f32 {
        (v as f32).clamp(self.lo[j], self.hi[j])
    }
}

struct Population {
    width: usize,
    images: Vec<f32>,
    loss: Vec<f64>,
    quality: Vec<f64>,
}

impl Population {
    fn len(&self) -> usize {
        self.loss.len()
    }

    fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.width..(i + 1) * self.width]
    }

    fn f2(&self, i: usize, alpha: f64) -> f64 {
        self.loss[i] + alpha * self.quality[i]
    }

    fn ae_proportion(&self) -> f64 {
        self.loss.iter().filter(|&&l| l >= 0.0).count() as f64 / self.len() as f64
    }
}

struct Evaluator<'a> {
    h: &'a ClassifierHandle,
    seed: &'a [f32],
    label: usize,
    cfg: &'a GaConfig,
    channels: usize,
}

impl Evaluator<'_> {
    fn evaluate(&self, images: &[f32]) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = images.len() / self.seed.len();
        let probs = self.h.predict_flat(images, rows)?;
        let loss = probs.iter_rows().map(|p| loss_unchecked(p, self.label)).collect();
        let quality = images
            .chunks_exact(self.seed.len())
            .map(|img| quality_score(self.cfg.metric, self.seed, img, self.cfg.radius, self.channels))
            .collect();
        Ok((loss, quality))
    }
}

/// Runs the genetic search from seed `(x, y)`.
pub fn ga_generate(h: &ClassifierHandle, x: &[f32], y: usize, cfg: &GaConfig) -> Result<GaOutput> {
    let mut trace = Vec::new();
    ga_generate_traced(h, x, y, cfg, &mut trace)
}

/// Like [`ga_generate`] but appends trace rows to `trace` as they are
/// produced, so a partial trace survives a backend failure.
pub fn ga_generate_traced(
    h: &ClassifierHandle,
    x: &[f32],
    y: usize,
    cfg: &GaConfig,
    trace: &mut Vec<TraceRow>,
) -> Result<GaOutput> {
    cfg.validate()?;
    let width = h.input_len();
    if x.len() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            found: x.len(),
        });
    }
    let start_queries = h.query_count();
    let seed_probs = h.predict_flat(x, 1)?;
    let predicted = argmax(seed_probs.row(0));
    if predicted != y {
        return Err(Error::SeedMisclassified { label: y, predicted });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let ball = Ball::new(x, cfg.radius);
    let eval = Evaluator {
        h,
        seed: x,
        label: y,
        cfg,
        channels: h.input_shape()[0],
    };
    let n = cfg.population;
    let abort = |generation: usize, e: Error| Error::GenerationAborted {
        generation,
        source: Box::new(e),
    };

    let mut images = Vec::with_capacity(n * width);
    for _ in 0..n {
        for (j, &p) in x.iter().enumerate() {
            let d = rng.random_range(-cfg.radius..cfg.radius);
            images.push(ball.clip(j, f64::from(p) + d));
        }
    }
    let (loss, quality) = eval.evaluate(&images).map_err(|e| abort(0, e))?;
    let mut pop = Population {
        width,
        images,
        loss,
        quality,
    };

    let parent_count = n / 2;
    let child_count = n - parent_count;
    let half = width / 2;
    let mut best_f2_history = Vec::with_capacity(cfg.max_iterations + 1);
    let mut t = 0;
    let mut converged = false;

    loop {
        let max_f2 = (0..n).map(|i| pop.f2(i, cfg.alpha)).fold(f64::NEG_INFINITY, f64::max);
        best_f2_history.push(max_f2);
        if t >= cfg.plateau_window
            && max_f2 - best_f2_history[t - cfg.plateau_window] < cfg.plateau_tolerance
        {
            converged = true;
        }
        let non_ae = pop.loss.iter().filter(|&&l| l < 0.0).count();
        let use_f1 = cfg.mode == GaMode::TwoStep && 2 * non_ae > n;
        let done = t >= cfg.max_iterations || converged;
        trace.push(TraceRow {
            generation: t,
            max_loss: pop.loss.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_loss: pop.loss.iter().sum::<f64>() / n as f64,
            max_f2,
            ae_proportion: pop.ae_proportion(),
            active_fitness: if done {
                0
            } else if use_f1 {
                1
            } else {
                2
            },
        });
        if done {
            break;
        }

        let fitness: Vec<f64> = if use_f1 {
            pop.loss.clone()
        } else {
            (0..n).map(|i| pop.f2(i, cfg.alpha)).collect()
        };

        // Selection: the current best always survives, the rest by roulette.
        let min = fitness.iter().copied().fold(f64::INFINITY, f64::min);
        let elite = (0..n)
            .max_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(b.cmp(&a)))
            .expect("non-empty population");
        let weights: Vec<f64> = fitness.iter().map(|f| f - min + FITNESS_SHIFT).collect();
        let wheel = WeightedIndex::new(&weights).expect("positive weights");
        let mut parents = Vec::with_capacity(parent_count.max(1));
        parents.push(elite);
        while parents.len() < parent_count.max(1) {
            parents.push(wheel.sample(&mut rng));
        }
        parents.shuffle(&mut rng);

        // Crossover: swap exactly ⌊D/2⌋ pixel positions between paired parents.
        let mut children = Vec::with_capacity(child_count * width);
        let mut pair = 0;
        while children.len() < child_count * width {
            let a = parents[(2 * pair) % parents.len()];
            let b = parents[(2 * pair + 1) % parents.len()];
            pair += 1;
            let mut c1 = pop.image(a).to_vec();
            let mut c2 = pop.image(b).to_vec();
            for j in index::sample(&mut rng, width, half) {
                std::mem::swap(&mut c1[j], &mut c2[j]);
            }
            children.extend_from_slice(&c1);
            if children.len() < child_count * width {
                children.extend_from_slice(&c2);
            }
        }

        // Mutation: re-draw an offset in (−r, r), then clip to ball ∩ [0, 1].
        for child in children.chunks_exact_mut(width) {
            for (j, px) in child.iter_mut().enumerate() {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let d = rng.random_range(-cfg.radius..cfg.radius);
                    *px = ball.clip(j, f64::from(ball.seed[j]) + d);
                }
            }
        }

        let (child_loss, child_quality) = eval.evaluate(&children).map_err(|e| abort(t + 1, e))?;
        let mut next_images = children;
        let mut next_loss = child_loss;
        let mut next_quality = child_quality;
        for &p in &parents {
            next_images.extend_from_slice(pop.image(p));
            next_loss.push(pop.loss[p]);
            next_quality.push(pop.quality[p]);
        }
        pop = Population {
            width,
            images: next_images,
            loss: next_loss,
            quality: next_quality,
        };
        t += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pop.f2(b, cfg.alpha).total_cmp(&pop.f2(a, cfg.alpha)).then(a.cmp(&b)));
    let cases = order
        .into_iter()
        .take(cfg.outputs)
        .map(|i| TestCase {
            image: pop.image(i).to_vec(),
            loss: pop.loss[i],
            quality: pop.quality[i],
            linf: linf_distance(pop.image(i), x),
        })
        .collect();
    Ok(GaOutput {
        cases,
        trace: trace.clone(),
        generations: t,
        converged,
        final_ae_proportion: pop.ae_proportion(),
        queries: h.query_count() - start_queries,
    })
}

pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            steps: 10,
            step_size: 2.0 / 255.0,
        }
    }
}

/// Signed-gradient ascent on the prediction loss, projected onto the L∞
/// ball of radius `r` and the pixel range after every step.
pub fn pgd_baseline(
    h: &ClassifierHandle,
    x: &[f32],
    y: usize,
    r: f64,
    cfg: PgdConfig,
) -> Result<TestCase> {
    if !h.supports_gradient() {
        return Err(Error::GradientUnsupported);
    }
    if !(r > 0.0) || !(cfg.step_size > 0.0) {
        return Err(Error::invalid("PGD radius and step size must be positive"));
    }
    let ball = Ball::new(x, r);
    let mut cur = x.to_vec();
    for _ in 0..cfg.steps {
        let g = h.loss_gradient(&cur, y)?;
        for (j, (px, &gj)) in cur.iter_mut().zip(&g).enumerate() {
            let step = if gj > 0.0 {
                cfg.step_size
            } else if gj < 0.0 {
                -cfg.step_size
            } else {
                0.0
            };
            *px = ball.clip(j, f64::from(*px) + step);
        }
    }
    let probs = h.predict_flat(&cur, 1)?;
    Ok(TestCase {
        loss: loss_unchecked(probs.row(0), y),
        quality: quality_score(PerceptMetricKind::Mse, x, &cur, r, h.input_shape()[0]),
        linf: linf_distance(&cur, x),
        image: cur,
    })
}
