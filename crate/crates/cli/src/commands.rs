use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::Context as _;
use hda_core::classifier::{load_manifest, protocol, ServerOptions};
use hda_core::dataset::{assemble_dataset, LatentSet};
use hda_core::ga::{ga_generate_traced, pgd_baseline, write_trace_csv, PgdConfig};
use hda_core::latent::KdeModel;
use hda_core::robustness::{
    build_report, empirical_global_robustness, mc_local_robustness, per_seed_accuracy, render_text,
    write_cases_csv, FeatureSource, ReportOptions, SeedOutcome,
};
use hda_core::seeds::{allocate_budget, r_separation, rank_seeds, write_ranking_csv, DensityScale, SepPool};
use hda_core::synthetic::{self, SyntheticSpec, TrainConfig};
use hda_core::{
    load_container, save_container, ClassifierHandle, Indicator, LabeledDataset, PcaModel, SeedScore, Tensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, LatentSource, Loaded, RadiusPolicy};
use crate::{CliError, Common};

type CmdResult = Result<(), CliError>;

const RSEP_FILE: &str = "rsep.json";
const LATENTS_FILE: &str = "latents.hdat";
const PCA_STEM: &str = "pca";
const KDE_CENTERS: &str = "kde_centers.hdat";
const KDE_BANDWIDTHS: &str = "kde_bandwidths.hdat";
const SEEDS_FILE: &str = "seeds.json";
const OUTCOMES_FILE: &str = "outcomes.json";

/// State threaded through one command.
pub struct Ctx {
    pub loaded: Loaded,
    outputs: Vec<String>,
    rng_seeds: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    config_path: Option<String>,
    config_dir: String,
    config: String,
    rng_seeds: &'a BTreeMap<String, u64>,
    outputs: &'a [String],
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.loaded.out_dir().join(name)
    }

    fn record(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    fn seed(&mut self, name: impl Into<String>, value: u64) {
        self.rng_seeds.insert(name.into(), value);
    }

    fn run_seed(&self) -> u64 {
        self.loaded.config.run.seed
    }

    /// An upstream artifact in the output directory.
    fn require(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.out(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Validation(format!(
                "missing {}; run `hda {producer}` first",
                p.display()
            )))
        }
    }

    fn dataset(&self) -> Result<LabeledDataset, CliError> {
        let d = &self.loaded.config.data;
        let (Some(images), Some(labels)) = (&d.images, &d.labels) else {
            return Err(CliError::Validation("data.images and data.labels are required".into()));
        };
        let images = load_container(self.loaded.resolve(images))?;
        Ok(assemble_dataset(images, self.loaded.resolve(labels), d.classes)?)
    }

    fn open_model(&self, model: Option<&Path>, command: Option<&str>, ds: &LabeledDataset) -> Result<ClassifierHandle, CliError> {
        let b = &self.loaded.config.backend;
        let h = match (model, command) {
            (Some(m), _) => ClassifierHandle::builtin(load_manifest(self.loaded.resolve(m))?),
            (None, Some(cmd)) => {
                let mut opts = ServerOptions::default();
                if let Some(t) = b.timeout_secs {
                    opts.request_timeout = Duration::from_secs(t);
                }
                ClassifierHandle::spawn_server_with(cmd, opts)?
            }
            (None, None) => {
                return Err(CliError::Validation("backend.model or backend.command is required".into()))
            }
        };
        let h = match b.batch_cap {
            Some(c) => h.with_batch_cap(c),
            None => h,
        };
        if h.input_shape() != ds.image_shape() || h.class_count() != ds.class_count() {
            return Err(CliError::Validation(format!(
                "model expects {:?} inputs and {} classes; dataset has {:?} and {}",
                h.input_shape(),
                h.class_count(),
                ds.image_shape(),
                ds.class_count()
            )));
        }
        Ok(h)
    }

    fn model(&self, ds: &LabeledDataset) -> Result<ClassifierHandle, CliError> {
        let b = &self.loaded.config.backend;
        self.open_model(b.model.as_deref(), b.command.as_deref(), ds)
    }

    fn radius(&self, ds: &LabeledDataset) -> Result<f64, CliError> {
        let r = &self.loaded.config.radius;
        match r.policy {
            RadiusPolicy::Fixed => Ok(r.value),
            RadiusPolicy::Rsep => {
                let path = self.out(RSEP_FILE);
                let sep: hda_core::seeds::RSeparation = if path.exists() {
                    read_json(&path)?
                } else {
                    r_separation(ds, r.sample_cap, self.run_seed())?
                };
                if !(sep.r > 0.0 && sep.r < 1.0) {
                    return Err(CliError::Validation(format!("r-separation {} is not a usable radius", sep.r)));
                }
                Ok(sep.r)
            }
        }
    }

    fn latent_set(&self, ds: &LabeledDataset) -> Result<LatentSet, CliError> {
        let l = &self.loaded.config.latent;
        let (Some(means), Some(stds)) = (&l.means, &l.stds) else {
            return Err(CliError::Validation(
                "latent.source = \"external\" needs latent.means and latent.stds".into(),
            ));
        };
        let means = load_container(self.loaded.resolve(means))?;
        let stds = load_container(self.loaded.resolve(stds))?;
        Ok(LatentSet::aligned(means, stds, ds.len())?)
    }

    /// Flat `[n, d]` latent positions of the dataset.
    fn latents(&self, ds: &LabeledDataset) -> Result<(Vec<f64>, usize), CliError> {
        match self.loaded.config.latent.source {
            LatentSource::Pca => {
                let t = load_container(self.require(LATENTS_FILE, "pca-fit")?)?;
                if t.rank() != 2 || t.shape()[0] != ds.len() {
                    return Err(CliError::Validation(format!(
                        "{LATENTS_FILE} has shape {:?}; expected [{}, d]",
                        t.shape(),
                        ds.len()
                    )));
                }
                let d = t.shape()[1];
                Ok((t.to_f64(), d))
            }
            LatentSource::External => {
                let set = self.latent_set(ds)?;
                Ok((set.means().to_f64(), set.dim()))
            }
        }
    }

    fn pca(&self) -> Result<Option<PcaModel>, CliError> {
        match self.loaded.config.latent.source {
            LatentSource::Pca => {
                self.require(&format!("{PCA_STEM}_mean.hdat"), "pca-fit")?;
                Ok(Some(PcaModel::load(self.loaded.out_dir(), PCA_STEM)?))
            }
            LatentSource::External => Ok(None),
        }
    }

    fn kde(&self) -> Result<KdeModel, CliError> {
        let c = load_container(self.require(KDE_CENTERS, "kde-fit")?)?;
        let b = load_container(self.require(KDE_BANDWIDTHS, "kde-fit")?)?;
        if c.rank() != 2 {
            return Err(CliError::Validation(format!("{KDE_CENTERS} must be [n, d]")));
        }
        Ok(KdeModel::new(c.to_f64(), b.to_f64(), c.shape()[1])?)
    }

    fn seeds_file(&self) -> Result<SeedsFile, CliError> {
        read_json(&self.require(SEEDS_FILE, "seeds")?)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CmdResult {
        let path = self.out(name);
        let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        self.record(name);
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> CmdResult {
        let path = self.out(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.record(name);
        Ok(())
    }

    fn save_tensor(&mut self, name: &str, t: &Tensor) -> CmdResult {
        save_container(t, self.out(name))?;
        self.record(name);
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Loads the config, runs `f` and writes `<name>.manifest.json`.
pub fn run(name: &str, common: &Common, f: fn(&mut Ctx) -> CmdResult) -> CmdResult {
    let loaded = Loaded::load(common.config.as_deref(), &common.overrides())?;
    fs::create_dir_all(loaded.out_dir())
        .with_context(|| format!("creating {}", loaded.out_dir().display()))?;
    let mut ctx = Ctx {
        loaded,
        outputs: Vec::new(),
        rng_seeds: BTreeMap::new(),
    };
    ctx.seed("run", ctx.run_seed());
    f(&mut ctx)?;
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: ctx.loaded.hash(),
        config_path: ctx.loaded.source.as_ref().map(|p| p.display().to_string()),
        config_dir: std::path::absolute(&ctx.loaded.base)
            .unwrap_or_else(|_| ctx.loaded.base.clone())
            .display()
            .to_string(),
        config: ctx.loaded.canonical(),
        rng_seeds: &ctx.rng_seeds,
        outputs: &ctx.outputs,
    };
    let path = ctx.out(&format!("{name}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn synth(out: &Path, samples: usize, seed: u64) -> CmdResult {
    if samples < 4 {
        return Err(CliError::Validation("--samples must be at least 4".into()));
    }
    let spec = SyntheticSpec {
        samples,
        rng_seed: seed,
        ..Default::default()
    };
    let bundle = synthetic::write_bundle(out, &spec, &TrainConfig::default())?;
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let config = format!(
        "[data]\nimages = \"{}\"\nlabels = \"{}\"\nclasses = {}\n\n[backend]\nmodel = \"{}\"\n\n\
         [latent]\nsource = \"pca\"\ndim = {}\n\n[radius]\npolicy = \"fixed\"\nvalue = 0.1\n\n\
         [seeds]\nindicator = \"grad\"\nk = 10\n\n[run]\nseed = 0\nout = \"run\"\n",
        name(&bundle.images),
        name(&bundle.labels),
        synthetic::CLASSES,
        name(&bundle.model),
        spec.latent_dim,
    );
    let path = out.join("hda.toml");
    fs::write(&path, config).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn serve(model: &Path) -> CmdResult {
    let net = load_manifest(model)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    protocol::serve(&net, stdin.lock(), BufWriter::new(stdout.lock())).context("serving")?;
    Ok(())
}

pub fn rsep(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let seed = ctx.run_seed();
    ctx.seed("subsample", seed);
    let sep = r_separation(&ds, ctx.loaded.config.radius.sample_cap, seed)?;
    ctx.write_json(RSEP_FILE, &sep)?;
    println!("r-separation {:.6} (min distance {:.6}, {} pairs)", sep.r, sep.min_distance, sep.pairs_examined);
    Ok(())
}

pub fn pca_fit(ctx: &mut Ctx) -> CmdResult {
    if ctx.loaded.config.latent.source != LatentSource::Pca {
        return Err(CliError::Validation("pca-fit needs latent.source = \"pca\"".into()));
    }
    let ds = ctx.dataset()?;
    let d = ctx.loaded.config.latent.dim;
    if d > ds.pixels_per_image() {
        return Err(CliError::Validation(format!(
            "latent.dim = {d} exceeds the {} pixels per image",
            ds.pixels_per_image()
        )));
    }
    let pca = PcaModel::fit_tensor(ds.images(), d)?;
    pca.save(ctx.loaded.out_dir(), PCA_STEM)?;
    ctx.record(format!("{PCA_STEM}_mean.hdat"));
    ctx.record(format!("{PCA_STEM}_components.hdat"));
    let z = pca.transform(&ds.images().to_f64())?;
    ctx.save_tensor(LATENTS_FILE, &Tensor::from_f64(vec![ds.len(), d], &z)?)?;
    println!("PCA {} -> {d}", pca.input_dim());
    Ok(())
}

pub fn kde_fit(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let kde = match ctx.loaded.config.latent.source {
        LatentSource::Pca => {
            let (z, d) = ctx.latents(&ds)?;
            KdeModel::fit_scott(&z, d)?
        }
        LatentSource::External => KdeModel::fit(&ctx.latent_set(&ds)?)?,
    };
    let (n, d) = (kde.len(), kde.dim());
    ctx.save_tensor(KDE_CENTERS, &Tensor::from_f64(vec![n, d], kde.centers())?)?;
    ctx.save_tensor(KDE_BANDWIDTHS, &Tensor::from_f64(vec![n, d], kde.bandwidths())?)?;
    println!("KDE over {n} latents of dimension {d}");
    Ok(())
}

/// Ranking state handed from `seeds` to the downstream commands.
#[derive(Debug, Serialize, Deserialize)]
struct SeedsFile {
    indicator: Indicator,
    scores: Vec<SeedScore>,
    budget: Vec<usize>,
    scale: DensityScale,
    candidates: usize,
    misclassified: usize,
}

pub fn seeds(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let c = &ctx.loaded.config.seeds;
    let (k, indicator) = (c.k, c.indicator);
    if k > ds.len() {
        return Err(CliError::Validation(format!(
            "seeds.k = {k} exceeds the dataset size {}",
            ds.len()
        )));
    }
    let total = ctx.loaded.budget();
    let h = ctx.model(&ds)?;
    let (z, _) = ctx.latents(&ds)?;
    let kde = ctx.kde()?;
    let pool = match indicator {
        Indicator::Sep => Some(SepPool::new(&h, &ds)?),
        Indicator::Grad => None,
    };
    let ranking = rank_seeds(&h, &ds, &z, &kde, indicator, pool.as_ref(), k)?;
    let budget = allocate_budget(&ranking.scores, total)?;
    write_ranking_csv(&ranking.scores, &budget, ctx.out("ranking.csv"))?;
    ctx.record("ranking.csv");
    let file = SeedsFile {
        indicator,
        scores: ranking.scores,
        budget,
        scale: ranking.scale,
        candidates: ranking.candidates,
        misclassified: ranking.misclassified,
    };
    ctx.write_json(SEEDS_FILE, &file)?;
    println!(
        "selected {k} of {} correctly classified inputs ({} misclassified); budget {total}",
        file.candidates, file.misclassified
    );
    Ok(())
}

fn report_for(
    ctx: &Ctx,
    method: &str,
    radius: f64,
    outcomes: &[SeedOutcome],
    seeds: &SeedsFile,
    wall: f64,
) -> Result<hda_core::CampaignReport, CliError> {
    let pca = ctx.pca()?;
    let kde = ctx.kde()?;
    let features = match &pca {
        Some(p) => FeatureSource::Pca(p),
        None => FeatureSource::None,
    };
    let density = pca.as_ref().map(|_| (&kde, &seeds.scale));
    Ok(build_report(
        outcomes,
        &ReportOptions {
            method,
            radius,
            features,
            density,
            per_seed_accuracy: None,
            wall_clock_seconds: wall,
        },
    )?)
}

fn stack_cases(outcomes: &[SeedOutcome], shape: [usize; 3]) -> Result<Tensor, CliError> {
    let rows: Vec<&[f32]> = outcomes
        .iter()
        .flat_map(|o| o.cases.iter().map(|c| c.image.as_slice()))
        .collect();
    if rows.is_empty() {
        return Ok(Tensor::zeros(vec![0, shape[0], shape[1], shape[2]]));
    }
    Ok(Tensor::stack(&shape, &rows)?)
}

pub fn gen(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let seeds = ctx.seeds_file()?;
    let h = ctx.model(&ds)?;
    let radius = ctx.radius(&ds)?;
    let traces = ctx.out("traces");
    fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;
    let base = ctx.run_seed();
    for (i, s) in seeds.scores.iter().enumerate() {
        ctx.seed(format!("ga.seed_{}", s.index), derive_seed(base, i as u64));
    }
    let start = Instant::now();
    let results: Vec<_> = seeds
        .scores
        .par_iter()
        .zip(&seeds.budget)
        .enumerate()
        .map(|(i, (s, &m))| {
            let cfg = ctx.loaded.ga_config(radius, m, derive_seed(base, i as u64));
            let x = ds.image(s.index);
            let t0 = Instant::now();
            let mut trace = Vec::new();
            let out = ga_generate_traced(&h, x, s.label, &cfg, &mut trace);
            (i, s, out, trace, t0.elapsed().as_secs_f64())
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let mut outcomes = Vec::with_capacity(results.len());
    for (_, s, out, trace, secs) in results {
        let name = format!("traces/seed_{}.csv", s.index);
        write_trace_csv(&trace, ctx.out(&name))?;
        ctx.record(name);
        let out = out?;
        outcomes.push(SeedOutcome {
            seed_index: s.index,
            label: s.label,
            seed_image: ds.image(s.index).to_vec(),
            p_g_norm: s.p_g_norm,
            log_density: s.log_density,
            cases: out.cases,
            queries: out.queries,
            seconds: secs,
        });
    }
    write_cases_csv(&outcomes, ctx.out("cases.csv"))?;
    ctx.record("cases.csv");
    ctx.save_tensor("cases.hdat", &stack_cases(&outcomes, ds.image_shape())?)?;
    ctx.write_json(OUTCOMES_FILE, &outcomes)?;
    let report = report_for(ctx, "hda", radius, &outcomes, &seeds, wall)?;
    ctx.write_json("report.json", &report)?;
    let text = render_text(&report);
    ctx.write_text("report.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn pgd(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let seeds = ctx.seeds_file()?;
    let h = ctx.model(&ds)?;
    let radius = ctx.radius(&ds)?;
    let p = &ctx.loaded.config.pgd;
    let cfg = PgdConfig {
        steps: p.steps,
        step_size: p.step_size,
    };
    let start = Instant::now();
    let outcomes = seeds
        .scores
        .par_iter()
        .map(|s| {
            let t0 = Instant::now();
            let before = h.gradient_query_count();
            let case = pgd_baseline(&h, ds.image(s.index), s.label, radius, cfg)?;
            Ok(SeedOutcome {
                seed_index: s.index,
                label: s.label,
                seed_image: ds.image(s.index).to_vec(),
                p_g_norm: s.p_g_norm,
                log_density: s.log_density,
                cases: vec![case],
                queries: h.gradient_query_count().saturating_sub(before),
                seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>, hda_core::Error>>()?;
    let wall = start.elapsed().as_secs_f64();
    write_cases_csv(&outcomes, ctx.out("pgd_cases.csv"))?;
    ctx.record("pgd_cases.csv");
    ctx.save_tensor("pgd_cases.hdat", &stack_cases(&outcomes, ds.image_shape())?)?;
    let report = report_for(ctx, "pgd", radius, &outcomes, &seeds, wall)?;
    ctx.write_json("pgd_report.json", &report)?;
    let text = render_text(&report);
    ctx.write_text("pgd_report.txt", &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct RobustRow {
    seed_index: usize,
    label: usize,
    estimate: f64,
    samples: usize,
    log_complement: f64,
    rng_seed: u64,
}

pub fn robust(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let seeds = ctx.seeds_file()?;
    let h = ctx.model(&ds)?;
    let radius = ctx.radius(&ds)?;
    let n = ctx.loaded.config.robust.samples;
    let base = ctx.run_seed();
    for (i, s) in seeds.scores.iter().enumerate() {
        ctx.seed(format!("mc.seed_{}", s.index), derive_seed(base, i as u64));
    }
    let rows = seeds
        .scores
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let est = mc_local_robustness(&h, ds.image(s.index), s.label, radius, n, derive_seed(base, i as u64))?;
            Ok(RobustRow {
                seed_index: s.index,
                label: s.label,
                estimate: est.estimate,
                samples: est.samples,
                log_complement: est.log_complement,
                rng_seed: est.rng_seed,
            })
        })
        .collect::<Result<Vec<_>, hda_core::Error>>()?;
    let path = ctx.out("robustness.csv");
    let mut w = csv::Writer::from_path(&path).map_err(hda_core::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(hda_core::Error::from)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    ctx.record("robustness.csv");
    let mean = rows.iter().map(|r| r.estimate).sum::<f64>() / rows.len().max(1) as f64;
    println!("mean local robustness {mean:.4} over {} seeds (r = {radius})", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    seeds: usize,
    aes: usize,
    /// Share of all AEs the evaluation model labels as their seed label.
    ae_accuracy: Option<f64>,
    per_seed_accuracy: Vec<f64>,
    empirical_global_robustness: f64,
}

pub fn eval(ctx: &mut Ctx) -> CmdResult {
    let ds = ctx.dataset()?;
    let outcomes: Vec<SeedOutcome> = read_json(&ctx.require(OUTCOMES_FILE, "gen")?)?;
    let e = &ctx.loaded.config.eval;
    let h = if e.model.is_some() || e.command.is_some() {
        ctx.open_model(e.model.as_deref(), e.command.as_deref(), &ds)?
    } else {
        ctx.model(&ds)?
    };
    let acc = per_seed_accuracy(&h, &outcomes)?;
    let mut weights: Vec<f64> = outcomes.iter().map(|o| o.p_g_norm).collect();
    if !(weights.iter().sum::<f64>() > 0.0) {
        weights = vec![1.0; outcomes.len()];
    }
    let rg = empirical_global_robustness(&acc, &weights)?;
    let mut aes = 0usize;
    let mut hits = 0usize;
    for o in &outcomes {
        let adv: Vec<&[f32]> = o.cases.iter().filter(|c| c.is_ae()).map(|c| c.image.as_slice()).collect();
        if adv.is_empty() {
            continue;
        }
        let labels = h.predict_label(&Tensor::stack(&ds.image_shape(), &adv)?)?;
        aes += adv.len();
        hits += labels.iter().filter(|&&l| l == o.label).count();
    }
    let summary = EvalSummary {
        seeds: outcomes.len(),
        aes,
        ae_accuracy: (aes > 0).then(|| hits as f64 / aes as f64),
        per_seed_accuracy: acc,
        empirical_global_robustness: rg,
    };
    ctx.write_json("eval.json", &summary)?;
    println!("empirical global robustness {rg:.4} over {} AEs", aes);
    Ok(())
}

pub fn sample(ctx: &mut Ctx) -> CmdResult {
    let kde = ctx.kde()?;
    let count = ctx.loaded.config.sample.count;
    let seed = derive_seed(ctx.run_seed(), u64::MAX);
    ctx.seed("sample", seed);
    let z = kde.sample(count, seed)?;
    ctx.save_tensor("sample_latents.hdat", &Tensor::from_f64(vec![count, kde.dim()], &z)?)?;
    if let Some(pca) = ctx.pca()? {
        let ds = ctx.dataset()?;
        let mut pixels = pca.inverse(&z)?;
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        let [c, hh, w] = ds.image_shape();
        ctx.save_tensor("samples.hdat", &Tensor::from_f64(vec![count, c, hh, w], &pixels)?)?;
    }
    println!("drew {count} samples");
    Ok(())
}
