//! Pass/fail checks shared by the oracle tests and the acceptance runner.
//! Each returns a one-line summary on success and a reason on failure.

use std::time::Instant;

use hda_core::classifier::{argmax, ClassifierHandle};
use hda_core::ga::{ga_generate, pgd_baseline, GaConfig, GaMode, PgdConfig, TestCase};
use hda_core::latent::{KdeModel, PcaModel};
use hda_core::metrics::{fid, mse, psnr, ssim, PSNR_CAP_DB};
use hda_core::robustness::{mc_local_robustness, mc_outcomes};
use hda_core::seeds::{allocate_by_weight, indicator_grad, rank_seeds, Indicator, SepPool};
use hda_core::stats::pearson;
use hda_core::LabeledDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f32> = (0..3 * 64).map(|_| rng.random()).collect();
    let m = mse(&x, &x).map_err(|e| e.to_string())?;
    let p = psnr(&x, &x).map_err(|e| e.to_string())?;
    let s = ssim(&x, &x, 3).map_err(|e| e.to_string())?;
    ensure(m == 0.0, || format!("mse(x, x) = {m}"))?;
    ensure(p == PSNR_CAP_DB, || format!("psnr(x, x) = {p}"))?;
    ensure((s - 1.0).abs() < 1e-12, || format!("ssim(x, x) = {s}"))?;
    Ok("mse 0, psnr cap, ssim 1".into())
}

pub fn fid_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 5;
    let a: Vec<f64> = (0..200 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let self_fid = fid(&a, &a, dim).map_err(|e| e.to_string())?;
    ensure(self_fid.abs() < 1e-9, || format!("FID(a, a) = {self_fid}"))?;
    let delta = [0.3, -1.2, 0.0, 2.0, 0.5];
    let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + delta[i % dim]).collect();
    let shifted = fid(&a, &b, dim).map_err(|e| e.to_string())?;
    let expect: f64 = delta.iter().map(|d| d * d).sum();
    ensure((shifted - expect).abs() <= 1e-6, || {
        format!("mean-shift FID {shifted} vs ‖δ‖² {expect}")
    })?;
    Ok(format!("self 0, shift {shifted:.9} = {expect}"))
}

pub fn kde_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for &(n, dim) in &[(1usize, 1usize), (17, 3), (100, 8)] {
        let centers: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bw: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.2..1.5)).collect();
        let kde = KdeModel::new(centers.clone(), bw.clone(), dim).map_err(|e| e.to_string())?;
        for _ in 0..25 {
            let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let want = brute_kde(&centers, &bw, dim, &z);
            let got = kde.density(&z).map_err(|e| e.to_string())?;
            let rel = ((got - want) / want).abs();
            worst = worst.max(rel);
        }
    }
    ensure(worst <= 1e-9, || format!("KDE relative error {worst:e}"))?;
    Ok(format!("max rel err {worst:.1e}"))
}

pub fn pca_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Exact rank-3 affine data in 64 dimensions.
    let (n, big_d, d) = (80, 64, 3);
    let basis: Vec<Vec<f64>> = (0..d).map(|_| (0..big_d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let offset: Vec<f64> = (0..big_d).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut data = Vec::with_capacity(n * big_d);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for p in 0..big_d {
            data.push(offset[p] + (0..d).map(|k| z[k] * basis[k][p]).sum::<f64>());
        }
    }
    let pca = PcaModel::fit(&data, n, big_d, d).map_err(|e| e.to_string())?;
    let loss = pca.reconstruction_mse(&data).map_err(|e| e.to_string())?;
    ensure(loss <= 1e-8, || format!("rank-{d} reconstruction loss {loss:e}"))?;

    // Full-rank data against Jacobi eigenvectors of the covariance.
    let (n, big_d, d) = (60, 6, 3);
    let data: Vec<f64> = (0..n * big_d)
        .map(|i| rng.random_range(-1.0..1.0) * (1.0 + (i % big_d) as f64))
        .collect();
    let pca = PcaModel::fit(&data, n, big_d, d).map_err(|e| e.to_string())?;
    let (values, vectors) = jacobi_eigen(covariance(&data, big_d));
    for k in 0..d {
        let dot: f64 = pca.component(k).iter().zip(&vectors[k]).map(|(a, b)| a * b).sum();
        ensure((dot.abs() - 1.0).abs() < 1e-8, || format!("component {k} alignment {dot}"))?;
    }
    let want: f64 = values[d..].iter().sum::<f64>() / big_d as f64;
    let got = pca.reconstruction_mse(&data).map_err(|e| e.to_string())?;
    ensure((got - want).abs() < 1e-10, || format!("residual {got} vs trailing eigenvalues {want}"))?;
    Ok(format!("rank-d loss {loss:.1e}, Jacobi agreement"))
}

pub fn gradient_finite_differences() -> Check {
    let mut worst: f64 = 0.0;
    for (case, layers) in [vec![16, 3], vec![16, 8, 4], vec![64, 12, 6, 3]].iter().enumerate() {
        let side = (layers[0] as f64).sqrt() as usize;
        let net = random_net(layers, side, 10 + case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(20 + case as u64);
        for y in 0..*layers.last().unwrap() {
            let x: Vec<f64> = (0..layers[0]).map(|_| rng.random_range(0.0..1.0)).collect();
            let (_, g) = net.loss_and_gradient(&x, y);
            let fd = fd_gradient(&net, &x, y, 1e-6);
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(num / den);
        }
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;
    Ok(format!("max rel err {worst:.1e}"))
}

/// Criterion 1.
pub fn oracle_suite() -> Check {
    let start = Instant::now();
    let parts = [
        metric_identities()?,
        fid_oracles()?,
        kde_brute_force()?,
        pca_oracles()?,
        gradient_finite_differences()?,
    ];
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("oracle suite took {secs:.1}s"))?;
    Ok(format!("{} ({secs:.2}s)", parts.join("; ")))
}

fn correct_indices(h: &ClassifierHandle, ds: &LabeledDataset) -> Vec<usize> {
    let pred = h.predict_label(ds.images()).expect("predict");
    (0..ds.len()).filter(|&i| pred[i] == ds.label(i)).collect()
}

fn case_bytes(cases: &[TestCase]) -> Vec<u8> {
    let mut out = Vec::new();
    for c in cases {
        for v in &c.image {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.loss.to_le_bytes());
        out.extend_from_slice(&c.quality.to_le_bytes());
    }
    out
}

/// Criterion 2.
pub fn containment_and_determinism(desk: &Desk) -> Check {
    let start = Instant::now();
    let ds = &desk.data.dataset;
    let r = 0.1;
    let seeds: Vec<usize> = correct_indices(&desk.h, ds).into_iter().take(20).collect();
    let run = || -> Result<(Vec<u8>, usize), String> {
        let mut bytes = Vec::new();
        let mut count = 0;
        for &s in &seeds {
            let cfg = GaConfig {
                outputs: 500,
                radius: r,
                rng_seed: s as u64,
                ..Default::default()
            };
            let x = ds.image(s);
            let out = ga_generate(&desk.h, x, ds.label(s), &cfg).map_err(|e| e.to_string())?;
            for c in &out.cases {
                let linf = c.image.iter().zip(x).map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs()).fold(0.0, f64::max);
                ensure(linf <= r + 1e-6, || format!("seed {s}: ‖x′−x‖∞ = {linf}"))?;
                ensure(c.image.iter().all(|p| (0.0..=1.0).contains(p)), || format!("seed {s}: pixel out of range"))?;
            }
            count += out.cases.len();
            bytes.extend(case_bytes(&out.cases));
        }
        Ok((bytes, count))
    };
    let (first, count) = run()?;
    let (second, _) = run()?;
    ensure(count == 10_000, || format!("{count} cases generated"))?;
    ensure(first == second, || "reruns differ".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{count} cases in ball ∩ [0,1], reruns byte-identical ({secs:.1}s)"))
}

/// Confidently classified seeds (`p_y ≥ 0.9999`) that are robust to random
/// noise yet whose ball holds an AE.
pub fn contested_seeds(desk: &Desk, r: f64, count: usize) -> Vec<usize> {
    let ds = &desk.data.dataset;
    let probs = desk.h.predict_probs(ds.images()).expect("predict");
    let witness = PgdConfig {
        steps: 20,
        step_size: r / 10.0,
    };
    correct_indices(&desk.h, ds)
        .into_iter()
        .filter(|&i| {
            let (x, y) = (ds.image(i), ds.label(i));
            probs.row(i)[y] >= 0.9999
                && mc_local_robustness(&desk.h, x, y, r, 2000, i as u64).expect("mc").estimate == 1.0
                && pgd_baseline(&desk.h, x, y, r, witness).expect("pgd").is_ae()
        })
        .take(count)
        .collect()
}

/// Criterion 3.
pub fn two_step_vs_regular(desk: &Desk) -> Check {
    let start = Instant::now();
    let ds = &desk.data.dataset;
    let seeds = contested_seeds(desk, 0.1, 10);
    ensure(seeds.len() == 10, || format!("only {} contested seeds", seeds.len()))?;
    let mean_prop = |mode: GaMode, alpha: f64| -> Result<f64, String> {
        let mut total = 0.0;
        for &s in &seeds {
            let cfg = GaConfig {
                alpha,
                mode,
                rng_seed: s as u64,
                ..Default::default()
            };
            total += ga_generate(&desk.h, ds.image(s), ds.label(s), &cfg)
                .map_err(|e| e.to_string())?
                .final_ae_proportion;
        }
        Ok(total / seeds.len() as f64)
    };
    let mut parts = Vec::new();
    for alpha in [0.5, 1.0, 1.5, 2.0] {
        let p = mean_prop(GaMode::TwoStep, alpha)?;
        ensure(p >= 0.5, || format!("two-step AE proportion {p:.3} at α = {alpha}"))?;
        parts.push(format!("α={alpha}: {p:.2}"));
    }
    let regular = mean_prop(GaMode::Regular, 2.0)?;
    ensure(regular < 0.1, || format!("regular AE proportion {regular:.3} at α = 2"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, || format!("took {secs:.1}s"))?;
    Ok(format!("two-step {} | regular α=2: {regular:.2} ({secs:.1}s)", parts.join(", ")))
}

/// Criterion 4.
pub fn indicator_correlation(desk: &Desk) -> Check {
    let start = Instant::now();
    let ds = &desk.data.dataset;
    let pool = SepPool::new(&desk.h, ds).map_err(|e| e.to_string())?;
    let probs = desk.h.predict_probs(ds.images()).map_err(|e| e.to_string())?;
    let seeds: Vec<usize> = correct_indices(&desk.h, ds).into_iter().take(250).collect();
    let (mut grad, mut sep, mut logc) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &seeds {
        let (x, y) = (ds.image(i), ds.label(i));
        grad.push(indicator_grad(&desk.h, x, y).map_err(|e| e.to_string())?);
        sep.push(pool.separation(probs.row(i), y).map_err(|e| e.to_string())?);
        logc.push(
            mc_local_robustness(&desk.h, x, y, 0.1, 2000, i as u64)
                .map_err(|e| e.to_string())?
                .log_complement,
        );
    }
    let pg = pearson(&grad, &logc);
    let ps = pearson(&sep, &logc);
    ensure(pg >= 0.3, || format!("Pearson(S_grad, log(1−R)) = {pg:.3}"))?;
    ensure(ps <= -0.3, || format!("Pearson(S_sep, log(1−R)) = {ps:.3}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 900.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} seeds: S_grad {pg:+.3}, S_sep {ps:+.3} ({secs:.1}s)",
        seeds.len()
    ))
}

/// Criterion 5.
pub fn kde_fidelity() -> Check {
    let start = Instant::now();
    let spec = SyntheticSpec::default();
    let train = generate(&spec).map_err(|e| e.to_string())?;
    let held = generate(&SyntheticSpec { rng_seed: spec.rng_seed + 1000, ..spec }).map_err(|e| e.to_string())?;
    let dim = 4;
    let pca = PcaModel::fit_tensor(&train.dataset.flattened(), dim).map_err(|e| e.to_string())?;
    let z_train = pca.transform(&train.dataset.images().to_f64()).map_err(|e| e.to_string())?;
    let z_held = pca.transform(&held.dataset.images().to_f64()).map_err(|e| e.to_string())?;
    let kde = KdeModel::fit_scott(&z_train, dim).map_err(|e| e.to_string())?;
    let samples = kde.sample(1000, 5).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lo: Vec<f64> = (0..dim).map(|j| z_train.iter().skip(j).step_by(dim).copied().fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..dim).map(|j| z_train.iter().skip(j).step_by(dim).copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let uniform: Vec<f64> = (0..1000 * dim).map(|i| rng.random_range(lo[i % dim]..hi[i % dim])).collect();

    let f_kde = fid(&samples, &z_held, dim).map_err(|e| e.to_string())?;
    let f_box = fid(&uniform, &z_held, dim).map_err(|e| e.to_string())?;
    ensure(f_kde * 5.0 <= f_box, || format!("KDE FID {f_kde:.4} vs uniform {f_box:.4}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("KDE FID {f_kde:.4} vs uniform-box {f_box:.4} ({:.1}×, {secs:.1}s)", f_box / f_kde))
}

/// Criterion 6.
pub fn perceptual_advantage(desk: &Desk) -> Check {
    let start = Instant::now();
    let ds = &desk.data.dataset;
    let dim = 4;
    let pca = PcaModel::fit_tensor(&ds.flattened(), dim).map_err(|e| e.to_string())?;
    let latents = pca.transform(&ds.images().to_f64()).map_err(|e| e.to_string())?;
    let kde = KdeModel::fit_scott(&latents, dim).map_err(|e| e.to_string())?;
    let ranking = rank_seeds(&desk.h, ds, &latents, &kde, Indicator::Grad, None, 50).map_err(|e| e.to_string())?;
    let (mut seed_f, mut hda_f, mut pgd_f) = (Vec::new(), Vec::new(), Vec::new());
    for s in &ranking.scores {
        let (x, y) = (ds.image(s.index), s.label);
        seed_f.extend(pca.embed_f32(x).map_err(|e| e.to_string())?);
        let cfg = GaConfig {
            alpha: 1.0,
            rng_seed: s.index as u64,
            ..Default::default()
        };
        let out = ga_generate(&desk.h, x, y, &cfg).map_err(|e| e.to_string())?;
        for c in out.cases.iter().filter(|c| c.is_ae()) {
            hda_f.extend(pca.embed_f32(&c.image).map_err(|e| e.to_string())?);
        }
        let p = pgd_baseline(&desk.h, x, y, cfg.radius, PgdConfig::default()).map_err(|e| e.to_string())?;
        if p.is_ae() {
            pgd_f.extend(pca.embed_f32(&p.image).map_err(|e| e.to_string())?);
        }
    }
    let f_hda = fid(&seed_f, &hda_f, dim).map_err(|e| e.to_string())?;
    let f_pgd = fid(&seed_f, &pgd_f, dim).map_err(|e| e.to_string())?;
    ensure(f_hda <= 0.5 * f_pgd, || format!("HDA FID {f_hda:.4} vs PGD {f_pgd:.4}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 900.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "50 seeds: HDA FID {f_hda:.4} ({} AEs) vs PGD {f_pgd:.4} ({} AEs) ({secs:.1}s)",
        hda_f.len() / dim,
        pgd_f.len() / dim
    ))
}

/// Ranking recomputed from scratch: textbook KDE pdf, direct indicator
/// values, min-max scaling and a stable sort.
pub fn brute_force_order(desk: &Desk, ds: &LabeledDataset, latents: &[f64], kde: &KdeModel, indicator: Indicator, pool: &LabeledDataset) -> Vec<usize> {
    let net = desk.h.builtin_net().expect("builtin");
    let dim = kde.dim();
    let mut rows = Vec::new();
    for i in 0..ds.len() {
        let x = pixels_f64(ds.image(i));
        let p = net.probs(&x);
        let y = ds.label(i);
        if argmax(&p) != y {
            continue;
        }
        let density = brute_kde(kde.centers(), kde.bandwidths(), dim, &latents[i * dim..(i + 1) * dim]);
        let raw = match indicator {
            Indicator::Grad => net.loss_and_gradient(&x, y).1.iter().fold(0.0f64, |m, g| m.max(g.abs())),
            Indicator::Sep => (0..pool.len())
                .filter(|&j| pool.label(j) != y)
                .map(|j| {
                    let q = net.probs(&pixels_f64(pool.image(j)));
                    p.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                })
                .fold(f64::INFINITY, f64::min),
        };
        rows.push((i, density, raw));
    }
    let scale = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 }).collect()
    };
    let dens = scale(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let ind = scale(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    let mut scored: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let u = if indicator == Indicator::Grad { ind[k] } else { 1.0 - ind[k] };
            (r.0, dens[k] * u)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.into_iter().map(|s| s.0).collect()
}

/// Criterion 7.
pub fn ranking_and_budget(desk: &Desk) -> Check {
    let full = &desk.data.dataset;
    let dim = 4;
    let pca = PcaModel::fit_tensor(&full.flattened(), dim).map_err(|e| e.to_string())?;
    let all_latents = pca.transform(&full.images().to_f64()).map_err(|e| e.to_string())?;
    let kde = KdeModel::fit_scott(&all_latents, dim).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..50).collect();
    let ds = full.subset(&idx).map_err(|e| e.to_string())?;
    let latents = &all_latents[..50 * dim];
    let pool_idx: Vec<usize> = (0..400).collect();
    let pool = full.subset(&pool_idx).map_err(|e| e.to_string())?;
    let sep_pool = SepPool::new(&desk.h, &pool).map_err(|e| e.to_string())?;
    let mut ranked = 0;
    for indicator in [Indicator::Grad, Indicator::Sep] {
        let want = brute_force_order(desk, &ds, latents, &kde, indicator, &pool);
        let got = rank_seeds(&desk.h, &ds, latents, &kde, indicator, Some(&sep_pool), want.len())
            .map_err(|e| e.to_string())?;
        let got: Vec<usize> = got.scores.iter().map(|s| s.index).collect();
        ensure(got == want, || format!("{indicator:?} order differs: {got:?} vs {want:?}"))?;
        ranked = want.len();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..1000 {
        let k = rng.random_range(1..=40);
        let w: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let total = rng.random_range(k..=5000);
        let m = allocate_by_weight(&w, total).map_err(|e| e.to_string())?;
        ensure(m.iter().sum::<usize>() == total && m.iter().all(|&v| v >= 1), || {
            format!("vector {t}: allocation {m:?} for M = {total}")
        })?;
    }
    Ok(format!("{ranked}-seed orders match for grad and sep; 1000 budgets conserved"))
}

pub fn mc_prefix_property(h: &ClassifierHandle, x: &[f32], y: usize) -> Check {
    let short = mc_outcomes(h, x, y, 0.1, 300, 9).map_err(|e| e.to_string())?;
    let long = mc_outcomes(h, x, y, 0.1, 1000, 9).map_err(|e| e.to_string())?;
    ensure(long[..300] == short[..], || "prefix differs".into())?;
    Ok("prefix stable".into())
}
