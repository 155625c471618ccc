//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! The learning runs behind criteria 6 and 7 take hours on one core. Their
//! artifacts live under the cargo target directory and are reused when the
//! manifest's config hash and every artifact hash still verify; set
//! `MIRO_ACCEPTANCE_FRESH=1` to retrain. The process exits 0 after reporting
//! so that a failing criterion shows up here rather than aborting the suite.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use miro::agent::{
    chunk_batch, collect_episode, derive_seed, episode_env, random_policy_mean, sample_chunks, train_step, AdamConfig,
    OptimizerState, Policy, ReplayBuffer, Variant,
};
use miro::diffcore::{conv2d, grad_check, kl_diag_gaussian, logsumexp, matmul, DiagGaussian, ParamStore, Tensor};
use miro::envs::Observation;
use miro::expcli::{
    build_report, learning_curves, metrics_path, read_metrics, render_svg, run_dir, run_experiment, sha256_file,
    ExperimentConfig, MANIFEST,
};
use miro::model::{
    load_params, miro_loss, nce_from_scores, nce_term, recon_loss, save_params, LossWeights, ModelConfig, WorldModel,
};
use miro::planner::{cem_plan, evaluate_sequences, CEMConfig, RolloutMode};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, started: Instant, o: Outcome) -> bool {
    println!(
        "criterion {n} {}: {title} [{}] ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn numeric_suite() -> Outcome {
    let started = Instant::now();
    let cases = [(0.0, 1.0, 0.0, 1.0), (1.0, 1.0, 0.0, 1.0), (0.0, 2.0, 0.0, 1.0)];
    let closed = [0.0, 0.5, (4.0 - 1.0 - 4f64.ln()) / 2.0];
    let mut kl_err = 0.0f64;
    for ((mp, sp, mq, sq), want) in cases.into_iter().zip(closed) {
        let p = DiagGaussian::new(Tensor::vector(vec![mp]), Tensor::vector(vec![sp])).unwrap();
        let q = DiagGaussian::new(Tensor::vector(vec![mq]), Tensor::vector(vec![sq])).unwrap();
        let kl = kl_diag_gaussian(&p, &q).unwrap();
        kl_err = kl_err.max((kl - want).abs()).max((kl - kl_quadrature(mp, sp, mq, sq)).abs());
    }

    let mut r = rng(101);
    let mut lse_err = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..20);
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let c = r.random_range(-1e3..1e3);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        lse_err = lse_err.max((logsumexp(&xs).unwrap() + c - logsumexp(&shifted).unwrap()).abs());
    }

    let mut mm_err = 0.0f64;
    let mut conv_err = 0.0f64;
    for _ in 0..100 {
        let (m, k, n) = (r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=16));
        let a = random_tensor::<f32>(&mut r, &[m, k], 1.0);
        let b = random_tensor::<f32>(&mut r, &[k, n], 1.0);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_loops(&a.to_f64_vec(), &b.to_f64_vec(), m, k, n);
        for (g, w) in got.data().iter().zip(&want) {
            mm_err = mm_err.max((*g as f64 - w).abs());
        }

        let c = r.random_range(1..=3);
        let (h, w) = (r.random_range(2..=16), r.random_range(2..=16));
        let ks = r.random_range(1..=h.min(w).min(5));
        let co = r.random_range(1..=4);
        let stride = r.random_range(1..=3);
        let x = random_tensor::<f32>(&mut r, &[c, h, w], 1.0);
        let kern = random_tensor::<f32>(&mut r, &[co, c, ks, ks], 1.0);
        let got = conv2d(&x, &kern, stride).unwrap();
        let want = conv_loops(&x.to_f64_vec(), (c, h, w), &kern.to_f64_vec(), (co, ks), stride);
        for (g, w) in got.data().iter().zip(&want) {
            conv_err = conv_err.max((*g as f64 - w).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: kl_err < 1e-9 && lse_err < 1e-6 && mm_err < 1e-5 && conv_err < 1e-5 && secs < 10.0,
        detail: format!(
            "kl err {kl_err:.1e}, logsumexp shift err {lse_err:.1e}, matmul err {mm_err:.1e}, conv2d err {conv_err:.1e}, {secs:.2} s of 10"
        ),
    }
}

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let mut worst_op = ("", 0.0f64);
    for (name, case) in op_cases() {
        let mut r = rng(name.len() as u64 * 104_729);
        for _ in 0..100 {
            let (mut store, f) = case(&mut r);
            centre_geometry(&mut store);
            let e = grad_check(f, &mut store, 1e-5).unwrap();
            if e > worst_op.1 {
                worst_op = (name, e);
            }
        }
    }
    let m = WorldModel::new(tiny_cfg(6, 3, 3, false)).unwrap();
    let mut p = m.init_params::<f64>(31).unwrap();
    let batch = random_batch(6, 2, 4, 31);
    let miro_err = grad_check(
        |g, s| {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            Ok(miro_loss(g, &m, s, &batch, LossWeights::default(), Some(&mut r))?.0)
        },
        &mut p,
        1e-6,
    )
    .unwrap();
    let md = WorldModel::new(tiny_cfg(6, 3, 3, true)).unwrap();
    let mut pd = md.init_params::<f64>(32).unwrap();
    let recon_err = grad_check(
        |g, s| {
            let mut r = ChaCha8Rng::seed_from_u64(6);
            Ok(recon_loss(g, &md, s, &batch, LossWeights::default(), Some(&mut r))?.0)
        },
        &mut pd,
        1e-6,
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: worst_op.1 < 1e-4 && miro_err < 1e-4 && recon_err < 1e-4 && secs < 120.0,
        detail: format!(
            "worst op {} {:.1e} over 100 instances each, contrastive loss {miro_err:.1e}, reconstruction loss {recon_err:.1e} (n_s = n_z = 3, 6x6, B = 2, L = 4), {secs:.1} s of 120",
            worst_op.0, worst_op.1
        ),
    }
}

fn nce_bounds() -> Outcome {
    let m = WorldModel::new(ModelConfig {
        latent_dim: 6,
        embed_dim: 5,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut r = rng(303);
    let (mut above_zero, mut below_floor, mut worst) = (0, 0, 0.0f64);
    for trial in 0..1000 {
        let b = [2usize, 8, 32][trial % 3];
        let h = 1 + trial % 3;
        let p = m.init_params::<f64>(1000 + trial as u64).unwrap();
        let scale = r.random_range(0.1..5.0);
        let s = Tensor::new(&[b, 6], (0..b * 6).map(|_| scale * r.random_range(-1.0..1.0)).collect()).unwrap();
        let z = Tensor::new(&[b, 5], (0..b * 5).map(|_| scale * r.random_range(-1.0..1.0)).collect()).unwrap();
        let v = nce_term(&m, &p, &s, &z, h).unwrap();
        if v > 0.0 {
            above_zero += 1;
        }
        let floor = -(b as f64).ln();
        if v < floor {
            below_floor += 1;
            worst = worst.max(floor - v);
        }
    }
    let mut eq_err = 0.0f64;
    for b in [2usize, 8, 32] {
        let v = nce_from_scores(&Tensor::filled(&[b, b], 0.37)).unwrap();
        eq_err = eq_err.max((v + (b as f64).ln()).abs());
    }
    Outcome {
        pass: above_zero == 0 && below_floor == 0 && eq_err < 1e-9,
        detail: format!(
            "{above_zero}/1000 above 0, {below_floor}/1000 below -ln B (worst by {worst:.3}), equal-score equality err {eq_err:.1e}"
        ),
    }
}

fn planner_oracle() -> Outcome {
    let started = Instant::now();
    let cfg = CEMConfig {
        horizon: 1,
        ..CEMConfig::default()
    };
    let mut bandit_ok = 0;
    let mut bandit_worst = 0.0f64;
    for seed in 0..20 {
        let (plan, _) = cem_plan(&Bandit { target: 0.3 }, &[0.0], &cfg, 500 + seed).unwrap();
        let dev = (plan.first()[0] - 0.3).abs();
        bandit_worst = bandit_worst.max(dev);
        if dev <= 0.02 {
            bandit_ok += 1;
        }
    }
    let cfg = CEMConfig {
        horizon: 2,
        ..CEMConfig::default()
    };
    let levels: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
    let mut r = rng(404);
    let (mut toy_ok, mut worst_frac) = (0, f64::INFINITY);
    for trial in 0..20 {
        let toy = Toy::random(&mut r);
        let s0 = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        let mut best = f64::MIN;
        for &a0 in &levels {
            for &a1 in &levels {
                let s1 = toy.step(s0, a0);
                best = best.max(toy.r(s1) + toy.r(toy.step(s1, a1)));
            }
        }
        let (plan, _) = cem_plan(&toy, &s0, &cfg, 600 + trial).unwrap();
        let got = evaluate_sequences(&toy, &s0, &[plan], RolloutMode::Mean).unwrap()[0];
        worst_frac = worst_frac.min(got / best);
        if got >= 0.95 * best {
            toy_ok += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: bandit_ok == 20 && toy_ok == 20 && secs < 60.0,
        detail: format!(
            "bandit {bandit_ok}/20 within 0.02 (worst {bandit_worst:.4}), enumeration toy {toy_ok}/20 at >= 95% (worst {:.1}%), {secs:.1} s of 60",
            100.0 * worst_frac
        ),
    }
}

/// CPU seconds consumed by this process so far.
fn cpu_seconds() -> f64 {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: getrusage fills the struct it is handed; a zeroed rusage is valid.
    let usage = unsafe {
        libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr());
        usage.assume_init()
    };
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    tv(usage.ru_utime) + tv(usage.ru_stime)
}

fn overfit() -> Outcome {
    let started = cpu_seconds();
    let env = miro::envs::EnvConfig::default();
    let model = WorldModel::new(ModelConfig::default()).unwrap();
    let mut ok = 0;
    let mut drops = Vec::new();
    for seed in 0..3u64 {
        let mut buf = ReplayBuffer::new(None);
        for i in 0..2 {
            let ep = collect_episode::<f32>(&episode_env(&env, seed, i), &Policy::Random, derive_seed(seed, 1, i as u64));
            buf.push(ep.unwrap());
        }
        let batch = chunk_batch(&buf, &sample_chunks(&buf, 16, 16, seed).unwrap()).unwrap();
        let mut p: ParamStore<f32> = model.init_params(seed).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), &p);
        let (mut first, mut last) = (None, 0.0);
        for _ in 0..500 {
            let rec = train_step(&model, &mut p, &mut opt, &batch, Variant::Miro, LossWeights::default(), seed).unwrap();
            first.get_or_insert(rec.breakdown.total);
            last = rec.breakdown.total;
        }
        let first = first.unwrap();
        let drop = 1.0 - last / first;
        drops.push(format!("{first:.2} -> {last:.2} ({:.0}%)", 100.0 * drop));
        if drop >= 0.5 {
            ok += 1;
        }
    }
    let secs = cpu_seconds() - started;
    Outcome {
        pass: ok == 3 && secs < 300.0,
        detail: format!(
            "{ok}/3 seeds drop >= 50% over 500 steps on one B = 16, L = 16 batch: {}; {secs:.0} CPU s of 300",
            drops.join(", ")
        ),
    }
}

fn learning_config(variant: Variant, distractors: usize, root: &Path) -> ExperimentConfig {
    let text = format!(
        "name = \"pendulum-{}-d{distractors}\"\nvariant = \"{}\"\nseeds = [0, 1, 2]\noutput_dir = \"{}\"\nlog_wall_clock = true\n[env]\ntask = \"pendulum\"\ndistractors = {distractors}\n",
        variant.name(),
        variant.name(),
        root.display()
    );
    ExperimentConfig::parse(&text, Path::new("acceptance")).unwrap()
}

/// True when the run directory holds a complete manifest for exactly this config
/// whose artifact hashes all still match.
fn verified_complete(cfg: &ExperimentConfig) -> bool {
    let dir = run_dir(cfg);
    let Ok(text) = std::fs::read_to_string(dir.join(MANIFEST)) else {
        return false;
    };
    let Ok(manifest) = toml::from_str::<toml::Table>(&text) else {
        return false;
    };
    let want_hash = hex::encode(Sha256::digest(cfg.to_toml().as_bytes()));
    if manifest.get("status").and_then(|s| s.as_str()) != Some("complete")
        || manifest.get("config_sha256").and_then(|s| s.as_str()) != Some(want_hash.as_str())
    {
        return false;
    }
    let Some(arts) = manifest.get("artifacts").and_then(|a| a.as_array()) else {
        return false;
    };
    arts.len() == 2 * cfg.seeds.len()
        && arts.iter().all(|a| {
            let (Some(p), Some(h)) = (a.get("path").and_then(|v| v.as_str()), a.get("sha256").and_then(|v| v.as_str())) else {
                return false;
            };
            sha256_file(&dir.join(p)).is_ok_and(|got| got == h)
        })
}

fn ensure_run(cfg: &ExperimentConfig) -> (Vec<PathBuf>, bool) {
    let fresh = std::env::var_os("MIRO_ACCEPTANCE_FRESH").is_some_and(|v| v == "1");
    let reused = !fresh && verified_complete(cfg);
    if !reused {
        eprintln!("training {} (3 seeds)", cfg.name);
        run_experiment(cfg, |s| eprintln!("  {} seed {s}", cfg.name)).unwrap();
    }
    let dir = run_dir(cfg);
    (cfg.seeds.iter().map(|&s| metrics_path(&dir, s)).collect(), reused)
}

/// Wall time of one seed: the `wall_ms` of its last row.
fn seed_minutes(path: &Path) -> f64 {
    let rows = read_metrics(path).unwrap();
    rows.last().and_then(|r| r.wall_ms).unwrap_or(0) as f64 / 60_000.0
}

struct Arm {
    paths: Vec<PathBuf>,
    reused: bool,
}

fn learning_arms(root: &Path) -> Vec<(Variant, usize, Arm)> {
    let mut arms = Vec::new();
    for variant in [Variant::Miro, Variant::Recon] {
        for d in [0, 2] {
            let (paths, reused) = ensure_run(&learning_config(variant, d, root));
            arms.push((variant, d, Arm { paths, reused }));
        }
    }
    arms
}

fn learning_check(arms: &[(Variant, usize, Arm)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (variant, d, arm) in arms.iter().filter(|(v, ..)| *v == Variant::Miro) {
        let env = learning_config(*variant, *d, Path::new(".")).env;
        let random = random_policy_mean(&env, 100, 77).unwrap();
        let report = build_report(&arm.paths).unwrap();
        let finals: Vec<f64> = arm
            .paths
            .iter()
            .map(|p| build_report(std::slice::from_ref(p)).unwrap().groups[0].final_perf)
            .collect();
        let hits = finals.iter().filter(|&&f| f >= 3.0 * random).count();
        let minutes: f64 = arm.paths.iter().map(|p| seed_minutes(p)).sum();
        pass &= hits >= 2 && minutes <= 60.0;
        parts.push(format!(
            "distractors {d}: random mean {random:.2}, target {:.2}, per-seed finals [{}] ({hits}/3 hit), mean {:.2}, {minutes:.1} min for 3 seeds{}",
            3.0 * random,
            finals.iter().map(|f| format!("{f:.2}")).collect::<Vec<_>>().join(", "),
            report.groups[0].final_perf,
            if arm.reused { ", reused" } else { "" }
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn robustness(arms: &[(Variant, usize, Arm)]) -> Outcome {
    let all: Vec<PathBuf> = arms.iter().flat_map(|(_, _, a)| a.paths.clone()).collect();
    let report = build_report(&all).unwrap();
    let miro = report.ratio(Variant::Miro).unwrap();
    let recon = report.ratio(Variant::Recon).unwrap();
    let companion = if miro > recon {
        "holds".to_string()
    } else if recon - miro < 0.1 {
        format!("violated by {:.3} (< 0.1, report only)", recon - miro)
    } else {
        format!("violated by {:.3}", recon - miro)
    };
    Outcome {
        pass: miro >= 0.7 && (miro > recon || recon - miro < 0.1),
        detail: format!("contrastive ratio {miro:.3} (needs >= 0.7), reconstruction ratio {recon:.3}; companion {companion}"),
    }
}

fn determinism(root: &Path) -> Outcome {
    let text = "name = \"determinism\"\nseeds = [0]\n[env]\ndistractors = 2\n[schedule]\nseed_episodes = 2\nepisodes = 2\ntrain_steps = 5\n";
    let mut outputs = Vec::new();
    for rep in 0..2 {
        let mut cfg = ExperimentConfig::parse(text, Path::new("determinism")).unwrap();
        cfg.output_dir = root.join(format!("rep{rep}"));
        run_experiment(&cfg, |_| {}).unwrap();
        let csv = metrics_path(&run_dir(&cfg), 0);
        let svg = render_svg(&learning_curves(std::slice::from_ref(&csv)).unwrap());
        outputs.push((std::fs::read(&csv).unwrap(), svg));
    }
    let same_csv = outputs[0].0 == outputs[1].0;
    let same_svg = outputs[0].1 == outputs[1].1;
    Outcome {
        pass: same_csv && same_svg,
        detail: format!(
            "metrics CSV {} ({} bytes), SVG {}",
            if same_csv { "identical" } else { "differs" },
            outputs[0].0.len(),
            if same_svg { "identical" } else { "differs" }
        ),
    }
}

fn checkpoint_round_trip(dir: &Path) -> Outcome {
    let model = WorldModel::new(ModelConfig {
        decoder: true,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut p: ParamStore<f32> = model.init_params(909).unwrap();
    let mut r = rng(909);
    for (_, param) in p.iter_mut() {
        for v in param.value.data_mut() {
            *v += 0.01 * r.random_range(-1.0f32..1.0);
        }
    }
    let path = dir.join("round-trip.ckpt");
    save_params(&p, &path).unwrap();
    let q: ParamStore<f32> = load_params(&path).unwrap();
    let mut mismatches = 0;
    for _ in 0..100 {
        let obs = Observation {
            image: Tensor::new(&[3, 32, 32], (0..3 * 32 * 32).map(|_| r.random::<f32>()).collect()).unwrap(),
        };
        let s = Tensor::new(&[30], (0..30).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap();
        let a = Tensor::new(&[1], vec![r.random_range(-1.0f32..1.0)]).unwrap();
        let outputs = |p: &ParamStore<f32>| {
            let z = model.encode(p, &obs).unwrap();
            let prior = model.predict(p, &s, &a).unwrap();
            let post = model.filter(p, &z, &prior).unwrap();
            let rew = model.predict_reward(p, &post.mean).unwrap();
            let img = model.decode(p, &s).unwrap();
            let mut bits: Vec<u32> = [&z, &prior.mean, &prior.std, &post.mean, &post.std, &img]
                .iter()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect();
            bits.push((rew as f32).to_bits());
            bits.extend([rew.to_bits() as u32, (rew.to_bits() >> 32) as u32]);
            bits
        };
        if outputs(&p) != outputs(&q) {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0 && p == q,
        detail: format!("{mismatches}/100 inputs with differing encode/predict/filter/reward/decode bits"),
    }
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let runs_root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs");
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };
    let t = Instant::now();
    tally(report(1, "numeric unit suite", t, numeric_suite()));
    let t = Instant::now();
    tally(report(2, "gradient fidelity", t, gradient_fidelity()));
    let t = Instant::now();
    tally(report(3, "NCE bounds [-ln B, 0]", t, nce_bounds()));
    let t = Instant::now();
    tally(report(4, "planner oracle", t, planner_oracle()));
    let t = Instant::now();
    tally(report(5, "overfit check", t, overfit()));
    let t = Instant::now();
    let arms = learning_arms(&runs_root);
    tally(report(6, "learning check vs 3x random policy", t, learning_check(&arms)));
    let t = Instant::now();
    tally(report(7, "distractor robustness", t, robustness(&arms)));
    let t = Instant::now();
    tally(report(8, "determinism", t, determinism(scratch.path())));
    let t = Instant::now();
    tally(report(9, "checkpoint round trip", t, checkpoint_round_trip(scratch.path())));
    println!("acceptance: {passed}/{total} criteria passed");
}
