mod common;

use miro::agent::{
    chunk_batch, collect_episode, derive_seed, episode_env, run_training, sample_chunks, train_step, AdamConfig,
    Episode, Event, OptimizerState, Policy, ReplayBuffer, Schedule, TrainingSetup, Variant,
};
use miro::diffcore::{ParamStore, Tensor};
use miro::envs::{EnvConfig, Task};
use miro::model::{ConvSpec, LossWeights, ModelConfig, WorldModel};
use miro::planner::CEMConfig;
use miro::Error;

fn pendulum(size: usize, len: usize) -> EnvConfig {
    EnvConfig {
        task: Task::Pendulum,
        image_size: size,
        episode_len: len,
        ..EnvConfig::default()
    }
}

fn small_model(size: usize, decoder: bool) -> WorldModel {
    WorldModel::new(ModelConfig {
        image_size: size,
        latent_dim: 8,
        embed_dim: 8,
        hidden: 32,
        encoder: vec![
            ConvSpec {
                channels: 8,
                kernel: 4,
                stride: 2,
            },
            ConvSpec {
                channels: 16,
                kernel: 4,
                stride: 2,
            },
        ],
        decoder,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn random_buffer(env: &EnvConfig, n: usize, seed: u64) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(None);
    for i in 0..n {
        b.push(collect_episode::<f32>(&episode_env(env, seed, i), &Policy::Random, derive_seed(seed, 0, i as u64)).unwrap());
    }
    b
}

#[test]
fn episode_structure_and_determinism() {
    let env = pendulum(16, 30);
    let a = collect_episode::<f32>(&env, &Policy::Random, 4).unwrap();
    assert_eq!(a.observations().len(), 31);
    assert_eq!(a.actions().len(), 30);
    assert_eq!(a.rewards().len(), 30);
    assert!(a.rewards().iter().all(|r| (0.0..=1.0).contains(r)));
    assert_eq!(a, collect_episode::<f32>(&env, &Policy::Random, 4).unwrap());
    assert_ne!(a.actions(), collect_episode::<f32>(&env, &Policy::Random, 5).unwrap().actions());

    let m = small_model(16, false);
    let p: ParamStore<f32> = m.init_params(1).unwrap();
    let cem = CEMConfig {
        population: 20,
        elites: 4,
        iterations: 2,
        horizon: 4,
        ..CEMConfig::default()
    };
    let mpc = |std| Policy::Mpc {
        model: &m,
        params: &p,
        planner: &cem,
        explore_std: std,
    };
    let x = collect_episode(&env, &mpc(0.3), 9).unwrap();
    assert_eq!(x, collect_episode(&env, &mpc(0.3), 9).unwrap());
    assert!(x.actions().iter().flatten().all(|a| (-1.0..=1.0).contains(a)));
    // the infinite sentinel reproduces the random policy exactly
    assert_eq!(collect_episode(&env, &mpc(f64::INFINITY), 9).unwrap(), collect_episode::<f32>(&env, &Policy::Random, 9).unwrap());
}

/// Two-sided Kolmogorov–Smirnov statistic against U[-1, 1].
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = (x + 1.0) / 2.0;
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

#[test]
fn random_actions_are_uniform() {
    let env = pendulum(8, 100);
    let buf = random_buffer(&env, 100, 3);
    let xs: Vec<f64> = buf.episodes().iter().flat_map(|e| e.actions().iter().map(|a| a[0])).collect();
    assert_eq!(xs.len(), 10_000);
    // 1% critical value 1.63/sqrt(n)
    let d = ks_uniform(xs);
    assert!(d < 1.63 / 100.0, "KS statistic {d}");
}

#[test]
fn chunk_sampling_contracts() {
    let env = pendulum(8, 20);
    let buf = random_buffer(&env, 4, 5);
    let whole = sample_chunks(&buf, 3, 20, 1).unwrap();
    assert!(whole.iter().all(|c| c.start == 0 && c.len == 20));
    let batch = chunk_batch::<f64>(&buf, &whole[..1]).unwrap();
    let ep = &buf.episodes()[whole[0].episode];
    assert_eq!(batch.rewards.to_f64_vec(), ep.rewards());

    let many = sample_chunks(&buf, 10_000, 7, 2).unwrap();
    assert!(many.iter().all(|c| c.episode < 4 && c.start + c.len <= 20));
    // every (episode, start) pair is reachable
    let mut seen = std::collections::HashSet::new();
    for c in &many {
        seen.insert((c.episode, c.start));
    }
    assert_eq!(seen.len(), 4 * 14);
    assert_eq!(many, sample_chunks(&buf, 10_000, 7, 2).unwrap());
    assert!(matches!(sample_chunks(&buf, 2, 21, 0), Err(Error::Data(_))));
    assert!(matches!(sample_chunks(&ReplayBuffer::new(None), 2, 1, 0), Err(Error::Data(_))));
}

#[test]
fn batch_rows_follow_the_chunks() {
    let env = pendulum(8, 12);
    let buf = random_buffer(&env, 3, 6);
    let chunks = sample_chunks(&buf, 4, 5, 3).unwrap();
    let batch = chunk_batch::<f32>(&buf, &chunks).unwrap();
    let px = 3 * 8 * 8;
    for (b, c) in chunks.iter().enumerate() {
        let ep = &buf.episodes()[c.episode];
        for t in 0..=5 {
            let row = t * 4 + b;
            assert_eq!(&batch.images.data()[row * px..(row + 1) * px], ep.observations()[c.start + t].image.data());
        }
        for t in 0..5 {
            assert_eq!(batch.actions.data()[t * 4 + b] as f64, ep.actions()[c.start + t][0] as f32 as f64);
            assert_eq!(batch.rewards.data()[t * 4 + b], ep.rewards()[c.start + t] as f32);
        }
    }
}

#[test]
fn sampling_never_mutates_the_buffer() {
    let env = pendulum(8, 15);
    let buf = random_buffer(&env, 3, 7);
    let before = buf.clone();
    for s in 0..50 {
        let c = sample_chunks(&buf, 8, 5, s).unwrap();
        let _ = chunk_batch::<f32>(&buf, &c).unwrap();
    }
    assert_eq!(buf, before);
}

#[test]
fn bounded_buffer_evicts_oldest() {
    let env = pendulum(8, 3);
    let mut buf = ReplayBuffer::new(Some(2));
    let eps: Vec<Episode> = (0..3).map(|i| collect_episode::<f32>(&env, &Policy::Random, i).unwrap()).collect();
    for e in &eps {
        buf.push(e.clone());
    }
    assert_eq!(buf.episodes(), &eps[1..]);
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let env = pendulum(16, 12);
    let m = small_model(16, false);
    let buf = random_buffer(&env, 2, 8);
    let batch = chunk_batch(&buf, &sample_chunks(&buf, 4, 5, 0).unwrap()).unwrap();
    let mut p: ParamStore<f32> = m.init_params(2).unwrap();
    let before = p.clone();
    let mut opt = OptimizerState::new(
        AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        &p,
    );
    for k in 0..3 {
        let rec = train_step(&m, &mut p, &mut opt, &batch, Variant::Miro, LossWeights::default(), k).unwrap();
        assert_eq!(rec.step, k + 1);
    }
    assert_eq!(opt.step_count(), 3);
    for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn gradient_spike_is_clipped() {
    let mut p = ParamStore::<f64>::new();
    p.insert("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
    let mut opt = OptimizerState::new(AdamConfig::default(), &p);
    p.iter_mut().next().unwrap().1.grad = Tensor::vector(vec![600.0, 800.0]);
    let info = opt.apply(&mut p).unwrap();
    assert!(info.clipped);
    assert!((info.grad_norm - 1000.0).abs() < 1e-9);
    // first moment holds (1 - beta1) times the clipped gradient (norm 100)
    let m = opt.first_moment(0).data();
    assert!((m[0] - 0.1 * 60.0).abs() < 1e-9 && (m[1] - 0.1 * 80.0).abs() < 1e-9);

    let mut q = ParamStore::<f64>::new();
    q.insert("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
    let mut opt = OptimizerState::new(AdamConfig::default(), &q);
    q.iter_mut().next().unwrap().1.grad = Tensor::vector(vec![6.0, 8.0]);
    let info = opt.apply(&mut q).unwrap();
    assert!(!info.clipped);
    assert!((opt.first_moment(0).data()[1] - 0.8).abs() < 1e-12);
}

#[test]
fn adam_matches_hand_computed_steps() {
    let mut p = ParamStore::<f64>::new();
    p.insert("w", Tensor::vector(vec![1.0])).unwrap();
    let c = AdamConfig::default();
    let mut opt = OptimizerState::new(c, &p);
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=5 {
        let g = 2.0 * w;
        p.iter_mut().next().unwrap().1.grad = Tensor::vector(vec![g]);
        opt.apply(&mut p).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        assert!((p.value("w").unwrap().data()[0] - w).abs() < 1e-15);
    }
}

#[test]
fn overfit_single_batch() {
    let env = pendulum(16, 20);
    let m = small_model(16, false);
    for seed in 0..3 {
        let buf = random_buffer(&env, 3, seed);
        let batch = chunk_batch(&buf, &sample_chunks(&buf, 8, 8, seed).unwrap()).unwrap();
        let mut p: ParamStore<f32> = m.init_params(seed).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), &p);
        let mut first = None;
        let mut last = 0.0;
        for k in 0..500 {
            let rec = train_step(&m, &mut p, &mut opt, &batch, Variant::Miro, LossWeights::default(), 77).unwrap();
            first.get_or_insert(rec.breakdown.total);
            last = rec.breakdown.total;
            assert!(rec.breakdown.all_finite(), "step {k}");
        }
        let first = first.unwrap();
        assert!(last <= 0.5 * first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn training_schedule_arithmetic() {
    let setup = TrainingSetup {
        env: pendulum(16, 12),
        model: small_model(16, false),
        variant: Variant::Miro,
        weights: LossWeights::default(),
        planner: CEMConfig {
            population: 10,
            elites: 2,
            iterations: 2,
            horizon: 3,
            ..CEMConfig::default()
        },
        adam: AdamConfig::default(),
        schedule: Schedule {
            seed_episodes: 2,
            episodes: 3,
            train_steps: 4,
            batch_size: 4,
            chunk_len: 6,
            ..Schedule::default()
        },
        seed: 1,
    };
    let mut events = Vec::new();
    run_training(&setup, &mut |e| {
        events.push(e.clone());
        Ok(())
    })
    .unwrap();
    let eps: Vec<(usize, u64, bool)> = events
        .iter()
        .filter_map(|e| match e {
            Event::Episode { index, step, random, .. } => Some((*index, *step, *random)),
            _ => None,
        })
        .collect();
    assert_eq!(eps, vec![(0, 0, true), (1, 0, true), (2, 4, false), (3, 8, false), (4, 12, false)]);
    let steps: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            Event::Train(r) => Some(r.step),
            _ => None,
        })
        .collect();
    assert_eq!(steps, (1..=12).collect::<Vec<_>>());

    let mut again = Vec::new();
    run_training(&setup, &mut |e| {
        again.push(e.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(events, again);

    let bad = TrainingSetup {
        variant: Variant::Recon,
        ..setup
    };
    assert!(matches!(run_training(&bad, &mut |_| Ok(())), Err(Error::Config(_))));
}
