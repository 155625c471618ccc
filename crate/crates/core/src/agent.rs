//! Replay storage, chunk sampling, Adam updates and the collect/train loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamStore, Real, Tensor};
use crate::envs::{Env, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::model::{miro_loss, recon_loss, Batch, LossBreakdown, LossWeights, SequenceView, WorldModel};
use crate::planner::{advance_belief, cem_plan, initial_belief, CEMConfig, LearnedModel};

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Miro,
    Recon,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Miro => "miro",
            Variant::Recon => "recon",
        }
    }
}

/// splitmix64 finaliser over `(seed, tag, index)`; used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    observations: Vec<Observation>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

impl Episode {
    pub fn new(first: Observation) -> Self {
        Self {
            observations: vec![first],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, next: Observation) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::Invariant(format!("reward {reward} outside [0, 1]")));
        }
        self.actions.push(action);
        self.rewards.push(reward);
        self.observations.push(next);
        Ok(())
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// `len` transitions starting at `start`, with their `len + 1` observations.
    pub fn view(&self, start: usize, len: usize) -> Result<SequenceView<'_>> {
        if start + len > self.len() {
            return Err(Error::Data(format!(
                "chunk {start}..{} exceeds episode of length {}",
                start + len,
                self.len()
            )));
        }
        Ok(SequenceView {
            observations: &self.observations[start..=start + len],
            actions: &self.actions[start..start + len],
            rewards: &self.rewards[start..start + len],
        })
    }
}

/// Episode store; with a capacity the oldest episode is evicted first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    episodes: Vec<Episode>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            episodes: Vec::new(),
            capacity,
        }
    }

    pub fn push(&mut self, ep: Episode) {
        if let Some(cap) = self.capacity {
            if cap > 0 && self.episodes.len() == cap {
                self.episodes.remove(0);
            }
        }
        self.episodes.push(ep);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }
}

/// Location of one sampled chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub episode: usize,
    pub start: usize,
    pub len: usize,
}

/// `b` chunks of `l` transitions, uniform over all valid `(episode, start)` pairs.
pub fn sample_chunks(buffer: &ReplayBuffer, b: usize, l: usize, seed: u64) -> Result<Vec<Chunk>> {
    if l == 0 {
        return Err(Error::Contract("chunk length must be ≥ 1".into()));
    }
    let starts: Vec<(usize, usize)> = buffer
        .episodes
        .iter()
        .enumerate()
        .filter(|(_, e)| e.len() >= l)
        .map(|(i, e)| (i, e.len() - l + 1))
        .collect();
    let total: usize = starts.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Data(format!("no stored episode has at least {l} transitions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..b)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            for &(episode, n) in &starts {
                if k < n {
                    return Chunk { episode, start: k, len: l };
                }
                k -= n;
            }
            unreachable!("k < total")
        })
        .collect())
}

pub fn chunk_batch<T: Real>(buffer: &ReplayBuffer, chunks: &[Chunk]) -> Result<Batch<T>> {
    let views = chunks
        .iter()
        .map(|c| {
            buffer
                .episodes
                .get(c.episode)
                .ok_or_else(|| Error::Data(format!("no episode {}", c.episode)))?
                .view(c.start, c.len)
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::from_sequences(&views)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 100.0,
        }
    }
}

/// Adam moments aligned with the parameter store's insertion order.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateInfo {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.v[i]
    }

    /// Applies the accumulated gradients in `params`, clipping their global norm.
    pub fn apply(&mut self, params: &mut ParamStore<T>) -> Result<UpdateInfo> {
        if params.len() != self.m.len() {
            return Err(Error::Contract("optimizer state built for a different parameter set".into()));
        }
        let c = self.config;
        let grad_norm = params.grad_norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                op: "gradient norm".into(),
            });
        }
        let clipped = c.clip_norm > 0.0 && grad_norm > c.clip_norm;
        let scale = if clipped { c.clip_norm / grad_norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if p.value.shape() != self.m[i].shape() {
                return Err(Error::Contract("optimizer moment shape differs from its parameter".into()));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                let g = g.as_f64() * scale;
                let m_new = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * g;
                let v_new = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * g * g;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let upd = c.lr * (m_new / bc1) / ((v_new / bc2).sqrt() + c.eps);
                *w = T::from_f64(w.as_f64() - upd);
            }
        }
        Ok(UpdateInfo { grad_norm, clipped })
    }
}

/// One optimiser step's log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub breakdown: LossBreakdown,
    pub update: UpdateInfo,
}

/// Loss, backward pass and Adam update on one batch. `noise_seed` drives
/// the reparameterised draws.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Real>(
    model: &WorldModel,
    params: &mut ParamStore<T>,
    opt: &mut OptimizerState<T>,
    batch: &Batch<T>,
    variant: Variant,
    weights: LossWeights,
    noise_seed: u64,
) -> Result<TrainRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut g = Graph::new();
    let (loss, breakdown) = match variant {
        Variant::Miro => miro_loss(&mut g, model, params, batch, weights, Some(&mut rng))?,
        Variant::Recon => recon_loss(&mut g, model, params, batch, weights, Some(&mut rng))?,
    };
    if !breakdown.all_finite() || !g.scalar(loss).is_finite() {
        return Err(Error::NonFiniteLoss {
            step: opt.step_count() + 1,
            breakdown: Box::new(breakdown),
        });
    }
    params.zero_grads();
    g.backward(loss, params)?;
    let update = opt.apply(params)?;
    Ok(TrainRecord {
        step: opt.step_count(),
        breakdown,
        update,
    })
}

/// How `collect_episode` picks actions.
pub enum Policy<'a, T> {
    /// Uniform in the action bounds.
    Random,
    /// MPC with Gaussian exploration noise of std `explore_std`; an infinite
    /// `explore_std` falls back to [`Policy::Random`].
    Mpc {
        model: &'a WorldModel,
        params: &'a ParamStore<T>,
        planner: &'a CEMConfig,
        explore_std: f64,
    },
}

/// Rolls one episode from a fresh reset of `env_cfg`.
pub fn collect_episode<T: Real>(env_cfg: &EnvConfig, policy: &Policy<'_, T>, seed: u64) -> Result<Episode> {
    let (mut env, first) = Env::reset(env_cfg)?;
    let ad = env.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
    let mut ep = Episode::new(first);
    let mpc = match policy {
        Policy::Mpc {
            model,
            params,
            planner,
            explore_std,
        } if explore_std.is_finite() => {
            if *explore_std < 0.0 {
                return Err(Error::Config("explore_std must be non-negative".into()));
            }
            let belief = initial_belief(model, *params, &ep.observations[0])?;
            Some((*model, *params, *planner, Normal::new(0.0, *explore_std).expect("checked"), belief))
        }
        _ => None,
    };
    let mut mpc = mpc;
    while !env.is_done() {
        let t = env.steps() as u64;
        let action: Vec<f64> = match &mpc {
            None => (0..ad).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            Some((model, params, planner, noise, belief)) => {
                let lm = LearnedModel { model, params };
                let (plan, _) = cem_plan(&lm, &belief.sample.to_f64_vec(), planner, derive_seed(seed, 2, t))?;
                plan.first()
                    .iter()
                    .map(|&a| (a + noise.sample(&mut rng)).clamp(planner.action_low, planner.action_high))
                    .collect()
            }
        };
        let step = env.step(&action)?;
        if let Some((model, params, _, _, belief)) = &mut mpc {
            *belief = advance_belief(model, *params, belief, &action, &step.observation)?;
        }
        ep.push(action, step.reward, step.observation)?;
    }
    Ok(ep)
}

/// Counts of the collect/train alternation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub seed_episodes: usize,
    pub episodes: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub explore_std: f64,
    /// Maximum stored episodes; `0` keeps everything.
    pub replay_capacity: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            seed_episodes: 5,
            episodes: 50,
            train_steps: 100,
            batch_size: 16,
            chunk_len: 16,
            explore_std: 0.3,
            replay_capacity: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.seed_episodes == 0 {
            return Err(Error::Config("seed_episodes must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.chunk_len == 0 {
            return Err(Error::Config("batch_size and chunk_len must be ≥ 1".into()));
        }
        if self.explore_std.is_nan() || self.explore_std < 0.0 {
            return Err(Error::Config("explore_std must be ≥ 0 (inf selects random actions)".into()));
        }
        Ok(())
    }
}

/// Everything `run_training` needs for one seed.
#[derive(Clone, Debug)]
pub struct TrainingSetup {
    pub env: EnvConfig,
    pub model: WorldModel,
    pub variant: Variant,
    pub weights: LossWeights,
    pub planner: CEMConfig,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub seed: u64,
}

/// Events streamed by [`run_training`].
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Train(TrainRecord),
    Episode {
        index: usize,
        /// Optimiser steps taken before the episode was collected.
        step: u64,
        ret: f64,
        random: bool,
    },
}

/// Environment config of the `index`-th collected episode: fresh initial-state
/// and distractor streams per episode, all derived from the run seed.
pub fn episode_env(base: &EnvConfig, seed: u64, index: usize) -> EnvConfig {
    EnvConfig {
        dynamics_seed: derive_seed(base.dynamics_seed ^ seed, 10, index as u64),
        distractor_seed: derive_seed(base.distractor_seed ^ seed, 11, index as u64),
        ..base.clone()
    }
}

/// Seed phase with random actions, then `episodes` rounds of `train_steps`
/// updates followed by one MPC episode. Returns the final parameters.
pub fn run_training(setup: &TrainingSetup, sink: &mut dyn FnMut(&Event) -> Result<()>) -> Result<ParamStore<f32>> {
    let s = &setup.schedule;
    s.validate()?;
    setup.env.validate()?;
    setup.planner.validate()?;
    if setup.env.task.action_dim() != setup.model.action_dim() {
        return Err(Error::Config(format!(
            "{} has {} action dimensions, model expects {}",
            setup.env.task.name(),
            setup.env.task.action_dim(),
            setup.model.action_dim()
        )));
    }
    if setup.variant == Variant::Recon && !setup.model.config().decoder {
        return Err(Error::Config("the recon variant needs a decoder".into()));
    }
    let seed = setup.seed;
    let mut params: ParamStore<f32> = setup.model.init_params(derive_seed(seed, 20, 0))?;
    let mut opt = OptimizerState::new(setup.adam, &params);
    let mut buffer = ReplayBuffer::new((s.replay_capacity > 0).then_some(s.replay_capacity));

    for i in 0..s.seed_episodes {
        let ep = collect_episode::<f32>(&episode_env(&setup.env, seed, i), &Policy::Random, derive_seed(seed, 30, i as u64))?;
        sink(&Event::Episode {
            index: i,
            step: 0,
            ret: ep.total_return(),
            random: true,
        })?;
        buffer.push(ep);
    }
    for e in 0..s.episodes {
        for _ in 0..s.train_steps {
            let k = opt.step_count();
            let chunks = sample_chunks(&buffer, s.batch_size, s.chunk_len, derive_seed(seed, 40, k))?;
            let batch = chunk_batch(&buffer, &chunks)?;
            let rec = train_step(
                &setup.model,
                &mut params,
                &mut opt,
                &batch,
                setup.variant,
                setup.weights,
                derive_seed(seed, 41, k),
            )?;
            sink(&Event::Train(rec))?;
        }
        let index = s.seed_episodes + e;
        let policy = Policy::Mpc {
            model: &setup.model,
            params: &params,
            planner: &setup.planner,
            explore_std: s.explore_std,
        };
        let ep = collect_episode(&episode_env(&setup.env, seed, index), &policy, derive_seed(seed, 30, index as u64))?;
        sink(&Event::Episode {
            index,
            step: opt.step_count(),
            ret: ep.total_return(),
            random: false,
        })?;
        buffer.push(ep);
    }
    Ok(params)
}

/// Mean return of `episodes` uniformly random episodes (the reference for learning checks).
pub fn random_policy_mean(env: &EnvConfig, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Contract("need at least one episode".into()));
    }
    let mut total = 0.0;
    for i in 0..episodes {
        let ep = collect_episode::<f32>(&episode_env(env, seed, i), &Policy::Random, derive_seed(seed, 30, i as u64))?;
        total += ep.total_return();
    }
    Ok(total / episodes as f64)
}

