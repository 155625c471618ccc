//! Cross-entropy-method planning over a latent model, wrapped in MPC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiagGaussian, Graph, ParamStore, Real, Tensor};
use crate::envs::Observation;
use crate::error::{dim_err, Error, Result};
use crate::model::{LatentBelief, WorldModel};

/// Std floor applied after every refit.
pub const STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CEMConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    pub action_low: f64,
    pub action_high: f64,
    /// Carry the previous elites into the next selection pool, which makes the
    /// elite mean return non-decreasing on deterministic models.
    pub keep_elites: bool,
    /// Score candidates with sampled instead of mean rollouts.
    pub sampled_rollouts: bool,
}

impl Default for CEMConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            population: 100,
            elites: 10,
            iterations: 5,
            init_std: 1.0,
            action_low: -1.0,
            action_high: 1.0,
            keep_elites: true,
            sampled_rollouts: false,
        }
    }
}

impl CEMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 || self.population == 0 {
            return Err(Error::Config("planner horizon, population and iterations must be ≥ 1".into()));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(Error::Config(format!(
                "elites must lie in 1..={}, got {}",
                self.population, self.elites
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("planner init_std must be positive".into()));
        }
        if !(self.action_low < self.action_high) {
            return Err(Error::Config("action bounds must satisfy low < high".into()));
        }
        Ok(())
    }
}

/// `horizon × action_dim` actions, clamped to the configured bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequence {
    pub actions: Tensor<f64>,
}

impl ActionSequence {
    pub fn new(actions: Tensor<f64>) -> Result<Self> {
        actions.dims2()?;
        Ok(Self { actions })
    }

    pub fn horizon(&self) -> usize {
        self.actions.shape()[0]
    }

    pub fn first(&self) -> &[f64] {
        self.actions.row(0)
    }
}

/// Per-timestep Gaussian over actions; `mean` and `std` are `horizon × action_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanDistribution {
    pub mean: Tensor<f64>,
    pub std: Tensor<f64>,
}

impl PlanDistribution {
    pub fn initial(horizon: usize, action_dim: usize, init_std: f64) -> Self {
        Self {
            mean: Tensor::zeros(&[horizon, action_dim]),
            std: Tensor::filled(&[horizon, action_dim], init_std),
        }
    }

    pub fn timestep(&self, t: usize) -> Result<DiagGaussian<f64>> {
        DiagGaussian::new(Tensor::vector(self.mean.row(t).to_vec()), Tensor::vector(self.std.row(t).to_vec()))
    }
}

/// How candidate rollouts propagate the latent distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    Mean,
    /// Reparameterised samples; candidate `i` draws from its own stream of `seed`.
    Sampled { seed: u64 },
}

/// The part of a latent model the planner needs.
pub trait PlanningModel {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// One prior step for every row; returns `(mean, std)`, each `n × state_dim`.
    fn transition(&self, states: &Tensor<f64>, actions: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)>;
    /// Predicted reward of every row of `states`.
    fn reward(&self, states: &Tensor<f64>) -> Result<Vec<f64>>;
}

/// A trained [`WorldModel`] with its parameters.
#[derive(Clone, Copy, Debug)]
pub struct LearnedModel<'a, T> {
    pub model: &'a WorldModel,
    pub params: &'a ParamStore<T>,
}

impl<T: Real> PlanningModel for LearnedModel<'_, T> {
    fn state_dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    fn transition(&self, states: &Tensor<f64>, actions: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new();
        let s = g.constant(states.cast())?;
        let a = g.constant(actions.cast())?;
        let d = self.model.predict_var(&mut g, self.params, s, a)?;
        Ok((g.value(d.mean).cast(), g.value(d.std).cast()))
    }

    fn reward(&self, states: &Tensor<f64>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let s = g.constant(states.cast())?;
        let r = self.model.reward_var(&mut g, self.params, s)?;
        Ok(g.value(r).to_f64_vec())
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Undiscounted sum of predicted rewards along each sequence's open-loop rollout from `s0`.
pub fn evaluate_sequences<M: PlanningModel + ?Sized>(
    model: &M,
    s0: &[f64],
    seqs: &[ActionSequence],
    mode: RolloutMode,
) -> Result<Vec<f64>> {
    let Some(first) = seqs.first() else {
        return Err(Error::Contract("no action sequences to evaluate".into()));
    };
    let (n, ns, ad) = (seqs.len(), model.state_dim(), model.action_dim());
    let h = first.horizon();
    if s0.len() != ns {
        return Err(dim_err!("start state has {} entries, model state is {ns}", s0.len()));
    }
    for q in seqs {
        if q.actions.shape() != [h, ad] {
            return Err(dim_err!("action sequence {:?}, expected [{h}, {ad}]", q.actions.shape()));
        }
    }
    let mut rngs: Vec<ChaCha8Rng> = match mode {
        RolloutMode::Mean => Vec::new(),
        RolloutMode::Sampled { seed } => (0..n as u64).map(|i| stream(seed, i)).collect(),
    };
    let mut states = Tensor::new(&[n, ns], s0.repeat(n))?;
    let mut returns = vec![0.0; n];
    for t in 0..h {
        let mut acts = Vec::with_capacity(n * ad);
        for q in seqs {
            acts.extend_from_slice(q.actions.row(t));
        }
        let (mean, std) = model.transition(&states, &Tensor::new(&[n, ad], acts)?)?;
        states = if rngs.is_empty() {
            mean
        } else {
            let mut next = mean.into_data();
            for (i, rng) in rngs.iter_mut().enumerate() {
                for j in 0..ns {
                    let e: f64 = StandardNormal.sample(rng);
                    next[i * ns + j] += std.data()[i * ns + j] * e;
                }
            }
            Tensor::new(&[n, ns], next)?
        };
        for (acc, r) in returns.iter_mut().zip(model.reward(&states)?) {
            *acc += r;
        }
    }
    for (i, r) in returns.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::NonFinite {
                op: format!("planned return of candidate {i}"),
            });
        }
    }
    Ok(returns)
}

/// Indices of the `k` best returns, best first; ties go to the lower index.
pub fn select_elites(returns: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..returns.len()).collect();
    idx.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-timestep mean and (population) std of the selected sequences, std floored.
pub fn refit(seqs: &[&ActionSequence]) -> Result<PlanDistribution> {
    let Some(first) = seqs.first() else {
        return Err(Error::Contract("refit needs at least one sequence".into()));
    };
    let shape = first.actions.shape().to_vec();
    let k = seqs.len() as f64;
    let len = first.actions.len();
    let mut mean = vec![0.0; len];
    for q in seqs {
        for (m, &a) in mean.iter_mut().zip(q.actions.data()) {
            *m += a / k;
        }
    }
    let mut var = vec![0.0; len];
    for q in seqs {
        for ((v, &a), &m) in var.iter_mut().zip(q.actions.data()).zip(&mean) {
            *v += (a - m) * (a - m) / k;
        }
    }
    let std = var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
    Ok(PlanDistribution {
        mean: Tensor::new(&shape, mean)?,
        std: Tensor::new(&shape, std)?,
    })
}

/// Trace of one planning call, for diagnostics and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct CemTrace {
    /// Mean return of the selected elites after each iteration.
    pub elite_mean_returns: Vec<f64>,
    /// Distribution after each refit.
    pub distributions: Vec<PlanDistribution>,
}

/// The `population` clamped candidates of one iteration; candidate `i` is
/// drawn from its own stream, so the set does not depend on evaluation order.
pub fn sample_population(dist: &PlanDistribution, cfg: &CEMConfig, seed: u64, iteration: usize) -> Vec<ActionSequence> {
    (0..cfg.population).map(|i| sample_candidate(dist, cfg, seed, iteration, i)).collect()
}

fn sample_candidate(dist: &PlanDistribution, cfg: &CEMConfig, seed: u64, iteration: usize, index: usize) -> ActionSequence {
    let mut rng = stream(seed, ((iteration as u64) << 32) | index as u64);
    let data = dist
        .mean
        .data()
        .iter()
        .zip(dist.std.data())
        .map(|(&m, &s)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (m + s * e).clamp(cfg.action_low, cfg.action_high)
        })
        .collect();
    ActionSequence {
        actions: Tensor::new(dist.mean.shape(), data).expect("shape copied"),
    }
}

pub fn cem_plan<M: PlanningModel + ?Sized>(
    model: &M,
    s0: &[f64],
    cfg: &CEMConfig,
    seed: u64,
) -> Result<(ActionSequence, PlanDistribution)> {
    cem_plan_traced(model, s0, cfg, seed).map(|(a, d, _)| (a, d))
}

pub fn cem_plan_traced<M: PlanningModel + ?Sized>(
    model: &M,
    s0: &[f64],
    cfg: &CEMConfig,
    seed: u64,
) -> Result<(ActionSequence, PlanDistribution, CemTrace)> {
    cfg.validate()?;
    let mut dist = PlanDistribution::initial(cfg.horizon, model.action_dim(), cfg.init_std);
    let mut kept: Vec<(ActionSequence, f64)> = Vec::new();
    let mut trace = CemTrace {
        elite_mean_returns: Vec::with_capacity(cfg.iterations),
        distributions: Vec::with_capacity(cfg.iterations),
    };
    for it in 0..cfg.iterations {
        let mut pool = sample_population(&dist, cfg, seed, it);
        let mode = if cfg.sampled_rollouts {
            RolloutMode::Sampled {
                seed: seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(it as u64 + 1)),
            }
        } else {
            RolloutMode::Mean
        };
        let mut returns = evaluate_sequences(model, s0, &pool, mode)?;
        for (q, r) in kept.drain(..) {
            pool.push(q);
            returns.push(r);
        }
        let elite_idx = select_elites(&returns, cfg.elites);
        let elites: Vec<&ActionSequence> = elite_idx.iter().map(|&i| &pool[i]).collect();
        dist = refit(&elites)?;
        let mean_ret = elite_idx.iter().map(|&i| returns[i]).sum::<f64>() / elite_idx.len() as f64;
        trace.elite_mean_returns.push(mean_ret);
        trace.distributions.push(dist.clone());
        if cfg.keep_elites {
            kept = elite_idx.iter().map(|&i| (pool[i].clone(), returns[i])).collect();
        }
    }
    let plan = ActionSequence {
        actions: dist.mean.map(|a| a.clamp(cfg.action_low, cfg.action_high)),
    };
    Ok((plan, dist, trace))
}

/// Advances a belief by one executed action and the observation it produced.
/// Uses distribution means, so the update is deterministic.
pub fn advance_belief<T: Real>(
    model: &WorldModel,
    params: &ParamStore<T>,
    belief: &LatentBelief<T>,
    action: &[f64],
    obs: &Observation,
) -> Result<LatentBelief<T>> {
    let a = Tensor::vector(action.iter().map(|&v| T::from_f64(v)).collect());
    let prior = model.predict(params, &belief.sample, &a)?;
    let z = model.encode(params, obs)?;
    let dist = model.filter(params, &z, &prior)?;
    Ok(LatentBelief {
        sample: dist.mean.clone(),
        dist,
    })
}

/// Belief from a first observation: filter against the standard-normal prior.
pub fn initial_belief<T: Real>(model: &WorldModel, params: &ParamStore<T>, obs: &Observation) -> Result<LatentBelief<T>> {
    let z = model.encode(params, obs)?;
    let dist = model.filter(params, &z, &DiagGaussian::standard(&[model.latent_dim()]))?;
    Ok(LatentBelief {
        sample: dist.mean.clone(),
        dist,
    })
}

/// Plans from `belief.sample` and returns the first planned action. With
/// `obs_next` the belief is filtered on it; without, it is advanced by the prior mean.
pub fn mpc_act<T: Real>(
    model: &WorldModel,
    params: &ParamStore<T>,
    belief: &LatentBelief<T>,
    obs_next: Option<&Observation>,
    cfg: &CEMConfig,
    seed: u64,
) -> Result<(Tensor<f64>, LatentBelief<T>)> {
    let lm = LearnedModel { model, params };
    let (plan, _) = cem_plan(&lm, &belief.sample.to_f64_vec(), cfg, seed)?;
    let action = plan.first().to_vec();
    let next = match obs_next {
        Some(o) => advance_belief(model, params, belief, &action, o)?,
        None => {
            let a = Tensor::vector(action.iter().map(|&v| T::from_f64(v)).collect());
            let dist = model.predict(params, &belief.sample, &a)?;
            LatentBelief {
                sample: dist.mean.clone(),
                dist,
            }
        }
    };
    Ok((Tensor::vector(action), next))
}
