//! Browser demo: drive an environment with distractors, watch CEM converge on
//! a one-dimensional bandit, and probe the InfoNCE estimate on synthetic scores.
//!
//! Every export is plain Rust too, so the native tests cover the same code the
//! page calls.

use miro::diffcore::Tensor;
use miro::envs::{Env, EnvConfig, Observation, Task};
use miro::model::nce_from_scores;
use miro::planner::{cem_plan_traced, CEMConfig, PlanningModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

fn js_err(e: miro::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A live episode whose frames the page paints onto a canvas.
#[wasm_bindgen]
pub struct EnvSession {
    env: Env,
    frame: Observation,
    total_reward: f64,
}

#[wasm_bindgen]
impl EnvSession {
    /// `task` is `"pendulum"` or `"pointmass"`.
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str, image_size: usize, distractors: usize, seed: u64) -> Result<EnvSession, JsError> {
        let task = match task {
            "pendulum" => Task::Pendulum,
            "pointmass" => Task::Pointmass,
            other => return Err(JsError::new(&format!("unknown task {other:?}"))),
        };
        let cfg = EnvConfig {
            task,
            image_size,
            distractors,
            episode_len: usize::MAX,
            dynamics_seed: seed,
            distractor_seed: seed.wrapping_add(1),
            ..EnvConfig::default()
        };
        let (env, frame) = Env::reset(&cfg).map_err(js_err)?;
        Ok(Self {
            env,
            frame,
            total_reward: 0.0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    pub fn size(&self) -> usize {
        self.frame.size()
    }

    pub fn steps(&self) -> usize {
        self.env.steps()
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    /// Applies `(ax, ay)`, truncated to the task's action width; returns the reward.
    pub fn step(&mut self, ax: f64, ay: f64) -> Result<f64, JsError> {
        let action = [ax, ay];
        let out = self.env.step(&action[..self.env.action_dim()]).map_err(js_err)?;
        self.frame = out.observation;
        self.total_reward += out.reward;
        Ok(out.reward)
    }

    /// Current frame as row-major RGBA bytes, ready for `ImageData`.
    pub fn frame_rgba(&self) -> Vec<u8> {
        let s = self.frame.size();
        let mut out = Vec::with_capacity(4 * s * s);
        for y in 0..s {
            for x in 0..s {
                let [r, g, b] = self.frame.pixel(x, y);
                out.extend([r, g, b].map(|c| (c * 255.0).round() as u8));
                out.push(255);
            }
        }
        out
    }
}

/// Reward `-(a - target)²` for a single action; the state is ignored.
struct Bandit {
    target: f64,
}

impl PlanningModel for Bandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn transition(&self, _states: &Tensor<f64>, actions: &Tensor<f64>) -> miro::Result<(Tensor<f64>, Tensor<f64>)> {
        Ok((actions.clone(), Tensor::zeros(actions.shape())))
    }

    fn reward(&self, states: &Tensor<f64>) -> miro::Result<Vec<f64>> {
        Ok(states.data().iter().map(|a| -(a - self.target).powi(2)).collect())
    }
}

/// CEM on the bandit. Returns `[mean, std, elite mean return]` per iteration,
/// flattened.
#[wasm_bindgen]
pub fn cem_trace(
    target: f64,
    population: usize,
    elites: usize,
    iterations: usize,
    init_std: f64,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    let cfg = CEMConfig {
        horizon: 1,
        population,
        elites,
        iterations,
        init_std,
        ..CEMConfig::default()
    };
    let (_, _, trace) = cem_plan_traced(&Bandit { target }, &[0.0], &cfg, seed).map_err(js_err)?;
    Ok(trace
        .distributions
        .iter()
        .zip(&trace.elite_mean_returns)
        .flat_map(|(d, &r)| [d.mean.data()[0], d.std.data()[0], r])
        .collect())
}

/// InfoNCE on a `batch × batch` score matrix with `signal` added to the
/// diagonal and unit Gaussian noise everywhere. Returns
/// `[nce, nce + ln B, ln B]`: the term, its mutual-information estimate, and
/// the ceiling that estimate can never exceed.
#[wasm_bindgen]
pub fn nce_probe(batch: usize, signal: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Tensor::zeros(&[batch, batch]);
    for (k, v) in scores.data_mut().iter_mut().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = noise + if k / batch.max(1) == k % batch.max(1) { signal } else { 0.0 };
    }
    let nce = nce_from_scores(&scores).map_err(js_err)?;
    let ln_b = (batch as f64).ln();
    Ok(vec![nce, nce + ln_b, ln_b])
}
