//! Toy pixel-observation control tasks with per-step distractor sprites.
//!
//! Two tasks share one contract: a 2-D point mass that must reach a fixed goal,
//! and a torque-limited pendulum that must stay upright. Observations are
//! `3×S×S` RGB images in `[0, 1]`. Distractor sprites are redrawn at fresh
//! uniform positions on every frame from a generator that is independent of the
//! dynamics generator, so the physical trajectory depends only on
//! `dynamics_seed` and the actions.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const DT: f64 = 0.05;

const POINTMASS_DRAG: f64 = 0.95;
const POINTMASS_GOAL: [f64; 2] = [0.5, 0.0];
const GRAVITY: f64 = 10.0;
const PENDULUM_MASS: f64 = 1.0;
const PENDULUM_LENGTH: f64 = 1.0;
const MAX_TORQUE: f64 = 2.0;

/// Distractor palette, cycled by sprite index.
pub const DISTRACTOR_COLORS: [[f32; 3]; 4] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
];
pub const AGENT_COLOR: [f32; 3] = [1.0, 1.0, 1.0];
pub const GOAL_COLOR: [f32; 3] = [0.0, 1.0, 1.0];
const ROD_COLOR: [f32; 3] = [0.55, 0.55, 0.55];
const PIVOT_COLOR: [f32; 3] = [0.8, 0.4, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pointmass,
    Pendulum,
}

impl Task {
    pub fn action_dim(self) -> usize {
        match self {
            Task::Pointmass => 2,
            Task::Pendulum => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Pointmass => "pointmass",
            Task::Pendulum => "pendulum",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub image_size: usize,
    pub episode_len: usize,
    pub distractors: usize,
    /// Sprite side in pixels; `0` selects `image_size / 8`.
    pub distractor_size: usize,
    pub dynamics_seed: u64,
    pub distractor_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::Pendulum,
            image_size: 32,
            episode_len: 100,
            distractors: 0,
            distractor_size: 0,
            dynamics_seed: 0,
            distractor_seed: 1,
        }
    }
}

impl EnvConfig {
    pub fn sprite_side(&self) -> usize {
        if self.distractor_size > 0 {
            self.distractor_size
        } else {
            (self.image_size / 8).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config(format!("image_size {} is below 8", self.image_size)));
        }
        if self.episode_len == 0 {
            return Err(Error::Config("episode_len must be positive".into()));
        }
        if self.sprite_side() > self.image_size {
            return Err(Error::Config("distractor sprite larger than the image".into()));
        }
        Ok(())
    }
}

/// RGB frame, `3×S×S`, every element in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Tensor<f32>,
}

impl Observation {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let s = self.size();
        let d = self.image.data();
        [d[y * s + x], d[s * s + y * s + x], d[2 * s * s + y * s + x]]
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let s = self.size();
        let mut out = format!("P6\n{s} {s}\n255\n").into_bytes();
        for y in 0..s {
            for x in 0..s {
                for c in self.pixel(x, y) {
                    out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Hidden physical state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrueState {
    Pointmass { pos: [f64; 2], vel: [f64; 2] },
    /// `theta` is measured from upright and wrapped to `(-π, π]`.
    Pendulum { theta: f64, omega: f64 },
}

impl TrueState {
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            TrueState::Pointmass { pos, vel } => vec![pos[0], pos[1], vel[0], vel[1]],
            TrueState::Pendulum { theta, omega } => vec![theta, omega],
        }
    }

    pub fn reward(&self) -> f64 {
        match *self {
            TrueState::Pointmass { pos, .. } => {
                let d = ((pos[0] - POINTMASS_GOAL[0]).powi(2) + (pos[1] - POINTMASS_GOAL[1]).powi(2)).sqrt();
                (1.0 - d / (2.0 * 2f64.sqrt())).max(0.0)
            }
            TrueState::Pendulum { theta, .. } => (theta.cos() + 1.0) / 2.0,
        }
    }

    /// Advances one control step under an action already clamped to `[-1, 1]`.
    pub fn advance(&mut self, action: &[f64]) {
        match self {
            TrueState::Pointmass { pos, vel } => {
                for i in 0..2 {
                    vel[i] += action[i] * DT;
                    vel[i] *= POINTMASS_DRAG;
                    pos[i] += vel[i] * DT;
                    if pos[i] > 1.0 {
                        pos[i] = 2.0 - pos[i];
                        vel[i] = -vel[i];
                    } else if pos[i] < -1.0 {
                        pos[i] = -2.0 - pos[i];
                        vel[i] = -vel[i];
                    }
                }
            }
            TrueState::Pendulum { theta, omega } => {
                let torque = action[0] * MAX_TORQUE;
                let l = PENDULUM_LENGTH;
                let acc = 3.0 * theta.sin() * GRAVITY / (2.0 * l)
                    + 3.0 * torque / (PENDULUM_MASS * l * l);
                *omega += acc * DT;
                *theta = wrap_angle(*theta + *omega * DT);
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Top-left pixel of a distractor sprite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpritePos {
    pub x: usize,
    pub y: usize,
}

/// A live episode.
pub struct Env {
    config: EnvConfig,
    state: TrueState,
    steps: usize,
    distractor_rng: ChaCha8Rng,
    distractors: Vec<SpritePos>,
}

impl Env {
    pub fn reset(config: &EnvConfig) -> Result<(Self, Observation)> {
        config.validate()?;
        let mut dyn_rng = ChaCha8Rng::seed_from_u64(config.dynamics_seed);
        let state = match config.task {
            Task::Pointmass => TrueState::Pointmass {
                pos: [dyn_rng.random_range(-1.0..1.0), dyn_rng.random_range(-1.0..1.0)],
                vel: [0.0, 0.0],
            },
            Task::Pendulum => TrueState::Pendulum {
                theta: dyn_rng.random_range(-0.1..=0.1),
                omega: 0.0,
            },
        };
        let mut env = Self {
            config: config.clone(),
            state,
            steps: 0,
            distractor_rng: ChaCha8Rng::seed_from_u64(config.distractor_seed),
            distractors: Vec::new(),
        };
        env.redraw_distractors();
        let obs = env.observe();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_dim(&self) -> usize {
        self.config.task.action_dim()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.config.episode_len
    }

    pub fn true_state(&self) -> TrueState {
        self.state
    }

    /// Replaces the hidden state; the next frame reflects it. Intended for tests and demos.
    pub fn set_state(&mut self, state: TrueState) -> Result<()> {
        if std::mem::discriminant(&state) != std::mem::discriminant(&self.state) {
            return Err(Error::Contract("state belongs to a different task".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn distractor_positions(&self) -> &[SpritePos] {
        &self.distractors
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::Contract(format!(
                "step after the episode ended at {} steps",
                self.config.episode_len
            )));
        }
        if action.len() != self.action_dim() {
            return Err(Error::Dimension(format!(
                "action has {} entries, {} task expects {}",
                action.len(),
                self.config.task.name(),
                self.action_dim()
            )));
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        self.state.advance(&a);
        self.steps += 1;
        self.redraw_distractors();
        Ok(StepResult {
            observation: self.observe(),
            reward: self.state.reward(),
            done: self.is_done(),
        })
    }

    fn redraw_distractors(&mut self) {
        let span = self.config.image_size - self.config.sprite_side() + 1;
        self.distractors = (0..self.config.distractors)
            .map(|_| SpritePos {
                x: self.distractor_rng.random_range(0..span),
                y: self.distractor_rng.random_range(0..span),
            })
            .collect();
    }

    fn observe(&self) -> Observation {
        render(&self.config, &self.state, &self.distractors)
    }
}

struct Canvas {
    s: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let s = self.s;
        for (ch, v) in c.into_iter().enumerate() {
            self.data[ch * s * s + y * s + x] = v;
        }
    }

    /// Pixels whose centres lie within `r` of `(cx, cy)`.
    fn disc(&mut self, cx: f64, cy: f64, r: f64, c: [f32; 3]) {
        for y in 0..self.s {
            for x in 0..self.s {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    self.put(x, y, c);
                }
            }
        }
    }
}

/// Pixel-space centre of the agent sprite for a state.
pub fn agent_pixel_center(task_state: &TrueState, image_size: usize) -> (f64, f64) {
    let s = image_size as f64;
    match *task_state {
        TrueState::Pointmass { pos, .. } => arena_to_pixel(pos, image_size),
        TrueState::Pendulum { theta, .. } => {
            let len = 0.375 * s;
            (s / 2.0 + len * theta.sin(), s / 2.0 - len * theta.cos())
        }
    }
}

fn agent_radius(image_size: usize) -> f64 {
    (image_size as f64 / 16.0).max(1.0)
}

fn arena_to_pixel(p: [f64; 2], image_size: usize) -> (f64, f64) {
    let s = image_size as f64;
    let m = agent_radius(image_size);
    (
        m + (p[0] + 1.0) / 2.0 * (s - 2.0 * m),
        m + (1.0 - p[1]) / 2.0 * (s - 2.0 * m),
    )
}

/// Deterministic rasterisation: background, distractors, goal, then agent.
pub fn render(config: &EnvConfig, state: &TrueState, distractors: &[SpritePos]) -> Observation {
    let s = config.image_size;
    let mut cv = Canvas {
        s,
        data: vec![0.0; CHANNELS * s * s],
    };
    let side = config.sprite_side();
    for (i, p) in distractors.iter().enumerate() {
        let color = DISTRACTOR_COLORS[i % DISTRACTOR_COLORS.len()];
        if i % 2 == 0 {
            for y in p.y..(p.y + side).min(s) {
                for x in p.x..(p.x + side).min(s) {
                    cv.put(x, y, color);
                }
            }
        } else {
            let h = side as f64 / 2.0;
            cv.disc(p.x as f64 + h, p.y as f64 + h, h, color);
        }
    }
    let r = agent_radius(s);
    match *state {
        TrueState::Pointmass { .. } => {
            let (gx, gy) = arena_to_pixel(POINTMASS_GOAL, s);
            cv.disc(gx, gy, r * 0.75, GOAL_COLOR);
        }
        TrueState::Pendulum { .. } => {
            let (tx, ty) = agent_pixel_center(state, s);
            let (px, py) = (s as f64 / 2.0, s as f64 / 2.0);
            let n = 4 * s;
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let x = px + t * (tx - px);
                let y = py + t * (ty - py);
                if x >= 0.0 && y >= 0.0 && (x as usize) < s && (y as usize) < s {
                    cv.put(x as usize, y as usize, ROD_COLOR);
                }
            }
            cv.disc(px, py, r * 0.6, PIVOT_COLOR);
        }
    }
    let (ax, ay) = agent_pixel_center(state, s);
    cv.disc(ax, ay, r, AGENT_COLOR);
    Observation {
        image: Tensor::new(&[CHANNELS, s, s], cv.data).expect("canvas has 3·S·S elements"),
    }
}
