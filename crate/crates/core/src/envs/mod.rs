//! Toy ground-truth dynamics: a point mass tracking a planar velocity
//! command and a torque-limited pendulum tracking an angle command.
//!
//! Both integrate with semi-implicit Euler. Observation layouts:
//!
//! | kind        | dims | layout                                              |
//! |-------------|------|-----------------------------------------------------|
//! | point-mass  | 8    | velocity(2), command(2), position(2), prev action(2)|
//! | pendulum    | 4    | angular velocity, angle command, angle, prev torque |
//!
//! The pendulum angle is measured from upright, so balancing is unstable
//! without control.

mod reward;
mod shift;

use std::cell::Cell;
use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use reward::{reward, RewardBreakdown, RewardWeights, TRACKING_SIGMA};
pub use shift::ShiftSpec;

/// A flat observation vector; see the module docs for the layout.
pub type Observation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    PointMass,
    Pendulum,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::PointMass => 8,
            EnvKind::Pendulum => 4,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::PointMass => 2,
            EnvKind::Pendulum => 1,
        }
    }

    pub fn layout(self) -> ObsLayout {
        let d = self.act_dim();
        ObsLayout { velocity: 0..d, command: d..2 * d, position: 2 * d..3 * d, prev_action: 3 * d..4 * d }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "point-mass",
            EnvKind::Pendulum => "pendulum",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point-mass" => Ok(EnvKind::PointMass),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(Error::Config(format!("unknown env kind {other:?} (point-mass | pendulum)"))),
        }
    }
}

/// Index ranges of the observation blocks. Every block has the action width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsLayout {
    pub velocity: Range<usize>,
    pub command: Range<usize>,
    pub position: Range<usize>,
    pub prev_action: Range<usize>,
}

impl ObsLayout {
    /// Dimensions measured by "sensors" (velocity and position); observation
    /// bias and noise only touch these.
    pub fn is_sensor(&self, i: usize) -> bool {
        self.velocity.contains(&i) || self.position.contains(&i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// kg
    pub mass: f64,
    /// N·s/m (N·m·s/rad for the pendulum)
    pub damping: f64,
    /// N (N·m for the pendulum); actions in [-1, 1] scale to this.
    pub max_force: f64,
    /// m; leaving the square arena is a failure (point mass).
    pub arena_half_width: f64,
    /// m (pendulum)
    pub length: f64,
    /// m/s² (pendulum)
    pub gravity: f64,
    /// rad from upright; exceeding it is a failure (pendulum).
    pub angle_limit: f64,
    /// s
    pub dt: f64,
    pub episode_length: usize,
    /// Per-dimension observation noise std; empty means noiseless.
    pub obs_noise_std: Vec<f64>,
    /// Per-dimension additive observation bias; empty means none.
    pub obs_bias: Vec<f64>,
    pub reward: RewardWeights,
    /// Steps between command resamples.
    pub command_interval: usize,
    /// Commands are uniform in `[-command_bound, command_bound]` per axis.
    pub command_bound: f64,
    /// Half-width of the uniform initial position (angle) distribution.
    pub init_position: f64,
    /// Half-width of the uniform initial velocity distribution.
    pub init_velocity: f64,
    /// Speed above which the point-mass velocity penalty applies.
    pub speed_limit: f64,
    /// Point mass: distance from the center (per axis) where the outward
    /// edge slope begins.
    pub edge_start: f64,
    /// Point mass: outward force `edge_pull · (|p| − edge_start)²` per axis
    /// beyond `edge_start` (N/m²); zero disables the slope.
    pub edge_pull: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::point_mass()
    }
}

impl EnvConfig {
    pub fn point_mass() -> Self {
        Self {
            kind: EnvKind::PointMass,
            mass: 1.0,
            damping: 0.5,
            max_force: 2.0,
            arena_half_width: 1.0,
            length: 1.0,
            gravity: 9.81,
            angle_limit: 1.0,
            dt: 0.02,
            episode_length: 200,
            obs_noise_std: vec![0.01, 0.01, 0.0, 0.0, 0.01, 0.01, 0.0, 0.0],
            obs_bias: Vec::new(),
            reward: RewardWeights::point_mass(),
            command_interval: 100,
            command_bound: 0.5,
            init_position: 0.3,
            init_velocity: 0.1,
            speed_limit: 1.0,
            edge_start: 0.7,
            edge_pull: 200.0,
            seed: 0,
        }
    }

    pub fn pendulum() -> Self {
        Self {
            kind: EnvKind::Pendulum,
            mass: 1.0,
            damping: 0.1,
            max_force: 12.0,
            arena_half_width: 2.0,
            length: 1.0,
            gravity: 9.81,
            angle_limit: 1.0,
            dt: 0.02,
            episode_length: 200,
            obs_noise_std: vec![0.01, 0.0, 0.01, 0.0],
            obs_bias: Vec::new(),
            reward: RewardWeights::pendulum(),
            command_interval: 100,
            command_bound: 0.3,
            init_position: 0.1,
            init_velocity: 0.1,
            speed_limit: 1.0,
            edge_start: 1.0,
            edge_pull: 0.0,
            seed: 0,
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointMass => Self::point_mass(),
            EnvKind::Pendulum => Self::pendulum(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.kind.act_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if self.episode_length < 1 {
            return bad("episode_length must be >= 1".into());
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad(format!("mass must be > 0, got {}", self.mass));
        }
        if !(self.length > 0.0) || !(self.arena_half_width > 0.0) || !(self.angle_limit > 0.0) {
            return bad("length, arena_half_width and angle_limit must be > 0".into());
        }
        if self.damping < 0.0 || self.max_force < 0.0 || self.command_bound < 0.0 {
            return bad("damping, max_force and command_bound must be >= 0".into());
        }
        if self.edge_pull < 0.0 || self.edge_start < 0.0 {
            return bad("edge_pull and edge_start must be >= 0".into());
        }
        if self.init_position < 0.0 || self.init_velocity < 0.0 {
            return bad("initial distribution widths must be >= 0".into());
        }
        if self.command_interval < 1 {
            return bad("command_interval must be >= 1".into());
        }
        if !self.reward.is_finite() {
            return bad("reward weights must be finite".into());
        }
        let d = self.obs_dim();
        for (name, v) in [("obs_noise_std", &self.obs_noise_std), ("obs_bias", &self.obs_bias)] {
            if !v.is_empty() && v.len() != d {
                return bad(format!("{name} needs 0 or {d} entries, got {}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.obs_noise_std.iter().any(|&s| s < 0.0) {
            return bad("obs_noise_std must be >= 0".into());
        }
        Ok(())
    }

    /// Stable content hash used to tag datasets.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Position (m) or angle (rad).
    pub position: Vec<f64>,
    /// Velocity (m/s) or angular velocity (rad/s).
    pub velocity: Vec<f64>,
    pub command: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub step: usize,
}

/// Random draws consumed by one [`step`]: standard normals for the
/// observation noise and uniforms in `[-1, 1]` for a possible command
/// resample. Replaying the same draws reproduces the trajectory exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    pub obs: Vec<f64>,
    pub command: Vec<f64>,
}

impl StepNoise {
    pub fn zeros(kind: EnvKind) -> Self {
        Self { obs: vec![0.0; kind.obs_dim()], command: vec![0.0; kind.act_dim()] }
    }

    pub fn draw(kind: EnvKind, rng: &mut Rng) -> Self {
        Self {
            obs: (0..kind.obs_dim()).map(|_| rng::normal(rng)).collect(),
            command: (0..kind.act_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub obs: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub failure: bool,
}

thread_local! {
    static TRUE_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of ground-truth [`step`] calls made on the current thread.
pub fn true_steps_on_this_thread() -> u64 {
    TRUE_STEPS.with(Cell::get)
}

/// Noise-free observation of a state.
pub fn clean_observation(state: &EnvState, kind: EnvKind) -> Observation {
    let mut o = Vec::with_capacity(kind.obs_dim());
    o.extend_from_slice(&state.velocity);
    o.extend_from_slice(&state.command);
    o.extend_from_slice(&state.position);
    o.extend_from_slice(&state.prev_action);
    o
}

fn observe(state: &EnvState, cfg: &EnvConfig, noise: &[f64]) -> Observation {
    let mut o = clean_observation(state, cfg.kind);
    for (i, v) in o.iter_mut().enumerate() {
        if let Some(b) = cfg.obs_bias.get(i) {
            *v += b;
        }
        if let Some(s) = cfg.obs_noise_std.get(i) {
            *v += s * noise[i];
        }
    }
    o
}

/// Whether a state has left the safe region.
pub fn is_failure(position: &[f64], cfg: &EnvConfig) -> bool {
    match cfg.kind {
        EnvKind::PointMass => position.iter().any(|p| p.abs() > cfg.arena_half_width),
        EnvKind::Pendulum => position[0].abs() > cfg.angle_limit,
    }
}

/// Initial state: position and velocity uniform within the configured
/// half-widths, command uniform within the command bound, zero previous
/// action.
pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<(EnvState, Observation)> {
    cfg.validate()?;
    let mut r = rng::rng(seed);
    let d = cfg.act_dim();
    let mut uni = |w: f64| if w > 0.0 { r.random_range(-w..=w) } else { 0.0 };
    let position = (0..d).map(|_| uni(cfg.init_position)).collect();
    let velocity = (0..d).map(|_| uni(cfg.init_velocity)).collect();
    let command = (0..d).map(|_| uni(cfg.command_bound)).collect();
    let state = EnvState { position, velocity, command, prev_action: vec![0.0; d], step: 0 };
    let noise = StepNoise::draw(cfg.kind, &mut r);
    let obs = observe(&state, cfg, &noise.obs);
    Ok((state, obs))
}

/// One control step. Pure in `(state, action, cfg, noise)`.
pub fn step(state: &EnvState, action: &[f64], cfg: &EnvConfig, noise: &StepNoise) -> Result<StepOutcome> {
    let d = cfg.act_dim();
    if action.len() != d {
        return Err(Error::Dimension(format!("{} expects {d} action dims, got {}", cfg.kind.name(), action.len())));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input(format!("non-finite action {action:?}")));
    }
    TRUE_STEPS.with(|c| c.set(c.get() + 1));
    let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let mut next = state.clone();
    let dt = cfg.dt;
    match cfg.kind {
        EnvKind::PointMass => {
            for i in 0..d {
                let p = state.position[i];
                let slope = cfg.edge_pull * (p.abs() - cfg.edge_start).max(0.0).powi(2) * p.signum();
                let force = a[i] * cfg.max_force - cfg.damping * state.velocity[i] + slope;
                next.velocity[i] = state.velocity[i] + dt * force / cfg.mass;
                next.position[i] = state.position[i] + dt * next.velocity[i];
            }
        }
        EnvKind::Pendulum => {
            let inertia = cfg.mass * cfg.length * cfg.length;
            let (theta, omega) = (state.position[0], state.velocity[0]);
            let accel = cfg.gravity / cfg.length * theta.sin()
                + (a[0] * cfg.max_force - cfg.damping * omega) / inertia;
            next.velocity[0] = omega + dt * accel;
            next.position[0] = theta + dt * next.velocity[0];
        }
    }
    next.prev_action = a.clone();
    next.step = state.step + 1;
    let failure = is_failure(&next.position, cfg);
    let done = failure || next.step >= cfg.episode_length;
    let reward = reward(&clean_observation(&next, cfg.kind), &a, &state.prev_action, failure, cfg);
    if next.step.is_multiple_of(cfg.command_interval) {
        next.command = noise.command.iter().map(|u| u * cfg.command_bound).collect();
    }
    let obs = observe(&next, cfg, &noise.obs);
    Ok(StepOutcome { state: next, obs, reward, done, failure })
}

/// Anything that maps an observation to a deterministic action.
pub trait Controller {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn act(&self, obs: &[f64]) -> Vec<f64>;
}

/// A stateful environment instance that owns its noise stream.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    state: EnvState,
    rng: Rng,
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        let (state, obs) = reset(&cfg, rng::child(seed, "reset"))?;
        let rng = rng::rng(rng::child(seed, "noise"));
        Ok((Self { cfg, state, rng }, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let noise = StepNoise::draw(self.cfg.kind, &mut self.rng);
        let out = step(&self.state, action, &self.cfg, &noise)?;
        self.state = out.state.clone();
        Ok(out)
    }
}
