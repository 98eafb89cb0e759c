//! CartPole plant: dynamics, reward, termination and observation generation.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Half-width of the uniform initial-state distribution, per dimension.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemState {
    pub x: f64,
    pub x_dot: f64,
    pub psi: f64,
    pub psi_dot: f64,
}

impl SystemState {
    pub const fn new(x: f64, x_dot: f64, psi: f64, psi_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            psi,
            psi_dot,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.psi, self.psi_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_live(&self, cfg: &EnvConfig) -> bool {
        self.is_finite() && self.x.abs() <= cfg.x_max && self.psi.abs() <= cfg.psi_max
    }

    pub fn negate(self) -> Self {
        Self::new(-self.x, -self.x_dot, -self.psi, -self.psi_dot)
    }

    /// Coordinates scaled by the per-dimension normalization constants.
    pub fn normalized(&self, cfg: &EnvConfig) -> [f64; 4] {
        let s = cfg.scales();
        let a = self.to_array();
        [a[0] / s[0], a[1] / s[1], a[2] / s[2], a[3] / s[3]]
    }

    pub fn from_normalized(v: &[f64], cfg: &EnvConfig) -> Self {
        let s = cfg.scales();
        Self::new(v[0] * s[0], v[1] * s[1], v[2] * s[2], v[3] * s[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    Vector,
    Pixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub x_max: f64,
    pub psi_max: f64,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub time_step: f64,
    pub horizon: usize,
    pub obs_mode: ObsMode,
    pub obs_noise_sigma: f64,
    /// Normalization scale for the cart velocity.
    pub velocity_scale: f64,
    /// Normalization scale for the pole angular velocity.
    pub angular_velocity_scale: f64,
    pub frame_height: usize,
    pub frame_width: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            x_max: 4.8,
            psi_max: 2.0 * PI / 15.0,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            time_step: 0.02,
            horizon: 500,
            obs_mode: ObsMode::Vector,
            obs_noise_sigma: 0.01,
            velocity_scale: 2.0,
            angular_velocity_scale: 2.0,
            frame_height: 40,
            frame_width: 80,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.x_max", self.x_max),
            ("env.gravity", self.gravity),
            ("env.cart_mass", self.cart_mass),
            ("env.pole_mass", self.pole_mass),
            ("env.pole_half_length", self.pole_half_length),
            ("env.time_step", self.time_step),
            ("env.velocity_scale", self.velocity_scale),
            ("env.angular_velocity_scale", self.angular_velocity_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.psi_max > 0.0 && self.psi_max < PI / 2.0) {
            return Err(Error::invalid(
                "env.psi_max",
                format!("must lie in (0, pi/2), got {}", self.psi_max),
            ));
        }
        if !(self.force_magnitude.is_finite() && self.force_magnitude >= 0.0) {
            return Err(Error::invalid("env.force_magnitude", "must be >= 0"));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("env.horizon", "must be >= 1"));
        }
        if !(self.obs_noise_sigma.is_finite() && self.obs_noise_sigma >= 0.0) {
            return Err(Error::invalid("env.obs_noise_sigma", "must be >= 0"));
        }
        if self.frame_height < 8 || self.frame_width < 8 {
            return Err(Error::invalid("env.frame_height", "frames must be at least 8x8"));
        }
        Ok(())
    }

    pub fn scales(&self) -> [f64; 4] {
        [
            self.x_max,
            self.velocity_scale,
            self.psi_max,
            self.angular_velocity_scale,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
}

impl Action {
    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Left
        } else {
            Action::Right
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Self {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

/// Draws every coordinate i.i.d. from `U[-INIT_RANGE, INIT_RANGE]`.
pub fn reset(rng: &mut Rng) -> SystemState {
    reset_within(rng, INIT_RANGE)
}

pub fn reset_within(rng: &mut Rng, half_width: f64) -> SystemState {
    let mut draw = || {
        if half_width > 0.0 {
            rng.gen_range(-half_width..=half_width)
        } else {
            0.0
        }
    };
    SystemState::new(draw(), draw(), draw(), draw())
}

/// `R = -|x| / x_max - |psi| / psi_max`.
pub fn reward(state: &SystemState, cfg: &EnvConfig) -> f64 {
    -state.x.abs() / cfg.x_max - state.psi.abs() / cfg.psi_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: SystemState,
    pub reward: f64,
    /// The next state left the admissible region.
    pub terminated: bool,
}

/// One explicit Euler step of the cart-pole equations of motion.
pub fn step(state: &SystemState, action: Action, cfg: &EnvConfig) -> Result<Transition> {
    if !state.is_live(cfg) {
        return Err(Error::NotLive {
            x: state.x,
            psi: state.psi,
        });
    }
    let force = match action {
        Action::Right => cfg.force_magnitude,
        Action::Left => -cfg.force_magnitude,
    };
    let total_mass = cfg.cart_mass + cfg.pole_mass;
    let polemass_length = cfg.pole_mass * cfg.pole_half_length;
    let (sin, cos) = state.psi.sin_cos();

    let temp = (force + polemass_length * state.psi_dot * state.psi_dot * sin) / total_mass;
    let psi_acc = (cfg.gravity * sin - cos * temp)
        / (cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * cos * cos / total_mass));
    let x_acc = temp - polemass_length * psi_acc * cos / total_mass;

    let tau = cfg.time_step;
    let next = SystemState::new(
        state.x + tau * state.x_dot,
        state.x_dot + tau * x_acc,
        state.psi + tau * state.psi_dot,
        state.psi_dot + tau * psi_acc,
    );
    Ok(Transition {
        state: next,
        reward: reward(&next, cfg),
        terminated: !next.is_live(cfg),
    })
}

/// Binary image, row-major, `1` for set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// One sensed snapshot. Vector snapshots hold normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Vector([f64; 4]),
    Pixel(Frame),
}

impl Snapshot {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Snapshot::Vector(v) => v.to_vec(),
            Snapshot::Pixel(f) => f.pixels.iter().map(|&p| p as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Snapshot::Vector(_) => 4,
            Snapshot::Pixel(f) => f.pixels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub previous: Snapshot,
    pub current: Snapshot,
}

impl Observation {
    pub fn mode(&self) -> ObsMode {
        match self.current {
            Snapshot::Vector(_) => ObsMode::Vector,
            Snapshot::Pixel(_) => ObsMode::Pixel,
        }
    }

    /// Concatenation `previous ++ current`.
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.previous.values();
        v.extend(self.current.values());
        v
    }

    /// Peak-to-peak range of the representation, used as the PSNR peak.
    pub fn dynamic_range(&self) -> f64 {
        match self.mode() {
            // normalized coordinates live in [-1, 1]
            ObsMode::Vector => 2.0,
            ObsMode::Pixel => 1.0,
        }
    }
}

pub fn observe(
    prev: &SystemState,
    curr: &SystemState,
    cfg: &EnvConfig,
    rng: &mut Rng,
) -> Observation {
    match cfg.obs_mode {
        ObsMode::Vector => {
            let mut noisy = |s: &SystemState| {
                let mut v = s.normalized(cfg);
                if cfg.obs_noise_sigma > 0.0 {
                    let normal = Normal::new(0.0, cfg.obs_noise_sigma).expect("sigma validated");
                    for x in v.iter_mut() {
                        *x += normal.sample(rng);
                    }
                }
                Snapshot::Vector(v)
            };
            let previous = noisy(prev);
            let current = noisy(curr);
            Observation { previous, current }
        }
        ObsMode::Pixel => Observation {
            previous: Snapshot::Pixel(render(prev, cfg)),
            current: Snapshot::Pixel(render(curr, cfg)),
        },
    }
}

/// Rasterizes cart and pole. The world interval `[-x_max, x_max]` spans the
/// frame width; the pole is drawn as a one-pixel line from the top of the cart.
pub fn render(state: &SystemState, cfg: &EnvConfig) -> Frame {
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let mut pixels = vec![0u8; h * w];
    let mut set = |r: f64, c: f64| {
        let (r, c) = (r.round(), c.round());
        if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
            pixels[r as usize * w + c as usize] = 1;
        }
    };

    let center_col = (state.x + cfg.x_max) / (2.0 * cfg.x_max) * w as f64;
    let cart_half_width = (w as f64 / 20.0).max(1.0);
    let cart_height = (h as f64 / 10.0).max(1.0);
    let cart_bottom = h as f64 * 0.85;
    let cart_top = cart_bottom - cart_height;

    let mut r = cart_top;
    while r <= cart_bottom {
        let mut c = center_col - cart_half_width;
        while c <= center_col + cart_half_width {
            set(r, c);
            c += 0.5;
        }
        r += 0.5;
    }

    // pole length in pixels, measured along its axis
    let pole_len = h as f64 * 0.6;
    let (sin, cos) = state.psi.sin_cos();
    let samples = (pole_len * 2.0).ceil() as usize;
    for k in 1..=samples {
        let d = pole_len * k as f64 / samples as f64;
        set(cart_top - 1.0 - d * cos, center_col + d * sin);
    }
    Frame {
        height: h,
        width: w,
        pixels,
    }
}

/// Stateful wrapper that tracks elapsed steps against the horizon.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub cfg: EnvConfig,
    state: SystemState,
    elapsed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub state: SystemState,
    pub reward: f64,
    pub terminated: bool,
    pub done: bool,
}

impl CartPole {
    pub fn new(cfg: EnvConfig, rng: &mut Rng) -> Self {
        let state = reset(rng);
        Self {
            cfg,
            state,
            elapsed: 0,
        }
    }

    pub fn state(&self) -> SystemState {
        self.state
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn step(&mut self, action: Action) -> Result<EnvStep> {
        let tr = step(&self.state, action, &self.cfg)?;
        self.state = tr.state;
        self.elapsed += 1;
        Ok(EnvStep {
            state: tr.state,
            reward: tr.reward,
            terminated: tr.terminated,
            done: tr.terminated || self.elapsed >= self.cfg.horizon,
        })
    }
}
