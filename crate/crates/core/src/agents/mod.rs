//! The learned components: robot actor-critic, semantic regressor and
//! observer actor-critic, with the observer rewards and training loops.

mod a2c;
mod train;

pub use train::{train_observer_a2c, train_regressor, train_robot_a2c, TrainLog, TrainRow};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{decode, CodebookEnsemble, Level, Message, NULL_LEVEL};
use crate::error::{Error, Result};
use crate::neural::checkpoint::Checkpoint;
use crate::neural::{sample_categorical, softmax, Adam, Network, NetworkSpec, RecurrentState, StepOutput};
use crate::seed::Rng;

/// Which communication problem the observer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveLevel {
    A,
    B,
    C,
}

impl ObjectiveLevel {
    pub const ALL: [ObjectiveLevel; 3] = [ObjectiveLevel::A, ObjectiveLevel::B, ObjectiveLevel::C];

    fn code(self) -> f64 {
        match self {
            ObjectiveLevel::A => 0.0,
            ObjectiveLevel::B => 1.0,
            ObjectiveLevel::C => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(ObjectiveLevel::A),
            1 => Ok(ObjectiveLevel::B),
            2 => Ok(ObjectiveLevel::C),
            _ => Err(Error::invalid("level", format!("unknown objective code {c}"))),
        }
    }
}

impl fmt::Display for ObjectiveLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObjectiveLevel::A => "A",
            ObjectiveLevel::B => "B",
            ObjectiveLevel::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for ObjectiveLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(ObjectiveLevel::A),
            "B" => Ok(ObjectiveLevel::B),
            "C" => Ok(ObjectiveLevel::C),
            _ => Err(Error::invalid("level", format!("expected A, B or C, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub robot_lr: f64,
    pub observer_lr: f64,
    pub regressor_lr: f64,
    /// Minimum number of environment steps per parameter update.
    pub batch_size: usize,
    /// Episodes simulated concurrently against one parameter snapshot.
    pub rollout_group: usize,
    pub robot_episodes: usize,
    pub observer_episodes: usize,
    pub regressor_episodes: usize,
    pub level: ObjectiveLevel,
    /// Cost per transmitted byte.
    pub beta: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Advantage smoothing; 0 is the one-step TD advantage.
    pub gae_lambda: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub bptt_window: usize,
    /// Probability that a robot or regressor training step receives the
    /// null token instead of the finest message.
    pub drop_prob: f64,
    /// Feed the age of information to the observer as an explicit input.
    pub observer_aoi_input: bool,
    pub recurrent_hidden: usize,
    pub mlp_hidden: usize,
    /// Validate every this many episodes and keep the best snapshot; 0 keeps
    /// the final parameters.
    pub validation_every: usize,
    pub validation_episodes: usize,
    /// Multipliers on the observer reward during training, per objective.
    /// They only rescale the optimization problem; logs and evaluation use
    /// the unscaled reward.
    pub reward_scale_a: f64,
    pub reward_scale_b: f64,
    pub reward_scale_c: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            robot_lr: 1e-3,
            observer_lr: 1e-3,
            regressor_lr: 1e-3,
            batch_size: 1,
            rollout_group: 1,
            robot_episodes: 8000,
            observer_episodes: 2000,
            regressor_episodes: 1000,
            level: ObjectiveLevel::C,
            beta: 0.05,
            entropy_coef: 0.01,
            value_coef: 0.25,
            gae_lambda: 0.0,
            grad_clip: 5.0,
            bptt_window: crate::neural::DEFAULT_BPTT_WINDOW,
            drop_prob: 0.3,
            observer_aoi_input: true,
            recurrent_hidden: 64,
            mlp_hidden: 128,
            validation_every: 250,
            validation_episodes: 8,
            reward_scale_a: 0.05,
            reward_scale_b: 1.0,
            reward_scale_c: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn reward_scale(&self, level: ObjectiveLevel) -> f64 {
        match level {
            ObjectiveLevel::A => self.reward_scale_a,
            ObjectiveLevel::B => self.reward_scale_b,
            ObjectiveLevel::C => self.reward_scale_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::invalid(format!("train.{field}"), reason));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        for (name, lr) in [
            ("robot_lr", self.robot_lr),
            ("observer_lr", self.observer_lr),
            ("regressor_lr", self.regressor_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(name, "must be finite and non-negative");
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta", "must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.rollout_group == 0 {
            return bad("rollout_group", "must be at least 1");
        }
        if self.bptt_window == 0 {
            return bad("bptt_window", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad("drop_prob", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", "must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("entropy_coef", "loss weights must be non-negative");
        }
        if self.validation_every > 0 && self.validation_episodes == 0 {
            return bad("validation_episodes", "must be at least 1 when validating");
        }
        for (name, v) in [
            ("reward_scale_a", self.reward_scale_a),
            ("reward_scale_b", self.reward_scale_b),
            ("reward_scale_c", self.reward_scale_c),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be finite and positive");
            }
        }
        if self.recurrent_hidden == 0 || self.mlp_hidden == 0 {
            return bad("recurrent_hidden", "layer widths must be positive");
        }
        Ok(())
    }
}

const ROLE_ROBOT: u32 = 1;
const ROLE_OBSERVER: u32 = 2;
const ROLE_REGRESSOR: u32 = 3;
/// Bumped whenever an input layout changes.
const INPUT_LAYOUT_VERSION: f64 = 1.0;

/// Parameters plus optimizer state of one network.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub params: Vec<f64>,
    pub adam: Adam,
}

impl Model {
    fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let net = Network::new(spec)?;
        let params = net.init_params(rng);
        let adam = Adam::new(params.len());
        Ok(Self { net, params, adam })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.net.spec())
    }

    fn checkpoint(&self, role: u32, meta: Vec<f64>) -> Checkpoint {
        Checkpoint {
            role,
            spec: *self.net.spec(),
            meta,
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }

    fn from_checkpoint(ck: Checkpoint, role: u32, path: &Path) -> Result<Self> {
        if ck.role != role {
            return Err(Error::format(
                path.display().to_string(),
                format!("checkpoint role {} where {role} was expected", ck.role),
            ));
        }
        Ok(Self {
            net: Network::new(ck.spec)?,
            params: ck.params,
            adam: ck.adam,
        })
    }
}

fn meta_at(meta: &[f64], i: usize, path: &Path) -> Result<f64> {
    meta.get(i)
        .copied()
        .ok_or_else(|| Error::format(path.display().to_string(), "truncated checkpoint metadata"))
}

fn check_layout(meta: &[f64], path: &Path) -> Result<()> {
    if meta_at(meta, 0, path)? != INPUT_LAYOUT_VERSION {
        return Err(Error::format(path.display().to_string(), "unsupported input layout version"));
    }
    Ok(())
}

/// Robot-side input: dequantized features (zeros for silence), a one-hot of
/// the level over `0..=max_level` and a no-transmission flag.
pub fn robot_input(decoded: Option<&[f64]>, level: Level, max_level: Level, feature_len: usize) -> Vec<f64> {
    let mut x = vec![0.0; robot_input_len(max_level, feature_len)];
    if let Some(f) = decoded {
        x[..feature_len].copy_from_slice(f);
    }
    x[feature_len + level as usize] = 1.0;
    if decoded.is_none() {
        x[feature_len + max_level as usize + 1] = 1.0;
    }
    x
}

pub fn robot_input_len(max_level: Level, feature_len: usize) -> usize {
    feature_len + max_level as usize + 2
}

/// Robot-side input for a received message, decoding it when non-null.
pub fn message_input(msg: &Message, ensemble: &CodebookEnsemble) -> Result<Vec<f64>> {
    let max = ensemble.max_level();
    let len = ensemble.feature_len();
    if msg.is_null() {
        Ok(robot_input(None, NULL_LEVEL, max, len))
    } else {
        let f = decode(msg, ensemble)?;
        Ok(robot_input(Some(f.as_slice()), msg.level, max, len))
    }
}

/// Observer input: raw features, previous robot action one-hot (2), previous
/// own level one-hot (`max_level + 1`) and `min(aoi / 10, 1)`. Missing
/// feedback (first step) leaves the one-hots at zero.
pub fn observer_input(
    features: &[f64],
    prev_robot_action: Option<usize>,
    prev_level: Option<Level>,
    aoi: usize,
    max_level: Level,
    use_aoi: bool,
) -> Vec<f64> {
    let f = features.len();
    let mut x = vec![0.0; observer_input_len(max_level, f)];
    x[..f].copy_from_slice(features);
    if let Some(a) = prev_robot_action {
        x[f + a] = 1.0;
    }
    if let Some(l) = prev_level {
        x[f + 2 + l as usize] = 1.0;
    }
    if use_aoi {
        x[f + 3 + max_level as usize] = (aoi as f64 / 10.0).min(1.0);
    }
    x
}

pub fn observer_input_len(max_level: Level, feature_len: usize) -> usize {
    feature_len + 2 + max_level as usize + 1 + 1
}

fn spec_for(input_dim: usize, outputs: usize, value: bool, cfg: &TrainConfig) -> NetworkSpec {
    NetworkSpec {
        input_dim,
        recurrent_hidden: cfg.recurrent_hidden,
        mlp_hidden: cfg.mlp_hidden,
        policy_outputs: outputs,
        has_value_head: value,
    }
}

/// Recurrent actor-critic acting on received messages.
#[derive(Debug, Clone)]
pub struct RobotPolicy {
    pub model: Model,
    pub max_level: Level,
    pub feature_len: usize,
    /// Level of the messages it was trained on.
    pub trained_level: Level,
}

/// Result of one robot decision.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotDecision {
    pub action: usize,
    pub probs: Vec<f64>,
    pub value: f64,
    pub state: RecurrentState,
}

impl RobotPolicy {
    pub fn new(max_level: Level, feature_len: usize, trained_level: Level, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let spec = spec_for(robot_input_len(max_level, feature_len), 2, true, cfg);
        Ok(Self {
            model: Model::new(spec, rng)?,
            max_level,
            feature_len,
            trained_level,
        })
    }

    pub fn input_len(&self) -> usize {
        robot_input_len(self.max_level, self.feature_len)
    }

    pub fn forward(&self, input: &[f64], state: &RecurrentState) -> Result<(StepOutput, RecurrentState)> {
        self.model.net.forward(&self.model.params, input, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = vec![
            INPUT_LAYOUT_VERSION,
            self.max_level as f64,
            self.feature_len as f64,
            self.trained_level as f64,
        ];
        self.model.checkpoint(ROLE_ROBOT, meta).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.meta.clone();
        check_layout(&meta, path)?;
        let max_level = meta_at(&meta, 1, path)? as Level;
        let feature_len = meta_at(&meta, 2, path)? as usize;
        let trained_level = meta_at(&meta, 3, path)? as Level;
        let model = Model::from_checkpoint(ck, ROLE_ROBOT, path)?;
        if model.spec().input_dim != robot_input_len(max_level, feature_len) {
            return Err(Error::format(path.display().to_string(), "input size disagrees with metadata"));
        }
        Ok(Self {
            model,
            max_level,
            feature_len,
            trained_level,
        })
    }
}

/// Feeds one message (or the null token) to the robot and picks an action.
/// The recurrent state advances exactly once.
pub fn robot_act(
    policy: &RobotPolicy,
    msg: &Message,
    ensemble: &CodebookEnsemble,
    state: &RecurrentState,
    rng: &mut Rng,
    greedy: bool,
) -> Result<RobotDecision> {
    let input = message_input(msg, ensemble)?;
    let (out, next) = policy.forward(&input, state)?;
    let action = sample_categorical(&out.logits, rng, greedy);
    Ok(RobotDecision {
        action,
        probs: softmax(&out.logits),
        value: out.value,
        state: next,
    })
}

/// Value of information of a received message: critic value after consuming
/// `msg` minus the value after consuming the null token, both from `prior`.
pub fn estimate_voi(
    policy: &RobotPolicy,
    msg: &Message,
    ensemble: &CodebookEnsemble,
    prior: &RecurrentState,
) -> Result<f64> {
    if msg.is_null() {
        return Ok(0.0);
    }
    let with = policy.forward(&message_input(msg, ensemble)?, prior)?.0.value;
    let null = robot_input(None, NULL_LEVEL, policy.max_level, policy.feature_len);
    let without = policy.forward(&null, prior)?.0.value;
    Ok(with - without)
}

/// Supervised recurrent estimator of the normalized physical state from the
/// robot's inputs.
#[derive(Debug, Clone)]
pub struct SemanticRegressor {
    pub model: Model,
    pub max_level: Level,
    pub feature_len: usize,
}

impl SemanticRegressor {
    pub const OUTPUTS: usize = 4;

    pub fn new(max_level: Level, feature_len: usize, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let spec = spec_for(robot_input_len(max_level, feature_len), Self::OUTPUTS, false, cfg);
        Ok(Self {
            model: Model::new(spec, rng)?,
            max_level,
            feature_len,
        })
    }

    /// Returns the normalized state estimate and the advanced state.
    pub fn predict(&self, input: &[f64], state: &RecurrentState) -> Result<(Vec<f64>, RecurrentState)> {
        let (out, next) = self.model.net.forward(&self.model.params, input, state)?;
        Ok((out.logits, next))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = vec![INPUT_LAYOUT_VERSION, self.max_level as f64, self.feature_len as f64];
        self.model.checkpoint(ROLE_REGRESSOR, meta).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.meta.clone();
        check_layout(&meta, path)?;
        let max_level = meta_at(&meta, 1, path)? as Level;
        let feature_len = meta_at(&meta, 2, path)? as usize;
        let model = Model::from_checkpoint(ck, ROLE_REGRESSOR, path)?;
        if model.spec().policy_outputs != Self::OUTPUTS {
            return Err(Error::format(path.display().to_string(), "regressor must have 4 outputs"));
        }
        Ok(Self {
            model,
            max_level,
            feature_len,
        })
    }
}

/// Recurrent actor-critic choosing the quantization level (0 = silence).
#[derive(Debug, Clone)]
pub struct ObserverPolicy {
    pub model: Model,
    pub max_level: Level,
    pub feature_len: usize,
    pub objective: ObjectiveLevel,
    pub beta: f64,
    pub use_aoi: bool,
}

impl ObserverPolicy {
    pub fn new(max_level: Level, feature_len: usize, cfg: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        let spec = spec_for(
            observer_input_len(max_level, feature_len),
            max_level as usize + 1,
            true,
            cfg,
        );
        Ok(Self {
            model: Model::new(spec, rng)?,
            max_level,
            feature_len,
            objective: cfg.level,
            beta: cfg.beta,
            use_aoi: cfg.observer_aoi_input,
        })
    }

    pub fn forward(&self, input: &[f64], state: &RecurrentState) -> Result<(StepOutput, RecurrentState)> {
        self.model.net.forward(&self.model.params, input, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = vec![
            INPUT_LAYOUT_VERSION,
            self.max_level as f64,
            self.feature_len as f64,
            self.objective.code(),
            self.beta,
            self.use_aoi as u8 as f64,
        ];
        self.model.checkpoint(ROLE_OBSERVER, meta).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta = ck.meta.clone();
        check_layout(&meta, path)?;
        let max_level = meta_at(&meta, 1, path)? as Level;
        let feature_len = meta_at(&meta, 2, path)? as usize;
        let objective = ObjectiveLevel::from_code(meta_at(&meta, 3, path)?)?;
        let beta = meta_at(&meta, 4, path)?;
        let use_aoi = meta_at(&meta, 5, path)? != 0.0;
        let model = Model::from_checkpoint(ck, ROLE_OBSERVER, path)?;
        if model.spec().policy_outputs != max_level as usize + 1 {
            return Err(Error::format(path.display().to_string(), "observer outputs disagree with metadata"));
        }
        Ok(Self {
            model,
            max_level,
            feature_len,
            objective,
            beta,
            use_aoi,
        })
    }
}

/// Per-step quantities the observer rewards draw from. Each level reads only
/// its own fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct RewardContext<'a> {
    pub ell: f64,
    pub beta: f64,
    /// Level A: PSNR between the observation and the robot's reconstruction.
    pub psnr: Option<f64>,
    /// Level B: observer and robot state estimates.
    pub estimates: Option<(&'a [f64], &'a [f64])>,
    /// Level C: environment reward.
    pub env_reward: Option<f64>,
}

pub fn observer_reward(level: ObjectiveLevel, ctx: &RewardContext) -> Result<f64> {
    let cost = ctx.beta * ctx.ell;
    match level {
        ObjectiveLevel::A => Ok(ctx.psnr.ok_or(Error::MissingContext("psnr"))? - cost),
        ObjectiveLevel::B => {
            let (obs, rob) = ctx.estimates.ok_or(Error::MissingContext("state estimates"))?;
            Ok(-crate::codec::distortion_mse(obs, rob)? - cost)
        }
        ObjectiveLevel::C => Ok(ctx.env_reward.ok_or(Error::MissingContext("env reward"))? - cost),
    }
}
