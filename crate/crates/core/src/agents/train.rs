use std::path::Path;

use serde::{Deserialize, Serialize};

use super::a2c::{accumulate, accumulate_regression, normalize_and_clip, A2cWeights, LossSums};
use super::{Model, ObjectiveLevel, ObserverPolicy, RobotPolicy, SemanticRegressor, TrainConfig};
use crate::codec::{CodebookEnsemble, FeatureMap, Level};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::rollout::{run_indexed, Recording, RunOptions, Selector, System};
use crate::seed::{tag, SeedTree, Stream};

/// One row per parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    /// Episodes consumed so far.
    pub episode: usize,
    /// Mean undiscounted episode return of the agent's own reward.
    #[serde(rename = "return")]
    pub mean_return: f64,
    pub mean_length: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub transmit_freq: f64,
    pub mean_ell: f64,
    pub grad_norm: f64,
    /// Validation score when validation ran after this update, else NaN.
    pub validation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct EpisodeResult {
    grad: Vec<f64>,
    loss: LossSums,
    ret: f64,
    transmissions: usize,
    bytes: f64,
}

#[derive(Default)]
struct Batch {
    loss: LossSums,
    episodes: usize,
    ret: f64,
    transmissions: usize,
    bytes: f64,
}

/// Shared update loop. Episodes run in groups of `rollout_group` against one
/// parameter snapshot; groups are added until the batch holds at least
/// `batch_size` steps. Gradients are summed in episode order.
///
/// Every `validation_every` episodes (and at the end) the agent is scored by
/// `validate`; the best-scoring snapshot is restored on return.
#[allow(clippy::too_many_arguments)]
fn drive<T, F, G, V>(
    agent: &mut T,
    model_mut: G,
    lr: f64,
    budget: usize,
    cfg: &TrainConfig,
    log: &mut TrainLog,
    episode: F,
    validate: V,
) -> Result<()>
where
    T: Sync,
    F: Fn(&T, u64) -> Result<EpisodeResult> + Sync + Send,
    G: Fn(&mut T) -> &mut Model,
    V: Fn(&T) -> Result<f64>,
{
    let mut done = 0usize;
    let mut best: Option<(f64, Model)> = None;
    let mut next_check = cfg.validation_every;
    while done < budget {
        let mut grad: Option<Vec<f64>> = None;
        let mut batch = Batch::default();
        while batch.loss.steps < cfg.batch_size && done < budget {
            let n = cfg.rollout_group.min(budget - done);
            let frozen: &T = agent;
            let results = par::map(n, |k| episode(frozen, (done + k) as u64));
            for r in results {
                let r = r?;
                match grad.as_mut() {
                    None => grad = Some(r.grad),
                    Some(g) => g.iter_mut().zip(&r.grad).for_each(|(a, b)| *a += b),
                }
                batch.loss.add(&r.loss);
                batch.episodes += 1;
                batch.ret += r.ret;
                batch.transmissions += r.transmissions;
                batch.bytes += r.bytes;
            }
            done += n;
        }
        let mut grad = grad.expect("at least one episode per batch");
        let norm = normalize_and_clip(&mut grad, batch.loss.steps, cfg.grad_clip)?;
        let model = model_mut(agent);
        model.adam.step(&mut model.params, &grad, lr)?;
        let steps = batch.loss.steps.max(1) as f64;
        log.rows.push(TrainRow {
            episode: done,
            mean_return: batch.ret / batch.episodes as f64,
            mean_length: steps / batch.episodes as f64,
            policy_loss: batch.loss.policy / steps,
            value_loss: batch.loss.value / steps,
            entropy: batch.loss.entropy / steps,
            transmit_freq: batch.transmissions as f64 / steps,
            mean_ell: batch.bytes / steps,
            grad_norm: norm,
            validation: f64::NAN,
        });
        if cfg.validation_every > 0 && (done >= next_check || done == budget) {
            while next_check <= done {
                next_check += cfg.validation_every;
            }
            let score = validate(agent)?;
            log.rows.last_mut().unwrap().validation = score;
            if best.as_ref().map_or(true, |(b, _)| score >= *b) {
                best = Some((score, model_mut(agent).clone()));
            }
        }
        if done % 500 < cfg.rollout_group.max(1) || done == budget {
            let r = log.rows.last().unwrap();
            log::debug!(
                "episode {done}: return {:.3}, length {:.1}, tx {:.3}",
                r.mean_return,
                r.mean_length,
                r.transmit_freq
            );
        }
    }
    if let Some((_, model)) = best {
        *model_mut(agent) = model;
    }
    Ok(())
}

/// Mean per-step reward over the full horizon, where the steps lost to a
/// failure are charged the failure reward.
fn horizon_score(rewards: &[f64], failure_reward: Option<f64>, horizon: usize) -> f64 {
    let lost = horizon.saturating_sub(rewards.len()) as f64;
    let sum: f64 = rewards.iter().sum();
    (sum + failure_reward.map_or(0.0, |r| r * lost)) / horizon.max(rewards.len()) as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn weights(cfg: &TrainConfig) -> A2cWeights {
    A2cWeights {
        gamma: cfg.gamma,
        entropy_coef: cfg.entropy_coef,
        value_coef: cfg.value_coef,
        lambda: cfg.gae_lambda,
        window: cfg.bptt_window,
    }
}

/// Continuation after a failure: the absorbing failure state keeps paying the
/// terminal reward, discounted.
fn absorbing_tail(terminal_reward: f64, gamma: f64) -> f64 {
    gamma * terminal_reward / (1.0 - gamma)
}

/// Trains a robot with A2C on level-`level` messages, each replaced by the
/// null token with probability `cfg.drop_prob`.
pub fn train_robot_a2c(
    env: &EnvConfig,
    features: &FeatureMap,
    ensemble: &CodebookEnsemble,
    level: Level,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    log: &mut TrainLog,
) -> Result<RobotPolicy> {
    cfg.validate()?;
    ensemble.book(level)?;
    let seeds = seeds.child(tag(&format!("robot-{level}")));
    let validation = seeds.child(tag("validation"));
    let mut robot = RobotPolicy::new(
        ensemble.max_level(),
        ensemble.feature_len(),
        level,
        cfg,
        &mut seeds.rng(Stream::Init, 0),
    )?;
    let w = weights(cfg);
    let selector = Selector::Dropout {
        level,
        prob: cfg.drop_prob,
    };
    let opts = RunOptions {
        robot_greedy: false,
        record: Recording {
            robot: true,
            ..Recording::default()
        },
        ..RunOptions::default()
    };
    drive(&mut robot, |r| &mut r.model, cfg.robot_lr, cfg.robot_episodes, cfg, log, |robot, idx| {
        let sys = System {
            env,
            features,
            ensemble,
            robot,
            regressor: None,
        };
        let (trace, tapes) = run_indexed(&sys, selector, &opts, &seeds, idx)?;
        let tape = tapes.robot.expect("robot tape recorded");
        let rewards: Vec<f64> = trace.steps.iter().map(|s| s.env_reward).collect();
        let last = *rewards.last().expect("episodes have at least one step");
        let tail = if trace.terminated {
            absorbing_tail(last, cfg.gamma)
        } else {
            cfg.gamma * tape.bootstrap
        };
        let mut grad = vec![0.0; robot.model.params.len()];
        let loss = accumulate(&robot.model.net, &robot.model.params, &tape, &rewards, tail, w, &mut grad)?;
        Ok(EpisodeResult {
            grad,
            loss,
            ret: rewards.iter().sum(),
            transmissions: trace.steps.iter().filter(|s| s.ell > 0.0).count(),
            bytes: trace.total_bytes(),
        })
    }, |robot| {
        let sys = System {
            env,
            features,
            ensemble,
            robot,
            regressor: None,
        };
        let scores = par::map(cfg.validation_episodes, |i| {
            let (tr, _) = run_indexed(&sys, Selector::Fixed(level), &RunOptions::default(), &validation, i as u64)?;
            let rewards: Vec<f64> = tr.steps.iter().map(|s| s.env_reward).collect();
            let fail = tr.terminated.then(|| *rewards.last().unwrap());
            Ok(horizon_score(&rewards, fail, env.horizon))
        });
        Ok(mean(&scores.into_iter().collect::<Result<Vec<f64>>>()?))
    })?;
    Ok(robot)
}

/// Fits the semantic regressor on greedy-robot trajectories at the finest
/// level with random silences.
pub fn train_regressor(
    env: &EnvConfig,
    features: &FeatureMap,
    ensemble: &CodebookEnsemble,
    robot: &RobotPolicy,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    log: &mut TrainLog,
) -> Result<SemanticRegressor> {
    cfg.validate()?;
    let seeds = seeds.child(tag("regressor"));
    let validation = seeds.child(tag("validation"));
    let mut reg = SemanticRegressor::new(
        ensemble.max_level(),
        ensemble.feature_len(),
        cfg,
        &mut seeds.rng(Stream::Init, 0),
    )?;
    let selector = Selector::Dropout {
        level: ensemble.max_level(),
        prob: cfg.drop_prob,
    };
    let opts = RunOptions {
        record: Recording {
            regressor: true,
            ..Recording::default()
        },
        ..RunOptions::default()
    };
    drive(&mut reg, |r| &mut r.model, cfg.regressor_lr, cfg.regressor_episodes, cfg, log, |reg, idx| {
        let sys = System {
            env,
            features,
            ensemble,
            robot,
            regressor: Some(reg),
        };
        let (trace, tapes) = run_indexed(&sys, selector, &opts, &seeds, idx)?;
        let tape = tapes.regressor.expect("regressor tape recorded");
        let mut grad = vec![0.0; reg.model.params.len()];
        let mse = accumulate_regression(
            &reg.model.net,
            &reg.model.params,
            &tape,
            &tapes.targets,
            cfg.bptt_window,
            &mut grad,
        )?;
        Ok(EpisodeResult {
            grad,
            loss: LossSums {
                policy: mse,
                steps: trace.len(),
                ..LossSums::default()
            },
            ret: trace.steps.iter().map(|s| s.env_reward).sum(),
            transmissions: trace.steps.iter().filter(|s| s.ell > 0.0).count(),
            bytes: trace.total_bytes(),
        })
    }, |reg| {
        let sys = System {
            env,
            features,
            ensemble,
            robot,
            regressor: Some(reg),
        };
        let per_episode = par::map(cfg.validation_episodes, |i| {
            let (_, tapes) = run_indexed(&sys, selector, &opts, &validation, i as u64)?;
            let tape = tapes.regressor.expect("regressor tape recorded");
            let mse: Vec<f64> = tape
                .caches
                .iter()
                .zip(&tapes.targets)
                .map(|(c, y)| crate::codec::distortion_mse(&c.output.logits, y))
                .collect::<Result<_>>()?;
            Ok(mean(&mse))
        });
        Ok(-mean(&per_episode.into_iter().collect::<Result<Vec<f64>>>()?))
    })?;
    Ok(reg)
}

/// Trains an observer with A2C against a frozen greedy robot, rewarded by
/// the objective in `cfg.level` with cost `cfg.beta` per byte.
pub fn train_observer_a2c(
    env: &EnvConfig,
    features: &FeatureMap,
    ensemble: &CodebookEnsemble,
    robot: &RobotPolicy,
    regressor: Option<&SemanticRegressor>,
    cfg: &TrainConfig,
    seeds: &SeedTree,
    log: &mut TrainLog,
) -> Result<ObserverPolicy> {
    cfg.validate()?;
    if cfg.level == ObjectiveLevel::B && regressor.is_none() {
        return Err(Error::invalid("level", "objective B needs a trained semantic regressor"));
    }
    let seeds = seeds.child(tag(&format!("observer-{}-{:016x}", cfg.level, cfg.beta.to_bits())));
    let validation = seeds.child(tag("validation"));
    let mut observer = ObserverPolicy::new(
        ensemble.max_level(),
        ensemble.feature_len(),
        cfg,
        &mut seeds.rng(Stream::Init, 0),
    )?;
    let w = weights(cfg);
    let opts = RunOptions {
        objective: Some(cfg.level),
        beta: cfg.beta,
        robot_greedy: true,
        voi: false,
        record: Recording {
            observer: true,
            ..Recording::default()
        },
    };
    drive(
        &mut observer,
        |o| &mut o.model,
        cfg.observer_lr,
        cfg.observer_episodes,
        cfg,
        log,
        |observer, idx| {
            let sys = System {
                env,
                features,
                ensemble,
                robot,
                regressor,
            };
            let selector = Selector::Observer {
                policy: observer,
                greedy: false,
            };
            let (trace, tapes) = run_indexed(&sys, selector, &opts, &seeds, idx)?;
            let tape = tapes.observer.expect("observer tape recorded");
            let rewards: Vec<f64> = trace.steps.iter().map(|s| s.observer_reward).collect();
            let scale = cfg.reward_scale(cfg.level);
            let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            let last_env = trace.steps.last().expect("non-empty episode").env_reward;
            let tail = if trace.terminated && cfg.level == ObjectiveLevel::C {
                absorbing_tail(last_env * scale, cfg.gamma)
            } else {
                cfg.gamma * tape.bootstrap
            };
            let mut grad = vec![0.0; observer.model.params.len()];
            let loss = accumulate(
                &observer.model.net,
                &observer.model.params,
                &tape,
                &scaled,
                tail,
                w,
                &mut grad,
            )?;
            Ok(EpisodeResult {
                grad,
                loss,
                ret: rewards.iter().sum(),
                transmissions: trace.steps.iter().filter(|s| s.ell > 0.0).count(),
                bytes: trace.total_bytes(),
            })
        },
        |observer| {
            let sys = System {
                env,
                features,
                ensemble,
                robot,
                regressor,
            };
            let selector = Selector::Observer {
                policy: observer,
                greedy: false,
            };
            let plain = RunOptions {
                record: Recording::default(),
                ..opts
            };
            let scores = par::map(cfg.validation_episodes, |i| {
                let (tr, _) = run_indexed(&sys, selector, &plain, &validation, i as u64)?;
                let rewards: Vec<f64> = tr.steps.iter().map(|s| s.observer_reward).collect();
                Ok(if cfg.level == ObjectiveLevel::C {
                    let fail = tr.terminated.then(|| tr.steps.last().unwrap().env_reward);
                    horizon_score(&rewards, fail, env.horizon)
                } else {
                    mean(&rewards)
                })
            });
            Ok(mean(&scores.into_iter().collect::<Result<Vec<f64>>>()?))
        },
    )?;
    Ok(observer)
}
