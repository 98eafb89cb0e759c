use crate::error::{Error, Result};
use crate::neural::{log_softmax, softmax, Network, OutputGrad};
use crate::rollout::Tape;

/// Summed (not averaged) loss terms of one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct LossSums {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub steps: usize,
}

impl LossSums {
    pub fn add(&mut self, o: &LossSums) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.steps += o.steps;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct A2cWeights {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// GAE smoothing; 0 gives one-step TD advantages.
    pub lambda: f64,
    pub window: usize,
}

/// TD(0) value targets. `tail` is what follows the last reward (already
/// discounted): `gamma * V(next)` on truncation, or an absorbing continuation
/// on failure.
pub(crate) fn td_targets(rewards: &[f64], values: &[f64], gamma: f64, tail: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            if t + 1 < n {
                rewards[t] + gamma * values[t + 1]
            } else {
                rewards[t] + tail
            }
        })
        .collect()
}

/// Generalized advantage estimates from one-step targets:
/// `A_t = sum_k (gamma lambda)^k delta_{t+k}` with `delta_t = y_t - V_t`.
pub(crate) fn gae(targets: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; targets.len()];
    let mut acc = 0.0;
    for t in (0..targets.len()).rev() {
        acc = (targets[t] - values[t]) + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Adds the gradient of the summed episode loss
/// `sum_t [-A_t log pi(a_t) + c_v (y_t - V_t)^2 - c_e H(pi_t)]` to `grad`,
/// with the advantage `A_t` (see [`gae`]) and target `y_t` held constant.
pub(crate) fn accumulate(
    net: &Network,
    params: &[f64],
    tape: &Tape,
    rewards: &[f64],
    tail: f64,
    w: A2cWeights,
    grad: &mut [f64],
) -> Result<LossSums> {
    let n = tape.caches.len();
    if rewards.len() != n || tape.actions.len() != n {
        return Err(Error::Dimension {
            what: "a2c rewards",
            expected: n,
            got: rewards.len(),
        });
    }
    let values: Vec<f64> = tape.caches.iter().map(|c| c.output.value).collect();
    let targets = td_targets(rewards, &values, w.gamma, tail);
    let advantages = gae(&targets, &values, w.gamma, w.lambda);
    let mut sums = LossSums {
        steps: n,
        ..LossSums::default()
    };
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let logits = &tape.caches[t].output.logits;
        let probs = softmax(logits);
        let logp = log_softmax(logits);
        let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let a = tape.actions[t];
        let adv = advantages[t];
        let td = targets[t] - values[t];
        sums.policy += -adv * logp[a];
        sums.value += td * td;
        sums.entropy += h;
        let dlogits = probs
            .iter()
            .zip(&logp)
            .enumerate()
            .map(|(j, (&p, &l))| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                -adv * (onehot - p) + w.entropy_coef * p * (l + h)
            })
            .collect();
        out.push(OutputGrad {
            logits: dlogits,
            value: -2.0 * w.value_coef * td,
        });
    }
    if !(sums.policy.is_finite() && sums.value.is_finite() && sums.entropy.is_finite()) {
        return Err(Error::invalid("loss", "non-finite training loss"));
    }
    net.backward(params, &tape.caches, &out, w.window, grad)?;
    Ok(sums)
}

/// Adds the gradient of `sum_t mean_k (pred_tk - target_tk)^2`; returns the
/// summed per-step MSE.
pub(crate) fn accumulate_regression(
    net: &Network,
    params: &[f64],
    tape: &Tape,
    targets: &[[f64; 4]],
    window: usize,
    grad: &mut [f64],
) -> Result<f64> {
    let n = tape.caches.len();
    if targets.len() != n {
        return Err(Error::Dimension {
            what: "regression targets",
            expected: n,
            got: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut out = Vec::with_capacity(n);
    for (c, y) in tape.caches.iter().zip(targets) {
        let pred = &c.output.logits;
        let k = pred.len() as f64;
        total += pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / k;
        out.push(OutputGrad {
            logits: pred.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / k).collect(),
            value: 0.0,
        });
    }
    if !total.is_finite() {
        return Err(Error::invalid("loss", "non-finite regression loss"));
    }
    net.backward(params, &tape.caches, &out, window, grad)?;
    Ok(total)
}

/// Divides by the step count and rescales to at most `clip` in L2 norm.
/// Returns the norm before clipping.
pub(crate) fn normalize_and_clip(grad: &mut [f64], steps: usize, clip: f64) -> Result<f64> {
    let scale = 1.0 / steps.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::invalid("gradient", "non-finite gradient norm"));
    }
    if norm > clip {
        let s = clip / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{NetworkSpec, RecurrentState};
    use crate::seed::{SeedTree, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn targets_bootstrap_inside_and_use_tail_at_end() {
        let y = td_targets(&[-1.0, -0.5, -2.0], &[10.0, 20.0, 30.0], 0.5, 7.0);
        assert_eq!(y, vec![-1.0 + 10.0, -0.5 + 15.0, 5.0]);
    }

    #[test]
    fn gae_reduces_to_td_at_zero_lambda_and_to_returns_at_one() {
        let r = [-1.0, -0.5, -2.0];
        let v = [0.3, -0.2, 0.7];
        let y = td_targets(&r, &v, 0.9, 0.0);
        let td: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a - b).collect();
        assert_eq!(gae(&y, &v, 0.9, 0.0), td);
        // lambda = 1 with a zero tail is the discounted return minus V_t
        let full = gae(&y, &v, 0.9, 1.0);
        let g0 = -1.0 + 0.9 * (-0.5) + 0.81 * (-2.0);
        assert_abs_diff_eq!(full[0], g0 - v[0], epsilon = 1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![30.0, 40.0];
        let n = normalize_and_clip(&mut g, 2, 5.0).unwrap();
        assert_abs_diff_eq!(n, 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-12);
        let mut small = vec![0.1, 0.0];
        normalize_and_clip(&mut small, 1, 5.0).unwrap();
        assert_eq!(small, vec![0.1, 0.0]);
        assert!(normalize_and_clip(&mut [f64::NAN], 1, 5.0).is_err());
    }

    /// The A2C output gradients against finite differences of the scalar loss
    /// with advantages frozen.
    #[test]
    fn output_gradient_matches_loss_derivative() {
        let spec = NetworkSpec {
            input_dim: 3,
            recurrent_hidden: 4,
            mlp_hidden: 5,
            policy_outputs: 3,
            has_value_head: true,
        };
        let net = Network::new(spec).unwrap();
        let params = net.init_params(&mut SeedTree::new(4).rng(Stream::Init, 0));
        let inputs: Vec<Vec<f64>> = (0..5).map(|t| vec![0.1 * t as f64, -0.2, 0.3]).collect();
        let tape_caches = net.forward_sequence(&params, &inputs, &RecurrentState::zeros(&spec)).unwrap();
        let tape = Tape {
            caches: tape_caches,
            actions: vec![0, 2, 1, 1, 0],
            bootstrap: 0.0,
        };
        let rewards = [-0.1, -0.2, 0.0, -1.0, -0.3];
        let w = A2cWeights {
            gamma: 0.9,
            entropy_coef: 0.05,
            value_coef: 0.5,
            lambda: 0.7,
            window: 32,
        };
        let mut grad = vec![0.0; net.num_params()];
        accumulate(&net, &params, &tape, &rewards, -2.0, w, &mut grad).unwrap();

        let values: Vec<f64> = tape.caches.iter().map(|c| c.output.value).collect();
        let targets = td_targets(&rewards, &values, w.gamma, -2.0);
        let advs = gae(&targets, &values, w.gamma, w.lambda);
        // loss with targets and advantages frozen at the current parameters
        let loss = |p: &[f64]| {
            let caches = net.forward_sequence(p, &inputs, &RecurrentState::zeros(&spec)).unwrap();
            caches
                .iter()
                .enumerate()
                .map(|(t, c)| {
                    let adv = advs[t];
                    let logp = log_softmax(&c.output.logits);
                    let probs = softmax(&c.output.logits);
                    let h: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                    -adv * logp[tape.actions[t]]
                        + w.value_coef * (targets[t] - c.output.value).powi(2)
                        - w.entropy_coef * h
                })
                .sum::<f64>()
        };
        for k in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[k] += 1e-6;
            let up = loss(&p);
            p[k] -= 2e-6;
            let down = loss(&p);
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
