//! Single-layer LSTM core with a ReLU MLP trunk and linear heads.
//!
//! ```text
//! input -> LSTM(H) -> ReLU -> Linear(M) -> ReLU -> { policy: Linear(P), value: Linear(1) }
//! ```
//!
//! Gate order inside the LSTM weight blocks is input, forget, cell, output.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub recurrent_hidden: usize,
    pub mlp_hidden: usize,
    /// Policy logits, or regression outputs for a network without a value head.
    pub policy_outputs: usize,
    pub has_value_head: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("recurrent_hidden", self.recurrent_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("policy_outputs", self.policy_outputs),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("network.{name}"), "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Where each weight block lives in the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl Layout {
    fn new(spec: &NetworkSpec) -> Self {
        let (i, h, m, p) = (
            spec.input_dim,
            spec.recurrent_hidden,
            spec.mlp_hidden,
            spec.policy_outputs,
        );
        let mut shapes = vec![
            ("lstm.w_input", 4 * h, i),
            ("lstm.w_hidden", 4 * h, h),
            ("lstm.bias", 4 * h, 1),
            ("mlp.weight", m, h),
            ("mlp.bias", m, 1),
            ("policy.weight", p, m),
            ("policy.bias", p, 1),
        ];
        if spec.has_value_head {
            shapes.push(("value.weight", 1, m));
            shapes.push(("value.bias", 1, 1));
        }
        let mut offset = 0;
        let blocks = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let b = Block {
                    name,
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                b
            })
            .collect();
        Layout {
            blocks,
            total: offset,
        }
    }

    pub fn block(&self, name: &str) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("no parameter block named {name}"))
    }
}

/// Offsets resolved once per network for the hot loops.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    w_in: usize,
    w_hid: usize,
    b_lstm: usize,
    w_mlp: usize,
    b_mlp: usize,
    w_pol: usize,
    b_pol: usize,
    w_val: Option<usize>,
    b_val: Option<usize>,
}

/// Hidden and cell activations of the LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            hidden: vec![0.0; spec.recurrent_hidden],
            cell: vec![0.0; spec.recurrent_hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    /// Zero when the network has no value head.
    pub value: f64,
}

/// Activations of one step kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations `[i, f, g, o]`, each of length H.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_c: Vec<f64>,
    hidden: Vec<f64>,
    trunk: Vec<f64>,
    pub output: StepOutput,
}

/// Per-step gradient of the loss with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub logits: Vec<f64>,
    pub value: f64,
}

impl OutputGrad {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            logits: vec![0.0; spec.policy_outputs],
            value: 0.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// The fixed recurrent actor-critic architecture.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
    off: Offsets,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let off = Offsets {
            w_in: layout.block("lstm.w_input").offset,
            w_hid: layout.block("lstm.w_hidden").offset,
            b_lstm: layout.block("lstm.bias").offset,
            w_mlp: layout.block("mlp.weight").offset,
            b_mlp: layout.block("mlp.bias").offset,
            w_pol: layout.block("policy.weight").offset,
            b_pol: layout.block("policy.bias").offset,
            w_val: spec.has_value_head.then(|| layout.block("value.weight").offset),
            b_val: spec.has_value_head.then(|| layout.block("value.bias").offset),
        };
        Ok(Self { spec, layout, off })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Orthogonal recurrent blocks, forget-gate bias 1, everything else
    /// uniform in `±1/sqrt(fan_in)`.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let (h, i, m) = (
            self.spec.recurrent_hidden,
            self.spec.input_dim,
            self.spec.mlp_hidden,
        );
        let mut p = vec![0.0; self.layout.total];
        let uniform = |slice: &mut [f64], fan_in: usize, rng: &mut Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        };
        uniform(&mut p[self.layout.block("lstm.w_input").range()], i, rng);
        let w_hid = self.layout.block("lstm.w_hidden").range();
        for gate in 0..4 {
            let q = orthogonal(h, rng);
            let start = w_hid.start + gate * h * h;
            p[start..start + h * h].copy_from_slice(&q);
        }
        let b = self.layout.block("lstm.bias").offset;
        p[b + h..b + 2 * h].iter_mut().for_each(|v| *v = 1.0);
        uniform(&mut p[self.layout.block("mlp.weight").range()], h, rng);
        uniform(&mut p[self.layout.block("mlp.bias").range()], h, rng);
        uniform(&mut p[self.layout.block("policy.weight").range()], m, rng);
        uniform(&mut p[self.layout.block("policy.bias").range()], m, rng);
        if self.spec.has_value_head {
            uniform(&mut p[self.layout.block("value.weight").range()], m, rng);
            uniform(&mut p[self.layout.block("value.bias").range()], m, rng);
        }
        p
    }

    fn check(&self, params: &[f64], input: &[f64], state: &RecurrentState) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::Dimension {
                what: "parameter set",
                expected: self.layout.total,
                got: params.len(),
            });
        }
        if input.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        if state.hidden.len() != self.spec.recurrent_hidden || state.cell.len() != self.spec.recurrent_hidden {
            return Err(Error::Dimension {
                what: "recurrent state",
                expected: self.spec.recurrent_hidden,
                got: state.hidden.len(),
            });
        }
        Ok(())
    }

    /// One step; returns outputs and the advanced recurrent state.
    pub fn forward(
        &self,
        params: &[f64],
        input: &[f64],
        state: &RecurrentState,
    ) -> Result<(StepOutput, RecurrentState)> {
        let cache = self.forward_cached(params, input, state)?;
        let next = cache.next_state();
        Ok((cache.output, next))
    }

    /// One step keeping the activations needed by [`Network::backward`].
    pub fn forward_cached(
        &self,
        params: &[f64],
        input: &[f64],
        state: &RecurrentState,
    ) -> Result<StepCache> {
        self.check(params, input, state)?;
        let (h, i, m, p) = (
            self.spec.recurrent_hidden,
            self.spec.input_dim,
            self.spec.mlp_hidden,
            self.spec.policy_outputs,
        );
        let o = self.off;
        let mut gates = params[o.b_lstm..o.b_lstm + 4 * h].to_vec();
        for (r, z) in gates.iter_mut().enumerate() {
            *z += dot(&params[o.w_in + r * i..o.w_in + (r + 1) * i], input)
                + dot(&params[o.w_hid + r * h..o.w_hid + (r + 1) * h], &state.hidden);
        }
        for k in 0..h {
            gates[k] = sigmoid(gates[k]);
            gates[h + k] = sigmoid(gates[h + k]);
            gates[2 * h + k] = gates[2 * h + k].tanh();
            gates[3 * h + k] = sigmoid(gates[3 * h + k]);
        }
        let mut cell = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            cell[k] = gates[h + k] * state.cell[k] + gates[k] * gates[2 * h + k];
            tanh_c[k] = cell[k].tanh();
            hidden[k] = gates[3 * h + k] * tanh_c[k];
        }
        let relu_h: Vec<f64> = hidden.iter().map(|v| v.max(0.0)).collect();
        let trunk: Vec<f64> = (0..m)
            .map(|r| {
                (params[o.b_mlp + r] + dot(&params[o.w_mlp + r * h..o.w_mlp + (r + 1) * h], &relu_h)).max(0.0)
            })
            .collect();
        let logits = (0..p)
            .map(|r| params[o.b_pol + r] + dot(&params[o.w_pol + r * m..o.w_pol + (r + 1) * m], &trunk))
            .collect();
        let value = match (o.w_val, o.b_val) {
            (Some(w), Some(b)) => params[b] + dot(&params[w..w + m], &trunk),
            _ => 0.0,
        };
        Ok(StepCache {
            input: input.to_vec(),
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            gates,
            cell,
            tanh_c,
            hidden,
            trunk,
            output: StepOutput { logits, value },
        })
    }

    /// Runs a whole sequence from `init`, keeping every step's activations.
    pub fn forward_sequence(
        &self,
        params: &[f64],
        inputs: &[Vec<f64>],
        init: &RecurrentState,
    ) -> Result<Vec<StepCache>> {
        let mut state = init.clone();
        let mut tape = Vec::with_capacity(inputs.len());
        for x in inputs {
            let c = self.forward_cached(params, x, &state)?;
            state = c.next_state();
            tape.push(c);
        }
        Ok(tape)
    }

    /// Accumulates into `grad` the gradient of `sum_t <grads[t], outputs[t]>`
    /// through the tape. Recurrent gradients are cut every `window` steps:
    /// the sequence is split into consecutive chunks of `window` steps and no
    /// gradient crosses a chunk boundary.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &[StepCache],
        grads: &[OutputGrad],
        window: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        if tape.len() != grads.len() {
            return Err(Error::Dimension {
                what: "output gradients",
                expected: tape.len(),
                got: grads.len(),
            });
        }
        if grad.len() != self.layout.total {
            return Err(Error::Dimension {
                what: "gradient buffer",
                expected: self.layout.total,
                got: grad.len(),
            });
        }
        let window = window.max(1);
        let (h, i, m, p) = (
            self.spec.recurrent_hidden,
            self.spec.input_dim,
            self.spec.mlp_hidden,
            self.spec.policy_outputs,
        );
        let o = self.off;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_trunk = vec![0.0; m];
        let mut d_relu_h = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..tape.len()).rev() {
            if (t + 1) % window == 0 {
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                dc_next.iter_mut().for_each(|v| *v = 0.0);
            }
            let c = &tape[t];
            let g = &grads[t];
            if g.logits.len() != p {
                return Err(Error::Dimension {
                    what: "logit gradient",
                    expected: p,
                    got: g.logits.len(),
                });
            }
            // heads
            d_trunk.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..p {
                let gl = g.logits[r];
                if gl != 0.0 {
                    grad[o.b_pol + r] += gl;
                    axpy(gl, &c.trunk, &mut grad[o.w_pol + r * m..o.w_pol + (r + 1) * m]);
                    axpy(gl, &params[o.w_pol + r * m..o.w_pol + (r + 1) * m], &mut d_trunk);
                }
            }
            if let (Some(w), Some(b)) = (o.w_val, o.b_val) {
                if g.value != 0.0 {
                    grad[b] += g.value;
                    axpy(g.value, &c.trunk, &mut grad[w..w + m]);
                    axpy(g.value, &params[w..w + m], &mut d_trunk);
                }
            }
            // trunk
            d_relu_h.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..m {
                if c.trunk[r] > 0.0 && d_trunk[r] != 0.0 {
                    let d = d_trunk[r];
                    grad[o.b_mlp + r] += d;
                    let row = o.w_mlp + r * h;
                    for k in 0..h {
                        if c.hidden[k] > 0.0 {
                            grad[row + k] += d * c.hidden[k];
                        }
                    }
                    axpy(d, &params[row..row + h], &mut d_relu_h);
                }
            }
            // LSTM cell
            for k in 0..h {
                let (ig, fg, gg, og) = (c.gates[k], c.gates[h + k], c.gates[2 * h + k], c.gates[3 * h + k]);
                let dh = if c.hidden[k] > 0.0 { d_relu_h[k] } else { 0.0 } + dh_next[k];
                let tc = c.tanh_c[k];
                let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * gg * ig * (1.0 - ig);
                dz[h + k] = dc * c.c_prev[k] * fg * (1.0 - fg);
                dz[2 * h + k] = dc * ig * (1.0 - gg * gg);
                dz[3 * h + k] = dh * tc * og * (1.0 - og);
                dc_next[k] = dc * fg;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[o.b_lstm + r] += d;
                axpy(d, &c.input, &mut grad[o.w_in + r * i..o.w_in + (r + 1) * i]);
                axpy(d, &c.h_prev, &mut grad[o.w_hid + r * h..o.w_hid + (r + 1) * h]);
                axpy(d, &params[o.w_hid + r * h..o.w_hid + (r + 1) * h], &mut dh_next);
            }
        }
        Ok(())
    }
}

impl StepCache {
    /// Recurrent state after this step.
    pub fn next_state(&self) -> RecurrentState {
        RecurrentState {
            hidden: self.hidden.clone(),
            cell: self.cell.clone(),
        }
    }
}

/// Random orthogonal `n x n` matrix (row-major) by Gram-Schmidt on a Gaussian
/// matrix.
fn orthogonal(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let proj = dot(&v, r);
            axpy(-proj, r, &mut v);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}
