//! Batched forward and backward passes.
//!
//! The forward pass runs in two modes: tape-free for inference (only the
//! outputs and the updated recurrent state are kept) and tape-recording for
//! training, where per-step activations are retained so
//! [`backward_sequence`] can run truncated backpropagation through time.
//!
//! Episode boundaries inside a sequence are handled with reset flags: a set
//! flag zeroes the recurrent state *entering* that step, and the backward
//! pass stops gradient flow across the same boundary.

use super::{HeadKind, NetworkSpec, RecurrentState, Tensor};
use crate::error::{Result, SeedError};
use crate::nn::{axpy, dot};

/// Sentinel for "no previous action" (start of an episode); the one-hot
/// block fed to the recurrent cell is all zeros.
pub const PREV_ACTION_NONE: u32 = u32::MAX;

/// Recurrent state for a batch of slots, stored row-major `[batch, units]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBatch {
    pub hidden: Vec<f32>,
    pub cell: Vec<f32>,
    pub batch: usize,
    pub units: usize,
}

impl StateBatch {
    pub fn zeros(batch: usize, units: usize) -> Self {
        StateBatch {
            hidden: vec![0.0; batch * units],
            cell: vec![0.0; batch * units],
            batch,
            units,
        }
    }

    pub fn row(&self, b: usize) -> RecurrentState {
        let u = self.units;
        RecurrentState {
            hidden: self.hidden[b * u..(b + 1) * u].to_vec(),
            cell: self.cell[b * u..(b + 1) * u].to_vec(),
        }
    }

    pub fn set_row(&mut self, b: usize, s: &RecurrentState) {
        let u = self.units;
        self.hidden[b * u..(b + 1) * u].copy_from_slice(&s.hidden);
        self.cell[b * u..(b + 1) * u].copy_from_slice(&s.cell);
    }

    pub fn reset_row(&mut self, b: usize) {
        let u = self.units;
        self.hidden[b * u..(b + 1) * u].fill(0.0);
        self.cell[b * u..(b + 1) * u].fill(0.0);
    }
}

/// Inputs for a `[steps, batch]` sequence, all row-major with the step index
/// outermost. `resets[t*batch + b]` zeroes the recurrent state entering step
/// `t` for row `b`.
pub struct SequenceInputs<'a> {
    pub obs: &'a [f32],
    pub prev_actions: &'a [u32],
    pub prev_rewards: &'a [f32],
    pub resets: &'a [bool],
    pub steps: usize,
    pub batch: usize,
}

/// Outputs of a sequence forward: head outputs (`[steps*batch, actions]`,
/// policy logits or Q-values), the scalar value branch per step (state value
/// for the policy head, the dueling value branch otherwise), and the
/// recurrent state after the last step.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    pub head: Vec<f32>,
    pub value: Vec<f32>,
    pub final_state: StateBatch,
}

/// Output of a single batched step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub head: Vec<f32>,
    pub value: Vec<f32>,
}

/// Activations recorded during a forward pass, stacked over steps.
pub struct SequenceTape {
    steps: usize,
    batch: usize,
    obs: Vec<f32>,
    resets: Vec<bool>,
    /// Post-ReLU activations per dense layer, each `[steps*batch, width]`.
    mlp_acts: Vec<Vec<f32>>,
    lstm: Option<LstmTape>,
    /// Head input features, `[steps*batch, feature_dim]`.
    feats: Vec<f32>,
    dueling: Option<DuelingTape>,
}

struct LstmTape {
    /// Cell input `[feat | one-hot prev action | prev reward]`.
    input: Vec<f32>,
    /// State entering each step, after reset masking.
    h_prev: Vec<f32>,
    c_prev: Vec<f32>,
    /// Post-nonlinearity gates, `[steps*batch, 4*units]` as `[i f g o]`.
    gates: Vec<f32>,
    tanh_c: Vec<f32>,
}

struct DuelingTape {
    adv_hidden: Vec<f32>,
    val_hidden: Vec<f32>,
}

/// Parameter indices into the layout of [`NetworkSpec::param_layout`].
struct Idx {
    mlp: Vec<usize>,
    lstm: Option<usize>,
    head: usize,
}

impl Idx {
    fn new(spec: &NetworkSpec) -> Idx {
        let mut i = 0;
        let mlp = spec
            .mlp_hidden
            .iter()
            .map(|_| {
                let at = i;
                i += 2;
                at
            })
            .collect();
        let lstm = (spec.lstm_units > 0).then(|| {
            let at = i;
            i += 3;
            at
        });
        Idx { mlp, lstm, head: i }
    }
}

fn linear(w: &Tensor, bias: &Tensor, x: &[f32], batch: usize, out: &mut [f32]) {
    let out_dim = w.shape()[0];
    let in_dim = w.shape()[1];
    let wd = w.data();
    let bd = bias.data();
    for o in 0..out_dim {
        let w_row = &wd[o * in_dim..(o + 1) * in_dim];
        let b0 = bd[o];
        for bi in 0..batch {
            out[bi * out_dim + o] = dot(w_row, &x[bi * in_dim..(bi + 1) * in_dim]) + b0;
        }
    }
}

/// `out += x W^T` with no bias, used for the recurrent contribution.
fn linear_acc(w: &Tensor, x: &[f32], batch: usize, out: &mut [f32]) {
    let out_dim = w.shape()[0];
    let in_dim = w.shape()[1];
    let wd = w.data();
    for o in 0..out_dim {
        let w_row = &wd[o * in_dim..(o + 1) * in_dim];
        for bi in 0..batch {
            out[bi * out_dim + o] += dot(w_row, &x[bi * in_dim..(bi + 1) * in_dim]);
        }
    }
}

/// Accumulates parameter gradients for a linear layer and optionally the
/// gradient with respect to its input.
fn linear_backward(
    w: &Tensor,
    x: &[f32],
    dz: &[f32],
    batch: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
    dx: Option<&mut [f32]>,
) {
    let out_dim = w.shape()[0];
    let in_dim = w.shape()[1];
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for bi in 0..batch {
        let x_row = &x[bi * in_dim..(bi + 1) * in_dim];
        let dz_row = &dz[bi * out_dim..(bi + 1) * out_dim];
        for o in 0..out_dim {
            let g = dz_row[o];
            if g != 0.0 {
                axpy(g, x_row, &mut dwd[o * in_dim..(o + 1) * in_dim]);
            }
            dbd[o] += g;
        }
    }
    if let Some(dx) = dx {
        let wd = w.data();
        for bi in 0..batch {
            let dx_row = &mut dx[bi * in_dim..(bi + 1) * in_dim];
            let dz_row = &dz[bi * out_dim..(bi + 1) * out_dim];
            for o in 0..out_dim {
                let g = dz_row[o];
                if g != 0.0 {
                    axpy(g, &wd[o * in_dim..(o + 1) * in_dim], dx_row);
                }
            }
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn check_finite(name: &str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SeedError::NonFinite {
            layer: name.to_string(),
        })
    }
}

fn validate_inputs(spec: &NetworkSpec, inp: &SequenceInputs, state: &StateBatch) -> Result<()> {
    let rows = inp.steps * inp.batch;
    if inp.obs.len() != rows * spec.input_dim {
        return Err(SeedError::Shape {
            context: "sequence obs",
            expected: rows * spec.input_dim,
            actual: inp.obs.len(),
        });
    }
    for (name, len) in [
        ("prev_actions", inp.prev_actions.len()),
        ("prev_rewards", inp.prev_rewards.len()),
        ("resets", inp.resets.len()),
    ] {
        if len != rows {
            return Err(SeedError::Shape {
                context: name,
                expected: rows,
                actual: len,
            });
        }
    }
    if state.batch != inp.batch || state.units != spec.lstm_units {
        return Err(SeedError::Shape {
            context: "recurrent state",
            expected: inp.batch * spec.lstm_units,
            actual: state.batch * state.units,
        });
    }
    // ReLU maps NaN to zero, so a poisoned observation must be caught here
    // rather than at the stage checks.
    check_finite("input", inp.obs)?;
    check_finite("input", inp.prev_rewards)?;
    Ok(())
}

/// Runs the network over a `[steps, batch]` sequence. With `record_tape`
/// the returned tape supports [`backward_sequence`]; without it only the
/// last step's activations are retained internally.
pub fn forward_sequence(
    spec: &NetworkSpec,
    params: &[Tensor],
    inp: &SequenceInputs,
    init_state: &StateBatch,
    record_tape: bool,
) -> Result<(SequenceOutput, Option<SequenceTape>)> {
    validate_inputs(spec, inp, init_state)?;
    let idx = Idx::new(spec);
    let (steps, batch) = (inp.steps, inp.batch);
    let rows = steps * batch;
    // Buffers hold the whole sequence when taping, one step otherwise.
    let kept = if record_tape { rows } else { batch };

    let mut mlp_acts: Vec<Vec<f32>> = spec
        .mlp_hidden
        .iter()
        .map(|&h| vec![0.0; kept * h])
        .collect();
    let units = spec.lstm_units;
    let lstm_in = spec.lstm_input_dim();
    let mut lstm_buf = (units > 0).then(|| LstmTape {
        input: vec![0.0; kept * lstm_in],
        h_prev: vec![0.0; kept * units],
        c_prev: vec![0.0; kept * units],
        gates: vec![0.0; kept * 4 * units],
        tanh_c: vec![0.0; kept * units],
    });
    let feat_dim = spec.feature_dim();
    let mut feats = vec![0.0; kept * feat_dim];
    let mut dueling_buf = (spec.head == HeadKind::DuelingQ).then(|| DuelingTape {
        adv_hidden: vec![0.0; kept * spec.dueling_hidden],
        val_hidden: vec![0.0; kept * spec.dueling_hidden],
    });

    let mut head_out = vec![0.0; rows * spec.num_actions];
    let mut value_out = vec![0.0; rows];
    let mut state = init_state.clone();

    for t in 0..steps {
        let base = if record_tape { t * batch } else { 0 };
        let obs_t = &inp.obs[t * batch * spec.input_dim..(t + 1) * batch * spec.input_dim];

        // Dense stack.
        for (l, &h) in spec.mlp_hidden.iter().enumerate() {
            let (w, b) = (&params[idx.mlp[l]], &params[idx.mlp[l] + 1]);
            let (done, rest) = mlp_acts.split_at_mut(l);
            let x: &[f32] = match done.last() {
                Some(prev) => {
                    let ph = spec.mlp_hidden[l - 1];
                    &prev[base * ph..(base + batch) * ph]
                }
                None => obs_t,
            };
            let out = &mut rest[0][base * h..(base + batch) * h];
            linear(w, b, x, batch, out);
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        let mlp_dim = spec.mlp_out_dim();
        let mlp_out: &[f32] = match mlp_acts.last() {
            Some(last) => &last[base * mlp_dim..(base + batch) * mlp_dim],
            None => obs_t,
        };

        let feat_t = &mut feats[base * feat_dim..(base + batch) * feat_dim];
        if let Some(lb) = lstm_buf.as_mut() {
            // Zero the state entering a step that starts a new episode.
            for b in 0..batch {
                if inp.resets[t * batch + b] {
                    state.reset_row(b);
                }
            }
            let input = &mut lb.input[base * lstm_in..(base + batch) * lstm_in];
            for b in 0..batch {
                let row = &mut input[b * lstm_in..(b + 1) * lstm_in];
                row[..mlp_dim].copy_from_slice(&mlp_out[b * mlp_dim..(b + 1) * mlp_dim]);
                row[mlp_dim..mlp_dim + spec.num_actions].fill(0.0);
                let pa = inp.prev_actions[t * batch + b];
                if pa != PREV_ACTION_NONE {
                    assert!(
                        (pa as usize) < spec.num_actions,
                        "prev action {pa} out of range"
                    );
                    row[mlp_dim + pa as usize] = 1.0;
                }
                row[lstm_in - 1] = inp.prev_rewards[t * batch + b];
            }
            lb.h_prev[base * units..(base + batch) * units].copy_from_slice(&state.hidden);
            lb.c_prev[base * units..(base + batch) * units].copy_from_slice(&state.cell);

            let li = idx.lstm.unwrap();
            let (w_ih, w_hh, bias) = (&params[li], &params[li + 1], &params[li + 2]);
            let gates = &mut lb.gates[base * 4 * units..(base + batch) * 4 * units];
            linear(w_ih, bias, input, batch, gates);
            linear_acc(w_hh, &state.hidden, batch, gates);
            let tanh_c = &mut lb.tanh_c[base * units..(base + batch) * units];
            for b in 0..batch {
                let g = &mut gates[b * 4 * units..(b + 1) * 4 * units];
                for j in 0..units {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[units + j]);
                    let g_g = g[2 * units + j].tanh();
                    let o_g = sigmoid(g[3 * units + j]);
                    g[j] = i_g;
                    g[units + j] = f_g;
                    g[2 * units + j] = g_g;
                    g[3 * units + j] = o_g;
                    let c = f_g * state.cell[b * units + j] + i_g * g_g;
                    let tc = c.tanh();
                    state.cell[b * units + j] = c;
                    state.hidden[b * units + j] = o_g * tc;
                    tanh_c[b * units + j] = tc;
                }
            }
            feat_t.copy_from_slice(&state.hidden);
        } else {
            feat_t.copy_from_slice(mlp_out);
        }

        // Head.
        let hi = idx.head;
        let head_t = &mut head_out[t * batch * spec.num_actions..(t + 1) * batch * spec.num_actions];
        match spec.head {
            HeadKind::PolicyValue => {
                linear(&params[hi], &params[hi + 1], feat_t, batch, head_t);
                let val_t = &mut value_out[t * batch..(t + 1) * batch];
                linear(&params[hi + 2], &params[hi + 3], feat_t, batch, val_t);
            }
            HeadKind::DuelingQ => {
                let d = spec.dueling_hidden;
                let db = dueling_buf.as_mut().unwrap();
                let ah = &mut db.adv_hidden[base * d..(base + batch) * d];
                linear(&params[hi], &params[hi + 1], feat_t, batch, ah);
                for v in ah.iter_mut() {
                    *v = v.max(0.0);
                }
                linear(&params[hi + 2], &params[hi + 3], ah, batch, head_t);
                let vh = &mut db.val_hidden[base * d..(base + batch) * d];
                linear(&params[hi + 4], &params[hi + 5], feat_t, batch, vh);
                for v in vh.iter_mut() {
                    *v = v.max(0.0);
                }
                let val_t = &mut value_out[t * batch..(t + 1) * batch];
                linear(&params[hi + 6], &params[hi + 7], vh, batch, val_t);
                // q = v + a - mean(a)
                let a = spec.num_actions;
                for b in 0..batch {
                    let q = &mut head_t[b * a..(b + 1) * a];
                    let mean = q.iter().sum::<f32>() / a as f32;
                    let v0 = val_t[b];
                    for qv in q.iter_mut() {
                        *qv += v0 - mean;
                    }
                }
            }
        }
    }

    // Attribute any non-finite output to the first bad stage.
    for (l, acts) in mlp_acts.iter().enumerate() {
        check_finite(&format!("mlp{l}"), acts)?;
    }
    if let Some(lb) = &lstm_buf {
        check_finite("lstm", &lb.gates)?;
        check_finite("lstm", &state.hidden)?;
    }
    check_finite("head", &head_out)?;
    check_finite("head", &value_out)?;

    let tape = record_tape.then(|| SequenceTape {
        steps,
        batch,
        obs: inp.obs.to_vec(),
        resets: inp.resets.to_vec(),
        mlp_acts,
        lstm: lstm_buf,
        feats,
        dueling: dueling_buf,
    });
    Ok((
        SequenceOutput {
            head: head_out,
            value: value_out,
            final_state: state,
        },
        tape,
    ))
}

/// Single batched inference step; `state` is reset where flagged and
/// advanced in place.
pub fn forward_step(
    spec: &NetworkSpec,
    params: &[Tensor],
    obs: &[f32],
    batch: usize,
    prev_actions: &[u32],
    prev_rewards: &[f32],
    resets: &[bool],
    state: &mut StateBatch,
) -> Result<StepOutput> {
    let inp = SequenceInputs {
        obs,
        prev_actions,
        prev_rewards,
        resets,
        steps: 1,
        batch,
    };
    let (out, _) = forward_sequence(spec, params, &inp, state, false)?;
    *state = out.final_state;
    Ok(StepOutput {
        head: out.head,
        value: out.value,
    })
}

/// Backpropagation through the taped sequence. `d_head` is the loss
/// gradient with respect to the head outputs (`[steps*batch, actions]`);
/// `d_value` with respect to the scalar value branch (policy head only;
/// pass an empty slice when unused). Returns gradients in parameter-layout
/// order. `params` must be the tensors the tape was recorded with.
pub fn backward_sequence(
    spec: &NetworkSpec,
    params: &[Tensor],
    tape: &SequenceTape,
    d_head: &[f32],
    d_value: &[f32],
) -> Result<Vec<Tensor>> {
    let (steps, batch) = (tape.steps, tape.batch);
    let rows = steps * batch;
    if d_head.len() != rows * spec.num_actions {
        return Err(SeedError::Shape {
            context: "d_head",
            expected: rows * spec.num_actions,
            actual: d_head.len(),
        });
    }
    if !d_value.is_empty() && d_value.len() != rows {
        return Err(SeedError::Shape {
            context: "d_value",
            expected: rows,
            actual: d_value.len(),
        });
    }
    let idx = Idx::new(spec);
    let mut grads = spec.zero_params();
    let units = spec.lstm_units;
    let feat_dim = spec.feature_dim();
    let mlp_dim = spec.mlp_out_dim();
    let lstm_in = spec.lstm_input_dim();
    let acts = spec.num_actions;

    // Gradients carried backward across steps through the recurrent state.
    let mut dh_next = vec![0.0f32; batch * units];
    let mut dc_next = vec![0.0f32; batch * units];

    let mut dfeat = vec![0.0f32; batch * feat_dim];
    let mut d_pre = vec![0.0f32; batch * 4 * units];
    let mut d_input = vec![0.0f32; batch * lstm_in];
    let mut d_mlp = vec![0.0f32; batch * mlp_dim];
    let mut d_mlp_next = d_mlp.clone();
    let mut dval_row = vec![0.0f32; batch];

    for t in (0..steps).rev() {
        let base = t * batch;
        let feat_t = &tape.feats[base * feat_dim..(base + batch) * feat_dim];
        let dh_t = &d_head[base * acts..(base + batch) * acts];
        dfeat.fill(0.0);

        let hi = idx.head;
        match spec.head {
            HeadKind::PolicyValue => {
                let (gw, gb) = grads.split_at_mut(hi + 1);
                linear_backward(
                    &params[hi],
                    feat_t,
                    dh_t,
                    batch,
                    &mut gw[hi],
                    &mut gb[0],
                    Some(&mut dfeat),
                );
                if !d_value.is_empty() {
                    let dv_t = &d_value[base..base + batch];
                    let (gw, gb) = grads.split_at_mut(hi + 3);
                    linear_backward(
                        &params[hi + 2],
                        feat_t,
                        dv_t,
                        batch,
                        &mut gw[hi + 2],
                        &mut gb[0],
                        Some(&mut dfeat),
                    );
                }
            }
            HeadKind::DuelingQ => {
                let d = spec.dueling_hidden;
                let dt = tape.dueling.as_ref().unwrap();
                let ah = &dt.adv_hidden[base * d..(base + batch) * d];
                let vh = &dt.val_hidden[base * d..(base + batch) * d];
                // q = v + a - mean(a): split the incoming gradient.
                let mut d_adv = vec![0.0f32; batch * acts];
                for b in 0..batch {
                    let dq = &dh_t[b * acts..(b + 1) * acts];
                    let sum: f32 = dq.iter().sum();
                    dval_row[b] = sum;
                    let mean = sum / acts as f32;
                    for a in 0..acts {
                        d_adv[b * acts + a] = dq[a] - mean;
                    }
                }
                // Advantage branch.
                let mut d_ah = vec![0.0f32; batch * d];
                {
                    let (gw, gb) = grads.split_at_mut(hi + 3);
                    linear_backward(
                        &params[hi + 2],
                        ah,
                        &d_adv,
                        batch,
                        &mut gw[hi + 2],
                        &mut gb[0],
                        Some(&mut d_ah),
                    );
                }
                for (g, &a) in d_ah.iter_mut().zip(ah) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                {
                    let (gw, gb) = grads.split_at_mut(hi + 1);
                    linear_backward(
                        &params[hi],
                        feat_t,
                        &d_ah,
                        batch,
                        &mut gw[hi],
                        &mut gb[0],
                        Some(&mut dfeat),
                    );
                }
                // Value branch.
                let mut d_vh = vec![0.0f32; batch * d];
                {
                    let (gw, gb) = grads.split_at_mut(hi + 7);
                    linear_backward(
                        &params[hi + 6],
                        vh,
                        &dval_row,
                        batch,
                        &mut gw[hi + 6],
                        &mut gb[0],
                        Some(&mut d_vh),
                    );
                }
                for (g, &a) in d_vh.iter_mut().zip(vh) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                {
                    let (gw, gb) = grads.split_at_mut(hi + 5);
                    linear_backward(
                        &params[hi + 4],
                        feat_t,
                        &d_vh,
                        batch,
                        &mut gw[hi + 4],
                        &mut gb[0],
                        Some(&mut dfeat),
                    );
                }
            }
        }

        // Gradient entering the dense stack at this step.
        let d_top: &[f32] = if let Some(lb) = &tape.lstm {
            let li = idx.lstm.unwrap();
            let h_prev = &lb.h_prev[base * units..(base + batch) * units];
            let c_prev = &lb.c_prev[base * units..(base + batch) * units];
            let gates = &lb.gates[base * 4 * units..(base + batch) * 4 * units];
            let tanh_c = &lb.tanh_c[base * units..(base + batch) * units];
            let input = &lb.input[base * lstm_in..(base + batch) * lstm_in];
            for b in 0..batch {
                let g = &gates[b * 4 * units..(b + 1) * 4 * units];
                for j in 0..units {
                    let dh = dfeat[b * feat_dim + j] + dh_next[b * units + j];
                    let (i_g, f_g, g_g, o_g) =
                        (g[j], g[units + j], g[2 * units + j], g[3 * units + j]);
                    let tc = tanh_c[b * units + j];
                    let dc = dc_next[b * units + j] + dh * o_g * (1.0 - tc * tc);
                    let di = dc * g_g;
                    let df = dc * c_prev[b * units + j];
                    let dg = dc * i_g;
                    let do_ = dh * tc;
                    let p = &mut d_pre[b * 4 * units..(b + 1) * 4 * units];
                    p[j] = di * i_g * (1.0 - i_g);
                    p[units + j] = df * f_g * (1.0 - f_g);
                    p[2 * units + j] = dg * (1.0 - g_g * g_g);
                    p[3 * units + j] = do_ * o_g * (1.0 - o_g);
                    // Carried cell gradient; overwritten below for resets.
                    dc_next[b * units + j] = dc * f_g;
                }
            }
            d_input.fill(0.0);
            {
                let (gw, gb) = grads.split_at_mut(li + 2);
                let (gw_ih, _) = gw.split_at_mut(li + 1);
                linear_backward(
                    &params[li],
                    input,
                    &d_pre,
                    batch,
                    &mut gw_ih[li],
                    &mut gb[0],
                    Some(&mut d_input),
                );
            }
            dh_next.fill(0.0);
            {
                // Bias gradient already accumulated above; route the W_hh
                // contribution through a scratch tensor.
                let mut db_scratch = Tensor::zeros(&[4 * units]);
                linear_backward(
                    &params[li + 1],
                    h_prev,
                    &d_pre,
                    batch,
                    &mut grads[li + 1],
                    &mut db_scratch,
                    Some(&mut dh_next),
                );
            }
            // Stop gradients across episode boundaries.
            for b in 0..batch {
                if tape.resets[t * batch + b] {
                    dh_next[b * units..(b + 1) * units].fill(0.0);
                    dc_next[b * units..(b + 1) * units].fill(0.0);
                }
            }
            // Only the dense-feature block of the cell input backpropagates.
            for b in 0..batch {
                d_mlp[b * mlp_dim..(b + 1) * mlp_dim]
                    .copy_from_slice(&d_input[b * lstm_in..b * lstm_in + mlp_dim]);
            }
            &d_mlp[..batch * mlp_dim]
        } else {
            &dfeat[..]
        };

        // Dense stack, top down.
        let mut d_cur: Vec<f32> = d_top.to_vec();
        for l in (0..spec.mlp_hidden.len()).rev() {
            let h = spec.mlp_hidden[l];
            let act = &tape.mlp_acts[l][base * h..(base + batch) * h];
            for (g, &a) in d_cur.iter_mut().zip(act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let in_dim = if l == 0 {
                spec.input_dim
            } else {
                spec.mlp_hidden[l - 1]
            };
            let x: &[f32] = if l == 0 {
                &tape.obs[base * spec.input_dim..(base + batch) * spec.input_dim]
            } else {
                &tape.mlp_acts[l - 1][base * in_dim..(base + batch) * in_dim]
            };
            let li = idx.mlp[l];
            let need_dx = l > 0;
            d_mlp_next.resize(batch * in_dim, 0.0);
            d_mlp_next[..batch * in_dim].fill(0.0);
            {
                let (gw, gb) = grads.split_at_mut(li + 1);
                linear_backward(
                    &params[li],
                    x,
                    &d_cur,
                    batch,
                    &mut gw[li],
                    &mut gb[0],
                    need_dx.then_some(&mut d_mlp_next[..batch * in_dim]),
                );
            }
            if need_dx {
                d_cur.clear();
                d_cur.extend_from_slice(&d_mlp_next[..batch * in_dim]);
            }
        }
    }
    Ok(grads)
}
