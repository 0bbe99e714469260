//! Joint-value mixing.
//!
//! [`vdn_mix`] is the additive baseline: the team value is the exact sum of
//! per-agent chosen values, so per-agent greedy action selection maximizes the
//! team value by construction.
//!
//! [`QmixParams`] is a state-conditioned monotonic mixer. Hypernetworks read
//! the global state and emit the weights of a two-layer mixing net; absolute
//! values on the mixing weights (never on bias paths) keep every
//! `d Q_tot / d Q_i` non-negative, which preserves the same greedy-equals-joint
//! argmax property while letting the state modulate each agent's contribution.
//!
//! [`monotonicity_audit`] probes that property with central differences on an
//! f64 replica of the forward pass, so a correct mixer reports violations at
//! the level of f64 rounding noise and a mixer without the absolute values is
//! reliably flagged.

use crate::nnkit::{NnError, NodeId, ParamId, ParamSet, Tape};
use crate::rng::Rng;

/// Mixing-net hidden width.
pub const QMIX_HIDDEN: usize = 32;

/// Team value under additive mixing: the exact sum of chosen values.
pub fn vdn_mix(chosen_q: &[f32]) -> f32 {
    chosen_q.iter().sum()
}

/// Additive mixing on the tape: elementwise sum of per-agent `B x 1` columns.
pub fn vdn_mix_tape(tape: &mut Tape, qs: &[NodeId]) -> Result<NodeId, NnError> {
    let (first, rest) = qs
        .split_first()
        .ok_or_else(|| NnError::Usage("vdn_mix_tape needs at least one agent".into()))?;
    let mut acc = *first;
    for &q in rest {
        acc = tape.add(acc, q)?;
    }
    Ok(acc)
}

/// Hypernetwork parameters for one task's monotonic mixer.
#[derive(Debug, Clone)]
pub struct QmixParams {
    pub n_agents: usize,
    pub state_dim: usize,
    pub hidden: usize,
    /// state -> first-layer weights (`hidden x n_agents`, row-major).
    pub hw1: (ParamId, ParamId),
    /// state -> first-layer bias (`hidden`).
    pub hb1: (ParamId, ParamId),
    /// state -> second-layer weights (`hidden`).
    pub hw2: (ParamId, ParamId),
    /// state -> hidden -> scalar bias for the second layer.
    pub v1: (ParamId, ParamId),
    pub v2: (ParamId, ParamId),
}

impl QmixParams {
    pub fn create(
        params: &mut ParamSet,
        prefix: &str,
        n_agents: usize,
        state_dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        QmixParams {
            n_agents,
            state_dim,
            hidden,
            hw1: params.add_linear(&format!("{prefix}.hw1"), n_agents * hidden, state_dim, rng),
            hb1: params.add_linear(&format!("{prefix}.hb1"), hidden, state_dim, rng),
            hw2: params.add_linear(&format!("{prefix}.hw2"), hidden, state_dim, rng),
            v1: params.add_linear(&format!("{prefix}.v1"), hidden, state_dim, rng),
            v2: params.add_linear(&format!("{prefix}.v2"), 1, hidden, rng),
        }
    }

    pub fn all_ids(&self) -> [ParamId; 10] {
        [
            self.hw1.0, self.hw1.1, self.hb1.0, self.hb1.1, self.hw2.0, self.hw2.1,
            self.v1.0, self.v1.1, self.v2.0, self.v2.1,
        ]
    }
}

/// Monotonic mixing of one row of chosen values against one global state.
pub fn qmix_mix(params: &ParamSet, qp: &QmixParams, chosen_q: &[f32], state: &[f32]) -> f32 {
    assert_eq!(chosen_q.len(), qp.n_agents, "qmix_mix: wrong agent count");
    assert_eq!(state.len(), qp.state_dim, "qmix_mix: wrong state width");
    let hyper = |w: (ParamId, ParamId), x: &[f32]| -> Vec<f32> {
        let wa = params.get(w.0);
        let ba = params.get(w.1);
        let (out, inn) = (wa.shape[0], wa.shape[1]);
        (0..out)
            .map(|o| {
                let row = &wa.values[o * inn..(o + 1) * inn];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + ba.values[o]
            })
            .collect()
    };
    let (n, h) = (qp.n_agents, qp.hidden);
    let w1 = hyper(qp.hw1, state);
    let b1 = hyper(qp.hb1, state);
    let mut hid = vec![0.0f32; h];
    for j in 0..h {
        let mut s = b1[j];
        for (i, &q) in chosen_q.iter().enumerate() {
            s += w1[j * n + i].abs() * q;
        }
        hid[j] = s.max(0.0);
    }
    let w2 = hyper(qp.hw2, state);
    let mut y: f32 = w2.iter().zip(&hid).map(|(w, q)| w.abs() * q).sum();
    let mut v_hid = hyper(qp.v1, state);
    v_hid.iter_mut().for_each(|v| *v = v.max(0.0));
    let v2w = params.get(qp.v2.0);
    let v2b = params.get(qp.v2.1);
    y += v2w.values.iter().zip(&v_hid).map(|(a, b)| a * b).sum::<f32>() + v2b.values[0];
    y
}

/// Tape version over a batch: `q` is `B x n_agents`, `state` is
/// `B x state_dim`; returns `B x 1`.
pub fn qmix_mix_tape(
    tape: &mut Tape,
    params: &ParamSet,
    qp: &QmixParams,
    q: NodeId,
    state: NodeId,
) -> Result<NodeId, NnError> {
    let (n, h) = (qp.n_agents, qp.hidden);
    let w1_raw = tape.linear(params, qp.hw1.0, Some(qp.hw1.1), state)?;
    let w1 = tape.abs_node(w1_raw);
    let b1 = tape.linear(params, qp.hb1.0, Some(qp.hb1.1), state)?;
    let mixed = tape.batched_matvec(w1, q, h, n)?;
    let pre = tape.add(mixed, b1)?;
    let hid = tape.relu(pre);
    let w2_raw = tape.linear(params, qp.hw2.0, Some(qp.hw2.1), state)?;
    let w2 = tape.abs_node(w2_raw);
    let y = tape.batched_matvec(w2, hid, 1, h)?;
    let v_pre = tape.linear(params, qp.v1.0, Some(qp.v1.1), state)?;
    let v_hid = tape.relu(v_pre);
    let v = tape.linear(params, qp.v2.0, Some(qp.v2.1), v_hid)?;
    tape.add(y, v)
}

/// f64 replica of the forward pass, optionally without the weight constraint
/// (the negative control for the audit).
fn qmix_forward_f64(params: &ParamSet, qp: &QmixParams, q: &[f64], state: &[f64], constrain: bool) -> f64 {
    let hyper = |w: (ParamId, ParamId), x: &[f64]| -> Vec<f64> {
        let wa = params.get(w.0);
        let ba = params.get(w.1);
        let (out, inn) = (wa.shape[0], wa.shape[1]);
        (0..out)
            .map(|o| {
                let row = &wa.values[o * inn..(o + 1) * inn];
                row.iter().zip(x).map(|(a, b)| *a as f64 * b).sum::<f64>() + ba.values[o] as f64
            })
            .collect()
    };
    let clamp = |v: f64| if constrain { v.abs() } else { v };
    let (n, h) = (qp.n_agents, qp.hidden);
    let w1 = hyper(qp.hw1, state);
    let b1 = hyper(qp.hb1, state);
    let mut y = 0.0f64;
    let w2 = hyper(qp.hw2, state);
    for j in 0..h {
        let mut s = b1[j];
        for (i, &qi) in q.iter().enumerate() {
            s += clamp(w1[j * n + i]) * qi;
        }
        y += clamp(w2[j]) * s.max(0.0);
    }
    let v_hid = hyper(qp.v1, state);
    let v2w = params.get(qp.v2.0);
    let v2b = params.get(qp.v2.1);
    y += v2w
        .values
        .iter()
        .zip(&v_hid)
        .map(|(a, b)| *a as f64 * b.max(0.0))
        .sum::<f64>()
        + v2b.values[0] as f64;
    y
}

/// Worst monotonicity violation over random probes: the most negative
/// central-difference slope of Q_tot in any single agent's value, clamped at
/// zero. A correct mixer stays at f64 rounding level (<= 1e-6).
pub fn monotonicity_audit(params: &ParamSet, qp: &QmixParams, samples: usize, rng: &mut Rng) -> f64 {
    monotonicity_audit_with(params, qp, samples, rng, true)
}

/// Audit with the weight constraint toggled; `constrain = false` is the
/// negative control and reports real violations on random parameters.
pub fn monotonicity_audit_with(
    params: &ParamSet,
    qp: &QmixParams,
    samples: usize,
    rng: &mut Rng,
    constrain: bool,
) -> f64 {
    const EPS: f64 = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let q: Vec<f64> = (0..qp.n_agents).map(|_| rng.uniform(5.0) as f64).collect();
        let state: Vec<f64> = (0..qp.state_dim).map(|_| rng.uniform(1.0) as f64).collect();
        for i in 0..qp.n_agents {
            let mut up = q.clone();
            up[i] += EPS;
            let mut down = q.clone();
            down[i] -= EPS;
            let slope = (qmix_forward_f64(params, qp, &up, &state, constrain)
                - qmix_forward_f64(params, qp, &down, &state, constrain))
                / (2.0 * EPS);
            worst = worst.max(-slope);
        }
    }
    worst
}
