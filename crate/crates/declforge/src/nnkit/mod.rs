//! Minimal differentiable-network kit.
//!
//! Provides exactly what the agent networks need and nothing more: named
//! parameter arrays, dense layers, a GRU cell, reverse-mode gradients through
//! a recorded tape, an RMSProp optimizer, and a finite-difference gradient
//! auditor. All arithmetic is `f32`.
//!
//! Gradients accumulate additively into each [`ParamArray`] across `backward`
//! calls until [`ParamSet::zero_grads`] or an optimizer step clears them.
//! Frozen arrays keep their values and optimizer accumulators bit-identical
//! across updates, while gradients still flow *through* the layers they feed.

pub mod functional;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use tape::{GruParamIds, NodeId, Tape};
pub use tensor::Tensor;

use crate::rng::Rng;
use thiserror::Error;

/// RMSProp squared-gradient decay.
pub const RMSPROP_DECAY: f32 = 0.99;
/// RMSProp denominator epsilon.
pub const RMSPROP_EPS: f32 = 1e-5;
/// Default learning rate.
pub const DEFAULT_LR: f32 = 5e-4;

/// GRU hidden vector for one agent.
pub type GruState = Vec<f32>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("{0}")]
    Usage(String),
    #[error("non-finite gradient in parameter '{0}'")]
    NonFiniteGrad(String),
    #[error("non-finite loss while perturbing parameter '{0}'")]
    NonFiniteLoss(String),
    #[error("finite-difference epsilon {0} outside (1e-5, 1e-2)")]
    BadEpsilon(f32),
}

/// Handle to a parameter array inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

/// One named, trainable array with its gradient buffer.
#[derive(Debug, Clone)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Vec<f32>,
    pub frozen: bool,
}

impl ParamArray {
    fn len(&self) -> usize {
        self.values.len()
    }

    /// Borrow values immutably and grad mutably at the same time.
    pub(crate) fn values_and_grad_mut(&mut self) -> (&[f32], &mut [f32]) {
        (&self.values, &mut self.grad)
    }
}

/// Initialization scheme for a new parameter array.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in +-1/sqrt(fan_in).
    UniformFanIn(usize),
    Zeros,
}

/// Ordered collection of parameter arrays. Creation order fixes [`ParamId`]s,
/// which in turn fixes checkpoint layout and update order, so construction
/// must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    arrays: Vec<ParamArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::UniformFanIn(fan_in) => {
                assert!(fan_in > 0, "fan_in must be positive");
                let scale = 1.0 / (fan_in as f32).sqrt();
                (0..n).map(|_| rng.uniform(scale)).collect()
            }
            Init::Zeros => vec![0.0; n],
        };
        self.arrays.push(ParamArray {
            name: name.into(),
            shape: shape.to_vec(),
            values,
            grad: vec![0.0; n],
            frozen: false,
        });
        ParamId((self.arrays.len() - 1) as u32)
    }

    /// Weight `out x in` plus bias `out`, both uniform in +-1/sqrt(in).
    pub fn add_linear(&mut self, prefix: &str, out: usize, inn: usize, rng: &mut Rng) -> (ParamId, ParamId) {
        let w = self.add(format!("{prefix}.w"), &[out, inn], Init::UniformFanIn(inn), rng);
        let b = self.add(format!("{prefix}.b"), &[out], Init::UniformFanIn(inn), rng);
        (w, b)
    }

    pub fn get(&self, id: ParamId) -> &ParamArray {
        &self.arrays[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamArray {
        &mut self.arrays[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamArray> {
        self.arrays.iter()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for a in &mut self.arrays {
            a.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.arrays[id.0 as usize].frozen = frozen;
    }
}

/// RMSProp state: one squared-gradient accumulator per parameter entry.
#[derive(Debug, Clone)]
pub struct OptState {
    acc: Vec<Vec<f32>>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ParamSet) -> Self {
        OptState {
            acc: params.iter().map(|a| vec![0.0; a.len()]).collect(),
            step: 0,
        }
    }

    /// Accumulator snapshot for one parameter (tests and audits).
    pub fn accumulator(&self, id: ParamId) -> &[f32] {
        &self.acc[id.0 as usize]
    }
}

/// One RMSProp step over every non-frozen array, then zero all gradients.
///
/// `acc = 0.99 acc + 0.01 g^2 ; p -= lr g / (sqrt(acc) + 1e-5)`
///
/// Frozen arrays are skipped entirely: values and accumulators stay
/// bit-identical. A non-finite gradient anywhere aborts before any array is
/// touched.
pub fn optimizer_update(params: &mut ParamSet, opt: &mut OptState, lr: f32) -> Result<(), NnError> {
    assert_eq!(opt.acc.len(), params.len(), "OptState built for a different ParamSet");
    for a in params.iter() {
        if a.grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGrad(a.name.clone()));
        }
    }
    for (i, a) in params.arrays.iter_mut().enumerate() {
        if !a.frozen {
            let acc = &mut opt.acc[i];
            for j in 0..a.values.len() {
                let g = a.grad[j];
                acc[j] = RMSPROP_DECAY * acc[j] + (1.0 - RMSPROP_DECAY) * g * g;
                a.values[j] -= lr * g / (acc[j].sqrt() + RMSPROP_EPS);
            }
            debug_assert!(a.values.iter().all(|v| v.is_finite()), "non-finite value in '{}'", a.name);
        }
        a.grad.iter_mut().for_each(|g| *g = 0.0);
    }
    opt.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f32) -> (ParamSet, ParamId) {
        let mut rng = Rng::new(0);
        let mut params = ParamSet::new();
        let id = params.add("p", &[1], Init::Zeros, &mut rng);
        params.get_mut(id).values[0] = value;
        (params, id)
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = Rng::new(5);
        let mut params = ParamSet::new();
        let id = params.add("w", &[16, 25], Init::UniformFanIn(25), &mut rng);
        let bound = 1.0 / 5.0;
        for &v in &params.get(id).values {
            assert!(v.abs() <= bound, "value {v} outside +-{bound}");
        }
        // Seeded: same seed reproduces the same draw.
        let mut rng2 = Rng::new(5);
        let mut params2 = ParamSet::new();
        let id2 = params2.add("w", &[16, 25], Init::UniformFanIn(25), &mut rng2);
        assert_eq!(params.get(id).values, params2.get(id2).values);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut rng = Rng::new(1);
        let mut params = ParamSet::new();
        let id = params.add("w", &[4, 4], Init::UniformFanIn(4), &mut rng);
        let before = params.get(id).values.clone();
        let mut opt = OptState::new(&params);
        optimizer_update(&mut params, &mut opt, DEFAULT_LR).unwrap();
        assert_eq!(params.get(id).values, before);
    }

    #[test]
    fn rmsprop_matches_scalar_recursion_oracle() {
        // Hand-computed in f64: p0=1, lr=0.01, grads [1, -2, 0.5].
        let expected = [0.9000099990001f32, 0.98953828737065, 0.96759189807347];
        let (mut params, id) = scalar_param(1.0);
        let mut opt = OptState::new(&params);
        for (g, &want) in [1.0f32, -2.0, 0.5].iter().zip(&expected) {
            params.get_mut(id).grad[0] = *g;
            optimizer_update(&mut params, &mut opt, 0.01).unwrap();
            let got = params.get(id).values[0];
            assert!((got - want).abs() < 1e-5, "got {got}, want {want}");
        }
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn frozen_arrays_skip_updates_bit_identically() {
        let mut rng = Rng::new(2);
        let mut params = ParamSet::new();
        let frozen = params.add("frozen", &[3], Init::UniformFanIn(3), &mut rng);
        let live = params.add("live", &[3], Init::UniformFanIn(3), &mut rng);
        params.set_frozen(frozen, true);
        let frozen_before = params.get(frozen).values.clone();
        let live_before = params.get(live).values.clone();
        let mut opt = OptState::new(&params);
        for _ in 0..5 {
            params.get_mut(frozen).grad.fill(1.0);
            params.get_mut(live).grad.fill(1.0);
            optimizer_update(&mut params, &mut opt, 0.01).unwrap();
        }
        let frozen_bits: Vec<u32> = params.get(frozen).values.iter().map(|v| v.to_bits()).collect();
        let before_bits: Vec<u32> = frozen_before.iter().map(|v| v.to_bits()).collect();
        assert_eq!(frozen_bits, before_bits);
        assert!(opt.accumulator(frozen).iter().all(|&a| a == 0.0));
        assert_ne!(params.get(live).values, live_before);
    }

    #[test]
    fn non_finite_grad_aborts_with_param_name() {
        let (mut params, id) = scalar_param(1.0);
        params.get_mut(id).grad[0] = f32::NAN;
        let mut opt = OptState::new(&params);
        let err = optimizer_update(&mut params, &mut opt, 0.01).unwrap_err();
        assert!(err.to_string().contains("'p'"), "message was: {err}");
        // Nothing was applied.
        assert_eq!(params.get(id).values[0], 1.0);
    }

    #[test]
    fn grads_zeroed_after_update() {
        let (mut params, id) = scalar_param(1.0);
        params.get_mut(id).grad[0] = 0.5;
        let mut opt = OptState::new(&params);
        optimizer_update(&mut params, &mut opt, 0.01).unwrap();
        assert_eq!(params.get(id).grad[0], 0.0);
    }
}
