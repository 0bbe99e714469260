//! Per-task episode replay.
//!
//! Whole episodes are the storage unit because the recurrent perception layer
//! has to replay a trajectory from its first step to reproduce the hidden
//! states that were live when the actions were taken. The buffer evicts oldest
//! first and samples uniformly with replacement, so sampling works from the
//! first stored episode onward; callers that want a full batch of distinct
//! history gate on [`ReplayBuffer::is_ready`].
//!
//! [`assemble`] pads a sample to the longest episode in it: padded steps carry
//! zero reward, repeat the last real observation, state, action, and
//! availability row, and are marked dead in the fill mask so they contribute
//! exactly nothing to a masked loss.

use std::collections::VecDeque;

use crate::envsuite::TaskSpec;
use crate::nnkit::Tensor;
use crate::rng::Rng;
use thiserror::Error;

/// Default episode capacity per task.
pub const DEFAULT_CAPACITY: usize = 5000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay usage error: {0}")]
    Usage(String),
}

/// One transition: the observations that preceded the joint action, the
/// action, and what the environment returned for it.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub observations: Vec<Vec<f32>>,
    pub global_state: Vec<f32>,
    pub available: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub reward: f32,
    pub terminated: bool,
}

/// A complete trajectory for one task.
#[derive(Debug, Clone)]
pub struct Episode {
    pub task_id: String,
    pub steps: Vec<StepRecord>,
}

/// FIFO ring of episodes for a single task.
#[derive(Debug)]
pub struct ReplayBuffer {
    task_id: String,
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(task_id: &str, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            task_id: task_id.to_string(),
            capacity,
            episodes: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Whether a full batch of `b` episodes has been stored.
    pub fn is_ready(&self, b: usize) -> bool {
        self.episodes.len() >= b
    }

    pub fn push(&mut self, episode: Episode) -> Result<(), ReplayError> {
        if episode.task_id != self.task_id {
            return Err(ReplayError::Usage(format!(
                "episode for task '{}' pushed into buffer for task '{}'",
                episode.task_id, self.task_id
            )));
        }
        if episode.steps.is_empty() {
            return Err(ReplayError::Usage("empty episode".into()));
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// Draw `b` episodes uniformly with replacement.
    pub fn sample(&self, b: usize, rng: &mut Rng) -> Result<Vec<&Episode>, ReplayError> {
        if self.episodes.is_empty() {
            return Err(ReplayError::Usage(format!(
                "sample from empty buffer for task '{}'",
                self.task_id
            )));
        }
        Ok((0..b)
            .map(|_| &self.episodes[rng.below(self.episodes.len())])
            .collect())
    }
}

/// A sample of episodes laid out time-major with padding, ready to feed the
/// networks. Tensors are `B x width`; per-step scalars are `Vec<f32>` of
/// length `B`.
#[derive(Debug)]
pub struct Batch {
    pub b: usize,
    pub t_max: usize,
    pub n_agents: usize,
    pub k: usize,
    /// `[t][agent]`: observation, previous-action one-hot (zero at t = 0),
    /// and agent one-hot, concatenated per row.
    pub trunk_in: Vec<Vec<Tensor>>,
    /// `[t][agent]`: one-hot of the taken action.
    pub actions_onehot: Vec<Vec<Tensor>>,
    /// `[t][agent]`: taken action indices.
    pub actions: Vec<Vec<Vec<usize>>>,
    /// `[t][agent]`: availability flags, `B * k` row-major.
    pub available: Vec<Vec<Vec<bool>>>,
    /// `[t]`: global states.
    pub states: Vec<Tensor>,
    pub rewards: Vec<Vec<f32>>,
    /// `[t]`: 1.0 where the step ended its episode.
    pub terminated: Vec<Vec<f32>>,
    /// `[t]`: 1.0 for real steps, 0.0 for padding.
    pub fill: Vec<Vec<f32>>,
}

/// Pad `episodes` to a common length and stack them time-major.
pub fn assemble(episodes: &[&Episode], spec: &TaskSpec) -> Batch {
    assert!(!episodes.is_empty(), "assemble needs at least one episode");
    let b = episodes.len();
    let (n, k) = (spec.n_agents, spec.k);
    let t_max = episodes.iter().map(|e| e.steps.len()).max().unwrap();
    let trunk_width = spec.obs_dim + k + n;

    let mut batch = Batch {
        b,
        t_max,
        n_agents: n,
        k,
        trunk_in: Vec::with_capacity(t_max),
        actions_onehot: Vec::with_capacity(t_max),
        actions: Vec::with_capacity(t_max),
        available: Vec::with_capacity(t_max),
        states: Vec::with_capacity(t_max),
        rewards: Vec::with_capacity(t_max),
        terminated: Vec::with_capacity(t_max),
        fill: Vec::with_capacity(t_max),
    };

    // A padded step replays the episode's final record with zero reward.
    fn record(ep: &Episode, t: usize) -> (&StepRecord, bool) {
        if t < ep.steps.len() {
            (&ep.steps[t], true)
        } else {
            (ep.steps.last().unwrap(), false)
        }
    }

    for t in 0..t_max {
        let mut trunk = vec![Tensor::zeros(b, trunk_width); n];
        let mut onehot = vec![Tensor::zeros(b, k); n];
        let mut actions = vec![vec![0usize; b]; n];
        let mut avail = vec![vec![false; b * k]; n];
        let mut state = Tensor::zeros(b, spec.state_dim);
        let mut rewards = vec![0.0f32; b];
        let mut terminated = vec![0.0f32; b];
        let mut fill = vec![0.0f32; b];

        for (e, ep) in episodes.iter().enumerate() {
            let (step, real) = record(ep, t);
            for a in 0..n {
                let row = trunk[a].row_mut(e);
                row[..spec.obs_dim].copy_from_slice(&step.observations[a]);
                if t > 0 {
                    let (prev, _) = record(ep, t - 1);
                    row[spec.obs_dim + prev.actions[a]] = 1.0;
                }
                row[spec.obs_dim + k + a] = 1.0;
                onehot[a].row_mut(e)[step.actions[a]] = 1.0;
                actions[a][e] = step.actions[a];
                avail[a][e * k..(e + 1) * k].copy_from_slice(&step.available[a]);
            }
            state.row_mut(e).copy_from_slice(&step.global_state);
            if real {
                rewards[e] = step.reward;
                fill[e] = 1.0;
            }
            if step.terminated {
                terminated[e] = 1.0;
            }
        }

        batch.trunk_in.push(trunk);
        batch.actions_onehot.push(onehot);
        batch.actions.push(actions);
        batch.available.push(avail);
        batch.states.push(state);
        batch.rewards.push(rewards);
        batch.terminated.push(terminated);
        batch.fill.push(fill);
    }
    batch
}
