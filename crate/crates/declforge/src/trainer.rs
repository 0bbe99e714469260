//! Multi-task Q-learning.
//!
//! One optimizer trains every task at once. Each round-robin cycle collects
//! one episode per task, then takes a single optimization step on the
//! weighted sum of per-task TD losses. The weights come from evaluation:
//! a task with win rate EM gets weight proportional to 1 - EM, renormalized
//! across tasks, so the optimizer leans toward whatever is still unsolved.
//! Before any evaluation (or when everything is solved) the weights fall back
//! to uniform.
//!
//! TD targets are standard double-buffer Q-learning: a frozen clone of the
//! net, synced every fixed number of train steps, scores the next step with
//! a per-agent availability-masked max, mixed into a team value. Losses are
//! masked mean squared errors over real (unpadded) steps only.
//!
//! Evaluation is synchronized: when the slowest task's env-step count crosses
//! an interval boundary, every task runs the same fixed set of greedy
//! episodes, and one metrics row per task is emitted.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::apnnet::{
    select_action, ApnNet, Arch, Checkpoint, Component, MixerKind, NetError, Scope, TaskNet,
};
use crate::envsuite::{EnvError, TaskSpec};
use crate::mixers::{qmix_mix, qmix_mix_tape, vdn_mix, vdn_mix_tape};
use crate::nnkit::{
    optimizer_update, NnError, NodeId, OptState, Tape, Tensor,
};
use crate::replay::{assemble, Batch, Episode, ReplayBuffer, ReplayError, StepRecord};
use crate::rng::{stream_seed, Rng};
use thiserror::Error;

/// Evaluation episodes folded into each task's exploitation measure.
pub const EM_WINDOW: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training setup error: {0}")]
    Setup(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// What a run produces and where its checkpoints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Train all tasks jointly; the artifact is the shared decision layer.
    Pretrain,
    /// Train one new task around a loaded decision layer.
    Transfer,
    /// Train one task from random parameters.
    Scratch,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pretrain => "pretrain",
            Mode::Transfer => "transfer",
            Mode::Scratch => "scratch",
        }
    }
}

/// How a loaded decision layer is treated during transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    /// Keep it frozen; only the new task's perception layer trains.
    Fix,
    /// Let it keep training together with the perception layer.
    Finetune,
}

#[derive(Debug, Clone)]
pub struct TransferSetup {
    pub checkpoint: Checkpoint,
    pub mode: TransferMode,
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub label: String,
    pub mode: Mode,
    pub arch: Arch,
    pub mixer: MixerKind,
    pub d: usize,
    pub tasks: Vec<TaskSpec>,
    /// Collection budget per task; the run ends once the slowest task crosses it.
    pub total_env_steps: usize,
    pub lr: f32,
    pub gamma: f32,
    pub batch: usize,
    pub target_sync: usize,
    pub epsilon_start: f32,
    pub epsilon_end: f32,
    pub epsilon_anneal_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    pub transfer: Option<TransferSetup>,
}

impl TrainConfig {
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.label, self.seed)
    }

    fn epsilon_at(&self, task_env_steps: usize) -> f32 {
        if self.epsilon_anneal_steps == 0 {
            return self.epsilon_end;
        }
        let frac = (task_env_steps as f32 / self.epsilon_anneal_steps as f32).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// One emitted metrics record; one per task per evaluation round.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub run_id: String,
    pub mode: String,
    pub arch: String,
    pub mixer: String,
    pub task: String,
    pub env_steps: usize,
    pub train_steps: usize,
    pub eval_win_rate: f32,
    pub eval_return: f32,
    pub loss: f32,
    pub omega: f32,
    pub epsilon: f32,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "run_id,mode,arch,mixer,task,env_steps,train_steps,eval_win_rate,eval_return,loss,omega,epsilon";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.mode,
            self.arch,
            self.mixer,
            self.task,
            self.env_steps,
            self.train_steps,
            self.eval_win_rate,
            self.eval_return,
            self.loss,
            self.omega,
            self.epsilon
        )
    }
}

/// Everything left standing when a run finishes.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub net: ApnNet,
    pub train_steps: usize,
    pub env_steps: BTreeMap<String, usize>,
}

impl RunOutput {
    /// The decision-layer artifact of a pretraining run.
    pub fn decl_checkpoint(&self, single_task: bool) -> Checkpoint {
        self.net
            .checkpoint(Scope::DeclOnly, self.train_steps as u64, single_task)
    }

    /// The complete parameter dump, reloadable for evaluation.
    pub fn full_checkpoint(&self) -> Checkpoint {
        self.net.checkpoint(Scope::Full, self.train_steps as u64, false)
    }
}

/// Latest evaluation outcomes per task, driving the loss weights.
#[derive(Debug)]
pub struct EmTracker {
    results: BTreeMap<String, VecDeque<bool>>,
}

impl EmTracker {
    pub fn new<I: IntoIterator<Item = String>>(tasks: I) -> Self {
        EmTracker {
            results: tasks.into_iter().map(|t| (t, VecDeque::new())).collect(),
        }
    }

    pub fn record(&mut self, task: &str, win: bool) {
        let window = self
            .results
            .get_mut(task)
            .unwrap_or_else(|| panic!("unknown task '{task}'"));
        if window.len() == EM_WINDOW {
            window.pop_front();
        }
        window.push_back(win);
    }

    /// Win rate over the tracked window; 0 before any evaluation.
    pub fn em(&self, task: &str) -> f32 {
        let window = &self.results[task];
        if window.is_empty() {
            return 0.0;
        }
        window.iter().filter(|&&w| w).count() as f32 / window.len() as f32
    }

    /// Normalized loss weights, leaning toward unsolved tasks. Uniform when
    /// every task is solved (or nothing has been evaluated on a solved set).
    pub fn omegas(&self) -> BTreeMap<String, f32> {
        let raw: Vec<(String, f32)> = self
            .results
            .keys()
            .map(|t| (t.clone(), 1.0 - self.em(t)))
            .collect();
        let total: f32 = raw.iter().map(|(_, w)| w).sum();
        if total < 1e-8 {
            let uniform = 1.0 / raw.len() as f32;
            return raw.into_iter().map(|(t, _)| (t, uniform)).collect();
        }
        raw.into_iter().map(|(t, w)| (t, w / total)).collect()
    }
}

/// One full episode gathered under an epsilon-greedy policy.
#[derive(Debug)]
pub struct CollectedEpisode {
    pub episode: Episode,
    pub win: bool,
    pub ep_return: f32,
}

fn trunk_row(spec: &TaskSpec, obs: &[f32], prev_action: Option<usize>, agent: usize) -> Vec<f32> {
    let mut row = vec![0.0f32; spec.obs_dim + spec.k + spec.n_agents];
    row[..spec.obs_dim].copy_from_slice(obs);
    if let Some(a) = prev_action {
        row[spec.obs_dim + a] = 1.0;
    }
    row[spec.obs_dim + spec.k + agent] = 1.0;
    row
}

/// Roll out one episode. The rng drives the reset seed and every action draw.
pub fn collect_episode(
    net: &ApnNet,
    task: &str,
    epsilon: f32,
    rng: &mut Rng,
) -> Result<CollectedEpisode, TrainError> {
    let spec = net.spec(task)?.clone();
    let (mut env, mut view) = spec.reset(rng.next_u64());
    let mut hiddens: Vec<Tensor> = (0..spec.n_agents).map(|_| net.zero_hidden(1)).collect();
    let mut prev_actions: Vec<Option<usize>> = vec![None; spec.n_agents];
    let mut steps = Vec::new();
    let mut win = false;
    let mut ep_return = 0.0f32;

    while !env.terminated {
        let mut actions = Vec::with_capacity(spec.n_agents);
        for agent in 0..spec.n_agents {
            let x = Tensor::from_vec(
                1,
                spec.obs_dim + spec.k + spec.n_agents,
                trunk_row(&spec, &view.observations[agent], prev_actions[agent], agent),
            );
            hiddens[agent] = net.advance_hidden(task, &x, &hiddens[agent])?;
            let q = net.q_from_hidden(task, &hiddens[agent])?;
            actions.push(select_action(
                q.row(0),
                &view.available_actions[agent],
                epsilon,
                rng,
            )?);
        }
        let before = view;
        let after = spec.step(&mut env, &actions)?;
        steps.push(StepRecord {
            observations: before.observations,
            global_state: before.global_state,
            available: before.available_actions,
            actions: actions.clone(),
            reward: after.reward,
            terminated: after.terminated,
        });
        ep_return += after.reward;
        win |= after.win;
        for (slot, &a) in prev_actions.iter_mut().zip(&actions) {
            *slot = Some(a);
        }
        view = after;
    }

    debug_assert!(
        (ep_return - (crate::envsuite::STEP_COST * steps.len() as f32
            + if win { crate::envsuite::WIN_BONUS } else { 0.0 }))
        .abs()
            < 1e-4,
        "episode return does not account for its steps"
    );
    Ok(CollectedEpisode {
        episode: Episode {
            task_id: spec.task_id.clone(),
            steps,
        },
        win,
        ep_return,
    })
}

/// Greedy evaluation on a fixed, seed-derived episode set.
#[derive(Debug)]
pub struct EvalResult {
    pub wins: Vec<bool>,
    pub mean_return: f32,
}

impl EvalResult {
    pub fn win_rate(&self) -> f32 {
        if self.wins.is_empty() {
            return 0.0;
        }
        self.wins.iter().filter(|&&w| w).count() as f32 / self.wins.len() as f32
    }
}

pub fn evaluate(
    net: &ApnNet,
    task: &str,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, TrainError> {
    let mut wins = Vec::with_capacity(episodes);
    let mut total_return = 0.0f32;
    for idx in 0..episodes {
        let mut rng = Rng::new(stream_seed(seed, &format!("eval/{task}/{idx}")));
        let out = collect_episode(net, task, 0.0, &mut rng)?;
        wins.push(out.win);
        total_return += out.ep_return;
    }
    Ok(EvalResult {
        wins,
        mean_return: total_return / episodes.max(1) as f32,
    })
}

fn masked_max(q: &[f32], avail: &[bool]) -> f32 {
    debug_assert!(avail.iter().any(|&a| a), "no available action");
    q.iter()
        .zip(avail)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .fold(f32::NEG_INFINITY, f32::max)
}

/// Bootstrapped targets `y_t = r_t + gamma * (1 - term_t) * Q_tot(t + 1)`,
/// where the next step's team value comes from the target net under a
/// per-agent availability-masked max. Returned as `[t][episode]`.
pub fn td_targets(
    target: &ApnNet,
    task: &str,
    batch: &Batch,
    gamma: f32,
) -> Result<Vec<Vec<f32>>, TrainError> {
    let spec = target.spec(task)?;
    let (b, t_max, n, k) = (batch.b, batch.t_max, batch.n_agents, batch.k);
    let mut hiddens: Vec<Tensor> = (0..n).map(|_| target.zero_hidden(b)).collect();

    // Team value of the greedy joint action at each step, per episode.
    let mut tot = vec![vec![0.0f32; b]; t_max];
    for t in 0..t_max {
        let mut best = vec![vec![0.0f32; n]; b];
        for agent in 0..n {
            hiddens[agent] = target.advance_hidden(task, &batch.trunk_in[t][agent], &hiddens[agent])?;
            let q = target.q_from_hidden(task, &hiddens[agent])?;
            for e in 0..b {
                let avail = &batch.available[t][agent][e * k..(e + 1) * k];
                best[e][agent] = masked_max(q.row(e), avail);
            }
        }
        for e in 0..b {
            tot[t][e] = match target.mixer {
                MixerKind::Vdn => vdn_mix(&best[e]),
                MixerKind::Qmix => {
                    let qp = &target.qmix[&spec.task_id];
                    qmix_mix(&target.params, qp, &best[e], batch.states[t].row(e))
                }
            };
        }
    }

    let mut targets = vec![vec![0.0f32; b]; t_max];
    for t in 0..t_max {
        for e in 0..b {
            let bootstrap = if t + 1 < t_max { tot[t + 1][e] } else { 0.0 };
            targets[t][e] =
                batch.rewards[t][e] + gamma * (1.0 - batch.terminated[t][e]) * bootstrap;
        }
    }
    Ok(targets)
}

/// Build one task's masked TD loss on the tape: mean over real steps of
/// `(Q_tot(taken actions) - y)^2`. Returns the loss node, a `1 x 1` value.
pub fn task_loss(
    tape: &mut Tape,
    net: &ApnNet,
    task: &str,
    batch: &Batch,
    targets: &[Vec<f32>],
) -> Result<NodeId, TrainError> {
    let spec = net.spec(task)?;
    let (b, t_max, n) = (batch.b, batch.t_max, batch.n_agents);
    let count: f32 = batch.fill.iter().flatten().sum();
    if count <= 0.0 {
        return Err(TrainError::Setup(format!(
            "batch for task '{task}' has no real steps"
        )));
    }

    let mut hiddens: Vec<NodeId> = (0..n)
        .map(|_| tape.constant(net.zero_hidden(b)))
        .collect();
    let mut total: Option<NodeId> = None;

    for t in 0..t_max {
        let mut chosen: Vec<NodeId> = Vec::with_capacity(n);
        for agent in 0..n {
            let x = tape.constant(batch.trunk_in[t][agent].clone());
            let q = match net.task_net(task)? {
                TaskNet::Apn(p) => {
                    let pre = tape.linear(&net.params, p.trunk.0, Some(p.trunk.1), x)?;
                    let trunk = tape.relu(pre);
                    hiddens[agent] = tape.gru_step(&net.params, &p.gru, trunk, hiddens[agent])?;
                    let decl = net.decl.as_ref().expect("apn net has a decision layer");
                    let onehot = tape.constant(batch.actions_onehot[t][agent].clone());
                    let cand = tape.concat(hiddens[agent], onehot)?;
                    let feat_pre = tape.linear(&net.params, p.head.0, Some(p.head.1), cand)?;
                    let feat = tape.relu(feat_pre);
                    let z_pre = tape.linear(&net.params, decl.l1.0, Some(decl.l1.1), feat)?;
                    let z = tape.relu(z_pre);
                    tape.linear(&net.params, decl.l2.0, Some(decl.l2.1), z)?
                }
                TaskNet::Original(p) => {
                    let pre = tape.linear(&net.params, p.trunk.0, Some(p.trunk.1), x)?;
                    let trunk = tape.relu(pre);
                    hiddens[agent] = tape.gru_step(&net.params, &p.gru, trunk, hiddens[agent])?;
                    let all = tape.linear(&net.params, p.head.0, Some(p.head.1), hiddens[agent])?;
                    tape.gather_cols(all, &batch.actions[t][agent])?
                }
            };
            chosen.push(q);
        }

        let tot = match net.mixer {
            MixerKind::Vdn => vdn_mix_tape(tape, &chosen)?,
            MixerKind::Qmix => {
                let mut joint = chosen[0];
                for &c in &chosen[1..] {
                    joint = tape.concat(joint, c)?;
                }
                let state = tape.constant(batch.states[t].clone());
                qmix_mix_tape(tape, &net.params, &net.qmix[&spec.task_id], joint, state)?
            }
        };

        let y = tape.constant(Tensor::from_vec(b, 1, targets[t].clone()));
        let fill = tape.constant(Tensor::from_vec(b, 1, batch.fill[t].clone()));
        let diff = tape.sub(tot, y)?;
        let masked = tape.mul(diff, fill)?;
        let sq = tape.mul(masked, masked)?;
        let ssq = tape.sum_all(sq);
        total = Some(match total {
            None => ssq,
            Some(acc) => tape.add(acc, ssq)?,
        });
    }

    Ok(tape.affine(total.expect("t_max > 0"), 1.0 / count, 0.0))
}

/// One optimization step on the weighted sum of per-task losses. Batches
/// carry their loss weight; a single backward pass and optimizer update
/// covers every parameter. Returns the combined loss.
pub fn combined_step(
    net: &mut ApnNet,
    target: &ApnNet,
    opt: &mut OptState,
    batches: &[(String, Batch, f32)],
    gamma: f32,
    lr: f32,
) -> Result<f32, TrainError> {
    if batches.is_empty() {
        return Err(TrainError::Setup("no batches for combined step".into()));
    }
    let mut tape = Tape::new();
    let mut total: Option<NodeId> = None;
    for (task, batch, omega) in batches {
        let targets = td_targets(target, task, batch, gamma)?;
        let loss = task_loss(&mut tape, net, task, batch, &targets)?;
        let value = tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(TrainError::Diverged(format!(
                "non-finite loss for task '{task}'"
            )));
        }
        let weighted = tape.affine(loss, *omega, 0.0);
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let total = total.expect("at least one batch");
    let combined = tape.value(total).data[0];
    tape.backward(&mut net.params, total, 1.0)?;
    optimizer_update(&mut net.params, opt, lr)?;
    Ok(combined)
}

/// Drive a full run: round-robin collection, gated combined steps, periodic
/// target sync, and synchronized evaluation rounds that emit metrics rows.
pub fn run(cfg: &TrainConfig, on_row: &mut dyn FnMut(&MetricsRow)) -> Result<RunOutput, TrainError> {
    if cfg.tasks.is_empty() {
        return Err(TrainError::Setup("no tasks configured".into()));
    }
    if cfg.mode == Mode::Transfer && cfg.transfer.is_none() {
        return Err(TrainError::Setup("transfer mode needs a checkpoint".into()));
    }

    let mut net = ApnNet::new(cfg.d, cfg.arch, cfg.mixer, &cfg.tasks, cfg.seed)?;
    if let Some(setup) = &cfg.transfer {
        net.apply_decl(&setup.checkpoint)?;
        if setup.mode == TransferMode::Fix {
            net.set_frozen(Component::DecL, true)?;
        }
    }
    let mut target = net.clone();
    let mut opt = OptState::new(&net.params);

    let order: Vec<String> = cfg.tasks.iter().map(|s| s.task_id.clone()).collect();
    let mut buffers: BTreeMap<String, ReplayBuffer> = order
        .iter()
        .map(|t| (t.clone(), ReplayBuffer::new(t, cfg.replay_capacity)))
        .collect();
    let mut collect_rngs: BTreeMap<String, Rng> = order
        .iter()
        .map(|t| (t.clone(), Rng::new(stream_seed(cfg.seed, &format!("collect/{t}")))))
        .collect();
    let mut sample_rngs: BTreeMap<String, Rng> = order
        .iter()
        .map(|t| (t.clone(), Rng::new(stream_seed(cfg.seed, &format!("sample/{t}")))))
        .collect();

    let mut tracker = EmTracker::new(order.iter().cloned());
    let mut env_steps: BTreeMap<String, usize> = order.iter().map(|t| (t.clone(), 0)).collect();
    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut train_steps = 0usize;
    let mut last_loss = f32::NAN;
    let mut next_eval = cfg.eval_interval;
    let run_id = cfg.run_id();

    while *env_steps.values().min().unwrap() < cfg.total_env_steps {
        for task in &order {
            let eps = cfg.epsilon_at(env_steps[task]);
            let rng = collect_rngs.get_mut(task).unwrap();
            let out = collect_episode(&net, task, eps, rng)?;
            let len = out.episode.steps.len();
            buffers.get_mut(task).unwrap().push(out.episode)?;
            *env_steps.get_mut(task).unwrap() += len;
        }

        if order.iter().all(|t| buffers[t].is_ready(cfg.batch)) {
            let omegas = tracker.omegas();
            let mut batches = Vec::with_capacity(order.len());
            for task in &order {
                let rng = sample_rngs.get_mut(task).unwrap();
                let sample = buffers[task].sample(cfg.batch, rng)?;
                let batch = assemble(&sample, &net.specs[task]);
                batches.push((task.clone(), batch, omegas[task]));
            }
            last_loss = combined_step(&mut net, &target, &mut opt, &batches, cfg.gamma, cfg.lr)?;
            train_steps += 1;
            if train_steps % cfg.target_sync == 0 {
                target = net.clone();
            }
        }

        let slowest = *env_steps.values().min().unwrap();
        if slowest >= next_eval {
            let mut round: Vec<(String, EvalResult)> = Vec::with_capacity(order.len());
            for task in &order {
                let result = evaluate(&net, task, cfg.eval_episodes, cfg.seed)?;
                for &win in &result.wins {
                    tracker.record(task, win);
                }
                round.push((task.clone(), result));
            }
            let omegas = tracker.omegas();
            for (task, result) in round {
                let row = MetricsRow {
                    run_id: run_id.clone(),
                    mode: cfg.mode.as_str().to_string(),
                    arch: cfg.arch.as_str().to_string(),
                    mixer: cfg.mixer.as_str().to_string(),
                    env_steps: env_steps[&task],
                    train_steps,
                    eval_win_rate: result.win_rate(),
                    eval_return: result.mean_return,
                    loss: last_loss,
                    omega: omegas[&task],
                    epsilon: cfg.epsilon_at(env_steps[&task]),
                    task,
                };
                on_row(&row);
                metrics.push(row);
            }
            next_eval = (slowest / cfg.eval_interval + 1) * cfg.eval_interval;
        }
    }

    Ok(RunOutput {
        rows: metrics,
        net,
        train_steps,
        env_steps,
    })
}
