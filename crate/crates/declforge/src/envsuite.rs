//! Desk-scale cooperative grid tasks.
//!
//! Two families, both episodic, fully deterministic given the reset seed:
//!
//! - `teamreach`: N agents on a W x H grid must simultaneously cover N goal
//!   cells. Goal cells are fixed per task (drawn from a hash of the task id,
//!   not the episode seed). With C > 0 each agent also gets C signalling
//!   actions that set a flag visible in everyone's next observation.
//! - `preychase`: N predators on a W x W grid corner a prey that greedily
//!   maximizes its Manhattan distance to the nearest predator. Capture needs
//!   at least two predators 4-adjacent to the prey, checked after the
//!   predators move and before the prey answers.
//!
//! Actions are `0 stay, 1 up, 2 down, 3 left, 4 right` (y grows downward),
//! then signals. Moves are resolved in agent-index order against incrementally
//! updated occupancy; a blocked move becomes stay. A movement action is
//! *unavailable* only when it targets a wall; moves onto occupied cells stay
//! available and resolve to stay.
//!
//! Every step costs -0.01; the winning transition adds +10 and terminates.

use crate::rng::{fnv1a64, Rng};
use thiserror::Error;

/// Number of movement actions (stay + 4 directions).
pub const MOVE_ACTIONS: usize = 5;

/// Per-step reward before any win bonus.
pub const STEP_COST: f32 = -0.01;
/// Reward added on the winning transition.
pub const WIN_BONUS: f32 = 10.0;

const MOVES: [(i32, i32); MOVE_ACTIONS] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid task: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

/// Task family with its integer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    TeamReach { n: usize, w: usize, h: usize, c: usize },
    PreyChase { n: usize, w: usize },
}

/// Immutable task description and derived dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub family: Family,
    pub task_id: String,
    pub n_agents: usize,
    /// Action space size K (>= 5).
    pub k: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub horizon: usize,
    /// Goal cells (`teamreach` only), drawn once from the task-id hash.
    pub goals: Vec<(i32, i32)>,
}

/// Mutable episode state.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub positions: Vec<(i32, i32)>,
    /// Prey position (`preychase` only).
    pub prey: Option<(i32, i32)>,
    /// Last signal per agent, 0 = none (`teamreach` only).
    pub signals: Vec<usize>,
    pub t: usize,
    pub terminated: bool,
    /// Placement stream; dynamics after reset are deterministic.
    pub rng: Rng,
}

/// Everything an agent or learner observes after reset or a step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<Vec<f32>>,
    pub global_state: Vec<f32>,
    pub reward: f32,
    pub terminated: bool,
    pub win: bool,
    pub available_actions: Vec<Vec<bool>>,
}

/// Validate parameters and derive dimensions, ids, and goal cells.
pub fn make_task(family: Family) -> Result<TaskSpec, EnvError> {
    let (n, w, h) = match family {
        Family::TeamReach { n, w, h, .. } => (n, w, h),
        Family::PreyChase { n, w } => (n, w, w),
    };
    if n == 0 || w == 0 || h == 0 {
        return Err(EnvError::Config(format!(
            "non-positive dimensions: n={n}, w={w}, h={h}"
        )));
    }
    if 2 * n > w * h {
        return Err(EnvError::Config(format!(
            "{n} agents do not fit on a {w}x{h} grid (limit {})",
            w * h / 2
        )));
    }
    let spec = match family {
        Family::TeamReach { n, w, h, c } => {
            let task_id = format!("teamreach-N{n}-W{w}-H{h}-C{c}");
            let all_cells: Vec<(i32, i32)> = cells(w, h);
            let mut goal_rng = Rng::new(fnv1a64(task_id.as_bytes()));
            let goals = goal_rng.sample_distinct(&all_cells, n);
            TaskSpec {
                family,
                task_id,
                n_agents: n,
                k: MOVE_ACTIONS + c,
                obs_dim: 2 + n * c + 2 * n + 2 * (n - 1),
                state_dim: 2 * n + 2 * n + n * c,
                horizon: 4 * (w + h),
                goals,
            }
        }
        Family::PreyChase { n, w } => TaskSpec {
            family,
            task_id: format!("preychase-N{n}-W{w}"),
            n_agents: n,
            k: MOVE_ACTIONS,
            obs_dim: 4 + 2 * (n - 1),
            state_dim: 2 * n + 2,
            horizon: 8 * w,
            goals: Vec::new(),
        },
    };
    Ok(spec)
}

/// Parse a registry name like `teamreach-N2-W5-H5-C0` or `preychase-N2-W7`.
pub fn task_from_name(name: &str) -> Result<TaskSpec, EnvError> {
    let parts: Vec<&str> = name.split('-').collect();
    let field = |part: &str, prefix: char| -> Result<usize, EnvError> {
        part.strip_prefix(prefix)
            .and_then(|digits| digits.parse::<usize>().ok())
            .ok_or_else(|| EnvError::Config(format!("unknown task name '{name}'")))
    };
    let family = match parts.as_slice() {
        ["teamreach", n, w, h, c] => Family::TeamReach {
            n: field(n, 'N')?,
            w: field(w, 'W')?,
            h: field(h, 'H')?,
            c: field(c, 'C')?,
        },
        ["preychase", n, w] => Family::PreyChase {
            n: field(n, 'N')?,
            w: field(w, 'W')?,
        },
        _ => return Err(EnvError::Config(format!("unknown task name '{name}'"))),
    };
    make_task(family)
}

fn cells(w: usize, h: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            out.push((x, y));
        }
    }
    out
}

/// Normalize a coordinate to [0, 1]; degenerate 1-wide axes map to 0.
fn norm(v: i32, size: usize) -> f32 {
    if size > 1 {
        v as f32 / (size - 1) as f32
    } else {
        0.0
    }
}

fn clipped_offset(from: (i32, i32), to: (i32, i32), clip: i32, out: &mut Vec<f32>) {
    let dx = (to.0 - from.0).clamp(-clip, clip);
    let dy = (to.1 - from.1).clamp(-clip, clip);
    out.push(dx as f32 / clip as f32);
    out.push(dy as f32 / clip as f32);
}

impl TaskSpec {
    pub fn dims(&self) -> (usize, usize) {
        match self.family {
            Family::TeamReach { w, h, .. } => (w, h),
            Family::PreyChase { w, .. } => (w, w),
        }
    }

    fn signal_count(&self) -> usize {
        match self.family {
            Family::TeamReach { c, .. } => c,
            Family::PreyChase { .. } => 0,
        }
    }

    /// Start an episode. Agent placement is drawn from `seed`; goal cells and
    /// the prey start are independent of it.
    pub fn reset(&self, seed: u64) -> (EnvState, StepResult) {
        let (w, h) = self.dims();
        let mut rng = Rng::new(seed);
        let state = match self.family {
            Family::TeamReach { n, .. } => {
                let pool: Vec<(i32, i32)> = cells(w, h)
                    .into_iter()
                    .filter(|cell| !self.goals.contains(cell))
                    .collect();
                let positions = rng.sample_distinct(&pool, n);
                EnvState {
                    positions,
                    prey: None,
                    signals: vec![0; n],
                    t: 0,
                    terminated: false,
                    rng,
                }
            }
            Family::PreyChase { n, w } => {
                let prey = (w as i32 / 2, w as i32 / 2);
                let pool: Vec<(i32, i32)> = cells(w, w).into_iter().filter(|&cell| cell != prey).collect();
                let positions = rng.sample_distinct(&pool, n);
                EnvState {
                    positions,
                    prey: Some(prey),
                    signals: Vec::new(),
                    t: 0,
                    terminated: false,
                    rng,
                }
            }
        };
        let result = StepResult {
            observations: self.observe_all(&state),
            global_state: self.global_state(&state),
            reward: 0.0,
            terminated: false,
            win: false,
            available_actions: self.available_all(&state),
        };
        (state, result)
    }

    /// Advance one step with one action per agent.
    pub fn step(&self, state: &mut EnvState, actions: &[usize]) -> Result<StepResult, EnvError> {
        if state.terminated {
            return Err(EnvError::Usage("step called on a terminated episode".into()));
        }
        if actions.len() != self.n_agents {
            return Err(EnvError::Usage(format!(
                "expected {} actions, got {}",
                self.n_agents,
                actions.len()
            )));
        }
        for (i, &a) in actions.iter().enumerate() {
            if a >= self.k {
                return Err(EnvError::Usage(format!(
                    "action {a} out of range 0..{} for agent {i}",
                    self.k
                )));
            }
            if !self.available_actions(state, i)[a] {
                return Err(EnvError::Usage(format!("action {a} unavailable for agent {i}")));
            }
        }

        let (w, h) = self.dims();
        // Movement and signals, agent-index order, occupancy updated as we go.
        for i in 0..self.n_agents {
            let a = actions[i];
            if a >= MOVE_ACTIONS {
                state.signals[i] = a - MOVE_ACTIONS + 1;
                continue;
            }
            let (dx, dy) = MOVES[a];
            let target = (state.positions[i].0 + dx, state.positions[i].1 + dy);
            let in_bounds = (0..w as i32).contains(&target.0) && (0..h as i32).contains(&target.1);
            let occupied = state
                .positions
                .iter()
                .enumerate()
                .any(|(j, &p)| j != i && p == target);
            if in_bounds && !occupied {
                state.positions[i] = target;
            }
        }
        debug_assert!(
            (0..self.n_agents).all(|i| (i + 1..self.n_agents).all(|j| state.positions[i] != state.positions[j])),
            "agents overlap after movement"
        );

        let win = match self.family {
            Family::TeamReach { .. } => self
                .goals
                .iter()
                .all(|goal| state.positions.contains(goal)),
            Family::PreyChase { .. } => {
                let prey = state.prey.expect("preychase state has a prey");
                let adjacent = state
                    .positions
                    .iter()
                    .filter(|&&p| (p.0 - prey.0).abs() + (p.1 - prey.1).abs() == 1)
                    .count();
                adjacent >= 2
            }
        };

        // The prey answers only if it has not been caught.
        if let (Family::PreyChase { .. }, false) = (self.family, win) {
            let prey = state.prey.expect("preychase state has a prey");
            let mut best = prey;
            let mut best_dist = -1i32;
            for (dx, dy) in MOVES {
                let cand = (prey.0 + dx, prey.1 + dy);
                if !(0..w as i32).contains(&cand.0) || !(0..h as i32).contains(&cand.1) {
                    continue;
                }
                let dist = state
                    .positions
                    .iter()
                    .map(|&p| (p.0 - cand.0).abs() + (p.1 - cand.1).abs())
                    .min()
                    .expect("at least one predator");
                if dist > best_dist {
                    best = cand;
                    best_dist = dist;
                }
            }
            state.prey = Some(best);
        }

        state.t += 1;
        state.terminated = win || state.t == self.horizon;
        let reward = STEP_COST + if win { WIN_BONUS } else { 0.0 };

        Ok(StepResult {
            observations: self.observe_all(state),
            global_state: self.global_state(state),
            reward,
            terminated: state.terminated,
            win,
            available_actions: self.available_all(state),
        })
    }

    /// Per-agent observation; every entry lies in [-1, 1].
    pub fn observe(&self, state: &EnvState, agent: usize) -> Vec<f32> {
        let (w, h) = self.dims();
        let me = state.positions[agent];
        let mut obs = Vec::with_capacity(self.obs_dim);
        obs.push(norm(me.0, w));
        obs.push(norm(me.1, h));
        match self.family {
            Family::TeamReach { n, c, .. } => {
                for j in 0..n {
                    for s in 0..c {
                        obs.push(if state.signals[j] == s + 1 { 1.0 } else { 0.0 });
                    }
                }
                for &goal in &self.goals {
                    clipped_offset(me, goal, 3, &mut obs);
                }
                for (j, &mate) in state.positions.iter().enumerate() {
                    if j != agent {
                        clipped_offset(me, mate, 3, &mut obs);
                    }
                }
            }
            Family::PreyChase { .. } => {
                clipped_offset(me, state.prey.expect("preychase state has a prey"), 5, &mut obs);
                for (j, &mate) in state.positions.iter().enumerate() {
                    if j != agent {
                        clipped_offset(me, mate, 5, &mut obs);
                    }
                }
            }
        }
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert!(obs.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        obs
    }

    /// Availability mask: stay and signals always, movement unless it targets
    /// a wall.
    pub fn available_actions(&self, state: &EnvState, agent: usize) -> Vec<bool> {
        let (w, h) = self.dims();
        let me = state.positions[agent];
        let mut mask = Vec::with_capacity(self.k);
        for (dx, dy) in MOVES {
            let target = (me.0 + dx, me.1 + dy);
            mask.push((0..w as i32).contains(&target.0) && (0..h as i32).contains(&target.1));
        }
        mask.extend(std::iter::repeat(true).take(self.signal_count()));
        mask
    }

    /// Centralized state: all positions (plus goals/signals or the prey),
    /// coordinates normalized to [0, 1].
    pub fn global_state(&self, state: &EnvState) -> Vec<f32> {
        let (w, h) = self.dims();
        let mut gs = Vec::with_capacity(self.state_dim);
        for &(x, y) in &state.positions {
            gs.push(norm(x, w));
            gs.push(norm(y, h));
        }
        match self.family {
            Family::TeamReach { n, c, .. } => {
                for &(x, y) in &self.goals {
                    gs.push(norm(x, w));
                    gs.push(norm(y, h));
                }
                for j in 0..n {
                    for s in 0..c {
                        gs.push(if state.signals[j] == s + 1 { 1.0 } else { 0.0 });
                    }
                }
            }
            Family::PreyChase { .. } => {
                let prey = state.prey.expect("preychase state has a prey");
                gs.push(norm(prey.0, w));
                gs.push(norm(prey.1, h));
            }
        }
        debug_assert_eq!(gs.len(), self.state_dim);
        gs
    }

    fn observe_all(&self, state: &EnvState) -> Vec<Vec<f32>> {
        (0..self.n_agents).map(|i| self.observe(state, i)).collect()
    }

    fn available_all(&self, state: &EnvState) -> Vec<Vec<bool>> {
        (0..self.n_agents).map(|i| self.available_actions(state, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn teamreach(n: usize, w: usize, h: usize, c: usize) -> TaskSpec {
        make_task(Family::TeamReach { n, w, h, c }).unwrap()
    }

    fn preychase(n: usize, w: usize) -> TaskSpec {
        make_task(Family::PreyChase { n, w }).unwrap()
    }

    #[test]
    fn derived_dimensions_match_formulas() {
        let t = teamreach(2, 5, 5, 0);
        assert_eq!((t.k, t.obs_dim, t.state_dim, t.horizon), (5, 8, 8, 40));
        assert_eq!(t.task_id, "teamreach-N2-W5-H5-C0");

        let t = teamreach(3, 6, 6, 2);
        assert_eq!((t.k, t.obs_dim, t.state_dim, t.horizon), (7, 18, 18, 48));

        let p = preychase(2, 7);
        assert_eq!((p.k, p.obs_dim, p.state_dim, p.horizon), (5, 6, 6, 56));
        assert_eq!(p.task_id, "preychase-N2-W7");
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        assert!(make_task(Family::TeamReach { n: 0, w: 5, h: 5, c: 0 }).is_err());
        assert!(make_task(Family::TeamReach { n: 2, w: 0, h: 5, c: 0 }).is_err());
        assert!(make_task(Family::TeamReach { n: 13, w: 5, h: 5, c: 0 }).is_err());
        assert!(make_task(Family::PreyChase { n: 25, w: 7 }).is_err());
        // Exactly at the limit is fine.
        assert!(make_task(Family::TeamReach { n: 12, w: 5, h: 5, c: 0 }).is_ok());
    }

    #[test]
    fn registry_names_round_trip() {
        for name in ["teamreach-N2-W5-H5-C0", "teamreach-N3-W6-H6-C2", "preychase-N2-W7"] {
            let spec = task_from_name(name).unwrap();
            assert_eq!(spec.task_id, name);
        }
        for bad in ["teamreach-N2-W5", "lavarun-N2-W5-H5-C0", "preychase-NX-W7", ""] {
            let err = task_from_name(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "message was: {err}");
        }
    }

    #[test]
    fn goals_depend_on_task_id_not_episode_seed() {
        let a = teamreach(2, 5, 5, 0);
        let b = teamreach(2, 5, 5, 0);
        assert_eq!(a.goals, b.goals);
        assert_eq!(a.goals.len(), 2);
        assert_ne!(a.goals[0], a.goals[1]);
        // Different params hash to different goals (overwhelmingly).
        let c = teamreach(2, 6, 5, 0);
        assert_ne!(a.goals, c.goals);
        // Resets with wildly different seeds never move the goals.
        let (s1, _) = a.reset(1);
        let (s2, _) = a.reset(999);
        assert_eq!(a.goals, b.goals);
        for s in [&s1, &s2] {
            for p in &s.positions {
                assert!(!a.goals.contains(p), "agent placed on a goal cell");
            }
        }
    }

    #[test]
    fn reset_is_seed_deterministic_and_seed_sensitive() {
        let t = teamreach(2, 5, 5, 1);
        let (s_a, r_a) = t.reset(7);
        let (s_b, r_b) = t.reset(7);
        assert_eq!(s_a.positions, s_b.positions);
        assert_eq!(r_a.observations, r_b.observations);
        assert_eq!(s_a.signals, vec![0, 0]);
        assert_eq!(r_a.reward, 0.0);
        assert!(!r_a.terminated && !r_a.win);

        let baseline = t.reset(0).0.positions;
        let differing = (1..=100)
            .filter(|&seed| t.reset(seed).0.positions != baseline)
            .count();
        assert!(differing >= 99, "only {differing}/100 seeds moved the agents");
    }

    #[test]
    fn teamreach_win_pays_step_cost_plus_bonus() {
        // Hand simulation: goals (0,0) and (4,4), agents at (0,1) and (4,3);
        // up moves agent 0 onto the first goal, down moves agent 1 onto the
        // second, so the step wins with reward 10 - 0.01 = 9.99.
        let mut spec = teamreach(2, 5, 5, 0);
        spec.goals = vec![(0, 0), (4, 4)];
        let mut state = spec.reset(0).0;
        state.positions = vec![(0, 1), (4, 3)];
        let result = spec.step(&mut state, &[1, 2]).unwrap();
        assert!(result.win && result.terminated);
        assert!((result.reward - 9.99).abs() < 1e-6);
        assert_eq!(state.positions, vec![(0, 0), (4, 4)]);
    }

    #[test]
    fn goal_assignment_is_order_free() {
        // Either agent may cover either goal.
        let mut spec = teamreach(2, 5, 5, 0);
        spec.goals = vec![(0, 0), (4, 4)];
        let mut state = spec.reset(0).0;
        state.positions = vec![(4, 4), (0, 1)];
        let result = spec.step(&mut state, &[0, 1]).unwrap();
        assert!(result.win);
    }

    #[test]
    fn movement_conflict_lower_index_wins() {
        let mut spec = teamreach(2, 5, 5, 0);
        spec.goals = vec![(0, 0), (4, 4)];
        let mut state = spec.reset(0).0;
        // Both target (1,2): agent 0 moves down from (1,1), agent 1 up from (1,3).
        state.positions = vec![(1, 1), (1, 3)];
        spec.step(&mut state, &[2, 1]).unwrap();
        assert_eq!(state.positions, vec![(1, 2), (1, 3)]);
    }

    #[test]
    fn vacated_cell_is_free_for_later_agents() {
        let mut spec = teamreach(2, 5, 5, 0);
        spec.goals = vec![(0, 0), (4, 4)];
        let mut state = spec.reset(0).0;
        // Agent 0 leaves (2,2) rightward; agent 1 moves up into it.
        state.positions = vec![(2, 2), (2, 3)];
        spec.step(&mut state, &[4, 1]).unwrap();
        assert_eq!(state.positions, vec![(3, 2), (2, 2)]);
    }

    #[test]
    fn wall_moves_are_masked_and_occupied_moves_are_not() {
        let mut spec = teamreach(2, 5, 5, 0);
        spec.goals = vec![(4, 0), (4, 4)];
        let mut state = spec.reset(0).0;
        state.positions = vec![(0, 0), (0, 1)];
        let mask = spec.available_actions(&state, 0);
        // At the corner: stay yes, up no, down yes, left no, right yes.
        assert_eq!(mask, vec![true, false, true, false, true]);
        // Down targets agent 1's cell: available, resolves to stay.
        let result = spec.step(&mut state, &[2, 0]).unwrap();
        assert_eq!(state.positions, vec![(0, 0), (0, 1)]);
        assert!(!result.win);
        assert!((result.reward - STEP_COST).abs() < 1e-7);
    }

    #[test]
    fn unavailable_or_out_of_range_actions_are_usage_errors() {
        let spec = teamreach(2, 5, 5, 0);
        let mut state = spec.reset(3).0;
        state.positions = vec![(0, 0), (4, 4)];
        let err = spec.step(&mut state, &[1, 0]).unwrap_err(); // up into the wall
        assert!(err.to_string().contains("unavailable"), "message was: {err}");
        let err = spec.step(&mut state, &[0, 9]).unwrap_err();
        assert!(err.to_string().contains("out of range"), "message was: {err}");
    }

    #[test]
    fn signals_set_flags_and_appear_in_next_observations() {
        let spec = teamreach(2, 5, 5, 2); // K = 7, signal actions 5 and 6
        let mut state = spec.reset(11).0;
        let before = state.positions.clone();
        let result = spec.step(&mut state, &[5, 6]).unwrap();
        assert_eq!(state.signals, vec![1, 2]);
        assert_eq!(state.positions, before, "signalling must not move");
        // Signal block of agent 0's observation: one-hot over both agents.
        let obs = &result.observations[0];
        assert_eq!(&obs[2..6], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn horizon_truncates_without_win() {
        let spec = teamreach(2, 5, 5, 0);
        let mut state = spec.reset(5).0;
        let mut last = None;
        for _ in 0..spec.horizon {
            last = Some(spec.step(&mut state, &[0, 0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.terminated && !last.win);
        assert!(spec.step(&mut state, &[0, 0]).is_err());
    }

    #[test]
    fn goal_offsets_clip_at_three_cells() {
        let mut spec = teamreach(2, 9, 3, 0);
        spec.goals = vec![(7, 0), (8, 2)];
        let mut state = spec.reset(0).0;
        state.positions = vec![(0, 0), (0, 2)];
        let obs = spec.observe(&state, 0);
        // Goal (7,0) is 7 cells right: clipped to +3, normalized to 1.0.
        assert_eq!(&obs[2..4], &[1.0, 0.0]);
    }

    #[test]
    fn preychase_capture_is_checked_before_the_prey_answers() {
        // Prey starts at the center (2,2); both predators adjacent and staying
        // put is already a capture, even though the prey could flee left.
        let spec = preychase(2, 5);
        let mut state = spec.reset(0).0;
        assert_eq!(state.prey, Some((2, 2)));
        state.positions = vec![(2, 1), (2, 3)];
        let result = spec.step(&mut state, &[0, 0]).unwrap();
        assert!(result.win && result.terminated);
        assert!((result.reward - 9.99).abs() < 1e-6);
        assert_eq!(state.prey, Some((2, 2)), "captured prey does not move");
    }

    #[test]
    fn prey_flees_to_first_farthest_neighbor() {
        let spec = preychase(2, 5);
        let mut state = spec.reset(0).0;
        // One predator below at (2,1) [up side]; candidates stay/up/down/left/right
        // have nearest-distances 1/0/2/2/2, so the first maximum is down (2,3).
        state.positions = vec![(2, 1), (0, 0)];
        spec.step(&mut state, &[0, 0]).unwrap();
        assert_eq!(state.prey, Some((2, 3)));
    }

    #[test]
    fn one_adjacent_predator_is_not_a_capture() {
        let spec = preychase(2, 5);
        let mut state = spec.reset(0).0;
        state.positions = vec![(2, 1), (0, 4)];
        let result = spec.step(&mut state, &[0, 0]).unwrap();
        assert!(!result.win);
    }

    #[test]
    fn preychase_observation_layout() {
        let spec = preychase(2, 7);
        let mut state = spec.reset(0).0;
        state.positions = vec![(0, 0), (6, 6)];
        state.prey = Some((3, 0));
        let obs = spec.observe(&state, 0);
        // Own (0,0) normalized; prey 3 right; teammate clipped to +5.
        assert_eq!(obs, vec![0.0, 0.0, 0.6, 0.0, 1.0, 1.0]);
    }

    proptest! {
        /// Random legal rollouts: masks are sound (no step errors), agents
        /// never overlap, observations stay bounded, every episode's return
        /// is -0.01 * steps + 10 * win, and win implies terminated.
        #[test]
        fn random_rollouts_respect_invariants(
            seed in 0u64..500,
            family_pick in 0usize..4,
        ) {
            let spec = match family_pick {
                0 => teamreach(2, 5, 5, 0),
                1 => teamreach(3, 6, 6, 2),
                2 => preychase(2, 5),
                _ => preychase(3, 7),
            };
            let mut rng = Rng::new(seed ^ 0xABCD);
            let (mut state, mut result) = spec.reset(seed);
            let mut total = 0.0f64;
            let mut steps = 0usize;
            let mut won = false;
            while !result.terminated {
                let actions: Vec<usize> = (0..spec.n_agents)
                    .map(|i| {
                        let mask = &result.available_actions[i];
                        let avail: Vec<usize> =
                            (0..spec.k).filter(|&a| mask[a]).collect();
                        avail[rng.below(avail.len())]
                    })
                    .collect();
                result = spec.step(&mut state, &actions).unwrap();
                total += result.reward as f64;
                steps += 1;
                won = result.win;
                for obs in &result.observations {
                    prop_assert_eq!(obs.len(), spec.obs_dim);
                    for &v in obs {
                        prop_assert!(v.is_finite() && v.abs() <= 1.0);
                    }
                }
                prop_assert_eq!(result.global_state.len(), spec.state_dim);
                for i in 0..spec.n_agents {
                    for j in i + 1..spec.n_agents {
                        prop_assert_ne!(state.positions[i], state.positions[j]);
                    }
                }
                if result.win {
                    prop_assert!(result.terminated);
                }
                prop_assert!(steps <= spec.horizon);
            }
            let expected = STEP_COST as f64 * steps as f64
                + if won { WIN_BONUS as f64 } else { 0.0 };
            prop_assert!((total - expected).abs() < 1e-4);
        }
    }
}
