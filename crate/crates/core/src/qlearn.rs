//! Tabular Q-learning with optional user-policy mixing.
//!
//! The behaviour policy blends three sources: uniform random exploration
//! (probability `p`), a frequency policy estimated from demonstrations
//! (probability `q`), and the greedy policy otherwise. Both mixing weights
//! decay on a fixed episode schedule so the learner anneals onto its own
//! greedy behaviour.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::demo::UserPolicy;
use crate::env::{ActionDiscrete, DiscreteState, EnvError, StateDim, Task, WorldState};
use crate::harness::CurveRecord;
use crate::seeds::{derive_seed, STREAM_ACTIONS, STREAM_ENV_RESET};

#[derive(Error, Debug)]
pub enum QError {
    #[error("user-policy mixing requested (q0 = {q0}) but no user policy was supplied")]
    MissingUserPolicy { q0: f64 },
    #[error("user-policy mixing is only defined on the two-value discretisation")]
    UserPolicyNeedsTwoDim,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Q-learning hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Initial random-exploration probability.
    pub p0: f64,
    /// Initial user-policy probability. Requires a user policy when > 0.
    pub q0: f64,
    /// Episodes between decay steps.
    pub decay_period: u32,
    /// Fraction removed at each decay step: `p *= 1 - decay_ratio`.
    pub decay_ratio: f64,
    pub episodes: u32,
    pub state_dim: StateDim,
}

impl Default for QConfig {
    fn default() -> QConfig {
        QConfig {
            alpha: 0.1,
            gamma: 0.9,
            p0: 0.2,
            q0: 0.0,
            decay_period: 1000,
            decay_ratio: 0.01,
            episodes: 4000,
            state_dim: StateDim::Two,
        }
    }
}

impl QConfig {
    fn check(&self) {
        assert!(self.alpha > 0.0 && self.alpha <= 1.0, "alpha must be in (0, 1]");
        assert!((0.0..1.0).contains(&self.gamma), "gamma must be in [0, 1)");
        assert!(self.p0 >= 0.0 && self.q0 >= 0.0, "mixing weights must be non-negative");
        assert!(self.p0 + self.q0 <= 1.0, "p0 + q0 must not exceed 1");
        assert!((0.0..=1.0).contains(&self.decay_ratio), "decay_ratio must be in [0, 1]");
        assert!(self.decay_period >= 1, "decay_period must be at least 1");
    }
}

/// Action-value table. Missing entries read as the default value, so the
/// table only stores states that were actually visited.
#[derive(Clone, Debug, Default)]
pub struct QTable {
    values: HashMap<(DiscreteState, ActionDiscrete), f64>,
}

impl QTable {
    pub fn new() -> QTable {
        QTable::default()
    }

    pub fn get(&self, s: DiscreteState, a: ActionDiscrete) -> f64 {
        self.values.get(&(s, a)).copied().unwrap_or(0.0)
    }

    /// Number of stored (state, action) entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Greedy action with fixed tie-breaking: the first maximiser in
    /// Forward, Left, Right order.
    pub fn greedy(&self, s: DiscreteState) -> ActionDiscrete {
        let mut best = ActionDiscrete::Forward;
        let mut best_v = self.get(s, best);
        for a in [ActionDiscrete::Left, ActionDiscrete::Right] {
            let v = self.get(s, a);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best
    }

    /// One-step backup. Terminal transitions bootstrap from zero rather than
    /// from the successor's value.
    pub fn update(
        &mut self,
        s: DiscreteState,
        a: ActionDiscrete,
        reward: f64,
        s_next: DiscreteState,
        terminal: bool,
        alpha: f64,
        gamma: f64,
    ) {
        let next_v = if terminal {
            0.0
        } else {
            let g = self.greedy(s_next);
            self.get(s_next, g)
        };
        let old = self.get(s, a);
        let new = (1.0 - alpha) * old + alpha * (reward + gamma * next_v);
        self.values.insert((s, a), new);
    }

    /// Rows sorted by state key then action, for stable snapshots.
    pub fn sorted_entries(&self) -> Vec<(DiscreteState, ActionDiscrete, f64)> {
        let mut rows: Vec<_> = self.values.iter().map(|(&(s, a), &v)| (s, a, v)).collect();
        rows.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        rows
    }
}

/// Writes a Q-table snapshot as CSV, one row per stored entry.
pub fn write_qtable<W: Write>(w: &mut W, table: &QTable) -> std::io::Result<()> {
    writeln!(w, "state_key,action,value")?;
    for (s, a, v) in table.sorted_entries() {
        writeln!(w, "{},{},{}", s.key(), a.name(), v)?;
    }
    Ok(())
}

/// Draws from the mixed behaviour policy with a single uniform draw:
/// `u < p` explores uniformly, `u < p + q` follows the user policy, and
/// otherwise the greedy action is taken.
pub fn select_action(
    table: &QTable,
    s: DiscreteState,
    p: f64,
    q: f64,
    user: Option<&UserPolicy>,
    rng: &mut ChaCha8Rng,
) -> Result<ActionDiscrete, QError> {
    debug_assert!(p >= 0.0 && q >= 0.0 && p + q <= 1.0);
    let u: f64 = rng.random();
    if u < p {
        let i = rng.random_range(0..ActionDiscrete::ALL.len());
        return Ok(ActionDiscrete::ALL[i]);
    }
    if u < p + q {
        let user = user.filter(|u| u.states() > 0).ok_or(QError::MissingUserPolicy { q0: q })?;
        let DiscreteState::D2(s2) = s else {
            return Err(QError::UserPolicyNeedsTwoDim);
        };
        return Ok(user.user_action(&s2));
    }
    Ok(table.greedy(s))
}

/// Applies the decay schedule at the start of `episode` (1-based): at every
/// multiple of `decay_period` both weights shrink by `decay_ratio`, otherwise
/// they pass through unchanged.
pub fn decay_mixing(p: f64, q: f64, episode: u32, cfg: &QConfig) -> (f64, f64) {
    debug_assert!(episode >= 1);
    if episode % cfg.decay_period == 0 {
        (p * (1.0 - cfg.decay_ratio), q * (1.0 - cfg.decay_ratio))
    } else {
        (p, q)
    }
}

/// Runs `cfg.episodes` episodes of Q-learning on `task` and returns the
/// learned table plus one curve record per episode.
///
/// Episode start states are derived from `seed` and the episode index alone,
/// so runs that differ only in learner configuration see identical start
/// sequences.
pub fn train_q(
    task: &Task,
    cfg: &QConfig,
    user: Option<&UserPolicy>,
    seed: u64,
) -> Result<(QTable, Vec<CurveRecord>), QError> {
    cfg.check();
    if cfg.q0 > 0.0 {
        if !user.is_some_and(|u| u.states() > 0) {
            return Err(QError::MissingUserPolicy { q0: cfg.q0 });
        }
        if cfg.state_dim != StateDim::Two {
            return Err(QError::UserPolicyNeedsTwoDim);
        }
    }
    let mut table = QTable::new();
    let mut curves = Vec::with_capacity(cfg.episodes as usize);
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACTIONS, 0));
    let (mut p, mut q) = (cfg.p0, cfg.q0);
    for episode in 1..=cfg.episodes {
        (p, q) = decay_mixing(p, q, episode, cfg);
        let mut world =
            WorldState::reset(task, derive_seed(seed, STREAM_ENV_RESET, episode as u64));
        let mut s = world.observe_discrete(cfg.state_dim);
        let mut cum_reward = 0.0;
        let mut steps = 0u32;
        loop {
            let a = select_action(&table, s, p, q, user, &mut action_rng)?;
            let res = world.step_discrete(a, cfg.state_dim)?;
            table.update(s, a, res.reward, res.state, res.done, cfg.alpha, cfg.gamma);
            cum_reward += res.reward;
            steps += 1;
            s = res.state;
            if res.done {
                break;
            }
        }
        curves.push(CurveRecord { episode, task_id: task.task_id, seed, cum_reward, steps });
    }
    Ok((table, curves))
}
