//! Scripted demonstrator and the user policy estimated from its traces.
//!
//! The demonstrator is a turn-then-drive controller with optional action
//! noise. Successful episodes are recorded as (state, action) pairs on the
//! two-value discretisation; the user policy is the per-state action
//! frequency table over those pairs, with a nearest-neighbour fallback for
//! states never demonstrated.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{
    discretize2, ActionDiscrete, ContinuousObs, EnvError, StateDim, Task, WorldState,
    ANGLE_BUCKETS,
};
use crate::pg::{PolicyParams, FEATURE_DIM};
use crate::seeds::{derive_seed, STREAM_ACTIONS, STREAM_DEMO, STREAM_ENV_RESET};

/// Bearing error at which the demonstrator turns instead of driving, degrees.
pub const DEMO_TURN_THRESHOLD_DEG: f64 = 24.0;
/// Probability that a scripted action is replaced by a random one.
pub const DEFAULT_NOISE_PROB: f64 = 0.1;
/// Demonstrations collected by default.
pub const DEFAULT_DEMO_COUNT: usize = 50;
/// Proportional gain on distance for the warm-start policy, 1/s.
pub const DEMO_GAIN_LIN: f64 = 0.6;
/// Proportional gain on bearing error for the warm-start policy, 1/s.
pub const DEMO_GAIN_ANG: f64 = 1.2;
/// Attempts per demonstration before the task is declared infeasible.
const MAX_ATTEMPTS: u32 = 100;

#[derive(Error, Debug)]
pub enum DemoError {
    #[error("no successful demonstration in {attempts} attempts; task looks infeasible for the scripted controller")]
    InfeasibleTask { attempts: u32 },
    #[error("cannot estimate a user policy from an empty demonstration store")]
    EmptyStore,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One successful demonstration: the discretised state seen before each
/// action, and the action actually executed (noise included).
#[derive(Clone, Debug, PartialEq)]
pub struct UserTrajectory {
    pub steps: Vec<(crate::env::DiscreteObs2, ActionDiscrete)>,
    /// Reset seed of the successful attempt; replaying it reproduces the
    /// episode's start pose.
    pub start_seed: u64,
}

/// A batch of demonstrations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserTrajectoryStore {
    pub trajectories: Vec<UserTrajectory>,
}

/// The demonstrator's decision rule on the continuous observation.
pub fn scripted_action(obs: &ContinuousObs) -> ActionDiscrete {
    if obs.omega.abs() >= DEMO_TURN_THRESHOLD_DEG {
        if obs.omega > 0.0 {
            ActionDiscrete::Left
        } else {
            ActionDiscrete::Right
        }
    } else {
        ActionDiscrete::Forward
    }
}

// One attempt: run the controller to termination, return the trace only on
// success.
fn demo_attempt(
    task: &Task,
    noise_prob: f64,
    seed: u64,
) -> Result<Option<UserTrajectory>, EnvError> {
    let start_seed = derive_seed(seed, STREAM_ENV_RESET, 0);
    let mut world = WorldState::reset(task, start_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACTIONS, 0));
    let mut steps = Vec::new();
    loop {
        let obs = world.observe();
        let mut action = scripted_action(&obs);
        if noise_rng.random::<f64>() < noise_prob {
            action = ActionDiscrete::ALL[noise_rng.random_range(0..ActionDiscrete::ALL.len())];
        }
        steps.push((discretize2(&obs), action));
        let res = world.step_discrete(action, StateDim::Two)?;
        if res.done {
            return Ok(if res.reward == 100.0 {
                Some(UserTrajectory { steps, start_seed })
            } else {
                None
            });
        }
    }
}

/// Runs the demonstrator until it produces one successful episode, retrying
/// failed attempts with freshly derived seeds.
pub fn scripted_demo(task: &Task, noise_prob: f64, seed: u64) -> Result<UserTrajectory, DemoError> {
    assert!((0.0..0.5).contains(&noise_prob), "noise_prob must be in [0, 0.5)");
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(traj) = demo_attempt(task, noise_prob, derive_seed(seed, STREAM_DEMO, attempt as u64))? {
            return Ok(traj);
        }
    }
    Err(DemoError::InfeasibleTask { attempts: MAX_ATTEMPTS })
}

/// Collects `count` successful demonstrations, each from its own seed stream.
pub fn collect_demonstrations(
    task: &Task,
    count: usize,
    noise_prob: f64,
    seed: u64,
) -> Result<UserTrajectoryStore, DemoError> {
    let mut trajectories = Vec::with_capacity(count);
    for i in 0..count {
        trajectories
            .push(scripted_demo(task, noise_prob, derive_seed(seed, STREAM_DEMO, 1 + i as u64))?);
    }
    Ok(UserTrajectoryStore { trajectories })
}

/// Writes demonstrations as CSV, one row per step. Trajectory and step ids
/// are 1-based.
pub fn write_demonstrations<W: Write>(
    w: &mut W,
    store: &UserTrajectoryStore,
) -> std::io::Result<()> {
    writeln!(w, "traj_id,step,state_key,action")?;
    for (ti, traj) in store.trajectories.iter().enumerate() {
        for (si, (state, action)) in traj.steps.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}:{},{}",
                ti + 1,
                si + 1,
                state.d_bucket,
                state.omega_bucket,
                action.name()
            )?;
        }
    }
    Ok(())
}

/// Action-frequency policy over demonstrated states.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserPolicy {
    counts: BTreeMap<crate::env::DiscreteObs2, [u32; 3]>,
}

/// Builds the frequency table from a demonstration store.
pub fn estimate_user_policy(store: &UserTrajectoryStore) -> Result<UserPolicy, DemoError> {
    if store.trajectories.iter().all(|t| t.steps.is_empty()) {
        return Err(DemoError::EmptyStore);
    }
    let mut counts: BTreeMap<crate::env::DiscreteObs2, [u32; 3]> = BTreeMap::new();
    for traj in &store.trajectories {
        for &(state, action) in &traj.steps {
            counts.entry(state).or_default()[action.index()] += 1;
        }
    }
    Ok(UserPolicy { counts })
}

// Squared distance between bucket tuples; the angular component is cyclic
// over the 31 buckets.
fn bucket_dist2(a: &crate::env::DiscreteObs2, b: &crate::env::DiscreteObs2) -> u64 {
    let dd = a.d_bucket.abs_diff(b.d_bucket) as u64;
    let dw_lin = (a.omega_bucket as u32).abs_diff(b.omega_bucket as u32) as u64;
    let dw = dw_lin.min(ANGLE_BUCKETS as u64 - dw_lin);
    dd * dd + dw * dw
}

impl UserPolicy {
    /// Number of distinct demonstrated states.
    pub fn states(&self) -> usize {
        self.counts.len()
    }

    /// Raw action counts for an exactly demonstrated state.
    pub fn action_counts(&self, s: &crate::env::DiscreteObs2) -> Option<[u32; 3]> {
        self.counts.get(s).copied()
    }

    /// Most frequent demonstrated action for `s`, resolved at the nearest
    /// demonstrated state if `s` itself was never seen. Ties on distance go
    /// to the lexicographically smaller state; ties on frequency go to the
    /// earlier action in Forward, Left, Right order.
    pub fn user_action(&self, s: &crate::env::DiscreteObs2) -> ActionDiscrete {
        assert!(!self.counts.is_empty(), "user policy has no demonstrated states");
        let counts = match self.counts.get(s) {
            Some(c) => *c,
            None => {
                // BTreeMap iterates in key order, so keeping the first
                // strict minimum lands on the smaller tuple at equal
                // distance.
                let mut best: Option<(u64, [u32; 3])> = None;
                for (state, c) in &self.counts {
                    let d2 = bucket_dist2(s, state);
                    if best.as_ref().is_none_or(|(bd, _)| d2 < *bd) {
                        best = Some((d2, *c));
                    }
                }
                best.expect("non-empty counts").1
            }
        };
        let mut action = ActionDiscrete::Forward;
        let mut best = counts[action.index()];
        for a in [ActionDiscrete::Left, ActionDiscrete::Right] {
            if counts[a.index()] > best {
                action = a;
                best = counts[a.index()];
            }
        }
        action
    }
}

/// Feature-space parameters of the demonstrator's proportional controller:
/// drive at `DEMO_GAIN_LIN * d`, turn at `DEMO_GAIN_ANG * omega` (radians).
pub fn warm_start_params(_task: &Task) -> PolicyParams {
    // features are (d / 10, omega_rad / pi, 1), so the gains scale up by the
    // normalisation constants.
    let mut theta_lin = [0.0; FEATURE_DIM];
    let mut theta_ang = [0.0; FEATURE_DIM];
    theta_lin[0] = DEMO_GAIN_LIN * 10.0;
    theta_ang[1] = DEMO_GAIN_ANG * std::f64::consts::PI;
    PolicyParams { theta_lin, theta_ang }
}
