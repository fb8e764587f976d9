//! Episodic REINFORCE on a linear-Gaussian policy.
//!
//! Both action dimensions are independent Gaussians whose means are linear
//! in a three-component feature vector. Gradients use raw (pre-clamp)
//! actions so the score function stays exact; the actuation clamp is treated
//! as part of the environment. Returns are undiscounted per-step averages
//! and every update subtracts a per-component optimal baseline.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::{ActionContinuous, ContinuousObs, EnvError, Task, WorldState};
use crate::harness::CurveRecord;
use crate::seeds::{derive_seed, STREAM_ACTIONS, STREAM_ENV_RESET, STREAM_EVAL};

/// Feature vector length.
pub const FEATURE_DIM: usize = 3;
/// Evaluation episode count used by the grid search and multi-task runs.
pub const EVAL_EPISODES: u32 = 25;
/// Longer evaluation used by the demonstrator comparison.
pub const EVAL_EPISODES_LONG: u32 = 400;

pub type FeatureVec = [f64; FEATURE_DIM];

#[derive(Error, Debug)]
pub enum PgError {
    #[error("cannot take the average return of an empty trajectory")]
    EmptyTrajectory,
    #[error("non-finite gradient; update refused")]
    NonFiniteGradient,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Normalised features: distance over the arena scale, bearing in radians
/// over pi, and a bias term.
pub fn features(obs: &ContinuousObs) -> FeatureVec {
    [obs.d / 10.0, obs.omega.to_radians() / PI, 1.0]
}

fn dot(a: &FeatureVec, b: &FeatureVec) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Mean parameters only, as produced by the demonstrator warm start and the
/// multi-task reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyParams {
    pub theta_lin: FeatureVec,
    pub theta_ang: FeatureVec,
}

/// Linear-Gaussian policy over (v_lin, v_ang).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub theta_lin: FeatureVec,
    pub theta_ang: FeatureVec,
    pub sigma_lin: f64,
    pub sigma_ang: f64,
}

impl GaussianPolicy {
    pub fn zeros(sigma0: f64) -> GaussianPolicy {
        GaussianPolicy {
            theta_lin: [0.0; FEATURE_DIM],
            theta_ang: [0.0; FEATURE_DIM],
            sigma_lin: sigma0,
            sigma_ang: sigma0,
        }
    }

    pub fn from_params(params: &PolicyParams, sigma: f64) -> GaussianPolicy {
        GaussianPolicy {
            theta_lin: params.theta_lin,
            theta_ang: params.theta_ang,
            sigma_lin: sigma,
            sigma_ang: sigma,
        }
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams { theta_lin: self.theta_lin, theta_ang: self.theta_ang }
    }

    /// Mean action before clamping.
    pub fn mean(&self, obs: &ContinuousObs) -> (f64, f64) {
        let phi = features(obs);
        (dot(&self.theta_lin, &phi), dot(&self.theta_ang, &phi))
    }

    pub fn is_finite(&self) -> bool {
        self.theta_lin.iter().chain(&self.theta_ang).all(|v| v.is_finite())
            && self.sigma_lin.is_finite()
            && self.sigma_ang.is_finite()
    }
}

/// Draws a raw action from the policy and returns it alongside the clamped
/// action the environment will execute.
pub fn sample_action(
    policy: &GaussianPolicy,
    obs: &ContinuousObs,
    rng: &mut ChaCha8Rng,
) -> (ActionContinuous, ActionContinuous) {
    assert!(policy.sigma_lin > 0.0 && policy.sigma_ang > 0.0, "sigmas must be positive");
    let (mean_lin, mean_ang) = policy.mean(obs);
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let raw = ActionContinuous {
        v_lin: mean_lin + policy.sigma_lin * z1,
        v_ang: mean_ang + policy.sigma_ang * z2,
    };
    (raw.clamped(), raw)
}

/// One step of a sampled trajectory: observation, raw action, reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajStep {
    pub obs: ContinuousObs,
    pub raw: ActionContinuous,
    pub reward: f64,
}

/// A sampled episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

/// Undiscounted per-step average return.
pub fn avg_return(traj: &Trajectory) -> Result<f64, PgError> {
    if traj.steps.is_empty() {
        return Err(PgError::EmptyTrajectory);
    }
    Ok(traj.steps.iter().map(|s| s.reward).sum::<f64>() / traj.horizon() as f64)
}

/// Gradient estimate, one entry per policy parameter.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyGradient {
    pub theta_lin: FeatureVec,
    pub theta_ang: FeatureVec,
    pub sigma_lin: f64,
    pub sigma_ang: f64,
}

// Per-trajectory score sums for all 8 parameters, flattened as
// [theta_lin(3), theta_ang(3), sigma_lin, sigma_ang].
fn score_sums(traj: &Trajectory, policy: &GaussianPolicy) -> [f64; 8] {
    let mut s = [0.0; 8];
    let var_lin = policy.sigma_lin * policy.sigma_lin;
    let var_ang = policy.sigma_ang * policy.sigma_ang;
    for step in &traj.steps {
        let phi = features(&step.obs);
        let (mean_lin, mean_ang) = policy.mean(&step.obs);
        let d_lin = step.raw.v_lin - mean_lin;
        let d_ang = step.raw.v_ang - mean_ang;
        for i in 0..FEATURE_DIM {
            s[i] += d_lin / var_lin * phi[i];
            s[FEATURE_DIM + i] += d_ang / var_ang * phi[i];
        }
        s[6] += (d_lin * d_lin - var_lin) / (var_lin * policy.sigma_lin);
        s[7] += (d_ang * d_ang - var_ang) / (var_ang * policy.sigma_ang);
    }
    s
}

// Stacked theta scores (linear block then angular block) for the Hessian
// surrogate in the multi-task learner.
pub(crate) fn stacked_theta_scores(traj: &Trajectory, policy: &GaussianPolicy) -> [f64; 6] {
    let s = score_sums(traj, policy);
    [s[0], s[1], s[2], s[3], s[4], s[5]]
}

/// REINFORCE estimate over a batch with per-component optimal baselines
/// `b_i = sum S_i^2 R / sum S_i^2`. A batch whose scores are all zero yields
/// the zero gradient.
pub fn reinforce_gradient(
    batch: &[Trajectory],
    policy: &GaussianPolicy,
) -> Result<PolicyGradient, PgError> {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let n = batch.len() as f64;
    let mut scores = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for traj in batch {
        scores.push(score_sums(traj, policy));
        returns.push(avg_return(traj)?);
    }
    let mut g = [0.0; 8];
    for i in 0..8 {
        let denom: f64 = scores.iter().map(|s| s[i] * s[i]).sum();
        let baseline = if denom > 0.0 {
            scores.iter().zip(&returns).map(|(s, r)| s[i] * s[i] * r).sum::<f64>() / denom
        } else {
            0.0
        };
        g[i] = scores.iter().zip(&returns).map(|(s, r)| s[i] * (r - baseline)).sum::<f64>() / n;
    }
    Ok(PolicyGradient {
        theta_lin: [g[0], g[1], g[2]],
        theta_ang: [g[3], g[4], g[5]],
        sigma_lin: g[6],
        sigma_ang: g[7],
    })
}

/// PG hyperparameters. `gamma` is carried for interface parity with the
/// Q-learner's discounting; the return itself is the undiscounted per-step
/// average.
#[derive(Clone, Debug, PartialEq)]
pub struct PGConfig {
    pub alpha_lin: f64,
    pub alpha_ang: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Episodes per training phase (warm-started runs train two phases).
    pub episodes: u32,
    pub sigma0: f64,
    pub sigma_min: f64,
}

impl Default for PGConfig {
    fn default() -> PGConfig {
        PGConfig {
            alpha_lin: 1e-6,
            alpha_ang: 1e-6,
            gamma: 0.9,
            batch_size: 10,
            episodes: 400,
            sigma0: 0.3,
            sigma_min: 0.01,
        }
    }
}

/// Grid-searched per-task learning rates.
const TASK_RATES: [(f64, f64); 5] =
    [(1e-6, 1e-7), (1e-6, 1e-6), (1e-7, 1e-5), (1e-7, 1e-6), (1e-7, 1e-5)];

impl PGConfig {
    /// Default configuration with the per-task learning-rate pair for tasks
    /// 1 through 5; unknown ids keep the overall default rates.
    pub fn for_task(task_id: u32) -> PGConfig {
        let mut cfg = PGConfig::default();
        if let Some(&(al, aa)) = TASK_RATES.get(task_id.wrapping_sub(1) as usize) {
            cfg.alpha_lin = al;
            cfg.alpha_ang = aa;
        }
        cfg
    }

    fn check(&self) {
        assert!(self.alpha_lin > 0.0 && self.alpha_ang > 0.0, "learning rates must be positive");
        assert!(self.batch_size >= 1, "batch_size must be at least 1");
        assert!(self.sigma0 > 0.0 && self.sigma_min > 0.0, "sigmas must be positive");
        assert!((0.0..=1.0).contains(&self.gamma), "gamma must be in [0, 1]");
    }
}

/// Applies one gradient step. Sigma updates are multiplicative in the
/// current sigma and floored at `sigma_min`.
pub fn pg_update(
    policy: &GaussianPolicy,
    g: &PolicyGradient,
    cfg: &PGConfig,
) -> Result<GaussianPolicy, PgError> {
    let finite = g.theta_lin.iter().chain(&g.theta_ang).all(|v| v.is_finite())
        && g.sigma_lin.is_finite()
        && g.sigma_ang.is_finite();
    if !finite {
        return Err(PgError::NonFiniteGradient);
    }
    let mut next = *policy;
    for i in 0..FEATURE_DIM {
        next.theta_lin[i] += cfg.alpha_lin * g.theta_lin[i];
        next.theta_ang[i] += cfg.alpha_ang * g.theta_ang[i];
    }
    next.sigma_lin =
        (policy.sigma_lin + cfg.alpha_lin * policy.sigma_lin * g.sigma_lin).max(cfg.sigma_min);
    next.sigma_ang =
        (policy.sigma_ang + cfg.alpha_ang * policy.sigma_ang * g.sigma_ang).max(cfg.sigma_min);
    Ok(next)
}

// Rolls one episode acting under `behavior`, recording raw actions and
// rewards.
fn run_episode(
    task: &Task,
    behavior: &GaussianPolicy,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, f64, u32), PgError> {
    let mut world = WorldState::reset(task, env_seed);
    let mut traj = Trajectory::default();
    let mut cum_reward = 0.0;
    let mut steps = 0u32;
    loop {
        let obs = world.observe();
        let (_, raw) = sample_action(behavior, &obs, rng);
        let res = world.step(raw)?;
        traj.steps.push(TrajStep { obs, raw, reward: res.reward });
        cum_reward += res.reward;
        steps += 1;
        if res.done {
            return Ok((traj, cum_reward, steps));
        }
    }
}

/// Samples `n` trajectories under `policy` with exploration noise. Used for
/// the multi-task Hessian surrogate and for tests.
pub fn sample_trajectories(
    policy: &GaussianPolicy,
    task: &Task,
    n: u32,
    seed: u64,
) -> Result<Vec<Trajectory>, PgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACTIONS, 0));
    let mut out = Vec::with_capacity(n as usize);
    for i in 1..=n {
        let (traj, _, _) =
            run_episode(task, policy, derive_seed(seed, STREAM_ENV_RESET, i as u64), &mut rng)?;
        out.push(traj);
    }
    Ok(out)
}

/// Trains with episodic REINFORCE and returns the final policy plus one
/// curve record per episode.
///
/// Without a warm start the policy begins at zero means. With one, the
/// policy begins at the demonstrator parameters and training runs two
/// phases of `cfg.episodes` each: the first acts under the fixed
/// demonstrator policy (exploration `sigma0`) while updates accrue to the
/// learner, the second acts under the learned policy itself. Episode start
/// states depend only on `(seed, episode index)`.
pub fn train_pg(
    task: &Task,
    cfg: &PGConfig,
    warm_start: Option<&PolicyParams>,
    seed: u64,
) -> Result<(GaussianPolicy, Vec<CurveRecord>), PgError> {
    cfg.check();
    let mut policy = match warm_start {
        Some(params) => GaussianPolicy::from_params(params, cfg.sigma0),
        None => GaussianPolicy::zeros(cfg.sigma0),
    };
    let behaviors: Vec<Option<GaussianPolicy>> = match warm_start {
        // Phase 1 behaviour is pinned to the demonstrator; phase 2 follows
        // the learner.
        Some(params) => vec![Some(GaussianPolicy::from_params(params, cfg.sigma0)), None],
        None => vec![None],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ACTIONS, 0));
    let mut curves = Vec::new();
    let mut episode = 0u32;
    for phase_behavior in behaviors {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.episodes {
            episode += 1;
            let behavior = phase_behavior.as_ref().unwrap_or(&policy).clone();
            let env_seed = derive_seed(seed, STREAM_ENV_RESET, episode as u64);
            let (traj, cum_reward, steps) = run_episode(task, &behavior, env_seed, &mut rng)?;
            curves.push(CurveRecord {
                episode,
                task_id: task.task_id,
                seed,
                cum_reward,
                steps,
            });
            batch.push(traj);
            if batch.len() == cfg.batch_size {
                let g = reinforce_gradient(&batch, &policy)?;
                policy = pg_update(&policy, &g, cfg)?;
                batch.clear();
            }
        }
        if !batch.is_empty() {
            let g = reinforce_gradient(&batch, &policy)?;
            policy = pg_update(&policy, &g, cfg)?;
        }
    }
    Ok((policy, curves))
}

/// Per-seed evaluation totals, mergeable across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub total_reward: f64,
    pub total_steps: u64,
    pub episodes: u32,
}

impl EvalSummary {
    pub fn accumulate(&mut self, other: &EvalSummary) {
        self.total_reward += other.total_reward;
        self.total_steps += other.total_steps;
        self.episodes += other.episodes;
    }

    pub fn avg_cum_reward(&self) -> f64 {
        self.total_reward / self.episodes.max(1) as f64
    }

    pub fn avg_steps(&self) -> f64 {
        self.total_steps as f64 / self.episodes.max(1) as f64
    }
}

/// Deterministic evaluation: the policy acts at its clamped mean, no
/// exploration noise. Returns per-episode (cumulative reward, steps).
pub fn evaluate_policy_per_episode(
    policy: &GaussianPolicy,
    task: &Task,
    episodes: u32,
    seed: u64,
) -> Result<Vec<(f64, u32)>, PgError> {
    let mut out = Vec::with_capacity(episodes as usize);
    for i in 1..=episodes {
        let mut world = WorldState::reset(task, derive_seed(seed, STREAM_EVAL, i as u64));
        let mut cum_reward = 0.0;
        let mut steps = 0u32;
        loop {
            let obs = world.observe();
            let (mean_lin, mean_ang) = policy.mean(&obs);
            let res = world.step(ActionContinuous { v_lin: mean_lin, v_ang: mean_ang })?;
            cum_reward += res.reward;
            steps += 1;
            if res.done {
                break;
            }
        }
        out.push((cum_reward, steps));
    }
    Ok(out)
}

/// Mean-policy evaluation summarised over `episodes` seeded episodes.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    task: &Task,
    episodes: u32,
    seed: u64,
) -> Result<EvalSummary, PgError> {
    let per_episode = evaluate_policy_per_episode(policy, task, episodes, seed)?;
    let mut summary = EvalSummary::default();
    for (cum_reward, steps) in per_episode {
        summary.total_reward += cum_reward;
        summary.total_steps += steps as u64;
        summary.episodes += 1;
    }
    Ok(summary)
}

/// One grid-search cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub alpha_lin: f64,
    pub alpha_ang: f64,
    pub avg_cum_reward: f64,
}

/// Grid-search outcome: the winning pair and the full table in evaluation
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best: (f64, f64),
    pub table: Vec<GridRow>,
}

/// Learning-rate candidates, largest first.
pub const RATE_GRID: [f64; 6] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Trains a fresh policy for every learning-rate pair in the 6x6 grid and
/// scores each by mean-policy evaluation over 25 episodes. Ties go to the
/// lexicographically largest pair.
pub fn grid_search(
    task: &Task,
    episodes: Option<u32>,
    seed: u64,
) -> Result<GridSearchResult, PgError> {
    let mut table = Vec::with_capacity(RATE_GRID.len() * RATE_GRID.len());
    let mut best: Option<GridRow> = None;
    for &alpha_lin in &RATE_GRID {
        for &alpha_ang in &RATE_GRID {
            let mut cfg = PGConfig::default();
            cfg.alpha_lin = alpha_lin;
            cfg.alpha_ang = alpha_ang;
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            let (policy, _) = train_pg(task, &cfg, None, seed)?;
            let eval = evaluate_policy(
                &policy,
                task,
                EVAL_EPISODES,
                derive_seed(seed, STREAM_EVAL, 0),
            )?;
            let row = GridRow { alpha_lin, alpha_ang, avg_cum_reward: eval.avg_cum_reward() };
            let better = match &best {
                None => true,
                Some(b) => {
                    (row.avg_cum_reward, row.alpha_lin, row.alpha_ang)
                        .partial_cmp(&(b.avg_cum_reward, b.alpha_lin, b.alpha_ang))
                        .is_some_and(|o| o.is_gt())
                }
            };
            if better {
                best = Some(row);
            }
            table.push(row);
        }
    }
    let best = best.expect("grid is nonempty");
    Ok(GridSearchResult { best: (best.alpha_lin, best.alpha_ang), table })
}

/// Writes a policy snapshot as CSV, one row per parameter.
pub fn write_policy<W: Write>(w: &mut W, policy: &GaussianPolicy) -> std::io::Result<()> {
    writeln!(w, "param,index,value")?;
    for (i, v) in policy.theta_lin.iter().enumerate() {
        writeln!(w, "theta_lin,{i},{v}")?;
    }
    for (i, v) in policy.theta_ang.iter().enumerate() {
        writeln!(w, "theta_ang,{i},{v}")?;
    }
    writeln!(w, "sigma_lin,0,{}", policy.sigma_lin)?;
    writeln!(w, "sigma_ang,0,{}", policy.sigma_ang)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::suite_task;
    use approx::assert_relative_eq;

    fn step(obs: ContinuousObs, v_lin: f64, v_ang: f64, reward: f64) -> TrajStep {
        TrajStep { obs, raw: ActionContinuous { v_lin, v_ang }, reward }
    }

    #[test]
    fn feature_examples() {
        assert_eq!(features(&ContinuousObs { d: 0.0, omega: 0.0 }), [0.0, 0.0, 1.0]);
        assert_eq!(features(&ContinuousObs { d: 10.0, omega: 180.0 }), [1.0, 1.0, 1.0]);
        let phi = features(&ContinuousObs { d: 5.0, omega: -90.0 });
        assert_relative_eq!(phi[0], 0.5);
        assert_relative_eq!(phi[1], -0.5, max_relative = 1e-15);
        assert_eq!(phi[2], 1.0);
    }

    #[test]
    fn sampling_clamps_but_keeps_the_raw_action() {
        // theta_lin' phi = 2.0 via the bias term: executed clamps to 1.5.
        let policy = GaussianPolicy {
            theta_lin: [0.0, 0.0, 2.0],
            theta_ang: [0.0; 3],
            sigma_lin: 1e-9,
            sigma_ang: 1e-9,
        };
        let obs = ContinuousObs { d: 3.0, omega: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (executed, raw) = sample_action(&policy, &obs, &mut rng);
        assert_eq!(executed.v_lin, 1.5);
        assert_relative_eq!(raw.v_lin, 2.0, max_relative = 1e-6);
        assert_relative_eq!(raw.v_ang, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn sample_mean_tracks_the_policy_mean() {
        let policy = GaussianPolicy {
            theta_lin: [0.4, -0.2, 0.3],
            theta_ang: [0.0, 0.9, -0.1],
            sigma_lin: 0.3,
            sigma_ang: 0.5,
        };
        let obs = ContinuousObs { d: 4.0, omega: 60.0 };
        let (mean_lin, mean_ang) = policy.mean(&obs);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut sum_lin = 0.0;
        let mut sum_ang = 0.0;
        for _ in 0..n {
            let (_, raw) = sample_action(&policy, &obs, &mut rng);
            sum_lin += raw.v_lin;
            sum_ang += raw.v_ang;
        }
        let se_lin = policy.sigma_lin / (n as f64).sqrt();
        let se_ang = policy.sigma_ang / (n as f64).sqrt();
        assert!((sum_lin / n as f64 - mean_lin).abs() < 3.0 * se_lin);
        assert!((sum_ang / n as f64 - mean_ang).abs() < 3.0 * se_ang);
    }

    #[test]
    fn average_return_examples() {
        let obs = ContinuousObs { d: 1.0, omega: 0.0 };
        let traj = Trajectory {
            steps: vec![
                step(obs, 0.0, 0.0, -1.0),
                step(obs, 0.0, 0.0, -1.0),
                step(obs, 0.0, 0.0, 100.0),
            ],
        };
        assert_relative_eq!(avg_return(&traj).unwrap(), 98.0 / 3.0, max_relative = 1e-15);
        let single = Trajectory { steps: vec![step(obs, 0.0, 0.0, 100.0)] };
        assert_eq!(avg_return(&single).unwrap(), 100.0);
        assert!(matches!(avg_return(&Trajectory::default()), Err(PgError::EmptyTrajectory)));
    }

    #[test]
    fn centered_returns_give_zero_gradient() {
        // Two identical trajectories: every baseline equals the shared
        // return, so the gradient vanishes.
        let obs = ContinuousObs { d: 2.0, omega: 30.0 };
        let traj = Trajectory { steps: vec![step(obs, 0.7, -0.1, -0.25)] };
        let policy = GaussianPolicy::zeros(0.3);
        let g = reinforce_gradient(&[traj.clone(), traj], &policy).unwrap();
        for v in g.theta_lin.iter().chain(&g.theta_ang) {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
        assert_relative_eq!(g.sigma_lin, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.sigma_ang, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn score_at_the_mean_hits_only_sigma() {
        // Single trajectory, single step, action exactly at the mean:
        // theta scores vanish; sigma score is -1/sigma; the lone-trajectory
        // baseline absorbs... nothing here because the score is nonzero, so
        // b equals R and the gradient is zero for sigma too. Use two
        // trajectories with different returns to expose the sigma direction.
        let policy = GaussianPolicy::zeros(0.5);
        let obs = ContinuousObs { d: 2.0, omega: 0.0 };
        let at_mean = Trajectory { steps: vec![step(obs, 0.0, 0.0, 4.0)] };
        let g = reinforce_gradient(&[at_mean], &policy).unwrap();
        assert_eq!(g.theta_lin, [0.0; 3]);
        assert_eq!(g.theta_ang, [0.0; 3]);
        // Single trajectory: b_i = R exactly, so even sigma components are
        // zero. The score itself is -1/sigma per dimension.
        assert_relative_eq!(g.sigma_lin, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.sigma_ang, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_minimizes_the_empirical_second_moment() {
        // b_i = sum S_i^2 R / sum S_i^2 is the exact minimizer of
        // sum_tau (S_i (R - b))^2, so no other candidate can beat it.
        let task = suite_task(2).unwrap();
        let policy = GaussianPolicy {
            theta_lin: [0.5, 0.0, 0.2],
            theta_ang: [0.0, 1.0, 0.0],
            sigma_lin: 0.3,
            sigma_ang: 0.3,
        };
        for seed in 0..5u64 {
            let batch = sample_trajectories(&policy, &task, 10, seed).unwrap();
            let scores: Vec<[f64; 8]> =
                batch.iter().map(|t| score_sums(t, &policy)).collect();
            let returns: Vec<f64> = batch.iter().map(|t| avg_return(t).unwrap()).collect();
            let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
            for i in 0..8 {
                let denom: f64 = scores.iter().map(|s| s[i] * s[i]).sum();
                if denom == 0.0 {
                    continue;
                }
                let b: f64 =
                    scores.iter().zip(&returns).map(|(s, r)| s[i] * s[i] * r).sum::<f64>() / denom;
                let second_moment = |offset: f64| -> f64 {
                    scores
                        .iter()
                        .zip(&returns)
                        .map(|(s, r)| (s[i] * (r - offset)).powi(2))
                        .sum::<f64>()
                };
                for candidate in [0.0, mean_return, b + 0.5, b - 0.5] {
                    assert!(
                        second_moment(b) <= second_moment(candidate) + 1e-9,
                        "component {i}: baseline beaten by {candidate}"
                    );
                }
            }
        }
    }

    #[test]
    fn update_examples() {
        let cfg = PGConfig { alpha_lin: 1e-6, alpha_ang: 1e-6, ..PGConfig::default() };
        let policy = GaussianPolicy::zeros(0.3);
        let zero = PolicyGradient::default();
        assert_eq!(pg_update(&policy, &zero, &cfg).unwrap(), policy);
        let g = PolicyGradient {
            theta_lin: [1.0, 1.0, 1.0],
            theta_ang: [0.0; 3],
            sigma_lin: 0.0,
            sigma_ang: 0.0,
        };
        let next = pg_update(&policy, &g, &cfg).unwrap();
        assert_eq!(next.theta_lin, [1e-6, 1e-6, 1e-6]);
        // sigma = 0.5, alpha = 0.1, g_sigma = -0.2 -> 0.5 + 0.1*0.5*(-0.2).
        let cfg2 = PGConfig { alpha_lin: 0.1, alpha_ang: 0.1, ..PGConfig::default() };
        let policy2 = GaussianPolicy { sigma_lin: 0.5, sigma_ang: 0.5, ..GaussianPolicy::zeros(0.5) };
        let g2 = PolicyGradient { sigma_lin: -0.2, sigma_ang: -0.2, ..PolicyGradient::default() };
        let next2 = pg_update(&policy2, &g2, &cfg2).unwrap();
        assert_relative_eq!(next2.sigma_lin, 0.49, max_relative = 1e-15);
        assert_relative_eq!(next2.sigma_ang, 0.49, max_relative = 1e-15);
    }

    #[test]
    fn update_refuses_non_finite_gradients() {
        let cfg = PGConfig::default();
        let policy = GaussianPolicy::zeros(0.3);
        let g = PolicyGradient { sigma_lin: f64::NAN, ..PolicyGradient::default() };
        assert!(matches!(pg_update(&policy, &g, &cfg), Err(PgError::NonFiniteGradient)));
        let g2 = PolicyGradient { theta_ang: [f64::INFINITY, 0.0, 0.0], ..PolicyGradient::default() };
        assert!(matches!(pg_update(&policy, &g2, &cfg), Err(PgError::NonFiniteGradient)));
    }

    #[test]
    fn sigma_never_falls_below_the_floor() {
        let cfg = PGConfig { alpha_lin: 0.5, alpha_ang: 0.5, sigma_min: 0.01, ..PGConfig::default() };
        let mut policy = GaussianPolicy::zeros(0.3);
        let g = PolicyGradient { sigma_lin: -10.0, sigma_ang: -10.0, ..PolicyGradient::default() };
        for _ in 0..50 {
            policy = pg_update(&policy, &g, &cfg).unwrap();
            assert!(policy.sigma_lin >= cfg.sigma_min);
            assert!(policy.sigma_ang >= cfg.sigma_min);
        }
        assert_eq!(policy.sigma_lin, cfg.sigma_min);
    }

    #[test]
    fn score_expectation_vanishes_under_the_policy() {
        // Monte Carlo: E[score] = 0 for actions drawn from the policy
        // itself, within 3 standard errors per component.
        let policy = GaussianPolicy {
            theta_lin: [0.3, -0.5, 0.1],
            theta_ang: [0.2, 0.7, 0.0],
            sigma_lin: 0.4,
            sigma_ang: 0.25,
        };
        let obs = ContinuousObs { d: 3.0, omega: -45.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000usize;
        let mut sums = [0.0f64; 8];
        let mut sumsq = [0.0f64; 8];
        for _ in 0..n {
            let (_, raw) = sample_action(&policy, &obs, &mut rng);
            let traj =
                Trajectory { steps: vec![TrajStep { obs, raw, reward: 0.0 }] };
            let s = score_sums(&traj, &policy);
            for i in 0..8 {
                sums[i] += s[i];
                sumsq[i] += s[i] * s[i];
            }
        }
        for i in 0..8 {
            let mean = sums[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            if se == 0.0 {
                assert_eq!(mean, 0.0);
            } else {
                assert!(mean.abs() < 3.0 * se, "component {i}: mean {mean}, se {se}");
            }
        }
    }

    // Importance-reweighted return with frozen per-component baseline; its
    // derivative in each parameter at the base policy equals the REINFORCE
    // estimate for that component.
    fn reweighted_return(
        batch: &[Trajectory],
        base: &GaussianPolicy,
        perturbed: &GaussianPolicy,
        baseline: f64,
    ) -> f64 {
        let log_density = |p: &GaussianPolicy, t: &Trajectory| -> f64 {
            t.steps
                .iter()
                .map(|s| {
                    let (ml, ma) = p.mean(&s.obs);
                    let dl = s.raw.v_lin - ml;
                    let da = s.raw.v_ang - ma;
                    -0.5 * (dl / p.sigma_lin).powi(2) - p.sigma_lin.ln()
                        - 0.5 * (da / p.sigma_ang).powi(2)
                        - p.sigma_ang.ln()
                })
                .sum()
        };
        batch
            .iter()
            .map(|t| {
                let w = (log_density(perturbed, t) - log_density(base, t)).exp();
                w * (avg_return(t).unwrap() - baseline)
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Smaller replica of the acceptance check: 3 frozen instances.
        let task = suite_task(2).unwrap();
        for seed in 1..=3u64 {
            let mut param_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut policy = GaussianPolicy::zeros(0.3);
            for i in 0..FEATURE_DIM {
                policy.theta_lin[i] = param_rng.random_range(-1.0..1.0);
                policy.theta_ang[i] = param_rng.random_range(-1.0..1.0);
            }
            policy.sigma_lin = param_rng.random_range(0.2..0.5);
            policy.sigma_ang = param_rng.random_range(0.2..0.5);
            let batch = sample_trajectories(&policy, &task, 5, seed).unwrap();
            let g = reinforce_gradient(&batch, &policy).unwrap();
            let grad = [
                g.theta_lin[0],
                g.theta_lin[1],
                g.theta_lin[2],
                g.theta_ang[0],
                g.theta_ang[1],
                g.theta_ang[2],
                g.sigma_lin,
                g.sigma_ang,
            ];
            let scores: Vec<[f64; 8]> =
                batch.iter().map(|t| score_sums(t, &policy)).collect();
            let returns: Vec<f64> = batch.iter().map(|t| avg_return(t).unwrap()).collect();
            let h = 1e-5;
            let mut fd = [0.0f64; 8];
            for i in 0..8 {
                let denom: f64 = scores.iter().map(|s| s[i] * s[i]).sum();
                let b = if denom > 0.0 {
                    scores.iter().zip(&returns).map(|(s, r)| s[i] * s[i] * r).sum::<f64>() / denom
                } else {
                    0.0
                };
                let mut plus = policy;
                let mut minus = policy;
                match i {
                    0..=2 => {
                        plus.theta_lin[i] += h;
                        minus.theta_lin[i] -= h;
                    }
                    3..=5 => {
                        plus.theta_ang[i - 3] += h;
                        minus.theta_ang[i - 3] -= h;
                    }
                    6 => {
                        plus.sigma_lin += h;
                        minus.sigma_lin -= h;
                    }
                    _ => {
                        plus.sigma_ang += h;
                        minus.sigma_ang -= h;
                    }
                }
                fd[i] = (reweighted_return(&batch, &policy, &plus, b)
                    - reweighted_return(&batch, &policy, &minus, b))
                    / (2.0 * h);
            }
            let err: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm.max(1e-12) < 1e-4, "seed {seed}: rel err {}", err / norm);
        }
    }

    #[test]
    fn zero_episodes_returns_the_initialization() {
        let task = suite_task(2).unwrap();
        let cfg = PGConfig { episodes: 0, ..PGConfig::default() };
        let (policy, curves) = train_pg(&task, &cfg, None, 1).unwrap();
        assert_eq!(policy, GaussianPolicy::zeros(cfg.sigma0));
        assert!(curves.is_empty());
        let warm = crate::demo::warm_start_params(&task);
        let (policy, curves) = train_pg(&task, &cfg, Some(&warm), 1).unwrap();
        assert_eq!(policy, GaussianPolicy::from_params(&warm, cfg.sigma0));
        assert!(curves.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let task = suite_task(2).unwrap();
        let cfg = PGConfig { episodes: 30, ..PGConfig::default() };
        let warm = crate::demo::warm_start_params(&task);
        let (pa, ca) = train_pg(&task, &cfg, Some(&warm), 11).unwrap();
        let (pb, cb) = train_pg(&task, &cfg, Some(&warm), 11).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ca, cb);
        // Warm-started runs log both phases.
        assert_eq!(ca.len(), 60);
        assert_eq!(ca.last().unwrap().episode, 60);
    }

    #[test]
    fn grid_search_is_deterministic_and_covers_the_grid() {
        let task = suite_task(2).unwrap();
        // Tiny budget: this exercises plumbing, not learning quality.
        let a = grid_search(&task, Some(5), 3).unwrap();
        let b = grid_search(&task, Some(5), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table.len(), 36);
        assert!(RATE_GRID.contains(&a.best.0) && RATE_GRID.contains(&a.best.1));
        // The winner's reward is the table maximum.
        let max = a.table.iter().map(|r| r.avg_cum_reward).fold(f64::NEG_INFINITY, f64::max);
        let winner = a
            .table
            .iter()
            .find(|r| (r.alpha_lin, r.alpha_ang) == a.best)
            .unwrap();
        assert_eq!(winner.avg_cum_reward, max);
        // Ties resolve to the lexicographically largest pair.
        let tied: Vec<&GridRow> =
            a.table.iter().filter(|r| r.avg_cum_reward == max).collect();
        for r in tied {
            assert!((r.alpha_lin, r.alpha_ang) <= a.best);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_noise_free() {
        let task = suite_task(2).unwrap();
        let warm = crate::demo::warm_start_params(&task);
        let policy = GaussianPolicy::from_params(&warm, 0.3);
        let a = evaluate_policy(&policy, &task, 10, 5).unwrap();
        let b = evaluate_policy(&policy, &task, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 10);
        // Sigma plays no role in mean evaluation.
        let tight = GaussianPolicy::from_params(&warm, 0.01);
        let c = evaluate_policy(&tight, &task, 10, 5).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn policy_snapshot_format() {
        let policy = GaussianPolicy {
            theta_lin: [6.0, 0.0, -0.5],
            theta_ang: [0.0, 3.75, 0.0],
            sigma_lin: 0.3,
            sigma_ang: 0.25,
        };
        let mut buf = Vec::new();
        write_policy(&mut buf, &policy).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "param,index,value",
                "theta_lin,0,6",
                "theta_lin,1,0",
                "theta_lin,2,-0.5",
                "theta_ang,0,0",
                "theta_ang,1,3.75",
                "theta_ang,2,0",
                "sigma_lin,0,0.3",
                "sigma_ang,0,0.25",
            ]
        );
    }
}
