//! Online multi-task learner factorizing per-task policy parameters as
//! theta = L s.
//!
//! Tasks arrive one at a time. Each arrival runs the single-task policy
//! gradient, summarizes it as (alpha, Gamma), then alternates a sparse
//! coefficient step with a closed-form basis step on the surrogate
//! objective
//!
//!   (1/T) sum_t [ (alpha - L s)' Gamma (alpha - L s) + mu |s|_1 ]
//!     + lambda |L|_F^2.
//!
//! Gamma is a Gauss-Newton surrogate built from on-policy score outer
//! products, ridged so every fit term is strictly convex.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::demo;
use crate::env::Task;
use crate::harness::CurveRecord;
use crate::pg::{
    self, GaussianPolicy, PGConfig, PgError, Trajectory, FEATURE_DIM,
};
use crate::seeds::{derive_seed, STREAM_BASIS_INIT, STREAM_EVAL, STREAM_HESSIAN, STREAM_TASK};

/// Stacked parameter dimension: linear block then angular block.
pub const STACKED_DIM: usize = 2 * FEATURE_DIM;
/// Rollouts used to estimate each task's Gamma.
pub const HESSIAN_TRAJECTORIES: u32 = 20;
/// Evaluation episodes per task for multi-task comparisons.
pub const EVAL_EPISODES: u32 = 25;

#[derive(Error, Debug)]
pub enum EllaError {
    #[error("task {task_id}: policy gradient diverged to non-finite parameters")]
    DivergedTask { task_id: u32 },
    #[error("basis system is singular; lambda = 0 with rank-deficient history")]
    SingularBasisSystem,
    #[error(transparent)]
    Pg(#[from] PgError),
}

/// Shared latent basis, shape (p, k).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBasis {
    pub l: DMatrix<f64>,
}

impl LatentBasis {
    /// Seeded uniform init in [-0.1, 0.1].
    pub fn init(k: usize, seed: u64) -> LatentBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::from_fn(STACKED_DIM, k, |_, _| rng.random_range(-0.1..0.1));
        LatentBasis { l }
    }

    pub fn zeros(k: usize) -> LatentBasis {
        LatentBasis { l: DMatrix::zeros(STACKED_DIM, k) }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.l.shape()
    }
}

/// Sparse code for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskCoefficients {
    pub s: DVector<f64>,
    pub task_id: u32,
}

/// Single-task summary consumed by the multi-task steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStats {
    pub task_id: u32,
    /// Stacked single-task solution, linear block then angular block.
    pub alpha_star: DVector<f64>,
    /// Gauss-Newton surrogate, symmetric positive definite after ridging.
    pub hessian: DMatrix<f64>,
    pub trajectory_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllaConfig {
    pub k: usize,
    pub mu: f64,
    pub lambda: f64,
    /// Episodes granted to each training phase of the per-task solver.
    pub trajectories_per_task: u32,
    pub hessian_ridge: f64,
}

impl Default for EllaConfig {
    fn default() -> EllaConfig {
        EllaConfig {
            k: 3,
            mu: 0.1,
            lambda: 0.01,
            trajectories_per_task: 400,
            hessian_ridge: 1e-3,
        }
    }
}

impl EllaConfig {
    fn check(&self) {
        assert!(self.k >= 1 && self.k <= STACKED_DIM, "k must be in 1..=p");
        assert!(self.mu >= 0.0, "mu must be nonnegative");
        assert!(self.lambda >= 0.0, "lambda must be nonnegative");
        assert!(self.trajectories_per_task >= 1, "trajectories_per_task must be positive");
        assert!(self.hessian_ridge > 0.0, "hessian_ridge must be positive");
    }
}

fn stack_params(policy: &GaussianPolicy) -> DVector<f64> {
    let mut v = DVector::zeros(STACKED_DIM);
    for i in 0..FEATURE_DIM {
        v[i] = policy.theta_lin[i];
        v[FEATURE_DIM + i] = policy.theta_ang[i];
    }
    v
}

/// Empirical Gauss-Newton matrix: mean outer product of per-trajectory
/// stacked score sums, plus `ridge` on the diagonal.
pub fn estimate_hessian(
    trajectories: &[Trajectory],
    policy: &GaussianPolicy,
    ridge: f64,
) -> DMatrix<f64> {
    let mut gamma = DMatrix::zeros(STACKED_DIM, STACKED_DIM);
    for traj in trajectories {
        let s = pg::stacked_theta_scores(traj, policy);
        for i in 0..STACKED_DIM {
            for j in 0..STACKED_DIM {
                gamma[(i, j)] += s[i] * s[j];
            }
        }
    }
    if !trajectories.is_empty() {
        gamma /= trajectories.len() as f64;
    }
    for i in 0..STACKED_DIM {
        gamma[(i, i)] += ridge;
    }
    gamma
}

/// Runs the warm-started single-task solver and summarizes it for the
/// multi-task steps. Gamma comes from fresh on-policy rollouts at the
/// final policy.
pub fn task_solver(
    task: &Task,
    pg_cfg: &PGConfig,
    ella_cfg: &EllaConfig,
    seed: u64,
) -> Result<TaskStats, EllaError> {
    let warm = demo::warm_start_params(task);
    let (policy, curves) = pg::train_pg(task, pg_cfg, Some(&warm), seed)?;
    if !policy.is_finite() {
        return Err(EllaError::DivergedTask { task_id: task.task_id });
    }
    let rollouts = pg::sample_trajectories(
        &policy,
        task,
        HESSIAN_TRAJECTORIES,
        derive_seed(seed, STREAM_HESSIAN, 0),
    )?;
    let hessian = estimate_hessian(&rollouts, &policy, ella_cfg.hessian_ridge);
    Ok(TaskStats {
        task_id: task.task_id,
        alpha_star: stack_params(&policy),
        hessian,
        trajectory_count: curves.len() as u32,
    })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Lasso coefficient step: cyclic coordinate descent on
/// (alpha - Ls)' Gamma (alpha - Ls) + mu |s|_1 to step tolerance 1e-8.
pub fn solve_coefficients(basis: &LatentBasis, stats: &TaskStats, mu: f64) -> TaskCoefficients {
    let (p, k) = basis.shape();
    assert_eq!(p, stats.alpha_star.len(), "basis rows must match alpha");
    assert!(mu >= 0.0, "mu must be nonnegative");
    // Quadratic form: f(s) = s'As - 2c's + const, A = L'GL, c = L'G alpha.
    let a = basis.l.transpose() * &stats.hessian * &basis.l;
    let c = basis.l.transpose() * &stats.hessian * &stats.alpha_star;
    let mut s = DVector::zeros(k);
    for _ in 0..200_000 {
        let mut max_step = 0.0f64;
        for j in 0..k {
            let ajj = a[(j, j)];
            let old = s[j];
            let next = if ajj <= 1e-12 {
                0.0
            } else {
                let mut r = -c[j];
                for i in 0..k {
                    if i != j {
                        r += a[(j, i)] * s[i];
                    }
                }
                soft_threshold(-r, mu / 2.0) / ajj
            };
            s[j] = next;
            max_step = max_step.max((next - old).abs());
        }
        if max_step < 1e-8 {
            break;
        }
    }
    TaskCoefficients { s, task_id: stats.task_id }
}

/// Largest violation of the lasso optimality conditions at `s`: for zero
/// coordinates the fit gradient must sit inside [-mu, mu], for active ones
/// it must cancel mu's subgradient exactly.
pub fn kkt_violation(basis: &LatentBasis, stats: &TaskStats, s: &DVector<f64>, mu: f64) -> f64 {
    let grad = 2.0 * basis.l.transpose() * &stats.hessian * (&basis.l * s - &stats.alpha_star);
    let mut worst = 0.0f64;
    for j in 0..s.len() {
        let v = if s[j] == 0.0 {
            (grad[j].abs() - mu).max(0.0)
        } else {
            (grad[j] + mu * s[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Closed-form basis step: vec(L) solves
/// [ (1/T) sum (ss' kron Gamma) + lambda I ] vec(L) = (1/T) sum vec(Gamma alpha s'),
/// with column-major vec.
pub fn update_basis(
    history: &[(TaskCoefficients, TaskStats)],
    lambda: f64,
    shape: (usize, usize),
) -> Result<LatentBasis, EllaError> {
    let (p, k) = shape;
    if history.is_empty() {
        if lambda > 0.0 {
            return Ok(LatentBasis { l: DMatrix::zeros(p, k) });
        }
        return Err(EllaError::SingularBasisSystem);
    }
    let t = history.len() as f64;
    let mut lhs = DMatrix::zeros(p * k, p * k);
    let mut rhs = DVector::zeros(p * k);
    for (coeff, stats) in history {
        let outer = &coeff.s * coeff.s.transpose();
        lhs += outer.kronecker(&stats.hessian) / t;
        let target = &stats.hessian * &stats.alpha_star * coeff.s.transpose();
        // nalgebra stores column-major, so the raw slice is vec(target).
        rhs += DVector::from_column_slice(target.as_slice()) / t;
    }
    for i in 0..p * k {
        lhs[(i, i)] += lambda;
    }
    let vec_l = lhs.lu().solve(&rhs).ok_or(EllaError::SingularBasisSystem)?;
    Ok(LatentBasis { l: DMatrix::from_column_slice(p, k, vec_l.as_slice()) })
}

/// Frobenius norm of the basis-step objective gradient at `basis`.
pub fn basis_gradient_norm(
    basis: &LatentBasis,
    history: &[(TaskCoefficients, TaskStats)],
    lambda: f64,
) -> f64 {
    let (p, k) = basis.shape();
    let mut grad = DMatrix::zeros(p, k);
    let t = history.len().max(1) as f64;
    for (coeff, stats) in history {
        let resid = &basis.l * &coeff.s - &stats.alpha_star;
        grad += 2.0 / t * &stats.hessian * resid * coeff.s.transpose();
    }
    grad += 2.0 * lambda * &basis.l;
    grad.norm()
}

/// Eq. 1 surrogate value over the current history.
pub fn objective(
    basis: &LatentBasis,
    coeffs: &BTreeMap<u32, TaskCoefficients>,
    history: &[TaskStats],
    mu: f64,
    lambda: f64,
) -> f64 {
    assert!(!history.is_empty(), "objective needs at least one task");
    let t = history.len() as f64;
    let mut total = 0.0;
    for stats in history {
        let coeff = coeffs
            .get(&stats.task_id)
            .unwrap_or_else(|| panic!("missing coefficients for task {}", stats.task_id));
        let resid = &stats.alpha_star - &basis.l * &coeff.s;
        total += (resid.transpose() * &stats.hessian * &resid)[(0, 0)];
        total += mu * coeff.s.iter().map(|v| v.abs()).sum::<f64>();
    }
    total / t + lambda * basis.l.norm_squared()
}

/// Splits theta = L s into a Gaussian policy with evaluation noise `sigma`.
pub fn reconstruct_policy(basis: &LatentBasis, coeff: &TaskCoefficients, sigma: f64) -> GaussianPolicy {
    let theta = &basis.l * &coeff.s;
    let mut policy = GaussianPolicy::zeros(sigma);
    for i in 0..FEATURE_DIM {
        policy.theta_lin[i] = theta[i];
        policy.theta_ang[i] = theta[FEATURE_DIM + i];
    }
    policy
}

/// Evaluation seed shared by the multi-task learner and its single-task
/// comparison arm, so both see identical start states.
pub fn eval_seed(base: u64, task_id: u32) -> u64 {
    derive_seed(base, STREAM_EVAL, task_id as u64)
}

/// One objective measurement; `tasks_seen` is the history size the value
/// was computed over. The objective is only comparable to the previous
/// point at equal `tasks_seen` and when `fresh_start` is false: a fresh
/// start marks a change of inputs (a task arrived or was re-summarized, or
/// the final refresh restarted from the seeded basis), after which descent
/// begins anew.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectivePoint {
    pub tasks_seen: usize,
    pub value: f64,
    pub fresh_start: bool,
}

/// Full multi-task run output.
#[derive(Clone, Debug)]
pub struct EllaOutcome {
    pub basis: LatentBasis,
    pub coefficients: BTreeMap<u32, TaskCoefficients>,
    /// Per-task summaries, sorted by task id.
    pub stats: Vec<TaskStats>,
    /// Post-hoc evaluation of each reconstructed policy, 25 episodes per
    /// task.
    pub curves: Vec<CurveRecord>,
    /// Objective after every coefficient pass and basis pass.
    pub objective_trace: Vec<ObjectivePoint>,
}

struct Learner {
    basis: LatentBasis,
    /// The seeded starting basis, kept as the canonical restart point for
    /// the final refresh.
    init_basis: LatentBasis,
    coeffs: BTreeMap<u32, TaskCoefficients>,
    /// Task summaries, kept sorted by task id so every pass sums in a
    /// canonical order regardless of arrival order.
    history: Vec<TaskStats>,
    trace: Vec<ObjectivePoint>,
    mu: f64,
    lambda: f64,
}

impl Learner {
    fn record(&mut self, fresh_start: bool) {
        self.trace.push(ObjectivePoint {
            tasks_seen: self.history.len(),
            value: objective(&self.basis, &self.coeffs, &self.history, self.mu, self.lambda),
            fresh_start,
        });
    }

    fn pairs(&self) -> Vec<(TaskCoefficients, TaskStats)> {
        self.history
            .iter()
            .map(|st| (self.coeffs[&st.task_id].clone(), st.clone()))
            .collect()
    }

    // Re-solves every task's coefficients against the current basis.
    fn coefficient_pass(&mut self, fresh_start: bool) {
        for stats in &self.history {
            let coeff = solve_coefficients(&self.basis, stats, self.mu);
            self.coeffs.insert(stats.task_id, coeff);
        }
        self.record(fresh_start);
    }

    fn basis_pass(&mut self) -> Result<(), EllaError> {
        let shape = self.basis.shape();
        self.basis = update_basis(&self.pairs(), self.lambda, shape)?;
        self.record(false);
        Ok(())
    }

    // Final refresh: restarts from the seeded basis, then alternates to
    // convergence, ending on a coefficient pass. Because the restart point
    // and the (sorted) history are both independent of arrival order, the
    // refreshed model is too.
    fn refresh(&mut self) -> Result<(), EllaError> {
        self.basis = self.init_basis.clone();
        self.coefficient_pass(true);
        self.basis_pass()?;
        let mut prev = self.trace.last().expect("just recorded").value;
        for _ in 0..300 {
            self.coefficient_pass(false);
            self.basis_pass()?;
            let now = self.trace.last().expect("just recorded").value;
            if (prev - now).abs() <= 1e-10 * prev.abs().max(1.0) {
                break;
            }
            prev = now;
        }
        self.coefficient_pass(false);
        Ok(())
    }
}

/// Consumes tasks in the given order, never looking ahead. Each arrival
/// re-solves that task's coefficients, then refreshes the basis over the
/// full history. A final refresh pass re-solves everything so the outcome
/// depends on the task set, not its order. Evaluation curves cover the
/// reconstructed policy of every seen task.
pub fn pgella_train(
    task_stream: &[Task],
    cfg: &EllaConfig,
    seed: u64,
) -> Result<EllaOutcome, EllaError> {
    cfg.check();
    let init = LatentBasis::init(cfg.k, derive_seed(seed, STREAM_BASIS_INIT, 0));
    let mut learner = Learner {
        basis: init.clone(),
        init_basis: init,
        coeffs: BTreeMap::new(),
        history: Vec::new(),
        trace: Vec::new(),
        mu: cfg.mu,
        lambda: cfg.lambda,
    };
    for task in task_stream {
        let task_seed = derive_seed(seed, STREAM_TASK, task.task_id as u64);
        let mut pg_cfg = PGConfig::for_task(task.task_id);
        pg_cfg.episodes = cfg.trajectories_per_task;
        let stats = task_solver(task, &pg_cfg, cfg, task_seed)?;
        match learner.history.binary_search_by_key(&task.task_id, |st| st.task_id) {
            Ok(pos) => learner.history[pos] = stats,
            Err(pos) => learner.history.insert(pos, stats),
        }
        let arriving =
            &learner.history[learner.history.binary_search_by_key(&task.task_id, |st| st.task_id).unwrap()];
        let coeff = solve_coefficients(&learner.basis, arriving, cfg.mu);
        learner.coeffs.insert(task.task_id, coeff);
        learner.record(true);
        learner.basis_pass()?;
    }
    if !learner.history.is_empty() {
        learner.refresh()?;
    }
    let mut curves = Vec::new();
    let sigma = PGConfig::default().sigma_min;
    for stats in &learner.history {
        let task = crate::env::suite_task(stats.task_id)
            .unwrap_or_else(|| task_stream.iter().find(|t| t.task_id == stats.task_id).cloned().expect("task came from the stream"));
        let policy = reconstruct_policy(&learner.basis, &learner.coeffs[&stats.task_id], sigma);
        let per_episode =
            pg::evaluate_policy_per_episode(&policy, &task, EVAL_EPISODES, eval_seed(seed, stats.task_id))?;
        for (i, (cum_reward, steps)) in per_episode.into_iter().enumerate() {
            curves.push(CurveRecord {
                episode: i as u32 + 1,
                task_id: stats.task_id,
                seed,
                cum_reward,
                steps,
            });
        }
    }
    Ok(EllaOutcome {
        basis: learner.basis,
        coefficients: learner.coeffs,
        stats: learner.history,
        curves,
        objective_trace: learner.trace,
    })
}

/// Writes the model snapshot: `L,row,col,value` records then
/// `s,task_id,index,value` records.
pub fn write_model_csv<W: Write>(
    w: &mut W,
    basis: &LatentBasis,
    coeffs: &BTreeMap<u32, TaskCoefficients>,
) -> std::io::Result<()> {
    let (p, k) = basis.shape();
    for row in 0..p {
        for col in 0..k {
            writeln!(w, "L,{row},{col},{}", basis.l[(row, col)])?;
        }
    }
    for (task_id, coeff) in coeffs {
        for (i, v) in coeff.s.iter().enumerate() {
            writeln!(w, "s,{task_id},{i},{v}")?;
        }
    }
    Ok(())
}
