//! Deterministic 2D navigation world.
//!
//! A unicycle robot starts somewhere in a square arena and has to reach the
//! goal at the origin. Commanded velocities are attenuated by a per-task slip
//! factor derived from two friction coefficients, so the same controller
//! behaves differently across tasks. The world exposes a continuous
//! observation (distance and bearing error to the goal) plus two discretised
//! views used by the tabular learner.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Commanded velocities are clamped to this symmetric box.
pub const ACTION_LIMIT: f64 = 1.5;
/// Success distance for the shaped (continuous) reward, metres.
pub const PG_SUCCESS_DISTANCE: f64 = 0.55;
/// Success bearing-error threshold for the shaped reward: 0.2 rad in degrees.
pub const PG_SUCCESS_ANGLE_DEG: f64 = 0.2 * 180.0 / PI;
/// Width of one angular bucket, degrees.
pub const ANGLE_BUCKET_DEG: u32 = 12;
/// Number of angular buckets. Bucket 30 only holds angles that round to 360.
pub const ANGLE_BUCKETS: u8 = 31;

#[derive(Error, Debug)]
pub enum EnvError {
    /// Stepping an episode after it reported `done` is a caller bug.
    #[error("episode already finished after {steps} steps")]
    EpisodeFinished { steps: u32 },
}

/// Wraps radians into `(-pi, pi]`.
pub fn wrap_angle_rad(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    // rem_euclid can round up to the modulus itself for tiny negatives.
    if r >= 2.0 * PI {
        r = 0.0;
    }
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Wraps degrees into `(-180, 180]`.
pub fn wrap_deg_180(a: f64) -> f64 {
    let mut r = wrap_deg_360(a);
    if r > 180.0 {
        r -= 360.0;
    }
    r
}

/// Wraps degrees into `[0, 360)`.
pub fn wrap_deg_360(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Planar pose. The heading is kept wrapped to `(-pi, pi]` by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Pose2D {
        Pose2D { x, y, heading: wrap_angle_rad(heading) }
    }

    /// Heading in radians, in `(-pi, pi]`.
    pub fn heading(&self) -> f64 {
        self.heading
    }
}

/// Axis-aligned start-pose sampler. Positions too close to the goal are
/// rejected and resampled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Minimum start distance from the goal, metres. Must be positive so a
    /// start can never coincide with the goal.
    pub goal_clearance: f64,
}

impl StartRegion {
    /// The 10 m x 10 m arena used by the built-in task suite.
    pub fn default_arena() -> StartRegion {
        StartRegion { x_min: -5.0, x_max: 5.0, y_min: -5.0, y_max: 5.0, goal_clearance: 1.0 }
    }
}

/// One navigation task: a goal, an arena, and the friction pair that sets how
/// much of each commanded velocity actually takes effect.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub task_id: u32,
    /// `(mu1, mu2)`: linear and angular friction coefficients, both >= 0.
    pub friction: (f64, f64),
    pub goal: (f64, f64),
    pub start_region: StartRegion,
    pub max_steps: u32,
    pub dt: f64,
}

impl Task {
    pub fn new(
        task_id: u32,
        friction: (f64, f64),
        goal: (f64, f64),
        start_region: StartRegion,
        max_steps: u32,
        dt: f64,
    ) -> Task {
        assert!(friction.0 >= 0.0 && friction.1 >= 0.0, "friction must be non-negative");
        assert!(max_steps >= 1, "max_steps must be at least 1");
        assert!(dt > 0.0, "dt must be positive");
        assert!(
            start_region.goal_clearance > 0.0,
            "goal_clearance must be positive so starts cannot sit on the goal"
        );
        Task { task_id, friction, goal, start_region, max_steps, dt }
    }
}

/// The five-task friction suite. Task ids are 1-based.
pub fn make_task_suite() -> Vec<Task> {
    const FRICTIONS: [(f64, f64); 5] =
        [(100.0, 50.0), (5.0, 5.0), (10.0, 0.1), (0.1, 50.0), (0.2, 0.2)];
    FRICTIONS
        .iter()
        .enumerate()
        .map(|(i, &friction)| {
            Task::new((i + 1) as u32, friction, (0.0, 0.0), StartRegion::default_arena(), 150, 0.1)
        })
        .collect()
}

/// Looks up a task from the built-in suite by 1-based id.
pub fn suite_task(task_id: u32) -> Option<Task> {
    make_task_suite().into_iter().find(|t| t.task_id == task_id)
}

/// Fraction of a commanded velocity that survives slip: `mu / (mu + 1)`.
/// Monotone in `mu`, 0 at `mu = 0`, approaching 1 as `mu` grows.
pub fn slip_factor(mu: f64) -> f64 {
    debug_assert!(mu >= 0.0);
    mu / (mu + 1.0)
}

/// Distance to the goal and signed bearing error, both from the robot's
/// point of view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousObs {
    /// Euclidean distance to the goal, metres.
    pub d: f64,
    /// Angle from the heading to the goal direction, degrees in
    /// `(-180, 180]`, positive counter-clockwise.
    pub omega: f64,
}

/// Distance/bearing buckets: `d` to the nearest metre, `omega` mapped to
/// `[0, 360)` and cut into 12-degree buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteObs2 {
    pub d_bucket: u32,
    pub omega_bucket: u8,
}

/// Distance bucket plus separately bucketed goal bearing and heading, both
/// measured from the map x-axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteObs3 {
    pub d_bucket: u32,
    pub beta_bucket: u8,
    pub zeta_bucket: u8,
}

/// Either discretisation, as stored in a Q-table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiscreteState {
    D2(DiscreteObs2),
    D3(DiscreteObs3),
}

impl DiscreteState {
    /// Stable text key: bucket values joined by ':'.
    pub fn key(&self) -> String {
        match self {
            DiscreteState::D2(s) => format!("{}:{}", s.d_bucket, s.omega_bucket),
            DiscreteState::D3(s) => format!("{}:{}:{}", s.d_bucket, s.beta_bucket, s.zeta_bucket),
        }
    }
}

/// Which discretisation a tabular learner runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateDim {
    Two,
    Three,
}

/// Commanded linear and angular velocity. Values outside the actuation box
/// are clamped when executed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionContinuous {
    pub v_lin: f64,
    pub v_ang: f64,
}

impl ActionContinuous {
    pub fn clamped(self) -> ActionContinuous {
        ActionContinuous {
            v_lin: self.v_lin.clamp(-ACTION_LIMIT, ACTION_LIMIT),
            v_ang: self.v_ang.clamp(-ACTION_LIMIT, ACTION_LIMIT),
        }
    }
}

/// The three fixed commands available to the tabular learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionDiscrete {
    Forward,
    Left,
    Right,
}

impl ActionDiscrete {
    /// Tie-break and iteration order everywhere: Forward, Left, Right.
    pub const ALL: [ActionDiscrete; 3] =
        [ActionDiscrete::Forward, ActionDiscrete::Left, ActionDiscrete::Right];

    pub fn command(self) -> ActionContinuous {
        match self {
            ActionDiscrete::Forward => ActionContinuous { v_lin: 0.5, v_ang: 0.0 },
            ActionDiscrete::Left => ActionContinuous { v_lin: 0.0, v_ang: 1.0 },
            ActionDiscrete::Right => ActionContinuous { v_lin: 0.0, v_ang: -1.0 },
        }
    }

    pub fn index(self) -> usize {
        match self {
            ActionDiscrete::Forward => 0,
            ActionDiscrete::Left => 1,
            ActionDiscrete::Right => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionDiscrete::Forward => "forward",
            ActionDiscrete::Left => "left",
            ActionDiscrete::Right => "right",
        }
    }

    pub fn from_index(i: usize) -> Option<ActionDiscrete> {
        ActionDiscrete::ALL.get(i).copied()
    }
}

/// Distance and signed bearing error from `pose` to `goal`. At zero distance
/// the bearing is defined as zero.
pub fn observe_continuous(pose: &Pose2D, goal: (f64, f64)) -> ContinuousObs {
    let vx = goal.0 - pose.x;
    let vy = goal.1 - pose.y;
    let d = vx.hypot(vy);
    if d == 0.0 {
        return ContinuousObs { d: 0.0, omega: 0.0 };
    }
    let beta = vy.atan2(vx).to_degrees();
    let omega = wrap_deg_180(beta - pose.heading().to_degrees());
    ContinuousObs { d, omega }
}

// Rounds to the nearest whole degree first so that e.g. 11.6 deg lands in
// bucket 1, then cuts into 12-degree buckets. Input must be in [0, 360).
fn angle_bucket(deg: f64) -> u8 {
    debug_assert!((0.0..360.0).contains(&deg));
    (deg.round() as u32 / ANGLE_BUCKET_DEG) as u8
}

/// Buckets a continuous observation: distance to the nearest metre
/// (half away from zero), bearing shifted to `[0, 360)` then bucketed.
pub fn discretize2(obs: &ContinuousObs) -> DiscreteObs2 {
    DiscreteObs2 {
        d_bucket: obs.d.round() as u32,
        omega_bucket: angle_bucket(wrap_deg_360(obs.omega)),
    }
}

/// Buckets distance, goal bearing and heading separately. Both angles are
/// measured counter-clockwise from the map x-axis.
pub fn discretize3(pose: &Pose2D, goal: (f64, f64)) -> DiscreteObs3 {
    let vx = goal.0 - pose.x;
    let vy = goal.1 - pose.y;
    let d = vx.hypot(vy);
    let beta = if d == 0.0 { 0.0 } else { wrap_deg_360(vy.atan2(vx).to_degrees()) };
    let zeta = wrap_deg_360(pose.heading().to_degrees());
    DiscreteObs3 {
        d_bucket: d.round() as u32,
        beta_bucket: angle_bucket(beta),
        zeta_bucket: angle_bucket(zeta),
    }
}

/// Sparse reward for the tabular learner: +100 on reaching the goal bucket
/// roughly facing it, -1 per step otherwise.
pub fn reward_q(next: &DiscreteObs2) -> f64 {
    if next.d_bucket < 1 && next.omega_bucket < 2 {
        100.0
    } else {
        -1.0
    }
}

/// Shaped reward for the continuous learner: +100 on success, otherwise a
/// small penalty proportional to the executed linear speed.
pub fn reward_pg(next: &ContinuousObs, executed: &ActionContinuous) -> f64 {
    if next.d < PG_SUCCESS_DISTANCE && next.omega.abs() < PG_SUCCESS_ANGLE_DEG {
        100.0
    } else {
        -0.5 * executed.v_lin.abs()
    }
}

/// Continuous step outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub obs: ContinuousObs,
    /// What was actually executed after clamping; the shaped reward is
    /// charged on this, not on the raw command.
    pub executed: ActionContinuous,
    pub reward: f64,
    pub done: bool,
}

/// Discrete step outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteStepResult {
    pub state: DiscreteState,
    pub reward: f64,
    pub done: bool,
}

/// A live episode: pose, task, step budget, and the episode's own RNG.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub pose: Pose2D,
    pub task: Task,
    pub step_count: u32,
    finished: bool,
}

impl WorldState {
    /// Starts a fresh episode with a pose drawn from the task's start region.
    /// The same `(task, seed)` pair always yields the same start pose.
    pub fn reset(task: &Task, seed: u64) -> WorldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sr = task.start_region;
        let (x, y) = loop {
            let x = rng.random_range(sr.x_min..=sr.x_max);
            let y = rng.random_range(sr.y_min..=sr.y_max);
            let dx = x - task.goal.0;
            let dy = y - task.goal.1;
            if dx.hypot(dy) > sr.goal_clearance {
                break (x, y);
            }
        };
        let heading = rng.random_range(-PI..PI);
        WorldState {
            pose: Pose2D::new(x, y, heading),
            task: task.clone(),
            step_count: 0,
            finished: false,
        }
    }

    pub fn observe(&self) -> ContinuousObs {
        observe_continuous(&self.pose, self.task.goal)
    }

    pub fn observe_discrete(&self, dim: StateDim) -> DiscreteState {
        match dim {
            StateDim::Two => DiscreteState::D2(discretize2(&self.observe())),
            StateDim::Three => DiscreteState::D3(discretize3(&self.pose, self.task.goal)),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    // Clamps, applies slip, advances the pose one dt using the pre-step
    // heading for translation, and wraps the new heading.
    fn integrate(&mut self, action: ActionContinuous) -> Result<ActionContinuous, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeFinished { steps: self.step_count });
        }
        let a = action.clamped();
        let v = a.v_lin * slip_factor(self.task.friction.0);
        let w = a.v_ang * slip_factor(self.task.friction.1);
        let dt = self.task.dt;
        let h = self.pose.heading();
        self.pose =
            Pose2D::new(self.pose.x + v * h.cos() * dt, self.pose.y + v * h.sin() * dt, h + w * dt);
        self.step_count += 1;
        Ok(a)
    }

    /// Applies a continuous command and returns the shaped-reward outcome.
    pub fn step(&mut self, action: ActionContinuous) -> Result<StepResult, EnvError> {
        let executed = self.integrate(action)?;
        let obs = self.observe();
        let reward = reward_pg(&obs, &executed);
        let done = reward == 100.0 || self.step_count >= self.task.max_steps;
        self.finished = done;
        Ok(StepResult { obs, executed, reward, done })
    }

    /// Applies one of the three fixed commands and returns the sparse-reward
    /// outcome in the requested discretisation. The reward is always judged
    /// on the distance/bearing buckets, whichever state view is in use.
    pub fn step_discrete(
        &mut self,
        action: ActionDiscrete,
        dim: StateDim,
    ) -> Result<DiscreteStepResult, EnvError> {
        self.integrate(action.command())?;
        let obs = self.observe();
        let d2 = discretize2(&obs);
        let reward = reward_q(&d2);
        let state = match dim {
            StateDim::Two => DiscreteState::D2(d2),
            StateDim::Three => DiscreteState::D3(discretize3(&self.pose, self.task.goal)),
        };
        let done = reward == 100.0 || self.step_count >= self.task.max_steps;
        self.finished = done;
        Ok(DiscreteStepResult { state, reward, done })
    }
}

/// One row of a step-level trajectory log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajLogRow {
    pub step: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub d: f64,
    pub omega: f64,
    pub v_lin: f64,
    pub v_ang: f64,
    pub reward: f64,
}

/// Writes a trajectory log as CSV with a fixed header.
pub fn write_trajectory_log<W: Write>(w: &mut W, rows: &[TrajLogRow]) -> std::io::Result<()> {
    writeln!(w, "step,x,y,heading,d,omega,v_lin,v_ang,reward")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.x, r.y, r.heading, r.d, r.omega, r.v_lin, r.v_ang, r.reward
        )?;
    }
    Ok(())
}
