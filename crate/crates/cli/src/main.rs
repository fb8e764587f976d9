//! `slrl`: seeded training runs, canned experiments, and curve plotting
//! for the navigation suite.
//!
//! Every subcommand is deterministic in (seed, config): rerunning one
//! produces byte-identical output files. Exit codes: 0 success, 2 bad
//! arguments or config, 3 runtime failure.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slrl_core::config::{apply_ella, apply_pg, apply_q, load_config, RawConfig};
use slrl_core::ella;
use slrl_core::env::{self, suite_task, ActionContinuous, Task, TrajLogRow};
use slrl_core::harness::{self, ExperimentName, ExperimentSpec};
use slrl_core::seeds::{derive_seed, STREAM_DEMO, STREAM_EVAL, STREAM_TASK};
use slrl_core::{demo, pg, plot, qlearn};

#[derive(Parser)]
#[command(name = "slrl", version, about = "Navigation-learning experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train tabular Q-learning on one task.
    QTrain(TrainArgs),
    /// Train the warm-started policy gradient on one task.
    PgTrain(TrainArgs),
    /// Run the multi-task learner over the five-task suite.
    PgellaTrain(PgellaArgs),
    /// Sweep policy-gradient learning rates on one task.
    Gridsearch(GridArgs),
    /// Generate demonstration trajectories.
    DemoGen(DemoArgs),
    /// Run a canned multi-seed experiment.
    Experiment(ExperimentArgs),
    /// Render curve CSVs to an SVG chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Task id from the friction suite.
    #[arg(long, default_value_t = 2)]
    task: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Episode budget override.
    #[arg(long)]
    episodes: Option<u32>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PgellaArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override for trajectories per task.
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 2)]
    task: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training episodes per grid cell.
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 2)]
    task: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of demonstrations.
    #[arg(long, default_value_t = demo::DEFAULT_DEMO_COUNT)]
    count: usize,
    /// Probability of replacing a scripted action with a random one.
    #[arg(long, default_value_t = demo::DEFAULT_NOISE_PROB)]
    noise: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// One of: user-policy-compare, state-size-compare, pg-vs-user,
    /// pgella-suite, gridsearch.
    name: String,
    #[arg(long, default_value_t = 2)]
    task: u32,
    /// Base seed; the experiment runs seeds base..base+5.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Curve CSV files, one line per file.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output SVG path.
    #[arg(short, long)]
    out: PathBuf,
    /// Moving-average window.
    #[arg(long, default_value_t = 100)]
    window: usize,
}

enum CliError {
    /// Bad arguments or configuration; exit 2.
    Usage(String),
    /// Failure while running; exit 3.
    Runtime(String),
}

impl CliError {
    fn usage(e: impl Display) -> CliError {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn task_arg(task_id: u32) -> Result<Task, CliError> {
    suite_task(task_id)
        .ok_or_else(|| CliError::Usage(format!("task must be 1..=5, got {task_id}")))
}

fn read_config(path: &Option<PathBuf>) -> Result<RawConfig, CliError> {
    match path {
        Some(p) => load_config(p).map_err(CliError::usage),
        None => Ok(RawConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_q_train(args: &TrainArgs) -> Result<(), CliError> {
    let task = task_arg(args.task)?;
    let mut cfg = qlearn::QConfig::default();
    apply_q(&read_config(&args.config)?, &mut cfg).map_err(CliError::usage)?;
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    let user = if cfg.q0 > 0.0 {
        let demos = demo::collect_demonstrations(
            &task,
            demo::DEFAULT_DEMO_COUNT,
            demo::DEFAULT_NOISE_PROB,
            derive_seed(args.seed, STREAM_DEMO, 0),
        )
        .map_err(CliError::runtime)?;
        Some(demo::estimate_user_policy(&demos).map_err(CliError::runtime)?)
    } else {
        None
    };
    let (table, curves) =
        qlearn::train_q(&task, &cfg, user.as_ref(), args.seed).map_err(CliError::runtime)?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    harness::write_curves(&mut buf, &curves).map_err(CliError::runtime)?;
    write_file(&args.out.join("q_curves.csv"), &buf)?;
    let mut buf = Vec::new();
    qlearn::write_qtable(&mut buf, &table).map_err(CliError::runtime)?;
    write_file(&args.out.join("q_table.csv"), &buf)?;
    let last = curves.last().map_or(0.0, |c| c.cum_reward);
    println!("episodes {} states {} final cum_reward {last}", curves.len(), table.len());
    Ok(())
}

// One deterministic mean-policy episode, logged step by step.
fn log_eval_episode(
    policy: &pg::GaussianPolicy,
    task: &Task,
    seed: u64,
) -> Result<Vec<TrajLogRow>, CliError> {
    let mut world = env::WorldState::reset(task, seed);
    let mut rows = Vec::new();
    loop {
        let obs = world.observe();
        let (v_lin, v_ang) = policy.mean(&obs);
        let res = world.step(ActionContinuous { v_lin, v_ang }).map_err(CliError::runtime)?;
        let next = world.observe();
        rows.push(TrajLogRow {
            step: world.step_count,
            x: world.pose.x,
            y: world.pose.y,
            heading: world.pose.heading(),
            d: next.d,
            omega: next.omega,
            v_lin: res.executed.v_lin,
            v_ang: res.executed.v_ang,
            reward: res.reward,
        });
        if res.done {
            return Ok(rows);
        }
    }
}

fn run_pg_train(args: &TrainArgs) -> Result<(), CliError> {
    let task = task_arg(args.task)?;
    let mut cfg = pg::PGConfig::for_task(task.task_id);
    apply_pg(&read_config(&args.config)?, &mut cfg).map_err(CliError::usage)?;
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    let warm = demo::warm_start_params(&task);
    let (policy, curves) =
        pg::train_pg(&task, &cfg, Some(&warm), args.seed).map_err(CliError::runtime)?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    harness::write_curves(&mut buf, &curves).map_err(CliError::runtime)?;
    write_file(&args.out.join("pg_curves.csv"), &buf)?;
    let mut buf = Vec::new();
    pg::write_policy(&mut buf, &policy).map_err(CliError::runtime)?;
    write_file(&args.out.join("pg_policy.csv"), &buf)?;
    let rows = log_eval_episode(&policy, &task, derive_seed(args.seed, STREAM_EVAL, 0))?;
    let mut buf = Vec::new();
    env::write_trajectory_log(&mut buf, &rows).map_err(CliError::runtime)?;
    write_file(&args.out.join("pg_trajectory.csv"), &buf)?;
    println!("episodes {} final sigma ({}, {})", curves.len(), policy.sigma_lin, policy.sigma_ang);
    Ok(())
}

fn shuffled_suite(seed: u64) -> Vec<Task> {
    use slrl_core::rand::seq::SliceRandom;
    use slrl_core::rand::SeedableRng;
    let mut tasks = env::make_task_suite();
    let mut rng =
        slrl_core::rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TASK, 0));
    tasks.shuffle(&mut rng);
    tasks
}

fn run_pgella_train(args: &PgellaArgs) -> Result<(), CliError> {
    let mut cfg = ella::EllaConfig::default();
    apply_ella(&read_config(&args.config)?, &mut cfg).map_err(CliError::usage)?;
    if let Some(e) = args.episodes {
        cfg.trajectories_per_task = e;
    }
    let tasks = shuffled_suite(args.seed);
    let outcome = ella::pgella_train(&tasks, &cfg, args.seed).map_err(CliError::runtime)?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    ella::write_model_csv(&mut buf, &outcome.basis, &outcome.coefficients)
        .map_err(CliError::runtime)?;
    write_file(&args.out.join("pgella_model.csv"), &buf)?;
    let mut buf = Vec::new();
    harness::write_curves(&mut buf, &outcome.curves).map_err(CliError::runtime)?;
    write_file(&args.out.join("pgella_eval.csv"), &buf)?;
    let order: Vec<String> = tasks.iter().map(|t| t.task_id.to_string()).collect();
    println!("task order {}", order.join(","));
    Ok(())
}

fn run_gridsearch(args: &GridArgs) -> Result<(), CliError> {
    let task = task_arg(args.task)?;
    let result = pg::grid_search(&task, args.episodes, args.seed).map_err(CliError::runtime)?;
    let path =
        harness::write_grid_csv(&args.out, task.task_id, &result).map_err(CliError::runtime)?;
    println!("wrote {}", path.display());
    println!("best alpha_lin {} alpha_ang {}", result.best.0, result.best.1);
    Ok(())
}

fn run_demo_gen(args: &DemoArgs) -> Result<(), CliError> {
    let task = task_arg(args.task)?;
    if !(0.0..0.5).contains(&args.noise) {
        return Err(CliError::Usage(format!("noise must be in [0, 0.5), got {}", args.noise)));
    }
    if args.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    let demos = demo::collect_demonstrations(&task, args.count, args.noise, args.seed)
        .map_err(CliError::runtime)?;
    ensure_dir(&args.out)?;
    let mut buf = Vec::new();
    demo::write_demonstrations(&mut buf, &demos).map_err(CliError::runtime)?;
    write_file(&args.out.join(format!("demos_task{}.csv", task.task_id)), &buf)?;
    let steps: usize = demos.trajectories.iter().map(|t| t.steps.len()).sum();
    println!("{} demonstrations, {steps} steps", demos.trajectories.len());
    Ok(())
}

fn run_experiment_cmd(args: &ExperimentArgs) -> Result<(), CliError> {
    let name: ExperimentName = args.name.parse().map_err(CliError::usage)?;
    task_arg(args.task)?;
    let spec = ExperimentSpec {
        name,
        task_id: args.task,
        seeds: ExperimentSpec::default_seeds(args.seed),
        out_dir: args.out.clone(),
        episodes: args.episodes,
    };
    let files = harness::run_experiment(&spec).map_err(CliError::runtime)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run_plot(args: &PlotArgs) -> Result<(), CliError> {
    if args.window == 0 {
        return Err(CliError::Usage("window must be at least 1".into()));
    }
    plot::plot_emit(&args.inputs, &args.out, args.window).map_err(CliError::runtime)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::QTrain(args) => run_q_train(args),
        Cmd::PgTrain(args) => run_pg_train(args),
        Cmd::PgellaTrain(args) => run_pgella_train(args),
        Cmd::Gridsearch(args) => run_gridsearch(args),
        Cmd::DemoGen(args) => run_demo_gen(args),
        Cmd::Experiment(args) => run_experiment_cmd(args),
        Cmd::Plot(args) => run_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
