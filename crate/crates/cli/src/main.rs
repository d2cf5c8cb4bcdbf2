//! `semslam` command line: simulate datasets, solve them, evaluate
//! trajectories and plot solutions.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use semslam::io_eval::{
    ate, export_trajectory, import_trajectory, read_dataset, read_solution, rpe, write_dataset, write_solution,
    SolutionRecord,
};
use semslam::optimizer::{run_em, AssociationMode, SolverConfig};
use semslam::simulator::{generate_world, simulate, NoiseConfig, TrajectoryConfig, WorldConfig};

#[derive(Parser)]
#[command(name = "semslam", version, about = "Semantic SLAM back-end with EM data association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scenario config.
    Simulate {
        /// JSON document with `world`, `trajectory` and `noise` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds both world generation and sensing noise.
        #[arg(long)]
        seed: u64,
        /// Also write the ground-truth trajectory in trajectory format.
        #[arg(long)]
        gt_out: Option<PathBuf>,
    },
    /// Estimate trajectory, landmarks and associations from a dataset.
    Solve {
        #[arg(long)]
        dataset: PathBuf,
        /// Solution JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Assoc::Exact)]
        assoc: Assoc,
        /// Weights below this are pruned.
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[arg(long, default_value_t = 10)]
        em_iters: usize,
        /// Orientation prior deviation in radians [default: the dataset's].
        #[arg(long)]
        sigma_v: Option<f64>,
        /// Drop orientation residuals and use shape features only.
        #[arg(long)]
        no_orientation: bool,
        /// Estimated trajectory file [default: --out with extension .txt].
        #[arg(long)]
        traj_out: Option<PathBuf>,
    },
    /// Compare an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Ate)]
        metric: Metric,
        #[arg(long, default_value_t = 1)]
        rpe_delta: usize,
    },
    /// Render a solution as SVG.
    Plot {
        #[arg(long)]
        solution: PathBuf,
        /// Ground-truth trajectory to overlay.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Assoc {
    Exact,
    Factored,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ate,
    Rpe,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    #[serde(default)]
    world: WorldConfig,
    trajectory: TrajectoryConfig,
    #[serde(default)]
    noise: NoiseConfig,
}

fn run_simulate(config: &Path, out: &Path, seed: u64, gt_out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg: ScenarioConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    cfg.world.seed = seed;
    let world = generate_world(&cfg.world)?;
    let ds = simulate(&world, &cfg.trajectory, &cfg.noise, seed)?;
    write_dataset(&ds, out)?;
    if let Some(p) = gt_out {
        export_trajectory(&ds.ground_truth.trajectory, p)?;
    }
    println!("landmarks: {}", ds.ground_truth.landmarks.len());
    println!("frames: {}", ds.ground_truth.trajectory.len());
    println!("keyframes: {}", ds.keyframes.len());
    println!("detections: {}", ds.num_detections());
    Ok(())
}

struct SolveArgs<'a> {
    dataset: &'a Path,
    out: &'a Path,
    assoc: Assoc,
    delta: f64,
    em_iters: usize,
    sigma_v: Option<f64>,
    no_orientation: bool,
    traj_out: Option<&'a Path>,
}

fn run_solve(a: SolveArgs) -> Result<()> {
    let ds = read_dataset(a.dataset)?;
    let cfg = SolverConfig {
        max_em_iters: a.em_iters,
        delta_prune: a.delta,
        sigma_v: a.sigma_v.unwrap_or(ds.meta.noise.sigma_v),
        association: match a.assoc {
            Assoc::Exact => AssociationMode::Exact,
            Assoc::Factored => AssociationMode::Factored,
        },
        use_orientation: !a.no_orientation,
        ..SolverConfig::default()
    };
    let traj_out = a.traj_out.map_or_else(|| a.out.with_extension("txt"), Path::to_path_buf);
    if traj_out == a.out {
        bail!("trajectory output would overwrite {}", a.out.display());
    }
    let sol = run_em(&ds, &cfg)?;
    write_solution(&SolutionRecord::new(&sol, Some(&ds.prototypes)), a.out)?;
    export_trajectory(&sol.trajectory, &traj_out)?;
    for (k, c) in sol.cost_history.iter().enumerate() {
        println!("em {}: cost {c:.6e}", k + 1);
    }
    println!("landmarks: {}", sol.landmarks.len());
    Ok(())
}

fn run_eval(est: &Path, gt: &Path, metric: Metric, rpe_delta: usize) -> Result<()> {
    let e = import_trajectory(est)?;
    let g = import_trajectory(gt)?;
    match metric {
        Metric::Ate => println!("ate: {:.4}", ate(&e, &g)?),
        Metric::Rpe => println!("rpe: {:.4}", rpe(&e, &g, rpe_delta)?),
    }
    Ok(())
}

fn run_plot(solution: &Path, gt: Option<&Path>, out: &Path) -> Result<()> {
    let sol = read_solution(solution)?;
    let gt = gt.map(import_trajectory).transpose()?;
    let svg = plot::render(&sol, gt.as_deref());
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed, gt_out } => run_simulate(&config, &out, seed, gt_out.as_deref()),
        Command::Solve {
            dataset,
            out,
            assoc,
            delta,
            em_iters,
            sigma_v,
            no_orientation,
            traj_out,
        } => run_solve(SolveArgs {
            dataset: &dataset,
            out: &out,
            assoc,
            delta,
            em_iters,
            sigma_v,
            no_orientation,
            traj_out: traj_out.as_deref(),
        }),
        Command::Eval { est, gt, metric, rpe_delta } => run_eval(&est, &gt, metric, rpe_delta),
        Command::Plot { solution, gt, out } => run_plot(&solution, gt.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
