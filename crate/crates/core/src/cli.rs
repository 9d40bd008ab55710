//! The `rfx` command line.
//!
//! Exit codes: 0 success, 2 argument/usage errors, 3 I/O errors,
//! 4 model validation or construction errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bernstein::run_exploration_plus;
use crate::error::{Result, RfxError};
use crate::explore::{ExplorerConfig, RewardVariant};
use crate::files::{load_policy, load_reward, save_policy, save_reward, write_json};
use crate::hard::{
    adversarial_reward, build_hard_mdp, build_packing_set, identification_experiment, Algorithm,
    IdentificationSettings, RewardOrientation, DEFAULT_GAMMA,
};
use crate::harness::{BenchmarkSpec, DEFAULT_CHECKPOINTS};
use crate::hoeffding::{run_exploration, PlanningState};
use crate::maximizer::{MaximizerChoice, DEFAULT_RESTARTS};
use crate::mdp::{random_mdp, FeatureModel, LinearMixtureMdp};
use crate::oracle::gap_report;
use crate::planner::plan;
use crate::rng::RunKey;
use crate::sweep::{read_csv, run_sweep, slope, write_sweep, InstanceSource, SweepGrid};

/// Rejection-sampling budget for packing sets built from the command line.
const PACKING_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Parser)]
#[command(name = "rfx", version, about = "Reward-free exploration on linear mixture MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Hoeffding,
    Bernstein,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Hoeffding => Algorithm::Hoeffding,
            AlgoArg::Bernstein => Algorithm::Bernstein,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Sqrt,
    Linear,
}

impl From<VariantArg> for RewardVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sqrt => RewardVariant::Sqrt,
            VariantArg::Linear => RewardVariant::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    RewardS21,
    RewardS22,
}

impl From<OrientationArg> for RewardOrientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::RewardS21 => RewardOrientation::RewardS21,
            OrientationArg::RewardS22 => RewardOrientation::RewardS22,
        }
    }
}

/// Exploration knobs shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Sqrt)]
    pub reward_variant: VariantArg,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Ridge regularizer; defaults to B^-2.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl ExploreArgs {
    fn config(&self) -> ExplorerConfig {
        ExplorerConfig {
            delta: self.delta,
            lambda: self.lambda,
            reward_variant: self.reward_variant.into(),
            maximizer: MaximizerChoice::Auto,
            restarts: self.restarts,
        }
    }
}

/// Shape of a generated instance.
#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    #[arg(long = "S", default_value_t = BenchmarkSpec::FROZEN.states)]
    pub states: usize,
    #[arg(long = "A", default_value_t = BenchmarkSpec::FROZEN.actions)]
    pub actions: usize,
    #[arg(long = "H", default_value_t = BenchmarkSpec::FROZEN.horizon)]
    pub horizon: usize,
    #[arg(long = "d", default_value_t = BenchmarkSpec::FROZEN.d)]
    pub dim: usize,
    #[arg(long = "B", default_value_t = BenchmarkSpec::FROZEN.param_bound)]
    pub param_bound: f64,
}

impl ShapeArgs {
    fn spec(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
            d: self.dim,
            param_bound: self.param_bound,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random linear mixture MDP file.
    GenMdp {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the lower-bound instance for one packing vector.
    GenHard {
        /// Packing dimension (the model dimension is one more).
        #[arg(long, default_value_t = 8)]
        dprime: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        theta_index: usize,
        #[arg(long = "H", default_value_t = 5)]
        horizon: usize,
        /// Seed of the packing-set sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the adversarial reward here.
        #[arg(long)]
        reward_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OrientationArg::RewardS21)]
        orientation: OrientationArg,
    },
    /// Run the exploration phase and save the planning state.
    Explore {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, value_enum, default_value_t = AlgoArg::Hoeffding)]
        algo: AlgoArg,
        #[arg(long = "K")]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        explore: ExploreArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trajectory log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Plan against a saved state for a reward file.
    Plan {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact expected and per-state gaps of a policy.
    Eval {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checkpointed runs over an (algorithm, seed) grid.
    Sweep {
        /// Repeat for several; defaults to both.
        #[arg(long, value_enum)]
        algo: Vec<AlgoArg>,
        /// Seed list, e.g. `1..50` (inclusive) or `1,2,7`.
        #[arg(long, default_value = "1..50")]
        seeds: String,
        #[arg(long = "K", default_value_t = 4000)]
        episodes: usize,
        /// Comma-separated checkpoints; K itself is always included.
        #[arg(long)]
        checkpoints: Option<String>,
        /// A fixed model file; otherwise one generated instance per seed.
        #[arg(long)]
        mdp: Option<PathBuf>,
        #[command(flatten)]
        shape: ShapeArgs,
        #[command(flatten)]
        explore: ExploreArgs,
        #[arg(long, env = "RFX_WORKERS")]
        workers: Option<usize>,
        /// Output directory for results.csv and manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-log slope of median gap against K from a results CSV.
    Slope {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        /// Restrict the fit to these checkpoints (comma-separated).
        #[arg(long)]
        checkpoints: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter identification on the lower-bound instance.
    LowerBoundExp {
        #[arg(long, value_enum, default_value_t = AlgoArg::Hoeffding)]
        algo: AlgoArg,
        #[arg(long, default_value_t = 8)]
        dprime: usize,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long = "H", default_value_t = 5)]
        horizon: usize,
        /// Comma-separated episode budgets.
        #[arg(long = "K", default_value = "50,5000")]
        episodes: String,
        #[arg(long, default_value = "1..50")]
        seeds: String,
        /// Seed of the packing-set sampler.
        #[arg(long, default_value_t = 0)]
        packing_seed: u64,
        #[arg(long, value_enum, default_value_t = OrientationArg::RewardS21)]
        orientation: OrientationArg,
        #[command(flatten)]
        explore: ExploreArgs,
        #[arg(long, env = "RFX_WORKERS")]
        workers: Option<usize>,
        /// Per-cell CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `a..b` (inclusive) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || RfxError::argument(format!("cannot parse seeds '{text}'"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    parse_list(text)
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| RfxError::argument(format!("bad list entry '{t}'"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(RfxError::argument(format!("empty list '{text}'")));
    }
    Ok(items)
}

fn default_workers(flag: Option<usize>) -> usize {
    flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    writeln!(out, "{text}").map_err(|e| RfxError::io("<stdout>", e))
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        write_json(value, p)?;
    }
    print_json(out, value)
}

#[derive(Serialize)]
struct LowerBoundSummary {
    algorithm: Algorithm,
    packing_size: usize,
    frequencies: Vec<(usize, f64)>,
}

/// Executes a parsed command, writing human-facing output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenMdp { shape, seed, out: path } => {
            let s = shape.spec();
            let mdp = random_mdp(s.states, s.actions, s.horizon, s.d, s.param_bound, seed)?;
            mdp.save(&path)
        }
        Command::GenHard {
            dprime,
            gamma,
            alpha,
            theta_index,
            horizon,
            seed,
            out: path,
            reward_out,
            orientation,
        } => {
            let pack = build_packing_set(dprime, gamma, seed, PACKING_ATTEMPTS)?;
            let hard = build_hard_mdp(&pack, theta_index, alpha, horizon)?;
            hard.inner.save(&path)?;
            if let Some(rp) = reward_out {
                save_reward(&adversarial_reward(horizon, pack.len(), orientation.into())?, &rp)?;
            }
            Ok(())
        }
        Command::Explore {
            mdp,
            algo,
            episodes,
            seed,
            explore,
            out: path,
            log,
        } => {
            let mdp = LinearMixtureMdp::load(&mdp)?;
            let config = explore.config();
            let key = RunKey::new(seed);
            let algorithm: Algorithm = algo.into();
            let (state, trajectory) = match algorithm {
                Algorithm::Hoeffding => {
                    let (s, l) = run_exploration(&mdp, episodes, &config, key)?;
                    (s.to_planning_state(algorithm.name()), l)
                }
                Algorithm::Bernstein => {
                    let (s, l) = run_exploration_plus(&mdp, episodes, &config, key)?;
                    (s.u_stream.to_planning_state(algorithm.name()), l)
                }
            };
            write_json(&state, &path)?;
            if let Some(lp) = log {
                write_json(&trajectory, &lp)?;
            }
            Ok(())
        }
        Command::Plan {
            mdp,
            state,
            reward,
            out: path,
        } => {
            let mdp = LinearMixtureMdp::load(&mdp)?;
            let state: PlanningState = crate::files::read_json(&state)?;
            let restored = state.restore()?;
            if restored.theta().len() != mdp.dims().dim {
                return Err(RfxError::argument(format!(
                    "state dimension {} does not match model dimension {}",
                    restored.theta().len(),
                    mdp.dims().dim
                )));
            }
            let reward = load_reward(&reward)?;
            let result = plan(&mdp, restored.theta(), restored.cov(), &reward, restored.beta)?;
            save_policy(&result.policy, &path)
        }
        Command::Eval {
            mdp,
            policy,
            reward,
            out: path,
        } => {
            let mdp = LinearMixtureMdp::load(&mdp)?;
            let policy = load_policy(&policy)?;
            let reward = load_reward(&reward)?;
            let report = gap_report(&mdp, &reward, &policy)?;
            emit(out, &report, path.as_deref())
        }
        Command::Sweep {
            algo,
            seeds,
            episodes,
            checkpoints,
            mdp,
            shape,
            explore,
            workers,
            out: dir,
        } => {
            let algorithms = if algo.is_empty() {
                vec![Algorithm::Hoeffding, Algorithm::Bernstein]
            } else {
                algo.into_iter().map(Algorithm::from).collect()
            };
            let checkpoints = match checkpoints {
                Some(text) => parse_list(&text)?,
                None => DEFAULT_CHECKPOINTS.to_vec(),
            };
            let grid = SweepGrid {
                instance: match mdp {
                    Some(p) => InstanceSource::File(p),
                    None => InstanceSource::Generated(shape.spec()),
                },
                algorithms,
                seeds: parse_seeds(&seeds)?,
                episodes,
                checkpoints,
                delta: explore.delta,
                reward_variant: explore.reward_variant.into(),
                restarts: explore.restarts,
                lambda_override: explore.lambda,
            };
            let workers = default_workers(workers);
            let outcome = run_sweep(&grid, workers)?;
            let manifest = write_sweep(&grid, &outcome, workers, &dir)?;
            print_json(out, &manifest)
        }
        Command::Slope {
            results,
            algo,
            checkpoints,
            out: path,
        } => {
            let mut rows = read_csv(&results)?;
            if let Some(a) = algo {
                let a: Algorithm = a.into();
                rows.retain(|r| r.algorithm == a);
            }
            if let Some(text) = checkpoints {
                let keep: Vec<usize> = parse_list(&text)?;
                rows.retain(|r| keep.contains(&r.episodes));
            }
            emit(out, &slope(&rows)?, path.as_deref())
        }
        Command::LowerBoundExp {
            algo,
            dprime,
            gamma,
            alpha,
            horizon,
            episodes,
            seeds,
            packing_seed,
            orientation,
            explore,
            workers,
            out: path,
        } => {
            let budgets: Vec<usize> = parse_list(&episodes)?;
            let seeds = parse_seeds(&seeds)?;
            let config = explore.config();
            config.validate()?;
            let pack = build_packing_set(dprime, gamma, packing_seed, PACKING_ATTEMPTS)?;
            let settings = IdentificationSettings {
                algorithm: algo.into(),
                alpha_scale: alpha,
                horizon,
                orientation: orientation.into(),
                explorer: config,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(default_workers(workers))
                .build()
                .map_err(|e| RfxError::argument(format!("cannot start worker pool: {e}")))?;
            let reports = pool.install(|| {
                budgets
                    .iter()
                    .map(|&k| identification_experiment(&pack, k, &seeds, &settings))
                    .collect::<Result<Vec<_>>>()
            })?;
            if let Some(p) = path {
                write_identification_csv(&reports, &p)?;
            }
            let summary = LowerBoundSummary {
                algorithm: settings.algorithm,
                packing_size: pack.len(),
                frequencies: reports.iter().map(|r| (r.episodes, r.recovery_frequency)).collect(),
            };
            print_json(out, &summary)
        }
    }
}

fn write_identification_csv(reports: &[crate::hard::IdentificationReport], path: &Path) -> Result<()> {
    let err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => RfxError::io(path.display().to_string(), e),
        other => RfxError::Format(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["K", "seed", "theta_index", "first_action", "recovered"]).map_err(err)?;
    for cell in reports.iter().flat_map(|r| &r.cells) {
        w.write_record([
            cell.episodes.to_string(),
            cell.seed.to_string(),
            cell.theta_index.to_string(),
            cell.first_action.to_string(),
            cell.recovered.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| RfxError::io(path.display().to_string(), e))
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Errors go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
