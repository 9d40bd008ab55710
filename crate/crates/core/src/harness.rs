//! Experiment cells: one exploration run with exact-gap checkpoints.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bernstein::{plan_phase_plus, BernsteinExplorer};
use crate::error::{Result, RfxError};
use crate::explore::{ExplorerConfig, RewardVariant};
use crate::hard::Algorithm;
use crate::hoeffding::{plan_phase, EpisodeReport, HoeffdingExplorer};
use crate::maximizer::{MaximizerChoice, DEFAULT_RESTARTS};
use crate::mdp::{random_mdp, FeatureModel, LinearMixtureMdp, RewardFunction};
use crate::oracle::{expected_gap, optimal_values};
use crate::planner::PlanResult;
use crate::rng::{Domain, RunKey};

pub const DEFAULT_CHECKPOINTS: [usize; 7] = [125, 200, 250, 500, 1000, 2000, 4000];

/// Generator settings for a family of random instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub d: usize,
    #[serde(rename = "B")]
    pub param_bound: f64,
}

impl BenchmarkSpec {
    /// The frozen desk-scale family: S=6, A=4, H=5, d=4, B=1.
    pub const FROZEN: BenchmarkSpec = BenchmarkSpec {
        states: 6,
        actions: 4,
        horizon: 5,
        d: 4,
        param_bound: 1.0,
    };

    /// Instance of seed `seed`: the generator draws from the same seed.
    pub fn instance(&self, seed: u64) -> Result<LinearMixtureMdp> {
        random_mdp(self.states, self.actions, self.horizon, self.d, self.param_bound, seed)
    }
}

/// Evaluation reward of a run: uniform `[0,1]` entries drawn from the seed.
pub fn evaluation_reward(mdp: &LinearMixtureMdp, seed: u64) -> RewardFunction {
    let mut rng = RunKey::new(seed).sequential(Domain::Auxiliary, 0);
    RewardFunction::random(mdp.horizon(), mdp.num_states(), mdp.num_actions(), &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub delta: f64,
    /// Reporting only.
    pub epsilon_target: Option<f64>,
    pub seed: u64,
    pub reward_variant: RewardVariant,
    pub restarts: usize,
    pub lambda_override: Option<f64>,
    pub maximizer: MaximizerChoice,
    /// Episode counts at which to evaluate; `episodes` is always added.
    pub checkpoints: Vec<usize>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, episodes: usize, seed: u64) -> Self {
        RunConfig {
            algorithm,
            episodes,
            delta: 0.1,
            epsilon_target: None,
            seed,
            reward_variant: RewardVariant::Sqrt,
            restarts: DEFAULT_RESTARTS,
            lambda_override: None,
            maximizer: MaximizerChoice::Auto,
            checkpoints: Vec::new(),
        }
    }

    pub fn explorer_config(&self) -> ExplorerConfig {
        ExplorerConfig {
            delta: self.delta,
            lambda: self.lambda_override,
            reward_variant: self.reward_variant,
            maximizer: self.maximizer,
            restarts: self.restarts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.explorer_config().validate()
    }

    /// Sorted, deduplicated checkpoints not beyond `episodes`, ending at
    /// `episodes`.
    pub fn checkpoint_schedule(&self) -> Vec<usize> {
        let mut cps: Vec<usize> = self
            .checkpoints
            .iter()
            .copied()
            .filter(|&c| c <= self.episodes)
            .chain(std::iter::once(self.episodes))
            .collect();
        cps.sort_unstable();
        cps.dedup();
        cps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub episodes: usize,
    pub gap: f64,
    /// `V_1^k(s_1^k)` of the last exploration episode (0 before any).
    pub v1: f64,
    pub wall_ms: f64,
    /// `||theta - theta*||_Sigma <= beta` for the planning estimate.
    pub coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub rows: Vec<CheckpointRow>,
    /// The planning-estimate bound held before every episode and at the end.
    pub coverage_all: bool,
    /// Episodes whose planning premise held, so optimism was checked.
    pub optimism_checked: usize,
    /// Checked episodes where `V_1^k` fell below the oracle `V*_1(.; r^k)`.
    pub optimism_violations: usize,
}

/// Tolerance on the optimism comparison.
const OPTIMISM_TOL: f64 = 1e-9;

/// Whether `||theta - theta*||_Sigma <= beta` held for an episode's plan,
/// and if so whether its `V_1` dominated the oracle.
fn check_optimism(mdp: &LinearMixtureMdp, report: &EpisodeReport) -> Result<Option<bool>> {
    let width = report.cov.norm(&(&report.theta - mdp.theta_star()));
    if width > report.beta {
        return Ok(None);
    }
    let (oracle, _) = optimal_values(mdp, &report.rewards)?;
    let dominated = report
        .plan
        .v1()
        .iter()
        .zip(oracle.v_row(0))
        .all(|(v, o)| *v >= o - OPTIMISM_TOL);
    Ok(Some(dominated))
}

#[allow(clippy::large_enum_variant)]
enum Runner<'a> {
    Hoeffding(HoeffdingExplorer<'a, LinearMixtureMdp>),
    Bernstein(BernsteinExplorer<'a, LinearMixtureMdp>),
}

impl Runner<'_> {
    fn run_episode(&mut self) -> Result<EpisodeReport> {
        match self {
            Runner::Hoeffding(e) => e.run_episode(),
            Runner::Bernstein(e) => e.run_episode(),
        }
    }

    /// `(||theta - theta*||_Sigma, beta)` for the planning-phase estimate.
    fn planning_width(&self, theta_star: &DVector<f64>) -> (f64, f64) {
        match self {
            Runner::Hoeffding(e) => (e.state().confidence_width(theta_star), e.state().beta),
            Runner::Bernstein(e) => {
                let mut u = e.state().u_stream.clone();
                u.stream.refit();
                (u.confidence_width(theta_star), u.beta)
            }
        }
    }

    fn plan_for(&self, mdp: &LinearMixtureMdp, reward: &RewardFunction) -> Result<PlanResult> {
        match self {
            Runner::Hoeffding(e) => plan_phase(mdp, e.state(), reward),
            Runner::Bernstein(e) => {
                let mut state = e.state().clone();
                state.finalize();
                plan_phase_plus(mdp, &state, reward)
            }
        }
    }
}

/// Runs one cell on `mdp`, evaluating the planning-phase policy for
/// `reward` at every checkpoint.
pub fn run_cell(mdp: &LinearMixtureMdp, reward: &RewardFunction, config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    reward.check_shape(mdp.dims())?;
    let key = RunKey::new(config.seed);
    let explorer_config = config.explorer_config();
    let mut runner = match config.algorithm {
        Algorithm::Hoeffding => Runner::Hoeffding(HoeffdingExplorer::new(mdp, key, explorer_config, config.episodes)?),
        Algorithm::Bernstein => Runner::Bernstein(BernsteinExplorer::new(mdp, key, explorer_config, config.episodes)?),
    };
    let schedule = config.checkpoint_schedule();
    let theta_star = mdp.theta_star();
    let start = Instant::now();
    let mut rows = Vec::with_capacity(schedule.len());
    let mut coverage_all = true;
    let mut optimism_checked = 0;
    let mut optimism_violations = 0;
    let mut last_v1 = 0.0;
    let mut next_checkpoint = schedule.iter().peekable();
    for k in 0..=config.episodes {
        let (width, beta) = runner.planning_width(theta_star);
        let covered = width <= beta;
        coverage_all &= covered;
        if next_checkpoint.peek() == Some(&&k) {
            next_checkpoint.next();
            let plan = runner.plan_for(mdp, reward)?;
            rows.push(CheckpointRow {
                episodes: k,
                gap: expected_gap(mdp, reward, &plan.policy)?,
                v1: last_v1,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                coverage: covered,
            });
        }
        if k == config.episodes {
            break;
        }
        let report = runner.run_episode()?;
        last_v1 = report.plan.v1()[report.initial_state];
        if let Some(ok) = check_optimism(mdp, &report)? {
            optimism_checked += 1;
            if !ok {
                optimism_violations += 1;
            }
        }
    }
    Ok(RunRecord {
        config: config.clone(),
        rows,
        coverage_all,
        optimism_checked,
        optimism_violations,
    })
}

/// A cell on the benchmark family: instance and evaluation reward both
/// come from the cell's seed.
pub fn run_benchmark_cell(spec: &BenchmarkSpec, config: &RunConfig) -> Result<RunRecord> {
    let mdp = spec.instance(config.seed)?;
    let reward = evaluation_reward(&mdp, config.seed);
    run_cell(&mdp, &reward, config)
}

/// Median of a nonempty sample; NaN entries are rejected.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(RfxError::argument("median of an empty sample"));
    }
    if values.iter().any(|x| x.is_nan()) {
        return Err(RfxError::argument("median of a sample containing NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_sorted_and_capped() {
        let mut c = RunConfig::new(Algorithm::Hoeffding, 300, 1);
        c.checkpoints = vec![500, 125, 200, 125, 0];
        assert_eq!(c.checkpoint_schedule(), vec![0, 125, 200, 300]);
    }

    #[test]
    fn zero_episodes_gives_the_zero_parameter_plan_gap() {
        let spec = BenchmarkSpec::FROZEN;
        let c = RunConfig::new(Algorithm::Hoeffding, 0, 3);
        let rec = run_benchmark_cell(&spec, &c).unwrap();
        assert_eq!(rec.rows.len(), 1);
        let mdp = spec.instance(3).unwrap();
        let reward = evaluation_reward(&mdp, 3);
        // Zero-episode plan: theta = 0, Sigma = lambda I, radius at K = 1.
        let state = crate::hoeffding::ExplorationState::new(
            4,
            1.0,
            crate::hoeffding::hoeffding_beta(4, 1, 5, 1.0, 0.1).unwrap(),
        )
        .unwrap();
        let p = plan_phase(&mdp, &state, &reward).unwrap();
        let gap = expected_gap(&mdp, &reward, &p.policy).unwrap();
        assert_eq!(rec.rows[0].gap, gap);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }
}
