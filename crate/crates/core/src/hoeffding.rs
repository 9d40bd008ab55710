//! UCRL-RFE: reward-free exploration with a Hoeffding-type bonus.
//!
//! Each episode builds the exploration reward from the current covariance,
//! plans optimistically against it, rolls the plan out, and regresses the
//! realized pseudo values `u_h^k(s_{h+1})` on `psi_{u_h^k}(s_h, a_h)`.
//! The environment is only reachable through [`Environment`], which has no
//! reward and no access to the true parameter.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::explore::{
    check_radius_inputs, exploration_rewards, EpisodeRecord, ExplorationLog, ExplorerConfig,
    RegressionStream, StepRecord, UncertaintyTable,
};
use crate::maximizer::CovarianceView;
use crate::mdp::{Environment, FeatureModel, RewardFunction};
use crate::planner::{plan, PlanResult};
use crate::rng::{Domain, RunKey};

/// `H sqrt(d log(3 (1 + K H^3 B^2) / delta)) + 1`
pub fn hoeffding_beta(d: usize, k: usize, h: usize, b: f64, delta: f64) -> Result<f64> {
    check_radius_inputs(d, k, h, b, delta)?;
    let (d, k, h) = (d as f64, k as f64, h as f64);
    Ok(h * (d * (3.0 * (1.0 + k * h.powi(3) * b * b) / delta).ln()).sqrt() + 1.0)
}

#[derive(Debug, Clone)]
pub struct ExplorationState {
    pub stream: RegressionStream,
    /// Episodes completed so far.
    pub episode: usize,
    pub lambda: f64,
    pub beta: f64,
}

impl ExplorationState {
    pub fn new(dim: usize, lambda: f64, beta: f64) -> Result<Self> {
        Ok(ExplorationState {
            stream: RegressionStream::new(dim, lambda)?,
            episode: 0,
            lambda,
            beta,
        })
    }

    pub fn cov(&self) -> &CovarianceView {
        &self.stream.cov
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.stream.theta
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.stream.b
    }

    /// `||theta - reference||_Sigma`
    pub fn confidence_width(&self, reference: &DVector<f64>) -> f64 {
        self.stream.cov.norm(&(&self.stream.theta - reference))
    }

    pub fn to_planning_state(&self, algorithm: &str) -> PlanningState {
        PlanningState::capture(algorithm, self)
    }
}

/// What the planning phase needs, in a serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    pub algorithm: String,
    pub episodes: usize,
    pub lambda: f64,
    pub beta: f64,
    pub theta: Vec<f64>,
    /// Row-major `d x d`.
    pub sigma: Vec<f64>,
}

impl PlanningState {
    fn capture(algorithm: &str, state: &ExplorationState) -> Self {
        let sigma = state.cov().sigma();
        let d = sigma.nrows();
        PlanningState {
            algorithm: algorithm.to_string(),
            episodes: state.episode,
            lambda: state.lambda,
            beta: state.beta,
            theta: state.theta().iter().copied().collect(),
            sigma: (0..d * d).map(|i| sigma[(i / d, i % d)]).collect(),
        }
    }

    pub fn restore(&self) -> Result<ExplorationState> {
        let d = self.theta.len();
        if self.sigma.len() != d * d {
            return Err(crate::RfxError::Format(format!(
                "state has {} covariance entries for dimension {d}",
                self.sigma.len()
            )));
        }
        let sigma = nalgebra::DMatrix::from_row_slice(d, d, &self.sigma);
        let cov = CovarianceView::from_sigma(sigma, self.lambda)?;
        let theta = DVector::from_column_slice(&self.theta);
        let b = cov.sigma() * &theta;
        Ok(ExplorationState {
            stream: RegressionStream { cov, b, theta },
            episode: self.episodes,
            lambda: self.lambda,
            beta: self.beta,
        })
    }
}

/// Everything an observer may want to check about one finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    /// Zero-based index of the episode.
    pub episode: usize,
    /// Parameter and covariance the episode planned with.
    pub theta: DVector<f64>,
    pub cov: CovarianceView,
    pub beta: f64,
    pub rewards: RewardFunction,
    pub plan: PlanResult,
    pub initial_state: usize,
}

pub struct HoeffdingExplorer<'a, E: Environment> {
    env: &'a E,
    key: RunKey,
    config: ExplorerConfig,
    state: ExplorationState,
    log: ExplorationLog,
}

impl<'a, E: Environment> HoeffdingExplorer<'a, E> {
    /// The radius is set for `planned_episodes` (at least one).
    pub fn new(env: &'a E, key: RunKey, config: ExplorerConfig, planned_episodes: usize) -> Result<Self> {
        config.validate()?;
        let dims = env.dims();
        let b = env.param_bound();
        let beta = hoeffding_beta(dims.dim, planned_episodes.max(1), dims.horizon, b, config.delta)?;
        let lambda = config.lambda_for(b);
        Ok(HoeffdingExplorer {
            env,
            key,
            state: ExplorationState::new(dims.dim, lambda, beta)?,
            config,
            log: ExplorationLog::default(),
        })
    }

    pub fn state(&self) -> &ExplorationState {
        &self.state
    }

    pub fn log(&self) -> &ExplorationLog {
        &self.log
    }

    pub fn into_parts(self) -> (ExplorationState, ExplorationLog) {
        (self.state, self.log)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let env = self.env;
        let dims = env.dims();
        let k = self.state.episode;
        let beta = self.state.beta;
        let table = UncertaintyTable::compute(
            env,
            self.state.cov(),
            self.config.maximizer,
            self.config.restarts,
            self.key,
            k as u64,
        )?;
        let rewards = exploration_rewards(&table, beta, dims.horizon, dims.actions, self.config.reward_variant);
        let plan = plan(env, self.state.theta(), self.state.cov(), &rewards, beta)?;
        let theta = self.state.theta().clone();
        let cov = self.state.cov().clone();

        let mut rng = self.key.sequential(Domain::Environment, k as u64);
        let initial_state = env.sample_initial(&mut rng);
        let mut s = initial_state;
        let mut steps = Vec::with_capacity(dims.horizon);
        for h in 0..dims.horizon {
            let a = plan.policy.action(h, s);
            let next = env.sample_next(s, a, &mut rng)?;
            let u = table.pseudo_value(dims.horizon, h, s, a);
            let psi = env.psi(&DVector::from_column_slice(&u), s, a);
            let target = u[next];
            self.state.stream.push(&psi, target, 1.0);
            steps.push(StepRecord {
                state: s,
                action: a,
                next_state: next,
                reward: rewards.get(h, s, a),
                pseudo_value: u,
                target,
                value_next: None,
                variance: None,
            });
            s = next;
        }
        self.state.stream.refit();
        self.state.episode += 1;
        self.log.episodes.push(EpisodeRecord {
            initial_state,
            steps,
            v1: plan.v1()[initial_state],
        });
        Ok(EpisodeReport {
            episode: k,
            theta,
            cov,
            beta,
            rewards,
            plan,
            initial_state,
        })
    }
}

pub fn run_exploration<E: Environment>(
    env: &E,
    episodes: usize,
    config: &ExplorerConfig,
    key: RunKey,
) -> Result<(ExplorationState, ExplorationLog)> {
    let mut explorer = HoeffdingExplorer::new(env, key, config.clone(), episodes)?;
    for _ in 0..episodes {
        explorer.run_episode()?;
    }
    Ok(explorer.into_parts())
}

/// Planning phase: one optimistic plan against the final estimate.
pub fn plan_phase<M: FeatureModel + ?Sized>(
    model: &M,
    state: &ExplorationState,
    reward: &RewardFunction,
) -> Result<PlanResult> {
    plan(model, state.theta(), state.cov(), reward, state.beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_by_formula() {
        // 3 (1 + K H^3 B^2) / delta = 3 * 9 / 0.6 = 45
        let beta = hoeffding_beta(1, 1, 2, 1.0, 0.6).unwrap();
        let expected = 2.0 * 45.0f64.ln().sqrt() + 1.0;
        assert!((beta - expected).abs() < 1e-12);
    }

    #[test]
    fn beta_grows_with_episodes() {
        let a = hoeffding_beta(3, 1, 4, 1.0, 0.1).unwrap();
        let b = hoeffding_beta(3, 100, 4, 1.0, 0.1).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn beta_rejects_bad_delta() {
        for delta in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(hoeffding_beta(2, 10, 3, 1.0, delta).is_err());
        }
    }

    #[test]
    fn default_lambda_is_inverse_square_bound() {
        assert_eq!(ExplorerConfig::default().lambda_for(2.0), 0.25);
    }
}
