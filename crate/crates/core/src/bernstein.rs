//! UCRL-RFE+: exploration with a variance-weighted (Bernstein-type) bonus.
//!
//! Three regression streams run side by side. The pseudo-value stream is
//! the one of UCRL-RFE and is only used to plan after exploration. The
//! value stream regresses `V_{h+1}^k(s_{h+1})` on `psi_{V_{h+1}^k}` with
//! weights `1/nu`, and the squared-value stream regresses
//! `V_{h+1}^k(s_{h+1})^2` on `psi_{(V_{h+1}^k)^2}`; together they estimate
//! the transition variance that sets `nu`.
//!
//! Updates made during episode `k` are buffered and applied at episode
//! close, so every quantity inside the episode uses the episode-start
//! covariances and estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};
use crate::explore::{
    check_radius_inputs, exploration_rewards, EpisodeRecord, ExplorationLog, ExplorerConfig,
    RegressionStream, StepRecord, UncertaintyTable, VarianceRecord,
};
use crate::hoeffding::{EpisodeReport, ExplorationState};
use crate::mdp::{Environment, FeatureModel, RewardFunction};
use crate::planner::{clip, plan, PlanResult};
use crate::rng::{Domain, RunKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernsteinRadii {
    /// Planning-phase radius.
    pub beta: f64,
    /// Radius of the weighted value stream, used while exploring.
    pub hat_beta: f64,
    /// Radius in the first-moment correction.
    pub check_beta: f64,
    /// Radius in the second-moment correction.
    pub tilde_beta: f64,
}

pub fn bernstein_radii(d: usize, k: usize, h: usize, b: f64, delta: f64) -> Result<BernsteinRadii> {
    check_radius_inputs(d, k, h, b, delta)?;
    let (d, k, h) = (d as f64, k as f64, h as f64);
    let log_det = (1.0 + k * h * b * b).ln();
    let log_conf = (48.0 * k * k * h * h / delta).ln();
    let root = (log_det * log_conf).sqrt();
    Ok(BernsteinRadii {
        beta: h * (d * (12.0 * (1.0 + k * h.powi(3) * b * b) / delta).ln()).sqrt() + 1.0,
        hat_beta: 8.0 * d.sqrt() * root + 4.0 * d.sqrt() * log_conf + 1.0,
        check_beta: 8.0 * d * root + 4.0 * d.sqrt() * log_conf + 1.0,
        tilde_beta: 8.0 * h * h * d.sqrt() * root + 4.0 * h * h * log_conf + 1.0,
    })
}

#[derive(Debug, Clone)]
pub struct BernsteinState {
    pub u_stream: ExplorationState,
    pub hat_stream: RegressionStream,
    pub tilde_stream: RegressionStream,
    pub radii: BernsteinRadii,
    /// Lower bound `H^2/d` on `nu`.
    pub alpha_floor: f64,
    horizon: usize,
    finalized: bool,
    hat_override: Option<DVector<f64>>,
    tilde_override: Option<DVector<f64>>,
}

impl BernsteinState {
    pub fn new(dim: usize, horizon: usize, lambda: f64, radii: BernsteinRadii) -> Result<Self> {
        Ok(BernsteinState {
            u_stream: ExplorationState::new(dim, lambda, radii.beta)?,
            hat_stream: RegressionStream::new(dim, lambda)?,
            tilde_stream: RegressionStream::new(dim, lambda)?,
            radii,
            alpha_floor: (horizon * horizon) as f64 / dim as f64,
            horizon,
            finalized: false,
            hat_override: None,
            tilde_override: None,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn episode(&self) -> usize {
        self.u_stream.episode
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Replaces the value-stream estimate used for planning and variance
    /// estimation (`None` restores the fitted one).
    pub fn inject_hat(&mut self, theta: Option<DVector<f64>>) {
        self.hat_override = theta;
    }

    /// Replaces the squared-value-stream estimate used for variance
    /// estimation (`None` restores the fitted one).
    pub fn inject_tilde(&mut self, theta: Option<DVector<f64>>) {
        self.tilde_override = theta;
    }

    pub fn hat_theta(&self) -> &DVector<f64> {
        self.hat_override.as_ref().unwrap_or(&self.hat_stream.theta)
    }

    pub fn tilde_theta(&self) -> &DVector<f64> {
        self.tilde_override.as_ref().unwrap_or(&self.tilde_stream.theta)
    }

    /// `clip_{[0,H^2]}(<psi_{V^2}, theta~>) - clip_{[0,H]}(<psi_V, theta^>)^2`;
    /// may be negative.
    pub fn variance_estimate<M: FeatureModel + ?Sized>(&self, model: &M, v_next: &[f64], s: usize, a: usize) -> f64 {
        let (psi_v, psi_sq) = value_features(model, v_next, s, a);
        self.variance_from_features(&psi_v, &psi_sq)
    }

    /// `min(H^2, tilde_beta ||psi_{V^2}||) + min(H^2, 2 H check_beta ||psi_V||)`
    /// in the inverse norms of the two stream covariances.
    pub fn correction_term<M: FeatureModel + ?Sized>(&self, model: &M, v_next: &[f64], s: usize, a: usize) -> f64 {
        let (psi_v, psi_sq) = value_features(model, v_next, s, a);
        self.correction_from_features(&psi_v, &psi_sq)
    }

    pub fn nu<M: FeatureModel + ?Sized>(&self, model: &M, v_next: &[f64], s: usize, a: usize) -> VarianceRecord {
        let (psi_v, psi_sq) = value_features(model, v_next, s, a);
        self.nu_from_features(&psi_v, &psi_sq)
    }

    fn variance_from_features(&self, psi_v: &DVector<f64>, psi_sq: &DVector<f64>) -> f64 {
        let h = self.horizon as f64;
        let second = clip(psi_sq.dot(self.tilde_theta()), h * h);
        let first = clip(psi_v.dot(self.hat_theta()), h);
        second - first * first
    }

    fn correction_from_features(&self, psi_v: &DVector<f64>, psi_sq: &DVector<f64>) -> f64 {
        let h = self.horizon as f64;
        let second = (self.radii.tilde_beta * self.tilde_stream.cov.inv_norm(psi_sq)).min(h * h);
        let first = (2.0 * h * self.radii.check_beta * self.hat_stream.cov.inv_norm(psi_v)).min(h * h);
        second + first
    }

    fn nu_from_features(&self, psi_v: &DVector<f64>, psi_sq: &DVector<f64>) -> VarianceRecord {
        let bar_v = self.variance_from_features(psi_v, psi_sq);
        let correction = self.correction_from_features(psi_v, psi_sq);
        let nu = self.alpha_floor.max(bar_v + correction);
        VarianceRecord {
            bar_v,
            correction,
            nu,
            sigma_bar: nu.sqrt(),
        }
    }

    /// Fits the pseudo-value estimate used by the planning phase.
    pub fn finalize(&mut self) {
        self.u_stream.stream.refit();
        self.finalized = true;
    }
}

/// `(psi_V(s,a), psi_{V^2}(s,a))`
fn value_features<M: FeatureModel + ?Sized>(model: &M, v: &[f64], s: usize, a: usize) -> (DVector<f64>, DVector<f64>) {
    let v = DVector::from_column_slice(v);
    let sq = v.map(|x| x * x);
    (model.psi(&v, s, a), model.psi(&sq, s, a))
}

pub struct BernsteinExplorer<'a, E: Environment> {
    env: &'a E,
    key: RunKey,
    config: ExplorerConfig,
    state: BernsteinState,
    log: ExplorationLog,
}

struct Pending {
    psi_u: DVector<f64>,
    target_u: f64,
    psi_v: DVector<f64>,
    target_v: f64,
    psi_sq: DVector<f64>,
    nu: f64,
}

impl<'a, E: Environment> BernsteinExplorer<'a, E> {
    pub fn new(env: &'a E, key: RunKey, config: ExplorerConfig, planned_episodes: usize) -> Result<Self> {
        config.validate()?;
        let dims = env.dims();
        let b = env.param_bound();
        let radii = bernstein_radii(dims.dim, planned_episodes.max(1), dims.horizon, b, config.delta)?;
        let lambda = config.lambda_for(b);
        Ok(BernsteinExplorer {
            env,
            key,
            state: BernsteinState::new(dims.dim, dims.horizon, lambda, radii)?,
            config,
            log: ExplorationLog::default(),
        })
    }

    pub fn state(&self) -> &BernsteinState {
        &self.state
    }

    /// Mutable access for injecting reference estimates.
    pub fn state_mut(&mut self) -> &mut BernsteinState {
        &mut self.state
    }

    pub fn log(&self) -> &ExplorationLog {
        &self.log
    }

    pub fn into_parts(self) -> (BernsteinState, ExplorationLog) {
        (self.state, self.log)
    }

    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let env = self.env;
        let dims = env.dims();
        let horizon = dims.horizon;
        let k = self.state.episode();
        self.state.finalized = false;
        let table = UncertaintyTable::compute(
            env,
            self.state.u_stream.cov(),
            self.config.maximizer,
            self.config.restarts,
            self.key,
            k as u64,
        )?;
        let rewards = exploration_rewards(
            &table,
            self.state.radii.beta,
            horizon,
            dims.actions,
            self.config.reward_variant,
        );
        let hat_beta = self.state.radii.hat_beta;
        let theta = self.state.hat_theta().clone();
        let plan = plan(env, &theta, &self.state.hat_stream.cov, &rewards, hat_beta)?;

        let mut rng = self.key.sequential(Domain::Environment, k as u64);
        let initial_state = env.sample_initial(&mut rng);
        let mut s = initial_state;
        let mut steps = Vec::with_capacity(horizon);
        let mut pending = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let a = plan.policy.action(h, s);
            let next = env.sample_next(s, a, &mut rng)?;
            let u = table.pseudo_value(horizon, h, s, a);
            let psi_u = env.psi(&DVector::from_column_slice(&u), s, a);
            let v_next = plan.tables.v_row(h + 1).to_vec();
            let (psi_v, psi_sq) = value_features(env, &v_next, s, a);
            let record = self.state.nu_from_features(&psi_v, &psi_sq);
            pending.push(Pending {
                psi_u,
                target_u: u[next],
                psi_v,
                target_v: v_next[next],
                psi_sq,
                nu: record.nu,
            });
            steps.push(StepRecord {
                state: s,
                action: a,
                next_state: next,
                reward: rewards.get(h, s, a),
                target: u[next],
                pseudo_value: u,
                value_next: Some(v_next),
                variance: Some(record),
            });
            s = next;
        }
        let cov = self.state.hat_stream.cov.clone();
        for p in pending {
            self.state.u_stream.stream.push(&p.psi_u, p.target_u, 1.0);
            self.state.hat_stream.push(&p.psi_v, p.target_v, 1.0 / p.nu);
            self.state.tilde_stream.push(&p.psi_sq, p.target_v * p.target_v, 1.0);
        }
        self.state.hat_stream.refit();
        self.state.tilde_stream.refit();
        self.state.u_stream.episode += 1;
        self.log.episodes.push(EpisodeRecord {
            initial_state,
            steps,
            v1: plan.v1()[initial_state],
        });
        Ok(EpisodeReport {
            episode: k,
            theta,
            cov,
            beta: hat_beta,
            rewards,
            plan,
            initial_state,
        })
    }
}

/// Runs `episodes` episodes and finalizes the planning estimate.
pub fn run_exploration_plus<E: Environment>(
    env: &E,
    episodes: usize,
    config: &ExplorerConfig,
    key: RunKey,
) -> Result<(BernsteinState, ExplorationLog)> {
    let mut explorer = BernsteinExplorer::new(env, key, config.clone(), episodes)?;
    for _ in 0..episodes {
        explorer.run_episode()?;
    }
    let (mut state, log) = explorer.into_parts();
    state.finalize();
    Ok((state, log))
}

pub fn plan_phase_plus<M: FeatureModel + ?Sized>(
    model: &M,
    state: &BernsteinState,
    reward: &RewardFunction,
) -> Result<PlanResult> {
    if !state.finalized {
        return Err(RfxError::State(
            "planning requires a finalized exploration state; call finalize() first".into(),
        ));
    }
    plan(model, state.u_stream.theta(), state.u_stream.cov(), reward, state.radii.beta)
}
