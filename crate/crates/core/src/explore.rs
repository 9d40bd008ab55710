//! Pieces shared by both explorers: regression streams, the per-episode
//! uncertainty table behind the exploration reward and pseudo values, and
//! the trajectory log.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};
use crate::maximizer::{
    maximize_exact, maximize_l1_ascent, CovarianceView, MaximizerChoice, MaximizerMethod,
    DEFAULT_RESTARTS,
};
use crate::mdp::{Dims, FeatureModel, RewardFunction};
use crate::rng::{Domain, RunKey};

/// How the maximal uncertainty enters the exploration reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// `min(1, 2 beta / H * sqrt(m))`
    #[default]
    Sqrt,
    /// `min(1, 2 beta / H * m)`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    pub delta: f64,
    /// Ridge regularizer; `B^{-2}` when unset.
    pub lambda: Option<f64>,
    pub reward_variant: RewardVariant,
    pub maximizer: MaximizerChoice,
    pub restarts: usize,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            delta: 0.1,
            lambda: None,
            reward_variant: RewardVariant::Sqrt,
            maximizer: MaximizerChoice::Auto,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(RfxError::argument(format!("lambda must be positive, got {l}")));
            }
        }
        if self.restarts == 0 {
            return Err(RfxError::argument("restarts must be at least 1"));
        }
        Ok(())
    }

    pub fn lambda_for(&self, param_bound: f64) -> f64 {
        self.lambda.unwrap_or(1.0 / (param_bound * param_bound))
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RfxError::argument(format!("delta must lie in (0,1), got {delta}")));
    }
    Ok(())
}

pub(crate) fn check_radius_inputs(d: usize, k: usize, h: usize, b: f64, delta: f64) -> Result<()> {
    check_delta(delta)?;
    if d == 0 || k == 0 || h == 0 || !(b > 0.0) {
        return Err(RfxError::argument(format!(
            "radius inputs must be positive (d={d}, K={k}, H={h}, B={b})"
        )));
    }
    Ok(())
}

/// Ridge regression `theta = Sigma^{-1} b` maintained online.
#[derive(Debug, Clone)]
pub struct RegressionStream {
    pub cov: CovarianceView,
    pub b: DVector<f64>,
    pub theta: DVector<f64>,
}

impl RegressionStream {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Ok(RegressionStream {
            cov: CovarianceView::new(dim, lambda)?,
            b: DVector::zeros(dim),
            theta: DVector::zeros(dim),
        })
    }

    /// Adds the sample `(x, y)` with weight `w`:
    /// `Sigma += w x x^T`, `b += w x y`.
    pub fn push(&mut self, x: &DVector<f64>, y: f64, weight: f64) {
        self.cov.weighted_update(x, weight);
        self.b.axpy(weight * y, x, 1.0);
    }

    pub fn refit(&mut self) {
        self.theta = self.cov.solve(&self.b);
    }
}

/// Unit-box maximizers `f*(s,a) = argmax_{f in [0,1]^S} ||psi_f(s,a)||_{Sigma^{-1}}`
/// for one fixed covariance. Boxes `[0,c]` follow by scaling.
#[derive(Debug, Clone)]
pub struct UncertaintyTable {
    states: usize,
    actions: usize,
    f_unit: Vec<Vec<f64>>,
    m_unit: Vec<f64>,
    method: MaximizerMethod,
}

impl UncertaintyTable {
    /// Ascent restarts for pair `(s,a)` draw from
    /// `(Maximizer, episode, s*A + a)`.
    pub fn compute<M: FeatureModel + ?Sized>(
        model: &M,
        cov: &CovarianceView,
        choice: MaximizerChoice,
        restarts: usize,
        key: RunKey,
        episode: u64,
    ) -> Result<Self> {
        let Dims { states, actions, .. } = model.dims();
        let method = choice.resolve(states);
        let inv_sqrt: &DMatrix<f64> = cov.inv_sqrt();
        let mut f_unit = Vec::with_capacity(states * actions);
        let mut m_unit = Vec::with_capacity(states * actions);
        for s in 0..states {
            for a in 0..actions {
                let m = model.psi_map(s, a);
                let result = match method {
                    MaximizerMethod::ExactVertex => maximize_exact(m, inv_sqrt, 1.0)?,
                    MaximizerMethod::L1Ascent => {
                        let mut rng = key.rng(Domain::Maximizer, episode, (s * actions + a) as u64);
                        maximize_l1_ascent(m, inv_sqrt, 1.0, restarts, &mut rng)?
                    }
                };
                m_unit.push(result.objective_l2);
                f_unit.push(result.f_star);
            }
        }
        Ok(UncertaintyTable {
            states,
            actions,
            f_unit,
            m_unit,
            method,
        })
    }

    pub fn method(&self) -> MaximizerMethod {
        self.method
    }

    /// Unit-box maximal uncertainty at `(s,a)`.
    pub fn unit_uncertainty(&self, s: usize, a: usize) -> f64 {
        self.m_unit[s * self.actions + a]
    }

    /// Pseudo value at zero-based step `h`: the maximizer over `[0, H-1-h]`.
    pub fn pseudo_value(&self, horizon: usize, h: usize, s: usize, a: usize) -> Vec<f64> {
        let c = box_width(horizon, h);
        self.f_unit[s * self.actions + a].iter().map(|x| x * c).collect()
    }

    pub fn num_states(&self) -> usize {
        self.states
    }
}

/// Upper end of the pseudo-value box at zero-based step `h`.
pub fn box_width(horizon: usize, h: usize) -> f64 {
    (horizon - 1 - h) as f64
}

/// Exploration reward at zero-based step `h` from the unit-box uncertainty.
pub fn exploration_reward(
    table: &UncertaintyTable,
    beta: f64,
    horizon: usize,
    h: usize,
    s: usize,
    a: usize,
    variant: RewardVariant,
) -> f64 {
    let m = box_width(horizon, h) * table.unit_uncertainty(s, a);
    let scale = 2.0 * beta / horizon as f64;
    let raw = match variant {
        RewardVariant::Sqrt => scale * m.sqrt(),
        RewardVariant::Linear => scale * m,
    };
    raw.min(1.0)
}

/// The full `H x S x A` exploration reward of one episode.
pub fn exploration_rewards(
    table: &UncertaintyTable,
    beta: f64,
    horizon: usize,
    actions: usize,
    variant: RewardVariant,
) -> RewardFunction {
    RewardFunction::from_fn(horizon, table.num_states(), actions, |h, s, a| {
        exploration_reward(table, beta, horizon, h, s, a, variant)
    })
    .expect("exploration rewards lie in [0,1]")
}

/// Variance quantities of one step of the Bernstein explorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRecord {
    pub bar_v: f64,
    pub correction: f64,
    pub nu: f64,
    pub sigma_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    /// Exploration reward `r_h^k(s_h, a_h)`.
    pub reward: f64,
    /// Pseudo value `u_h^k` over all states.
    pub pseudo_value: Vec<f64>,
    /// `u_h^k(s_{h+1})`
    pub target: f64,
    /// Bernstein explorer only: `V_{h+1}^k` and its variance record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_next: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial_state: usize,
    pub steps: Vec<StepRecord>,
    /// Optimistic `V_1^k(s_1^k)` from the episode's plan.
    pub v1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationLog {
    pub episodes: Vec<EpisodeRecord>,
}

impl ExplorationLog {
    pub fn variance_records(&self) -> impl Iterator<Item = &VarianceRecord> {
        self.episodes
            .iter()
            .flat_map(|e| e.steps.iter())
            .filter_map(|s| s.variance.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_mdp;

    fn table_for(lambda: f64) -> (crate::mdp::LinearMixtureMdp, UncertaintyTable) {
        let mdp = random_mdp(4, 2, 3, 3, 1.0, 8).unwrap();
        let cov = CovarianceView::new(3, lambda).unwrap();
        let t = UncertaintyTable::compute(&mdp, &cov, MaximizerChoice::Auto, 8, RunKey::new(0), 0).unwrap();
        (mdp, t)
    }

    #[test]
    fn last_step_reward_is_zero() {
        let (_, t) = table_for(1.0);
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(exploration_reward(&t, 10.0, 3, 2, s, a, RewardVariant::Sqrt), 0.0);
                assert!(t.pseudo_value(3, 2, s, a).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn strong_regularization_silences_rewards() {
        let (_, t) = table_for(1e24);
        for variant in [RewardVariant::Sqrt, RewardVariant::Linear] {
            let r = exploration_rewards(&t, 1.0, 3, 2, variant);
            assert!(r.values().iter().all(|&x| x < 1e-5));
        }
    }

    #[test]
    fn large_radius_saturates_rewards() {
        let (_, t) = table_for(1.0);
        let r = exploration_rewards(&t, 1e6, 3, 2, RewardVariant::Sqrt);
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(r.get(0, s, a), 1.0);
            }
        }
    }

    #[test]
    fn pseudo_values_stay_in_their_box() {
        let (_, t) = table_for(0.5);
        for h in 0..3 {
            for s in 0..4 {
                for a in 0..2 {
                    let u = t.pseudo_value(3, h, s, a);
                    assert!(u.iter().all(|&x| x == 0.0 || x == (2 - h) as f64));
                }
            }
        }
    }

    #[test]
    fn stream_refit_solves_the_ridge_problem() {
        let mut stream = RegressionStream::new(2, 0.5).unwrap();
        let xs = [[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]];
        let ys = [1.0, -0.5, 2.0];
        for (x, y) in xs.iter().zip(ys) {
            stream.push(&DVector::from_column_slice(x), y, 1.0);
        }
        stream.refit();
        // Normal equations built independently.
        let mut a = DMatrix::identity(2, 2) * 0.5;
        let mut b = DVector::zeros(2);
        for (x, y) in xs.iter().zip(ys) {
            let x = DVector::from_column_slice(x);
            a += &x * x.transpose();
            b += &x * y;
        }
        let expected = a.lu().solve(&b).unwrap();
        assert!((stream.theta - expected).norm() < 1e-12);
    }
}
