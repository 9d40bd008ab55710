//! Optimistic backward value iteration with an ellipsoidal bonus.

use nalgebra::DVector;

use crate::error::{Result, RfxError};
use crate::maximizer::CovarianceView;
use crate::mdp::{FeatureModel, Policy, RewardFunction};
use crate::oracle::{argmax_lowest, ValueTables};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub policy: Policy,
    pub tables: ValueTables,
}

impl PlanResult {
    /// Optimistic `V_1` as a length-`S` slice.
    pub fn v1(&self) -> &[f64] {
        self.tables.v_row(0)
    }
}

/// `[x]_{[0, hi]}`
#[inline]
pub fn clip(x: f64, hi: f64) -> f64 {
    x.min(hi).max(0.0)
}

/// Backward recursion
/// `Q_h(s,a) = clip_{[0,H]}(r_h(s,a) + <psi_{V_{h+1}}(s,a), theta> + beta * ||psi_{V_{h+1}}(s,a)||_{Sigma^{-1}})`
/// with a greedy lowest-index policy.
pub fn plan<M: FeatureModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    cov: &CovarianceView,
    reward: &RewardFunction,
    beta: f64,
) -> Result<PlanResult> {
    let dims = model.dims();
    reward.check_shape(dims)?;
    if theta.len() != dims.dim || cov.dim() != dims.dim {
        return Err(RfxError::argument(format!(
            "parameter has length {} and covariance dimension {}, model dimension is {}",
            theta.len(),
            cov.dim(),
            dims.dim
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(RfxError::argument("parameter estimate has non-finite entries"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(RfxError::argument(format!("beta must be finite and >= 0, got {beta}")));
    }
    let (horizon, states, actions) = (dims.horizon, dims.states, dims.actions);
    let cap = horizon as f64;
    let mut tables = ValueTables::zeros(horizon, states, actions);
    let mut policy = vec![0; horizon * states];
    for h in (0..horizon).rev() {
        let next = DVector::from_column_slice(tables.v_row(h + 1));
        for s in 0..states {
            for a in 0..actions {
                let psi = model.psi(&next, s, a);
                let bonus = if beta > 0.0 { beta * cov.inv_norm(&psi) } else { 0.0 };
                let q = clip(reward.get(h, s, a) + psi.dot(theta) + bonus, cap);
                tables.set_q(h, s, a, q);
            }
            let best = argmax_lowest(tables.q_row(h, s));
            policy[h * states + s] = best;
            tables.set_v(h, s, tables.q(h, s, best));
        }
    }
    Ok(PlanResult {
        policy: Policy::new(horizon, states, policy)?,
        tables,
    })
}
