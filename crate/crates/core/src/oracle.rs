//! Exact finite-horizon dynamic programming on a known model.
//!
//! Steps are zero-based here: step `h` in `0..H` is step `h+1` of the
//! one-based recursion, and row `H` of every table is the terminal zero row.

use crate::error::{Result, RfxError};
use crate::mdp::{FeatureModel, LinearMixtureMdp, Policy, RewardFunction};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    horizon: usize,
    states: usize,
    actions: usize,
    /// `(H+1) x S`
    v: Vec<f64>,
    /// `(H+1) x S x A`
    q: Vec<f64>,
}

impl ValueTables {
    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        ValueTables {
            horizon,
            states,
            actions,
            v: vec![0.0; (horizon + 1) * states],
            q: vec![0.0; (horizon + 1) * states * actions],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.states + s]
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.states + s) * self.actions + a]
    }

    /// `V_h` as a length-`S` slice.
    pub fn v_row(&self, h: usize) -> &[f64] {
        &self.v[h * self.states..(h + 1) * self.states]
    }

    pub fn q_row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.states + s) * self.actions;
        &self.q[start..start + self.actions]
    }

    pub(crate) fn set_v(&mut self, h: usize, s: usize, value: f64) {
        self.v[h * self.states + s] = value;
    }

    pub(crate) fn set_q(&mut self, h: usize, s: usize, a: usize, value: f64) {
        self.q[(h * self.states + s) * self.actions + a] = value;
    }

    pub fn all_v(&self) -> &[f64] {
        &self.v
    }

    pub fn all_q(&self) -> &[f64] {
        &self.q
    }
}

fn expectation(row: &[f64], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(p, x)| p * x).sum()
}

/// Optimal values `V*`, `Q*` by backward induction, with the greedy
/// (lowest-index) policy.
pub fn optimal_values(
    mdp: &LinearMixtureMdp,
    reward: &RewardFunction,
) -> Result<(ValueTables, Policy)> {
    let dims = mdp.dims();
    reward.check_shape(dims)?;
    let (horizon, states, actions) = (dims.horizon, dims.states, dims.actions);
    let mut tables = ValueTables::zeros(horizon, states, actions);
    let mut policy = vec![0; horizon * states];
    for h in (0..horizon).rev() {
        let next = tables.v_row(h + 1).to_vec();
        for s in 0..states {
            for a in 0..actions {
                let q = reward.get(h, s, a) + expectation(mdp.transition_row(s, a), &next);
                tables.set_q(h, s, a, q);
            }
            let best = argmax_lowest(tables.q_row(h, s));
            policy[h * states + s] = best;
            tables.set_v(h, s, tables.q(h, s, best));
        }
    }
    Ok((tables, Policy::new(horizon, states, policy)?))
}

/// `V^pi`, `Q^pi` of a fixed deterministic policy.
pub fn policy_value(
    mdp: &LinearMixtureMdp,
    reward: &RewardFunction,
    policy: &Policy,
) -> Result<ValueTables> {
    let dims = mdp.dims();
    reward.check_shape(dims)?;
    policy.check_against(dims)?;
    let (horizon, states, actions) = (dims.horizon, dims.states, dims.actions);
    let mut tables = ValueTables::zeros(horizon, states, actions);
    for h in (0..horizon).rev() {
        let next = tables.v_row(h + 1).to_vec();
        for s in 0..states {
            for a in 0..actions {
                let q = reward.get(h, s, a) + expectation(mdp.transition_row(s, a), &next);
                tables.set_q(h, s, a, q);
            }
            tables.set_v(h, s, tables.q(h, s, policy.action(h, s)));
        }
    }
    Ok(tables)
}

/// Transition variance `[P f^2](s,a) - ([P f](s,a))^2`, clamped at zero.
pub fn variance(mdp: &LinearMixtureMdp, f: &[f64], s: usize, a: usize) -> Result<f64> {
    let dims = mdp.dims();
    if s >= dims.states || a >= dims.actions {
        return Err(RfxError::argument(format!("({s},{a}) out of range")));
    }
    if f.len() != dims.states {
        return Err(RfxError::argument(format!(
            "function has {} entries, expected {}",
            f.len(),
            dims.states
        )));
    }
    let row = mdp.transition_row(s, a);
    let mean = expectation(row, f);
    let second: f64 = row.iter().zip(f).map(|(p, x)| p * x * x).sum();
    Ok((second - mean * mean).max(0.0))
}

/// `E_{s ~ mu}[V*_1(s; r) - V^pi_1(s; r)]`.
pub fn expected_gap(mdp: &LinearMixtureMdp, reward: &RewardFunction, policy: &Policy) -> Result<f64> {
    Ok(gap_report(mdp, reward, policy)?.expected)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GapReport {
    pub expected: f64,
    /// `V*_1(s) - V^pi_1(s)` per initial state.
    pub per_state: Vec<f64>,
    pub optimal_v1: Vec<f64>,
    pub policy_v1: Vec<f64>,
}

pub fn gap_report(mdp: &LinearMixtureMdp, reward: &RewardFunction, policy: &Policy) -> Result<GapReport> {
    let (optimal, _) = optimal_values(mdp, reward)?;
    let evaluated = policy_value(mdp, reward, policy)?;
    let per_state: Vec<f64> = optimal
        .v_row(0)
        .iter()
        .zip(evaluated.v_row(0))
        .map(|(o, p)| o - p)
        .collect();
    let expected = expectation(mdp.init_dist(), &per_state);
    Ok(GapReport {
        expected,
        per_state,
        optimal_v1: optimal.v_row(0).to_vec(),
        policy_v1: evaluated.v_row(0).to_vec(),
    })
}
