//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rfx_core::mdp::{FeatureModel, LinearMixtureMdp, Policy, RewardFunction};

/// `P(.|s,a)` straight from the raw features, without the model's cache.
pub fn raw_transition(mdp: &LinearMixtureMdp, s: usize, a: usize) -> Vec<f64> {
    let dims = mdp.dims();
    let theta = mdp.theta_star();
    (0..dims.states)
        .map(|next| (0..dims.dim).map(|i| mdp.feature(s, a, next, i) * theta[i]).sum())
        .collect()
}

/// Expected total reward of `policy` from `s` at step `h`, by expanding
/// every trajectory.
pub fn trajectory_value(
    mdp: &LinearMixtureMdp,
    reward: &RewardFunction,
    policy: &Policy,
    h: usize,
    s: usize,
) -> f64 {
    let horizon = mdp.dims().horizon;
    if h == horizon {
        return 0.0;
    }
    let a = policy.action(h, s);
    let row = raw_transition(mdp, s, a);
    reward.get(h, s, a)
        + row
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(next, p)| p * trajectory_value(mdp, reward, policy, h + 1, next))
            .sum::<f64>()
}

/// Every deterministic Markov policy of a tiny model.
pub fn all_policies(horizon: usize, states: usize, actions: usize) -> Vec<Policy> {
    let cells = horizon * states;
    let total = actions.pow(cells as u32);
    (0..total)
        .map(|mut code| {
            let acts = (0..cells)
                .map(|_| {
                    let a = code % actions;
                    code /= actions;
                    a
                })
                .collect();
            Policy::new(horizon, states, acts).unwrap()
        })
        .collect()
}

/// Vertex loop over `{0, box_hi}^S`, keeping the first strict maximum of
/// `||inv_sqrt * M * f||_2`.
pub fn brute_force_vertex(m: &DMatrix<f64>, inv_sqrt: &DMatrix<f64>, box_hi: f64) -> (Vec<f64>, f64) {
    let states = m.ncols();
    let transformed = inv_sqrt * m;
    let mut best = (vec![0.0; states], 0.0);
    for mask in 0u64..(1u64 << states) {
        let f: Vec<f64> = (0..states).map(|j| if mask >> j & 1 == 1 { box_hi } else { 0.0 }).collect();
        let y = &transformed * DVector::from_column_slice(&f);
        let val = y.norm();
        if val > best.1 {
            best = (f, val);
        }
    }
    best
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng>(d: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    let q = g.qr().q();
    let eig = DVector::from_fn(d, |_, _| lo + (hi - lo) * rng.random::<f64>());
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Inverse by LU, independent of the library's maintained inverse.
pub fn lu_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}
