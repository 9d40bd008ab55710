//! The three-state lower-bound family.
//!
//! From `S1` every action `a_j` (a sign vector of a packing set) moves to
//! one of two absorbing states. The parameter `theta_i = (sqrt 2, alpha x_i / sqrt d')`
//! tilts the split towards `S21` for actions aligned with `x_i`:
//! `P(S21 | S1, a_j) = 1/2 + alpha / (sqrt 2 d') <x_i, a_j>`.
//! `d' = d - 1` is used in every denominator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};
use crate::explore::ExplorerConfig;
use crate::hoeffding::{plan_phase, run_exploration};
use crate::bernstein::{plan_phase_plus, run_exploration_plus};
use crate::mdp::{Dims, LinearMixtureMdp, RewardFunction};
use crate::rng::{Domain, RunKey};

pub const S1: usize = 0;
pub const S21: usize = 1;
pub const S22: usize = 2;
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub dim: usize,
    pub gamma: f64,
    pub vectors: Vec<Vec<i8>>,
}

impl PackingSet {
    /// `ceil(exp(d' gamma^2 / 4)) - 1`
    pub fn target_size(dim: usize, gamma: f64) -> usize {
        ((dim as f64 * gamma * gamma / 4.0).exp().ceil() as usize).saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn inner(&self, i: usize, j: usize) -> i64 {
        inner(&self.vectors[i], &self.vectors[j])
    }

    /// Largest inner product over distinct pairs, if there are any.
    pub fn max_cross_inner(&self) -> Option<i64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.inner(i, j))
            .max()
    }

    /// Checks every distinct pair against `d' gamma`.
    pub fn verify(&self) -> Result<()> {
        let bound = self.dim as f64 * self.gamma;
        for (i, v) in self.vectors.iter().enumerate() {
            if v.len() != self.dim || v.iter().any(|&x| x != 1 && x != -1) {
                return Err(RfxError::Construction(format!("vector {i} is not a sign vector of length {}", self.dim)));
            }
        }
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let p = self.inner(i, j);
                if p as f64 > bound {
                    return Err(RfxError::Construction(format!(
                        "vectors {i} and {j} have inner product {p} > {bound}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn inner(x: &[i8], y: &[i8]) -> i64 {
    x.iter().zip(y).map(|(&a, &b)| a as i64 * b as i64).sum()
}

/// Rejection sampling: draw uniform sign vectors and keep each one whose
/// inner product with every kept vector is at most `d' gamma`, until the
/// target size is reached or `max_attempts` candidates have been drawn.
pub fn build_packing_set(dim: usize, gamma: f64, seed: u64, max_attempts: usize) -> Result<PackingSet> {
    if dim == 0 {
        return Err(RfxError::argument("packing dimension must be at least 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(RfxError::argument(format!("gamma must lie in (0,1), got {gamma}")));
    }
    let target = PackingSet::target_size(dim, gamma);
    let bound = dim as f64 * gamma;
    let mut rng = RunKey::new(seed).sequential(Domain::Packing, 0);
    let mut vectors: Vec<Vec<i8>> = Vec::with_capacity(target);
    let mut attempts = 0;
    while vectors.len() < target {
        if attempts == max_attempts {
            return Err(RfxError::Construction(format!(
                "packing set reached {} of {target} vectors after {max_attempts} draws",
                vectors.len()
            )));
        }
        attempts += 1;
        let candidate: Vec<i8> = (0..dim).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        if vectors.iter().all(|v| inner(v, &candidate) as f64 <= bound) {
            vectors.push(candidate);
        }
    }
    let set = PackingSet { dim, gamma, vectors };
    set.verify()?;
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct HardMdp {
    pub inner: LinearMixtureMdp,
    pub theta_index: usize,
    pub alpha_scale: f64,
}

/// Builds the instance whose truth is packing vector `theta_index`.
pub fn build_hard_mdp(pack: &PackingSet, theta_index: usize, alpha_scale: f64, horizon: usize) -> Result<HardMdp> {
    if pack.is_empty() {
        return Err(RfxError::argument("packing set is empty"));
    }
    if theta_index >= pack.len() {
        return Err(RfxError::argument(format!(
            "parameter index {theta_index} out of range ({} vectors)",
            pack.len()
        )));
    }
    if horizon == 0 {
        return Err(RfxError::argument("horizon must be at least 1"));
    }
    if !(alpha_scale >= 0.0) || alpha_scale / 2f64.sqrt() > 0.5 {
        return Err(RfxError::Construction(format!(
            "alpha = {alpha_scale} puts transition probabilities outside [0,1]"
        )));
    }
    let dp = pack.dim;
    let dim = dp + 1;
    let actions = pack.len();
    let states = 3;
    let mut features = vec![0.0; states * actions * states * dim];
    let idx = |s: usize, a: usize, next: usize, i: usize| ((s * actions + a) * states + next) * dim + i;
    let side = (2.0 * dp as f64).sqrt();
    for (a, v) in pack.vectors.iter().enumerate() {
        features[idx(S1, a, S21, 0)] = 2f64.sqrt() / 4.0;
        features[idx(S1, a, S22, 0)] = 2f64.sqrt() / 4.0;
        for (i, &x) in v.iter().enumerate() {
            features[idx(S1, a, S21, i + 1)] = x as f64 / side;
            features[idx(S1, a, S22, i + 1)] = -x as f64 / side;
        }
        features[idx(S21, a, S21, 0)] = 1.0 / 2f64.sqrt();
        features[idx(S22, a, S22, 0)] = 1.0 / 2f64.sqrt();
    }
    let mut theta = vec![2f64.sqrt()];
    theta.extend(
        pack.vectors[theta_index]
            .iter()
            .map(|&x| alpha_scale * x as f64 / (dp as f64).sqrt()),
    );
    let bound = (2.0 + alpha_scale * alpha_scale).sqrt();
    let dims = Dims {
        states,
        actions,
        horizon,
        dim,
    };
    let inner = LinearMixtureMdp::new(dims, bound, vec![1.0, 0.0, 0.0], theta, features)?;
    let report = inner.validate();
    if !report.is_valid() {
        return Err(RfxError::Construction(format!("hard instance is invalid:\n{report}")));
    }
    Ok(HardMdp {
        inner,
        theta_index,
        alpha_scale,
    })
}

/// Which absorbing state pays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardOrientation {
    /// Reward 1 on `S21`: the best first action is the one aligned with the truth.
    #[default]
    RewardS21,
    /// Reward 1 on `S22`, as the reduction is written.
    RewardS22,
}

impl RewardOrientation {
    pub fn paying_state(self) -> usize {
        match self {
            RewardOrientation::RewardS21 => S21,
            RewardOrientation::RewardS22 => S22,
        }
    }
}

/// Reward 1 in the paying absorbing state at every step, 0 elsewhere.
pub fn adversarial_reward(horizon: usize, actions: usize, orientation: RewardOrientation) -> Result<RewardFunction> {
    if horizon < 2 {
        return Err(RfxError::argument("the adversarial reward needs H >= 2"));
    }
    let paying = orientation.paying_state();
    RewardFunction::from_fn(horizon, 3, actions, |_, s, _| if s == paying { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hoeffding,
    Bernstein,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hoeffding => "hoeffding",
            Algorithm::Bernstein => "bernstein",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = RfxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoeffding" => Ok(Algorithm::Hoeffding),
            "bernstein" => Ok(Algorithm::Bernstein),
            other => Err(RfxError::argument(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationSettings {
    pub algorithm: Algorithm,
    pub alpha_scale: f64,
    pub horizon: usize,
    pub orientation: RewardOrientation,
    pub explorer: ExplorerConfig,
}

/// One `(seed, parameter index)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationCell {
    pub seed: u64,
    pub theta_index: usize,
    pub episodes: usize,
    pub first_action: usize,
    pub recovered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub episodes: usize,
    pub cells: Vec<IdentificationCell>,
    pub recovery_frequency: f64,
}

/// Run key of one identification cell.
pub fn cell_key(seed: u64, theta_index: usize) -> RunKey {
    RunKey::new(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ theta_index as u64)
}

/// Explores for `episodes` episodes, plans for the adversarial reward and
/// decodes the planner's first action at `S1` as the parameter index.
pub fn identify_once(
    pack: &PackingSet,
    theta_index: usize,
    episodes: usize,
    seed: u64,
    settings: &IdentificationSettings,
) -> Result<IdentificationCell> {
    let hard = build_hard_mdp(pack, theta_index, settings.alpha_scale, settings.horizon)?;
    let mdp = &hard.inner;
    let reward = adversarial_reward(settings.horizon, pack.len(), settings.orientation)?;
    let key = cell_key(seed, theta_index);
    let plan = match settings.algorithm {
        Algorithm::Hoeffding => {
            let (state, _) = run_exploration(mdp, episodes, &settings.explorer, key)?;
            plan_phase(mdp, &state, &reward)?
        }
        Algorithm::Bernstein => {
            let (state, _) = run_exploration_plus(mdp, episodes, &settings.explorer, key)?;
            plan_phase_plus(mdp, &state, &reward)?
        }
    };
    // Action j is packing vector j, so decoding is the identity map.
    let first_action = plan.policy.action(0, S1);
    Ok(IdentificationCell {
        seed,
        theta_index,
        episodes,
        first_action,
        recovered: first_action == theta_index,
    })
}

/// Runs every `(seed, index)` cell in parallel; cells are reported in
/// `(seed, index)` order.
pub fn identification_experiment(
    pack: &PackingSet,
    episodes: usize,
    seeds: &[u64],
    settings: &IdentificationSettings,
) -> Result<IdentificationReport> {
    use rayon::prelude::*;
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&seed| (0..pack.len()).map(move |i| (seed, i)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(seed, i)| identify_once(pack, i, episodes, seed, settings))
        .collect::<Result<Vec<_>>>()?;
    let recovered = cells.iter().filter(|c| c.recovered).count();
    let recovery_frequency = if cells.is_empty() {
        0.0
    } else {
        recovered as f64 / cells.len() as f64
    };
    Ok(IdentificationReport {
        episodes,
        cells,
        recovery_frequency,
    })
}
