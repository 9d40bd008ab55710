//! Finite linear mixture MDPs.
//!
//! The transition kernel is a linear combination of `d` signed basis
//! measures, `P(s'|s,a) = <phi(s'|s,a), theta*>`. For every `(s,a)` the
//! features are cached as a `d x S` matrix `M_{s,a}` whose columns are
//! `phi(s'|s,a)`, so the feature aggregate of a value vector is a single
//! matrix-vector product:
//!
//! ```text
//!   psi_V(s,a) = sum_{s'} phi(s'|s,a) V(s') = M_{s,a} V
//!   [P V](s,a) = <psi_V(s,a), theta*>
//! ```

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};
use crate::rng::{Domain, RunKey};

pub const MDP_SCHEMA_VERSION: u32 = 1;

/// Row-sum tolerance of the model invariant.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Entries of `<phi, theta*>` may dip this far below zero (or above one).
pub const PROB_RANGE_TOL: f64 = 1e-12;
/// Slack on `||psi_V||_2 <= 1`.
pub const PSI_NORM_TOL: f64 = 1e-9;
/// Slack on `||theta*||_2 <= B`.
pub const PARAM_NORM_TOL: f64 = 1e-12;
/// Initial distribution must sum to one within this.
pub const INIT_SUM_TOL: f64 = 1e-12;
/// Negative probabilities above `-CLAMP_TOL` are treated as rounding noise.
pub const CLAMP_TOL: f64 = 1e-9;
/// A transition row whose sum is further than this from one cannot be sampled.
pub const SAMPLING_TOL: f64 = 1e-6;

/// Largest state count for which `validate` checks `||psi_V||` on every
/// vertex of `[0,1]^S`; larger models use a probe set.
const EXHAUSTIVE_PROBE_STATES: usize = 12;
const RANDOM_PROBES: usize = 64;
const GENERATION_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub dim: usize,
}

/// Known structure of a linear mixture model: sizes and feature maps.
pub trait FeatureModel {
    fn dims(&self) -> Dims;

    /// Known upper bound `B` on `||theta*||`.
    fn param_bound(&self) -> f64;

    /// The `d x S` matrix `M_{s,a}` with columns `phi(s'|s,a)`.
    fn psi_map(&self, s: usize, a: usize) -> &DMatrix<f64>;

    fn psi(&self, v: &DVector<f64>, s: usize, a: usize) -> DVector<f64> {
        self.psi_map(s, a) * v
    }
}

/// What an exploring agent may touch: the features and a transition
/// sampler. There is no reward and no access to `theta*`.
pub trait Environment: FeatureModel {
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize;

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize>;
}

#[derive(Debug, Clone)]
pub struct LinearMixtureMdp {
    dims: Dims,
    param_bound: f64,
    init_dist: Vec<f64>,
    theta_star: DVector<f64>,
    /// Flat `S x A x S x d`, index `((s*A + a)*S + s')*d + i`.
    features: Vec<f64>,
    psi_maps: Vec<DMatrix<f64>>,
    /// Flat `S x A x S`, `<phi(s'|s,a), theta*>` as computed, unclamped.
    transitions: Vec<f64>,
}

impl LinearMixtureMdp {
    /// Builds a model from raw parts. Only shapes are checked here; the
    /// model invariants are reported by [`LinearMixtureMdp::validate`].
    pub fn new(
        dims: Dims,
        param_bound: f64,
        init_dist: Vec<f64>,
        theta_star: Vec<f64>,
        features: Vec<f64>,
    ) -> Result<Self> {
        let Dims {
            states,
            actions,
            horizon,
            dim,
        } = dims;
        if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
            return Err(RfxError::argument(format!(
                "all sizes must be positive, got S={states} A={actions} H={horizon} d={dim}"
            )));
        }
        if init_dist.len() != states {
            return Err(RfxError::argument(format!(
                "initial distribution has {} entries, expected {states}",
                init_dist.len()
            )));
        }
        if theta_star.len() != dim {
            return Err(RfxError::argument(format!(
                "theta* has {} entries, expected {dim}",
                theta_star.len()
            )));
        }
        let expected = states * actions * states * dim;
        if features.len() != expected {
            return Err(RfxError::argument(format!(
                "feature tensor has {} entries, expected {expected}",
                features.len()
            )));
        }

        let theta_star = DVector::from_vec(theta_star);
        let mut psi_maps = Vec::with_capacity(states * actions);
        let mut transitions = Vec::with_capacity(states * actions * states);
        for s in 0..states {
            for a in 0..actions {
                let base = (s * actions + a) * states * dim;
                let m = DMatrix::from_fn(dim, states, |i, next| features[base + next * dim + i]);
                for next in 0..states {
                    transitions.push(m.column(next).dot(&theta_star));
                }
                psi_maps.push(m);
            }
        }

        Ok(LinearMixtureMdp {
            dims,
            param_bound,
            init_dist,
            theta_star,
            features,
            psi_maps,
            transitions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.dims.states
    }

    pub fn num_actions(&self) -> usize {
        self.dims.actions
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    pub fn dim(&self) -> usize {
        self.dims.dim
    }

    pub fn param_bound(&self) -> f64 {
        self.param_bound
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, s: usize, a: usize, next: usize, i: usize) -> f64 {
        let Dims {
            states,
            actions,
            dim,
            ..
        } = self.dims;
        self.features[((s * actions + a) * states + next) * dim + i]
    }

    /// Exact transition row `<phi(.|s,a), theta*>`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.dims.states;
        let start = (s * self.dims.actions + a) * n;
        &self.transitions[start..start + n]
    }

    /// Same structure with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(RfxError::argument("horizon must be positive"));
        }
        let mut out = self.clone();
        out.dims.horizon = horizon;
        Ok(out)
    }

    /// Same features with `theta*` replaced.
    pub fn with_theta_star(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(
            self.dims,
            self.param_bound,
            self.init_dist.clone(),
            theta,
            self.features.clone(),
        )
    }

    fn check_state_action(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.dims.states {
            return Err(RfxError::argument(format!(
                "state {s} out of range (S={})",
                self.dims.states
            )));
        }
        if a >= self.dims.actions {
            return Err(RfxError::argument(format!(
                "action {a} out of range (A={})",
                self.dims.actions
            )));
        }
        Ok(())
    }

    /// `psi_V(s,a) = sum_{s'} phi(s'|s,a) V(s')`.
    pub fn psi_checked(&self, v: &[f64], s: usize, a: usize) -> Result<DVector<f64>> {
        self.check_state_action(s, a)?;
        if v.len() != self.dims.states {
            return Err(RfxError::argument(format!(
                "value vector has {} entries, expected {}",
                v.len(),
                self.dims.states
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RfxError::argument("value vector has non-finite entries"));
        }
        Ok(&self.psi_maps[s * self.dims.actions + a] * DVector::from_column_slice(v))
    }

    /// Draws `s' ~ P(.|s,a)`. Slightly negative entries (rounding of signed
    /// measures) are clamped to zero and the row renormalized.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize> {
        self.check_state_action(s, a)?;
        let row = self.transition_row(s, a);
        let mut total = 0.0;
        for (next, &p) in row.iter().enumerate() {
            if !p.is_finite() || p < -CLAMP_TOL {
                return Err(RfxError::model(format!(
                    "transition ({s},{a})->{next} has probability {p}"
                )));
            }
            total += p.max(0.0);
        }
        if (total - 1.0).abs() > SAMPLING_TOL {
            return Err(RfxError::model(format!(
                "transition row ({s},{a}) sums to {total}"
            )));
        }
        Ok(sample_index(row.iter().map(|p| p.max(0.0)), total, rng))
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.init_dist.iter().map(|p| p.max(0.0)).sum();
        sample_index(self.init_dist.iter().map(|p| p.max(0.0)), total, rng)
    }

    /// Lists every violated model invariant; an empty report means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let Dims {
            states, actions, ..
        } = self.dims;

        if let Some(pos) = self.features.iter().position(|x| !x.is_finite()) {
            let count = self.features.iter().filter(|x| !x.is_finite()).count();
            let dim = self.dims.dim;
            let (i, rest) = (pos % dim, pos / dim);
            let (next, rest) = (rest % states, rest / states);
            let (a, s) = (rest % actions, rest / actions);
            report.push(
                ViolationKind::NonFinite,
                format!("features[{s}][{a}][{next}][{i}] ({count} non-finite entries)"),
                f64::NAN,
            );
        }
        for (i, x) in self.theta_star.iter().enumerate() {
            if !x.is_finite() {
                report.push(ViolationKind::NonFinite, format!("theta_star[{i}]"), *x);
            }
        }
        for (i, x) in self.init_dist.iter().enumerate() {
            if !x.is_finite() {
                report.push(ViolationKind::NonFinite, format!("mu[{i}]"), *x);
            }
        }
        if !self.param_bound.is_finite() || self.param_bound <= 0.0 {
            report.push(
                ViolationKind::ParamNorm,
                "B".to_string(),
                self.param_bound,
            );
        }
        if !report.is_valid() {
            return report;
        }

        for s in 0..states {
            for a in 0..actions {
                let row = self.transition_row(s, a);
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    report.push(
                        ViolationKind::RowSum,
                        format!("row ({s},{a})"),
                        (sum - 1.0).abs(),
                    );
                }
                for (next, &p) in row.iter().enumerate() {
                    if p < -PROB_RANGE_TOL {
                        report.push(
                            ViolationKind::ProbabilityRange,
                            format!("P({next}|{s},{a})"),
                            -p,
                        );
                    } else if p > 1.0 + PROB_RANGE_TOL {
                        report.push(
                            ViolationKind::ProbabilityRange,
                            format!("P({next}|{s},{a})"),
                            p - 1.0,
                        );
                    }
                }
                let worst = max_psi_norm(&self.psi_maps[s * actions + a], &mut RunKey::new(0)
                    .sequential(Domain::Auxiliary, (s * actions + a) as u64));
                if worst.norm > 1.0 + PSI_NORM_TOL {
                    report.push(
                        ViolationKind::PsiNorm,
                        format!("psi_V({s},{a}) with V={:?}", worst.probe),
                        worst.norm - 1.0,
                    );
                }
            }
        }

        let norm = self.theta_star.norm();
        if norm > self.param_bound + PARAM_NORM_TOL {
            report.push(
                ViolationKind::ParamNorm,
                "||theta*||_2 vs B".to_string(),
                norm - self.param_bound,
            );
        }

        let mu_sum: f64 = self.init_dist.iter().sum();
        if (mu_sum - 1.0).abs() > INIT_SUM_TOL {
            report.push(
                ViolationKind::InitialDistribution,
                "sum(mu)".to_string(),
                (mu_sum - 1.0).abs(),
            );
        }
        for (i, &p) in self.init_dist.iter().enumerate() {
            if p < 0.0 {
                report.push(ViolationKind::InitialDistribution, format!("mu[{i}]"), -p);
            }
        }
        report
    }

    /// Fails with a model error unless every invariant holds.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(RfxError::model(report.to_string()))
        }
    }

    pub fn to_document(&self) -> MdpDocument {
        let Dims {
            states,
            actions,
            horizon,
            dim,
        } = self.dims;
        let features = (0..states)
            .map(|s| {
                (0..actions)
                    .map(|a| {
                        (0..states)
                            .map(|next| (0..dim).map(|i| self.feature(s, a, next, i)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MdpDocument {
            schema_version: MDP_SCHEMA_VERSION,
            states,
            actions,
            horizon,
            dim,
            param_bound: self.param_bound,
            mu: self.init_dist.clone(),
            theta_star: self.theta_star.iter().copied().collect(),
            features,
        }
    }

    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        if doc.schema_version != MDP_SCHEMA_VERSION {
            return Err(RfxError::Format(format!(
                "unsupported MDP schema version {}",
                doc.schema_version
            )));
        }
        let dims = Dims {
            states: doc.states,
            actions: doc.actions,
            horizon: doc.horizon,
            dim: doc.dim,
        };
        let mut flat = Vec::with_capacity(dims.states * dims.actions * dims.states * dims.dim);
        if doc.features.len() != dims.states {
            return Err(RfxError::argument("features: outer dimension must be S"));
        }
        for (s, per_action) in doc.features.iter().enumerate() {
            if per_action.len() != dims.actions {
                return Err(RfxError::argument(format!("features[{s}] must have A entries")));
            }
            for (a, per_next) in per_action.iter().enumerate() {
                if per_next.len() != dims.states {
                    return Err(RfxError::argument(format!(
                        "features[{s}][{a}] must have S entries"
                    )));
                }
                for (next, phi) in per_next.iter().enumerate() {
                    if phi.len() != dims.dim {
                        return Err(RfxError::argument(format!(
                            "features[{s}][{a}][{next}] must have d entries"
                        )));
                    }
                    flat.extend_from_slice(phi);
                }
            }
        }
        Self::new(dims, doc.param_bound, doc.mu, doc.theta_star, flat)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument =
            serde_json::from_str(text).map_err(|e| RfxError::Format(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| RfxError::io(path.display().to_string(), e))
    }

    /// Loads and validates a model file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RfxError::io(path.display().to_string(), e))?;
        let mdp = Self::from_json(&text)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }
}

impl FeatureModel for LinearMixtureMdp {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn param_bound(&self) -> f64 {
        self.param_bound
    }

    fn psi_map(&self, s: usize, a: usize) -> &DMatrix<f64> {
        &self.psi_maps[s * self.dims.actions + a]
    }
}

impl Environment for LinearMixtureMdp {
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_initial_state(rng)
    }

    fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize> {
        self.sample_transition(s, a, rng)
    }
}

fn sample_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, total: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

struct ProbeResult {
    norm: f64,
    probe: Vec<u8>,
}

/// Largest `||M f||_2` over `f` in `[0,1]^S`. The norm is convex so the
/// maximum sits on a vertex; small models are checked on all of them,
/// larger ones on indicators, their complements and random vertices.
fn max_psi_norm<R: Rng + ?Sized>(m: &DMatrix<f64>, rng: &mut R) -> ProbeResult {
    let n = m.ncols();
    let eval = |bits: &[u8]| {
        let mut y = DVector::zeros(m.nrows());
        for (j, &b) in bits.iter().enumerate() {
            if b == 1 {
                y += m.column(j);
            }
        }
        y.norm()
    };
    let mut best = ProbeResult {
        norm: 0.0,
        probe: vec![0; n],
    };
    let mut consider = |bits: Vec<u8>| {
        let v = eval(&bits);
        if v > best.norm {
            best = ProbeResult { norm: v, probe: bits };
        }
    };
    if n <= EXHAUSTIVE_PROBE_STATES {
        for mask in 1u32..(1 << n) {
            consider((0..n).map(|j| ((mask >> j) & 1) as u8).collect());
        }
    } else {
        consider(vec![1; n]);
        for j in 0..n {
            let mut e = vec![0; n];
            e[j] = 1;
            consider(e);
            let mut c = vec![1; n];
            c[j] = 0;
            consider(c);
        }
        for _ in 0..RANDOM_PROBES {
            consider((0..n).map(|_| rng.random_range(0..2u8)).collect());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    RowSum,
    ProbabilityRange,
    ParamNorm,
    PsiNorm,
    InitialDistribution,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, location: String, magnitude: f64) {
        self.violations.push(Violation {
            kind,
            location,
            magnitude,
        });
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(8) {
            write!(f, "; {:?} at {} (magnitude {:.3e})", v.kind, v.location, v.magnitude)?;
        }
        Ok(())
    }
}

/// On-disk model document. Reals are written in shortest round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub schema_version: u32,
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "B")]
    pub param_bound: f64,
    pub mu: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub features: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Deterministic reward `r_h(s,a)` in `[0,1]`, stored `H x S x A`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    horizon: usize,
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl RewardFunction {
    pub fn new(horizon: usize, states: usize, actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != horizon * states * actions {
            return Err(RfxError::argument(format!(
                "reward has {} entries, expected H*S*A = {}",
                values.len(),
                horizon * states * actions
            )));
        }
        if let Some(x) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(RfxError::argument(format!("reward entry {x} outside [0,1]")));
        }
        Ok(RewardFunction {
            horizon,
            states,
            actions,
            values,
        })
    }

    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        RewardFunction {
            horizon,
            states,
            actions,
            values: vec![0.0; horizon * states * actions],
        }
    }

    pub fn from_fn(
        horizon: usize,
        states: usize,
        actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(horizon * states * actions);
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    values.push(f(h, s, a));
                }
            }
        }
        Self::new(horizon, states, actions, values)
    }

    /// Uniform `[0,1]` rewards.
    pub fn random<R: Rng + ?Sized>(horizon: usize, states: usize, actions: usize, rng: &mut R) -> Self {
        let values = (0..horizon * states * actions).map(|_| rng.random::<f64>()).collect();
        RewardFunction {
            horizon,
            states,
            actions,
            values,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }

    /// Zero-based step `h` (step `h+1` in one-based notation).
    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.states + s) * self.actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn check_shape(&self, dims: Dims) -> Result<()> {
        if self.horizon != dims.horizon || self.states != dims.states || self.actions != dims.actions {
            return Err(RfxError::argument(format!(
                "reward shape {}x{}x{} does not match H x S x A = {}x{}x{}",
                self.horizon, self.states, self.actions, dims.horizon, dims.states, dims.actions
            )));
        }
        Ok(())
    }
}

/// Deterministic time-indexed policy, stored `H x S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    horizon: usize,
    states: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(horizon: usize, states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * states {
            return Err(RfxError::argument(format!(
                "policy has {} entries, expected H*S = {}",
                actions.len(),
                horizon * states
            )));
        }
        Ok(Policy {
            horizon,
            states,
            actions,
        })
    }

    pub fn constant(horizon: usize, states: usize, action: usize) -> Self {
        Policy {
            horizon,
            states,
            actions: vec![action; horizon * states],
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.states + s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn check_against(&self, dims: Dims) -> Result<()> {
        if self.horizon != dims.horizon || self.states != dims.states {
            return Err(RfxError::argument(format!(
                "policy shape {}x{} does not match H x S = {}x{}",
                self.horizon, self.states, dims.horizon, dims.states
            )));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= dims.actions) {
            return Err(RfxError::argument(format!(
                "policy action {a} out of range (A={})",
                dims.actions
            )));
        }
        Ok(())
    }
}

/// Generates a valid random instance.
///
/// Construction, per `(s,a)`:
/// - a baseline probability row `P0` (flat Dirichlet),
/// - `d-1` zero-mass signed measures `m_i(s') = P0(s') (g_i(s') - E_{P0} g_i)`
///   with `g_i` uniform on `[-1,1]`, scaled by `c = sqrt(3 / (4(d-1)))`,
///
/// and `theta = (1, t_2, .., t_d)` with the tail scaled so that rows stay
/// nonnegative and `||theta|| <= B`. Every `V` in `[0,1]^S` then satisfies
/// `||psi_V||^2 <= p^2 + 3 min(p, 1-p)^2 <= 1` with `p = P0 V`. Finally the
/// feature space is rotated by a random orthogonal matrix, which preserves
/// all norms. `B < 1` is infeasible since `<psi_1, theta*> = 1` forces
/// `||theta*|| >= 1`; at `B = 1` the tail is zero.
pub fn random_mdp(
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    param_bound: f64,
    seed: u64,
) -> Result<LinearMixtureMdp> {
    if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
        return Err(RfxError::argument("S, A, H, d must all be at least 1"));
    }
    if !(param_bound > 0.0) || !param_bound.is_finite() {
        return Err(RfxError::argument(format!("B must be positive, got {param_bound}")));
    }
    if param_bound < 1.0 - PARAM_NORM_TOL {
        return Err(RfxError::Generation(format!(
            "no linear mixture model with ||psi_V|| <= 1 has ||theta*|| <= {param_bound} < 1"
        )));
    }
    let key = RunKey::new(seed);
    let mut last = ValidationReport::default();
    for attempt in 0..GENERATION_ATTEMPTS {
        let mut rng = key.sequential(Domain::Generator, attempt);
        let mdp = draw_instance(states, actions, horizon, dim, param_bound, &mut rng)?;
        let report = mdp.validate();
        if report.is_valid() {
            return Ok(mdp);
        }
        last = report;
    }
    Err(RfxError::Generation(format!(
        "no valid instance after {GENERATION_ATTEMPTS} attempts: {last}"
    )))
}

fn draw_instance<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    param_bound: f64,
    rng: &mut R,
) -> Result<LinearMixtureMdp> {
    let scale = if dim > 1 {
        (3.0 / (4.0 * (dim - 1) as f64)).sqrt()
    } else {
        0.0
    };

    // Unrotated features, [s][a][s'][i].
    let mut raw = vec![0.0; states * actions * states * dim];
    for s in 0..states {
        for a in 0..actions {
            let base = (s * actions + a) * states * dim;
            let p0 = dirichlet_row(states, rng);
            for (next, &p) in p0.iter().enumerate() {
                raw[base + next * dim] = p;
            }
            for i in 1..dim {
                let g: Vec<f64> = (0..states).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let mean: f64 = p0.iter().zip(&g).map(|(p, g)| p * g).sum();
                for next in 0..states {
                    raw[base + next * dim + i] = scale * p0[next] * (g[next] - mean);
                }
            }
        }
    }

    let mut theta = vec![0.0; dim];
    theta[0] = 1.0;
    let tail_budget = (param_bound * param_bound - 1.0).max(0.0).sqrt();
    if dim > 1 && tail_budget > 0.0 {
        let tail: Vec<f64> = (1..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let l1: f64 = tail.iter().map(|t| t.abs()).sum();
        let l2: f64 = tail.iter().map(|t| t * t).sum::<f64>().sqrt();
        if l1 > 0.0 {
            // Rows are P0 (1 + sum_i t_i c (g_i - mean)), and |g_i - mean| <= 2.
            let by_sign = 0.45 / (scale * l1);
            let by_norm = 0.999 * tail_budget / l2;
            let t = by_sign.min(by_norm);
            for (slot, x) in theta[1..].iter_mut().zip(&tail) {
                *slot = t * x;
            }
        }
    }

    let rotation = random_rotation(dim, rng);
    let theta_rot = &rotation * DVector::from_vec(theta);
    let mut features = vec![0.0; raw.len()];
    for chunk in 0..states * actions * states {
        let phi = DVector::from_column_slice(&raw[chunk * dim..(chunk + 1) * dim]);
        let rotated = &rotation * phi;
        features[chunk * dim..(chunk + 1) * dim].copy_from_slice(rotated.as_slice());
    }

    let mu = dirichlet_row(states, rng);
    LinearMixtureMdp::new(
        Dims {
            states,
            actions,
            horizon,
            dim,
        },
        param_bound,
        mu,
        theta_rot.iter().copied().collect(),
        features,
    )
}

fn dirichlet_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Haar-ish random orthogonal matrix via QR of a Gaussian matrix; the
/// identity for `d = 1`.
fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    if dim == 1 {
        return DMatrix::identity(1, 1);
    }
    let gauss = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = gauss.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// S=3, A=1, d=2 model with an explicit tensor.
    fn explicit_model() -> LinearMixtureMdp {
        // P(.|s) is the average of two rows, cycled by state.
        let base = [0.2, 0.3, 0.5];
        let other = [0.6, 0.4, 0.0];
        let mut features = Vec::new();
        for s in 0..3 {
            for next in 0..3 {
                features.push(base[(next + s) % 3] / 2.0_f64.sqrt());
                features.push(other[(next + s) % 3] / 2.0_f64.sqrt());
            }
        }
        let t = 1.0 / 2.0_f64.sqrt();
        LinearMixtureMdp::new(
            Dims {
                states: 3,
                actions: 1,
                horizon: 2,
                dim: 2,
            },
            1.0,
            vec![1.0, 0.0, 0.0],
            vec![t, t],
            features,
        )
        .unwrap()
    }

    #[test]
    fn psi_of_zero_is_zero() {
        let mdp = random_mdp(4, 2, 3, 3, 1.5, 1).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let psi = mdp.psi_checked(&[0.0; 4], s, a).unwrap();
                assert!(psi.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn psi_of_one_recovers_row_sum() {
        let mdp = random_mdp(5, 3, 2, 4, 2.0, 9).unwrap();
        for s in 0..5 {
            for a in 0..3 {
                let psi = mdp.psi_checked(&[1.0; 5], s, a).unwrap();
                assert!((psi.dot(mdp.theta_star()) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psi_matches_triple_loop() {
        let mdp = explicit_model();
        let v = [0.3, -1.2, 2.5];
        for s in 0..3 {
            let psi = mdp.psi_checked(&v, s, 0).unwrap();
            for i in 0..2 {
                let mut expected = 0.0;
                for (next, vn) in v.iter().enumerate() {
                    expected += mdp.feature(s, 0, next, i) * vn;
                }
                assert!((psi[i] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn psi_rejects_bad_indices() {
        let mdp = explicit_model();
        assert!(matches!(mdp.psi_checked(&[0.0; 3], 3, 0), Err(RfxError::Argument(_))));
        assert!(matches!(mdp.psi_checked(&[0.0; 3], 0, 1), Err(RfxError::Argument(_))));
        assert!(matches!(mdp.psi_checked(&[0.0; 2], 0, 0), Err(RfxError::Argument(_))));
    }

    #[test]
    fn explicit_model_is_valid() {
        let report = explicit_model().validate();
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn deterministic_row_always_samples_its_target() {
        let dims = Dims {
            states: 3,
            actions: 1,
            horizon: 1,
            dim: 1,
        };
        let mut features = vec![0.0; 9];
        for s in 0..3 {
            features[s * 3] = 1.0;
        }
        let mdp = LinearMixtureMdp::new(dims, 1.0, vec![1.0, 0.0, 0.0], vec![1.0], features).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(mdp.sample_transition(2, 0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn sampling_refuses_non_distribution_rows() {
        let mdp = random_mdp(3, 2, 2, 2, 1.0, 4).unwrap();
        let doubled: Vec<f64> = mdp.theta_star().iter().map(|x| 2.0 * x).collect();
        let broken = mdp.with_theta_star(doubled).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(broken.sample_transition(0, 0, &mut rng), Err(RfxError::Model(_))));
    }

    #[test]
    fn clamps_tiny_negative_probabilities() {
        let dims = Dims {
            states: 2,
            actions: 1,
            horizon: 1,
            dim: 1,
        };
        let features = vec![-5e-10, 1.0 + 5e-10, -5e-10, 1.0 + 5e-10];
        let mdp = LinearMixtureMdp::new(dims, 1.0, vec![0.5, 0.5], vec![1.0], features).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            assert_eq!(mdp.sample_transition(0, 0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn scaled_theta_reports_row_sums() {
        let mdp = random_mdp(4, 3, 2, 3, 1.0, 2).unwrap();
        let doubled: Vec<f64> = mdp.theta_star().iter().map(|x| 2.0 * x).collect();
        let report = mdp.with_theta_star(doubled).unwrap().validate();
        let row_sums: Vec<_> = report.of_kind(ViolationKind::RowSum).collect();
        assert_eq!(row_sums.len(), 12);
        for v in row_sums {
            assert!((v.magnitude - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nan_feature_is_reported() {
        let mdp = random_mdp(3, 2, 2, 2, 1.0, 5).unwrap();
        let mut features = mdp.features().to_vec();
        features[7] = f64::NAN;
        let broken = LinearMixtureMdp::new(
            mdp.dims(),
            1.0,
            mdp.init_dist().to_vec(),
            mdp.theta_star().iter().copied().collect(),
            features,
        )
        .unwrap();
        let report = broken.validate();
        assert_eq!(report.of_kind(ViolationKind::NonFinite).count(), 1);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = random_mdp(6, 4, 5, 4, 1.0, 42).unwrap();
        let b = random_mdp(6, 4, 5, 4, 1.0, 42).unwrap();
        assert_eq!(
            a.features().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.features().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.theta_star(), b.theta_star());
        assert_eq!(a.init_dist(), b.init_dist());
        let c = random_mdp(6, 4, 5, 4, 1.0, 43).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn generated_instances_validate() {
        for seed in 0..100 {
            let d = 1 + (seed as usize % 5);
            let b = if seed % 2 == 0 { 1.0 } else { 3.0 };
            let mdp = random_mdp(2 + seed as usize % 6, 1 + seed as usize % 3, 3, d, b, seed).unwrap();
            let report = mdp.validate();
            assert!(report.is_valid(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn one_dimensional_features_are_the_rows() {
        let mdp = random_mdp(4, 2, 3, 1, 1.0, 17).unwrap();
        assert_eq!(mdp.theta_star().as_slice(), &[1.0]);
        for s in 0..4 {
            for a in 0..2 {
                for next in 0..4 {
                    assert_eq!(mdp.feature(s, a, next, 0), mdp.transition_row(s, a)[next]);
                }
            }
        }
    }

    #[test]
    fn infeasible_bound_is_a_generation_error() {
        assert!(matches!(random_mdp(3, 2, 2, 2, 0.5, 0), Err(RfxError::Generation(_))));
        assert!(matches!(random_mdp(0, 2, 2, 2, 1.0, 0), Err(RfxError::Argument(_))));
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let mdp = random_mdp(4, 3, 3, 3, 2.0, 8).unwrap();
        let back = LinearMixtureMdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(mdp.features(), back.features());
        assert_eq!(mdp.theta_star(), back.theta_star());
        assert_eq!(mdp.init_dist(), back.init_dist());
        assert_eq!(mdp.dims(), back.dims());
    }

    #[test]
    fn reward_and_policy_shapes_are_checked() {
        assert!(RewardFunction::new(2, 2, 2, vec![0.5; 7]).is_err());
        assert!(RewardFunction::new(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(Policy::new(2, 3, vec![0; 5]).is_err());
        let dims = Dims {
            states: 3,
            actions: 2,
            horizon: 2,
            dim: 1,
        };
        let p = Policy::new(2, 3, vec![0, 1, 2, 0, 0, 0]).unwrap();
        assert!(p.check_against(dims).is_err());
    }
}
