//! Maximizing `||Sigma^{-1/2} M f||_2` over boxes `f in [0, c]^S`.
//!
//! The objective is convex in `f`, so its maximum over the box sits on a
//! vertex. Small state spaces are enumerated exactly. Larger ones use an
//! l1 surrogate: for a fixed sign vector `sigma`, `sigma^T G f` is linear in
//! `f` and is maximized coordinate-wise in closed form; alternating between
//! that step and `sigma <- sign(G f)` never decreases `||G f||_1`.
//! Since `||y||_1 / sqrt(d) <= ||y||_2 <= ||y||_1`, the surrogate optimum is
//! within `sqrt(d)` of the true one.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};

/// Largest state count handled by vertex enumeration (2^15 vertices).
pub const EXACT_STATE_CAP: usize = 15;
pub const DEFAULT_RESTARTS: usize = 8;
/// Largest feature dimension for which the ascent also scans every sign
/// vector (2^10 of them).
pub const SIGN_ENUMERATION_CAP: usize = 10;
/// Sigma^{-1} is recomputed from Sigma after this many rank-one updates.
pub const REFRESH_INTERVAL: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximizerMethod {
    ExactVertex,
    L1Ascent,
}

/// Which maximizer an explorer should call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximizerChoice {
    /// Exact enumeration up to [`EXACT_STATE_CAP`] states, ascent beyond.
    #[default]
    Auto,
    Exact,
    L1Ascent,
}

impl MaximizerChoice {
    pub fn resolve(self, states: usize) -> MaximizerMethod {
        match self {
            MaximizerChoice::Auto if states <= EXACT_STATE_CAP => MaximizerMethod::ExactVertex,
            MaximizerChoice::Auto => MaximizerMethod::L1Ascent,
            MaximizerChoice::Exact => MaximizerMethod::ExactVertex,
            MaximizerChoice::L1Ascent => MaximizerMethod::L1Ascent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximizerResult {
    pub f_star: Vec<f64>,
    /// `||inv_sqrt * M * f_star||_2`
    pub objective_l2: f64,
    pub method: MaximizerMethod,
}

impl MaximizerResult {
    /// The result for box `[0, c]` given the result for `[0, 1]`.
    pub fn scaled(&self, c: f64) -> MaximizerResult {
        MaximizerResult {
            f_star: self.f_star.iter().map(|x| x * c).collect(),
            objective_l2: self.objective_l2 * c,
            method: self.method,
        }
    }
}

fn check_box(box_hi: f64) -> Result<()> {
    if !(box_hi >= 0.0) || !box_hi.is_finite() {
        return Err(RfxError::argument(format!("box upper end must be >= 0, got {box_hi}")));
    }
    Ok(())
}

fn check_shapes(m: &DMatrix<f64>, inv_sqrt: &DMatrix<f64>) -> Result<()> {
    if inv_sqrt.nrows() != inv_sqrt.ncols() || inv_sqrt.ncols() != m.nrows() {
        return Err(RfxError::argument(format!(
            "inv_sqrt is {}x{} but M has {} rows",
            inv_sqrt.nrows(),
            inv_sqrt.ncols(),
            m.nrows()
        )));
    }
    Ok(())
}

fn vertex(mask: u32, n: usize, box_hi: f64) -> Vec<f64> {
    (0..n)
        .map(|j| if (mask >> j) & 1 == 1 { box_hi } else { 0.0 })
        .collect()
}

/// Exact maximizer by enumerating all `2^S` vertices of `[0, box_hi]^S`.
/// Vertex `mask` sets `f_j = box_hi` where bit `j` is set; the first
/// strict maximum in mask order wins.
pub fn maximize_exact(m: &DMatrix<f64>, inv_sqrt: &DMatrix<f64>, box_hi: f64) -> Result<MaximizerResult> {
    check_shapes(m, inv_sqrt)?;
    check_box(box_hi)?;
    let n = m.ncols();
    if n > EXACT_STATE_CAP {
        return Err(RfxError::argument(format!(
            "exact enumeration is capped at {EXACT_STATE_CAP} states (got {n}); use the l1 ascent maximizer"
        )));
    }
    let g = inv_sqrt * m;
    let d = g.nrows();
    let mut best_mask = 0u32;
    let mut best_sq = 0.0;
    let mut y = vec![0.0; d];
    for mask in 1u32..(1u32 << n) {
        y.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..n {
            if (mask >> j) & 1 == 1 {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi += g[(i, j)];
                }
            }
        }
        let sq: f64 = y.iter().map(|x| x * x).sum();
        if sq > best_sq {
            best_sq = sq;
            best_mask = mask;
        }
    }
    // Objective of the unit-box vertex, scaled: exact homogeneity.
    Ok(MaximizerResult {
        f_star: vertex(best_mask, n, box_hi),
        objective_l2: best_sq.sqrt() * box_hi,
        method: MaximizerMethod::ExactVertex,
    })
}

/// One ascent run from `sigma`. Returns the final `f` and the l1 objective
/// after each linear step.
pub(crate) fn l1_ascent_from(g: &DMatrix<f64>, box_hi: f64, mut sigma: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let (d, n) = g.shape();
    let mut trace = Vec::new();
    let mut f = vec![0.0; n];
    // The objective strictly increases until the sign vector repeats, and
    // there are 2^d sign vectors.
    let max_iter = 1usize << d.min(20);
    for _ in 0..=max_iter {
        for (j, fj) in f.iter_mut().enumerate() {
            let score: f64 = (0..d).map(|i| sigma[i] * g[(i, j)]).sum();
            *fj = if score > 0.0 { box_hi } else { 0.0 };
        }
        let y = g * DVector::from_column_slice(&f);
        let objective = y.iter().map(|x| x.abs()).sum::<f64>();
        let improved = trace.last().is_none_or(|&last| objective > last);
        trace.push(objective);
        let next: Vec<f64> = y
            .iter()
            .zip(&sigma)
            .map(|(&yi, &si)| if yi > 0.0 { 1.0 } else if yi < 0.0 { -1.0 } else { si })
            .collect();
        if next == sigma || !improved {
            break;
        }
        sigma = next;
    }
    (f, trace)
}

/// One 64-bit draw per 64 coordinates, so a restart costs two keystream
/// words for any `d <= 64`.
/// `max_sigma sum_j max(0, sigma^T g_j)` over all sign vectors, visited in
/// Gray-code order so each step updates the column scores in `O(S)`.
fn best_sign_vector(g: &DMatrix<f64>) -> Vec<f64> {
    let (d, n) = g.shape();
    let mut sigma = vec![1.0; d];
    let mut scores: Vec<f64> = (0..n).map(|j| g.column(j).sum()).collect();
    let value = |scores: &[f64]| scores.iter().map(|x| x.max(0.0)).sum::<f64>();
    let mut best = (value(&scores), sigma.clone());
    for step in 1u64..(1u64 << d) {
        let i = step.trailing_zeros() as usize;
        for (j, sc) in scores.iter_mut().enumerate() {
            *sc -= 2.0 * sigma[i] * g[(i, j)];
        }
        sigma[i] = -sigma[i];
        let v = value(&scores);
        if v > best.0 {
            best = (v, sigma.clone());
        }
    }
    best.1
}

fn random_signs<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut signs = Vec::with_capacity(d);
    while signs.len() < d {
        let bits: u64 = rng.random();
        let take = (d - signs.len()).min(64);
        signs.extend((0..take).map(|j| if (bits >> j) & 1 == 1 { 1.0 } else { -1.0 }));
    }
    signs
}

/// Sign-ascent on the l1 surrogate. Each of the `restarts` random sign
/// vectors is tried together with its negation, which makes `d = 1` exact.
/// For `d <=` [`SIGN_ENUMERATION_CAP`] one more start is the best of all
/// `2^d` sign vectors, so the surrogate is solved globally and the result
/// is within `sqrt(d)` of the exact maximum. Keeps the iterate with the
/// best l1 value and reports its l2 objective.
pub fn maximize_l1_ascent<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    inv_sqrt: &DMatrix<f64>,
    box_hi: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<MaximizerResult> {
    check_shapes(m, inv_sqrt)?;
    check_box(box_hi)?;
    if restarts == 0 {
        return Err(RfxError::argument("restarts must be at least 1"));
    }
    let g = inv_sqrt * m;
    let d = g.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let enumerated = (d <= SIGN_ENUMERATION_CAP).then(|| best_sign_vector(&g));
    for r in 0..restarts {
        let sigma = random_signs(d, rng);
        let flipped: Vec<f64> = sigma.iter().map(|x| -x).collect();
        let extra = if r == 0 { enumerated.clone() } else { None };
        // Ascend on the unit box; the sign pattern is scale-free.
        for start in [sigma, flipped].into_iter().chain(extra) {
            let (f, trace) = l1_ascent_from(&g, 1.0, start);
            let value = *trace.last().expect("at least one step");
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, f));
            }
        }
    }
    let (_, f_unit) = best.expect("restarts >= 1");
    let y = &g * DVector::from_column_slice(&f_unit);
    Ok(MaximizerResult {
        f_star: f_unit.iter().map(|x| x * box_hi).collect(),
        objective_l2: y.norm() * box_hi,
        method: MaximizerMethod::L1Ascent,
    })
}

/// `Sigma = lambda I + sum x x^T` together with a maintained inverse.
///
/// The inverse follows the Sherman-Morrison identity and is recomputed
/// from `Sigma` every [`REFRESH_INTERVAL`] updates. `Sigma^{-1/2}` is
/// computed on demand from a symmetric eigendecomposition and cached until
/// the next update.
#[derive(Debug, Clone)]
pub struct CovarianceView {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    inv_sqrt: OnceCell<DMatrix<f64>>,
    lambda: f64,
    update_count: usize,
}

impl CovarianceView {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(RfxError::argument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(CovarianceView {
            sigma: DMatrix::identity(dim, dim) * lambda,
            sigma_inv: DMatrix::identity(dim, dim) / lambda,
            inv_sqrt: OnceCell::new(),
            lambda,
            update_count: 0,
        })
    }

    /// Rebuilds a view from a stored `Sigma`, inverting it directly.
    pub fn from_sigma(sigma: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !sigma.is_square() {
            return Err(RfxError::argument("covariance must be square"));
        }
        let sigma_inv = invert_spd(&sigma)
            .ok_or_else(|| RfxError::argument("covariance is not positive definite"))?;
        Ok(CovarianceView {
            sigma,
            sigma_inv,
            inv_sqrt: OnceCell::new(),
            lambda,
            update_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Updates applied since the inverse was last recomputed directly.
    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        self.inv_sqrt.get_or_init(|| {
            let eig = self.sigma.clone().symmetric_eigen();
            let scales = eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&scales) * eig.eigenvectors.transpose()
        })
    }

    /// `||x||_{Sigma^{-1}}`
    pub fn inv_norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.sigma_inv * x)).max(0.0).sqrt()
    }

    /// `||x||_{Sigma}`
    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.sigma * x)).max(0.0).sqrt()
    }

    pub fn rank_one_update(&mut self, x: &DVector<f64>) {
        self.weighted_update(x, 1.0);
    }

    /// `Sigma += weight * x x^T`
    pub fn weighted_update(&mut self, x: &DVector<f64>, weight: f64) {
        assert!(weight > 0.0, "covariance weights must be positive");
        if x.iter().all(|&v| v == 0.0) {
            return;
        }
        self.sigma.ger(weight, x, x, 1.0);
        self.update_count += 1;
        if self.update_count >= REFRESH_INTERVAL {
            self.refresh();
        } else {
            let u = &self.sigma_inv * x;
            let denom = 1.0 + weight * x.dot(&u);
            assert!(denom > 0.0 && denom.is_finite(), "covariance update lost definiteness");
            self.sigma_inv.ger(-weight / denom, &u, &u, 1.0);
        }
        self.inv_sqrt = OnceCell::new();
    }

    /// Recomputes `Sigma^{-1}` from `Sigma`.
    pub fn refresh(&mut self) {
        self.sigma_inv = invert_spd(&self.sigma).expect("covariance stays positive definite");
        self.update_count = 0;
        self.inv_sqrt = OnceCell::new();
    }

    /// `Sigma^{-1} b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.sigma_inv * b
    }
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}
