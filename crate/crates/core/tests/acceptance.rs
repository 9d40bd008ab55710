//! The twelve acceptance criteria, run in order. Each prints one PASS/FAIL
//! line to stderr; the test fails at the end if any criterion did.

// Writing to the stderr handle directly keeps the lines visible under
// libtest's output capture.
#![allow(clippy::explicit_write)]

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;
use rfx_core::bernstein::{run_exploration_plus, BernsteinExplorer};
use rfx_core::explore::{ExplorerConfig, RewardVariant};
use rfx_core::hard::{
    build_hard_mdp, build_packing_set, identification_experiment, Algorithm, IdentificationSettings, PackingSet,
    RewardOrientation,
};
use rfx_core::harness::{evaluation_reward, median, run_cell, BenchmarkSpec, RunConfig};
use rfx_core::maximizer::{maximize_exact, maximize_l1_ascent, CovarianceView, MaximizerMethod};
use rfx_core::mdp::{random_mdp, FeatureModel, RewardFunction};
use rfx_core::oracle::{optimal_values, variance};
use rfx_core::planner::plan;
use rfx_core::rng::{Domain, RunKey};
use rfx_core::sweep::{run_sweep, slope, write_sweep, SweepGrid, SweepRow, RESULTS_FILE};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: usize, name: &str, limit: Option<Duration>, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = run();
    let elapsed = start.elapsed();
    let mut timing = format!("{:.1}s", elapsed.as_secs_f64());
    if let Some(limit) = limit {
        timing.push_str(&format!(" (limit {}s)", limit.as_secs()));
        if elapsed > limit {
            out.pass = false;
        }
    }
    let status = if out.pass { "PASS" } else { "FAIL" };
    writeln!(std::io::stderr(), "[{status}] {id:>2} {name}: {} [{timing}]", out.detail).unwrap();
    out.pass
}

fn info(line: &str) {
    writeln!(std::io::stderr(), "[INFO]    {line}").unwrap();
}

fn rng(tag: u64) -> rand_chacha::ChaCha8Rng {
    RunKey::new(tag).sequential(Domain::Auxiliary, 0)
}

fn linearity() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (s, a, d) = (r.random_range(1..=10), r.random_range(1..=5), r.random_range(1..=6));
        let mdp = random_mdp(s, a, r.random_range(1..=5), d, 1.0 + 2.0 * r.random::<f64>(), seed).unwrap();
        for _ in 0..50 {
            let v: Vec<f64> = (0..s).map(|_| 10.0 * r.random::<f64>() - 5.0).collect();
            for st in 0..s {
                for ac in 0..a {
                    let direct: f64 = common::raw_transition(&mdp, st, ac).iter().zip(&v).map(|(p, x)| p * x).sum();
                    let via_psi = mdp.psi(&DVector::from_column_slice(&v), st, ac).dot(mdp.theta_star());
                    worst = worst.max((direct - via_psi).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-10, format!("max |PV - <psi_V, theta*>| = {worst:.2e} over 100 models x 50 V"))
}

fn planner_oracle() -> Outcome {
    let mut r = rng(2);
    let (mut worst, mut policy_mismatch) = (0.0f64, 0);
    for seed in 0..200 {
        let (s, a, h, d) = (
            r.random_range(1..=8),
            r.random_range(1..=5),
            r.random_range(1..=6),
            r.random_range(1..=6),
        );
        let mdp = random_mdp(s, a, h, d, 1.0 + r.random::<f64>(), 1000 + seed).unwrap();
        let reward = RewardFunction::random(h, s, a, &mut r);
        let sigma = common::random_spd(d, 0.01, 50.0, &mut r);
        let cov = CovarianceView::from_sigma(sigma, 0.01).unwrap();
        let planned = plan(&mdp, mdp.theta_star(), &cov, &reward, 0.0).unwrap();
        let (oracle, pi) = optimal_values(&mdp, &reward).unwrap();
        for (x, y) in planned.tables.all_q().iter().zip(oracle.all_q()) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in planned.tables.all_v().iter().zip(oracle.all_v()) {
            worst = worst.max((x - y).abs());
        }
        if planned.policy != pi {
            policy_mismatch += 1;
        }
    }
    outcome(
        worst <= 1e-10 && policy_mismatch == 0,
        format!("max table diff {worst:.2e}, policy mismatches {policy_mismatch}/200"),
    )
}

fn optimism() -> Outcome {
    let spec = BenchmarkSpec::FROZEN;
    let (mut checked, mut violations) = (0, 0);
    for algorithm in [Algorithm::Hoeffding, Algorithm::Bernstein] {
        for seed in 1..=10 {
            let mdp = spec.instance(seed).unwrap();
            let reward = evaluation_reward(&mdp, seed);
            let rec = run_cell(&mdp, &reward, &RunConfig::new(algorithm, 300, seed)).unwrap();
            checked += rec.optimism_checked;
            violations += rec.optimism_violations;
        }
    }
    outcome(
        violations == 0 && checked > 0,
        format!("{violations} violations over {checked} checked episodes (both algorithms, 10 seeds, K=300)"),
    )
}

fn coverage() -> Outcome {
    let spec = BenchmarkSpec::FROZEN;
    let covered = (1..=200u64)
        .filter(|&seed| {
            let mdp = spec.instance(seed).unwrap();
            let reward = evaluation_reward(&mdp, seed);
            let mut config = RunConfig::new(Algorithm::Hoeffding, 500, seed);
            config.checkpoints = vec![];
            run_cell(&mdp, &reward, &config).unwrap().coverage_all
        })
        .count();
    let frac = covered as f64 / 200.0;
    outcome(frac >= 0.85, format!("bound held at every k in {covered}/200 runs ({frac:.3} vs 0.85)"))
}

fn cheat_variance() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    let mut probes = 0;
    for seed in 0..100 {
        let (s, a, h, d) = (
            r.random_range(2..=8),
            r.random_range(1..=4),
            r.random_range(2..=6),
            r.random_range(1..=5),
        );
        let mdp = random_mdp(s, a, h, d, 1.0 + r.random::<f64>(), 5000 + seed).unwrap();
        let mut explorer = BernsteinExplorer::new(&mdp, RunKey::new(seed), ExplorerConfig::default(), 2).unwrap();
        explorer.run_episode().unwrap();
        let state = explorer.state_mut();
        state.inject_hat(Some(mdp.theta_star().clone()));
        state.inject_tilde(Some(mdp.theta_star().clone()));
        for _ in 0..100 {
            let v: Vec<f64> = (0..s).map(|_| (h - 1) as f64 * r.random::<f64>()).collect();
            let (st, ac) = (r.random_range(0..s), r.random_range(0..a));
            let est = state.variance_estimate(&mdp, &v, st, ac);
            worst = worst.max((est - variance(&mdp, &v, st, ac).unwrap()).abs());
            probes += 1;
        }
    }
    outcome(worst <= 1e-10, format!("max |estimate - oracle| = {worst:.2e} over {probes} probes"))
}

fn nu_bounds() -> Outcome {
    let spec = BenchmarkSpec::FROZEN;
    let (h, d) = (spec.horizon as f64, spec.d as f64);
    let (mut records, mut bad) = (0, 0);
    for seed in 1..=5 {
        let mdp = spec.instance(seed).unwrap();
        let (_, log) = run_exploration_plus(&mdp, 400, &ExplorerConfig::default(), RunKey::new(seed)).unwrap();
        for rec in log.variance_records() {
            records += 1;
            if !(rec.nu >= h * h / d && rec.nu <= 3.0 * h * h) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0 && records > 0, format!("{bad} of {records} records outside [H^2/d, 3H^2]"))
}

fn maximizer() -> Outcome {
    let mut r = rng(7);
    let (mut mismatches, mut sandwich, mut ratio_fail) = (0, 0, 0);
    for _ in 0..500 {
        let (d, s) = (r.random_range(1..=6), r.random_range(1..=10));
        let m = nalgebra::DMatrix::from_fn(d, s, |_, _| r.random::<f64>() - 0.5);
        let inv_sqrt = common::random_spd(d, 0.05, 5.0, &mut r);
        let box_hi = 0.5 + 4.0 * r.random::<f64>();
        let exact = maximize_exact(&m, &inv_sqrt, box_hi).unwrap();
        let (f, v) = common::brute_force_vertex(&m, &inv_sqrt, box_hi);
        if exact.method != MaximizerMethod::ExactVertex
            || exact.f_star != f
            || (exact.objective_l2 - v).abs() > 1e-12 * v.max(1.0)
        {
            mismatches += 1;
        }
        let ascent = maximize_l1_ascent(&m, &inv_sqrt, box_hi, 8, &mut r).unwrap();
        let y = &inv_sqrt * &m * DVector::from_column_slice(&ascent.f_star);
        let (l1, l2) = (y.lp_norm(1), y.norm());
        if !(l1 / (d as f64).sqrt() <= l2 * (1.0 + 1e-12) && l2 <= l1 * (1.0 + 1e-12)) {
            sandwich += 1;
        }
        if ascent.objective_l2 < exact.objective_l2 / (d as f64).sqrt() * (1.0 - 1e-12) {
            ratio_fail += 1;
        }
    }
    outcome(
        mismatches == 0 && sandwich == 0 && ratio_fail == 0,
        format!("exact mismatches {mismatches}, sandwich failures {sandwich}, ascent below exact/sqrt(d) {ratio_fail} (500 instances)"),
    )
}

fn inverse_drift() -> Outcome {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for dim in [2, 4, 8] {
        let mut cov = CovarianceView::new(dim, 1.0).unwrap();
        for _ in 0..10_000 {
            cov.rank_one_update(&DVector::from_fn(dim, |_, _| 2.0 * r.random::<f64>() - 1.0));
        }
        let fresh = common::lu_inverse(cov.sigma());
        worst = worst.max((cov.sigma_inv() - fresh).norm());
    }
    outcome(worst <= 1e-8, format!("Frobenius drift {worst:.2e} after 10^4 updates (d = 2, 4, 8)"))
}

fn medians_at(rows: &[SweepRow], algorithm: Algorithm, k: usize) -> f64 {
    let gaps: Vec<f64> = rows
        .iter()
        .filter(|r| r.algorithm == algorithm && r.episodes == k)
        .map(|r| r.gap)
        .collect();
    median(&gaps).unwrap_or(f64::NAN)
}

fn benchmark_grid(episodes: usize, checkpoints: Vec<usize>) -> SweepGrid {
    SweepGrid {
        episodes,
        checkpoints,
        ..SweepGrid::frozen_benchmark()
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main_acceptance() -> Vec<bool> {
    let mut results = vec![
        report(1, "linearity identity", Some(Duration::from_secs(10)), linearity),
        report(2, "planner-oracle equivalence", Some(Duration::from_secs(30)), planner_oracle),
        report(3, "optimism", None, optimism),
        report(4, "confidence coverage", Some(Duration::from_secs(600)), coverage),
        report(5, "variance estimator exactness", None, cheat_variance),
        report(6, "variance weight bounds", None, nu_bounds),
        report(7, "maximizer correctness", None, maximizer),
        report(8, "inverse maintenance drift", None, inverse_drift),
    ];

    // Criteria 9 and 10 share the K = 2000 sweep.
    let mut short_rows: Vec<SweepRow> = Vec::new();
    results.push(report(9, "gap decay on the frozen benchmark", Some(Duration::from_secs(1800)), || {
        let short = run_sweep(&benchmark_grid(2000, vec![200, 2000]), workers()).unwrap();
        let mut pass = short.failures.is_empty();
        let mut detail = Vec::new();
        for algorithm in [Algorithm::Hoeffding, Algorithm::Bernstein] {
            let (m200, m2000) = (medians_at(&short.rows, algorithm, 200), medians_at(&short.rows, algorithm, 2000));
            let ratio = m2000 / m200;
            pass &= ratio <= 0.5;
            detail.push(format!("{} median {m200:.3} -> {m2000:.3} (ratio {ratio:.3})", algorithm.name()));
        }
        short_rows = short.rows;
        let long = run_sweep(&benchmark_grid(4000, vec![125, 250, 500, 1000, 2000, 4000]), workers()).unwrap();
        pass &= long.failures.is_empty();
        for algorithm in [Algorithm::Hoeffding, Algorithm::Bernstein] {
            let rows: Vec<SweepRow> = long.rows.iter().filter(|r| r.algorithm == algorithm).cloned().collect();
            match slope(&rows) {
                Ok(fit) => {
                    pass &= (-0.8..=-0.2).contains(&fit.slope);
                    detail.push(format!("{} slope {:.3}", algorithm.name(), fit.slope));
                }
                Err(e) => {
                    pass = false;
                    detail.push(format!("{} slope error: {e}", algorithm.name()));
                }
            }
        }
        outcome(pass, detail.join("; "))
    }));

    results.push(report(10, "Bernstein non-inferiority", None, || {
        let h = medians_at(&short_rows, Algorithm::Hoeffding, 2000);
        let b = medians_at(&short_rows, Algorithm::Bernstein, 2000);
        outcome(b <= 1.1 * h, format!("Bernstein {b:.3} vs 1.1 x Hoeffding {:.3} at K=2000", 1.1 * h))
    }));

    results.push(report(11, "hard-instance suite", None, hard_instance_suite));

    results.push(report(12, "determinism", None, || {
        let grid = SweepGrid {
            seeds: (1..=6).collect(),
            episodes: 300,
            checkpoints: vec![50, 100],
            ..SweepGrid::frozen_benchmark()
        };
        let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        for (dir, w) in dirs.iter().zip([1, 2]) {
            let run = run_sweep(&grid, w).unwrap();
            write_sweep(&grid, &run, w, dir.path()).unwrap();
        }
        let bodies: Vec<String> = dirs
            .iter()
            .map(|d| {
                std::fs::read_to_string(d.path().join(RESULTS_FILE))
                    .unwrap()
                    .lines()
                    .map(|l| l.rsplit_once(',').unwrap().0.to_owned())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .collect();
        outcome(
            bodies[0] == bodies[1],
            format!("{} value rows compared across two runs (1 and 2 workers)", bodies[0].lines().count() - 1),
        )
    }));
    results
}

fn hard_instance_suite() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();

    // Packing at d' = 49, gamma = 1/2, verified pairwise here.
    let big = build_packing_set(49, 0.5, 0, 1_000_000).unwrap();
    let pairwise_ok = (0..big.len()).all(|i| {
        (0..i).all(|j| {
            let ip: i64 = big.vectors[i].iter().zip(&big.vectors[j]).map(|(a, b)| (*a as i64) * (*b as i64)).sum();
            ip as f64 <= 48.0 * 0.5
        })
    });
    pass &= big.len() == 21 && pairwise_ok;
    detail.push(format!("d'=49 packing size {} (pairwise ok: {pairwise_ok})", big.len()));

    // Validity and norm of every constructed instance.
    let mut worst_norm = 0.0f64;
    let mut invalid = 0;
    let mut built = 0;
    for (pack, alphas) in [
        (&big, &[0.1, 0.3, 0.7][..]),
        (&build_packing_set(8, 0.75, 0, 1_000_000).unwrap(), &[0.3][..]),
    ] {
        for &alpha in alphas {
            for i in 0..pack.len() {
                let hard = build_hard_mdp(pack, i, alpha, 5).unwrap();
                built += 1;
                if !hard.inner.validate().is_valid() {
                    invalid += 1;
                }
                worst_norm = worst_norm.max((hard.inner.theta_star().norm() - (2.0 + alpha * alpha).sqrt()).abs());
            }
        }
    }
    pass &= invalid == 0 && worst_norm <= 1e-12;
    detail.push(format!("{invalid}/{built} invalid, norm error {worst_norm:.1e}"));

    // Identification at d' = 8, alpha = 0.3, H = 5 over seeds 1..=50.
    let seeds: Vec<u64> = (1..=50).collect();
    let frequencies = |pack: &PackingSet, algorithm: Algorithm, variant: RewardVariant| -> (f64, f64) {
        let settings = IdentificationSettings {
            algorithm,
            alpha_scale: 0.3,
            horizon: 5,
            orientation: RewardOrientation::RewardS21,
            explorer: ExplorerConfig {
                reward_variant: variant,
                ..ExplorerConfig::default()
            },
        };
        let lo = identification_experiment(pack, 50, &seeds, &settings).unwrap().recovery_frequency;
        let hi = identification_experiment(pack, 5000, &seeds, &settings).unwrap().recovery_frequency;
        (lo, hi)
    };
    let pack = build_packing_set(8, 0.75, 0, 1_000_000).unwrap();
    let (lo, hi) = frequencies(&pack, Algorithm::Hoeffding, RewardVariant::Linear);
    pass &= hi > lo;
    detail.push(format!(
        "identification (gamma=3/4, {} actions, Hoeffding, linear reward) {lo:.3} at K=50 -> {hi:.3} at K=5000",
        pack.len()
    ));

    let (slo, shi) = frequencies(&pack, Algorithm::Hoeffding, RewardVariant::Sqrt);
    info(&format!("identification with the sqrt reward: {slo:.3} at K=50 -> {shi:.3} at K=5000"));
    let (blo, bhi) = frequencies(&pack, Algorithm::Bernstein, RewardVariant::Linear);
    info(&format!("identification with Bernstein, linear reward: {blo:.3} at K=50 -> {bhi:.3} at K=5000"));
    let half = build_packing_set(8, 0.5, 0, 1_000_000).unwrap();
    info(&format!(
        "d'=8 at gamma=1/2 has a packing of size {}; identification is trivially 1.0 at every K",
        half.len()
    ));

    outcome(pass, detail.join("; "))
}

#[test]
fn acceptance_criteria() {
    let results = main_acceptance();
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    writeln!(
        std::io::stderr(),
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    )
    .unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
