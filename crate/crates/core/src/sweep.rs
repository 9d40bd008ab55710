//! Grid sweeps over (algorithm, seed) cells, the results CSV and manifest,
//! and the log-log slope of median gap against K.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RfxError};
use crate::explore::RewardVariant;
use crate::hard::Algorithm;
use crate::harness::{evaluation_reward, median, run_cell, BenchmarkSpec, RunConfig, DEFAULT_CHECKPOINTS};
use crate::maximizer::{MaximizerChoice, DEFAULT_RESTARTS};
use crate::mdp::LinearMixtureMdp;

pub const SWEEP_SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 7] = ["algorithm", "seed", "K", "gap", "v1", "coverage", "wall_ms"];
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    /// A fresh generated instance per seed.
    Generated(BenchmarkSpec),
    /// One fixed model file shared by every cell.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub instance: InstanceSource,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Episodes per cell; the last checkpoint.
    pub episodes: usize,
    pub checkpoints: Vec<usize>,
    pub delta: f64,
    pub reward_variant: RewardVariant,
    pub restarts: usize,
    pub lambda_override: Option<f64>,
}

impl SweepGrid {
    /// Both algorithms on the frozen benchmark, seeds `1..=50`, to `K = 4000`.
    pub fn frozen_benchmark() -> Self {
        SweepGrid {
            instance: InstanceSource::Generated(BenchmarkSpec::FROZEN),
            algorithms: vec![Algorithm::Hoeffding, Algorithm::Bernstein],
            seeds: (1..=50).collect(),
            episodes: 4000,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            delta: 0.1,
            reward_variant: RewardVariant::Sqrt,
            restarts: DEFAULT_RESTARTS,
            lambda_override: None,
        }
    }

    /// Cell configurations in output order: algorithm-major, then seed.
    pub fn cells(&self) -> Vec<RunConfig> {
        self.algorithms
            .iter()
            .flat_map(|&algorithm| {
                self.seeds.iter().map(move |&seed| RunConfig {
                    algorithm,
                    episodes: self.episodes,
                    delta: self.delta,
                    epsilon_target: None,
                    seed,
                    reward_variant: self.reward_variant,
                    restarts: self.restarts,
                    lambda_override: self.lambda_override,
                    maximizer: MaximizerChoice::Auto,
                    checkpoints: self.checkpoints.clone(),
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(RfxError::argument("sweep grid has no cells"));
        }
        // Every cell shares these knobs, so one check covers the grid.
        self.cells()[0].validate()
    }

    /// Lowercase hex SHA-256 of the grid's JSON encoding.
    pub fn grid_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("grid serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One CSV row. Failed cells carry NaN values and coverage `error`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: usize,
    pub gap: f64,
    pub v1: f64,
    pub coverage: Option<bool>,
    pub wall_ms: f64,
}

impl SweepRow {
    fn fields(&self) -> [String; 7] {
        [
            self.algorithm.name().to_string(),
            self.seed.to_string(),
            self.episodes.to_string(),
            self.gap.to_string(),
            self.v1.to_string(),
            match self.coverage {
                Some(true) => "true".into(),
                Some(false) => "false".into(),
                None => "error".into(),
            },
            format!("{:.3}", self.wall_ms),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub grid_hash: String,
    pub grid: SweepGrid,
    pub columns: Vec<String>,
    pub cells: usize,
    pub rows: usize,
    pub workers: usize,
    pub failures: Vec<CellFailure>,
    pub results: String,
}

fn cell_rows(config: &RunConfig, mdp: Result<LinearMixtureMdp>) -> (Vec<SweepRow>, Option<CellFailure>) {
    let record = mdp.and_then(|mdp| {
        let reward = evaluation_reward(&mdp, config.seed);
        run_cell(&mdp, &reward, config)
    });
    match record {
        Ok(record) => {
            let rows = record
                .rows
                .iter()
                .map(|r| SweepRow {
                    algorithm: config.algorithm,
                    seed: config.seed,
                    episodes: r.episodes,
                    gap: r.gap,
                    v1: r.v1,
                    coverage: Some(r.coverage),
                    wall_ms: r.wall_ms,
                })
                .collect();
            (rows, None)
        }
        Err(e) => {
            let rows = config
                .checkpoint_schedule()
                .into_iter()
                .map(|k| SweepRow {
                    algorithm: config.algorithm,
                    seed: config.seed,
                    episodes: k,
                    gap: f64::NAN,
                    v1: f64::NAN,
                    coverage: None,
                    wall_ms: f64::NAN,
                })
                .collect();
            let failure = CellFailure {
                algorithm: config.algorithm,
                seed: config.seed,
                error: e.to_string(),
            };
            (rows, Some(failure))
        }
    }
}

/// Runs every cell on a pool of `workers` threads. Rows follow cell order
/// regardless of completion order; a failing cell does not stop the sweep.
pub fn run_sweep(grid: &SweepGrid, workers: usize) -> Result<SweepOutcome> {
    grid.validate()?;
    if workers == 0 {
        return Err(RfxError::argument("workers must be at least 1"));
    }
    let shared = match &grid.instance {
        InstanceSource::File(path) => Some(LinearMixtureMdp::load(path)?),
        InstanceSource::Generated(_) => None,
    };
    let cells = grid.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RfxError::argument(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(Vec<SweepRow>, Option<CellFailure>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|config| {
                let mdp = match (&grid.instance, &shared) {
                    (_, Some(mdp)) => Ok(mdp.clone()),
                    (InstanceSource::Generated(spec), None) => spec.instance(config.seed),
                    (InstanceSource::File(_), None) => unreachable!("file instance is loaded up front"),
                };
                cell_rows(config, mdp)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        rows.extend(r);
        failures.extend(f);
    }
    Ok(SweepOutcome { rows, failures })
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => RfxError::io(path.display().to_string(), e),
        other => RfxError::Format(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for row in rows {
        w.write_record(row.fields()).map_err(io)?;
    }
    w.flush().map_err(|e| RfxError::io(path.display().to_string(), e))
}

/// Reads a results CSV; rows with coverage `error` come back with NaN gap.
pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => RfxError::io(path.display().to_string(), e),
        other => RfxError::Format(format!("{other:?}")),
    })?;
    let headers = r.headers().map_err(|e| RfxError::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(RfxError::Format(format!("unexpected CSV columns {headers:?}")));
    }
    let bad = |field: &str, value: &str| RfxError::Format(format!("bad {field} value '{value}'"));
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record.map_err(|e| RfxError::Format(e.to_string()))?;
        let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(CSV_COLUMNS[i], &rec[i])) };
        rows.push(SweepRow {
            algorithm: rec[0].parse().map_err(|_| bad("algorithm", &rec[0]))?,
            seed: rec[1].parse().map_err(|_| bad("seed", &rec[1]))?,
            episodes: rec[2].parse().map_err(|_| bad("K", &rec[2]))?,
            gap: num(3)?,
            v1: num(4)?,
            coverage: match &rec[5] {
                "true" => Some(true),
                "false" => Some(false),
                "error" => None,
                other => return Err(bad("coverage", other)),
            },
            wall_ms: num(6)?,
        });
    }
    Ok(rows)
}

/// Writes `results.csv` and `manifest.json` into `dir`, creating it.
pub fn write_sweep(grid: &SweepGrid, outcome: &SweepOutcome, workers: usize, dir: &Path) -> Result<SweepManifest> {
    std::fs::create_dir_all(dir).map_err(|e| RfxError::io(dir.display().to_string(), e))?;
    write_csv(&outcome.rows, &dir.join(RESULTS_FILE))?;
    let manifest = SweepManifest {
        schema_version: SWEEP_SCHEMA_VERSION,
        grid_hash: grid.grid_hash(),
        grid: grid.clone(),
        columns: CSV_COLUMNS.iter().map(|c| c.to_string()).collect(),
        cells: grid.algorithms.len() * grid.seeds.len(),
        rows: outcome.rows.len(),
        workers,
        failures: outcome.failures.clone(),
        results: RESULTS_FILE.into(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| RfxError::io(path.display().to_string(), e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    #[serde(rename = "K")]
    pub episodes: usize,
    pub median_gap: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<SlopePoint>,
}

/// Least-squares fit of `ln(median gap)` on `ln K` across checkpoints.
///
/// Rows with NaN gap (failed cells) and `K = 0` are dropped. Refuses fewer
/// than 4 checkpoints, a span under one decade, or a non-positive median.
pub fn slope(rows: &[SweepRow]) -> Result<SlopeReport> {
    let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.episodes > 0 && !r.gap.is_nan()) {
        by_k.entry(row.episodes).or_default().push(row.gap);
    }
    if by_k.len() < 4 {
        return Err(RfxError::argument(format!(
            "slope needs at least 4 checkpoints with K > 0, found {}",
            by_k.len()
        )));
    }
    let (lo, hi) = (*by_k.keys().next().unwrap(), *by_k.keys().next_back().unwrap());
    if (hi as f64) < 10.0 * lo as f64 {
        return Err(RfxError::argument(format!(
            "checkpoints span K = {lo}..{hi}, less than one decade"
        )));
    }
    let mut points = Vec::with_capacity(by_k.len());
    for (k, gaps) in &by_k {
        let m = median(gaps)?;
        if !(m > 0.0) {
            return Err(RfxError::argument(format!(
                "median gap at K = {k} is {m}; the log-log fit needs positive medians"
            )));
        }
        points.push(SlopePoint {
            episodes: *k,
            median_gap: m,
            samples: gaps.len(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.episodes as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_gap.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(SlopeReport {
        slope,
        intercept: my - slope * mx,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(ks: &[usize], gap: impl Fn(usize) -> f64) -> Vec<SweepRow> {
        ks.iter()
            .flat_map(|&k| {
                (0..3).map(move |seed| (k, seed))
            })
            .map(|(k, seed)| SweepRow {
                algorithm: Algorithm::Hoeffding,
                seed,
                episodes: k,
                gap: gap(k),
                v1: 0.0,
                coverage: Some(true),
                wall_ms: 0.0,
            })
            .collect()
    }

    const KS: [usize; 6] = [125, 250, 500, 1000, 2000, 4000];

    #[test]
    fn exact_power_law_slope() {
        let rows = synthetic(&KS, |k| (k as f64).powf(-0.5));
        assert!((slope(&rows).unwrap().slope + 0.5).abs() < 1e-9);
    }

    #[test]
    fn constant_gap_slope_is_zero() {
        let rows = synthetic(&KS, |_| 0.3);
        assert!(slope(&rows).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn refusals() {
        assert!(slope(&synthetic(&[100, 200, 400], |_| 1.0)).is_err());
        assert!(slope(&synthetic(&[100, 200, 400, 800], |_| 1.0)).is_err());
        assert!(slope(&synthetic(&KS, |k| if k == 500 { 0.0 } else { 1.0 })).is_err());
    }

    #[test]
    fn grid_hash_tracks_content() {
        let a = SweepGrid::frozen_benchmark();
        let mut b = a.clone();
        assert_eq!(a.grid_hash(), b.grid_hash());
        b.seeds.pop();
        assert_ne!(a.grid_hash(), b.grid_hash());
        assert_eq!(a.grid_hash().len(), 64);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = synthetic(&[10, 20], |k| 1.0 / k as f64);
        rows[1].gap = f64::NAN;
        rows[1].coverage = None;
        let path = dir.path().join("r.csv");
        write_csv(&rows, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        assert!(back[1].gap.is_nan() && back[1].coverage.is_none());
        assert_eq!(back[0], rows[0]);
    }
}
