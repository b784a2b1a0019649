//! Experiment matrices: many seeded runs, per-cell output directories and a
//! seed-averaged summary table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adaptation::Policy;
use crate::config::ScenarioConfig;
use crate::error::{Result, SimError};
use crate::par;
use crate::radio::Direction;
use crate::scenario::{self, RunResult};
use crate::sensing::CongestionLevel;
use crate::traffic::TrafficClass;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub scenario: u8,
    pub level: CongestionLevel,
    pub policy: Policy,
    pub seeds: Vec<u64>,
}

impl Cell {
    pub fn new(scenario: u8, level: CongestionLevel, policy: Policy, seeds: Vec<u64>) -> Self {
        Cell {
            name: format!("s{scenario}-{level}-{policy}"),
            scenario,
            level,
            policy,
            seeds,
        }
    }

    /// Base config specialised to this cell and one seed.
    pub fn config(&self, base: &ScenarioConfig, seed: u64) -> Result<ScenarioConfig> {
        base.with("scenario", &self.scenario.to_string())?
            .with("schedule", &format!("{}:0", self.level))?
            .with("policy", self.policy.label())?
            .with("seed", &seed.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub base: ScenarioConfig,
    pub cells: Vec<Cell>,
}

impl ExperimentMatrix {
    /// Every level under standard, the aggregator at low and moderate, extra
    /// resources at high and very high, in both scenarios.
    pub fn paper_repro(base: ScenarioConfig, seeds: u64) -> Self {
        let seeds: Vec<u64> = (1..=seeds).collect();
        let mut cells = Vec::new();
        for scenario in [1, 2] {
            for level in CongestionLevel::ALL {
                let alt = match level {
                    CongestionLevel::Low | CongestionLevel::Moderate => Policy::Aggregator,
                    _ => Policy::ExtraResources,
                };
                for policy in [Policy::Standard, alt] {
                    cells.push(Cell::new(scenario, level, policy, seeds.clone()));
                }
            }
        }
        ExperimentMatrix { base, cells }
    }

    pub fn runs(&self) -> usize {
        self.cells.iter().map(|c| c.seeds.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub cell: usize,
    pub seed: u64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub scenario: u8,
    pub level: CongestionLevel,
    pub policy: Policy,
    pub class: TrafficClass,
    pub direction: Direction,
    pub seeds: usize,
    pub throughput: Stat,
    pub latency: Stat,
    pub delivery: Stat,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    /// Standard error of the mean; zero with fewer than two samples.
    pub se: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Stat { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Stat {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub rows: Vec<MatrixRow>,
    pub outcomes: Vec<SeedOutcome>,
}

impl MatrixReport {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }

    pub fn row(&self, scenario: u8, level: CongestionLevel, policy: Policy, class: TrafficClass, dir: Direction) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario && r.level == level && r.policy == policy && r.class == class && r.direction == dir
        })
    }
}

fn run_one(matrix: &ExperimentMatrix, cell: usize, seed: u64) -> std::result::Result<RunResult, String> {
    let cfg = matrix.cells[cell].config(&matrix.base, seed).map_err(|e| e.to_string())?;
    scenario::run(&cfg).map_err(|e| e.to_string())
}

/// Runs every (cell, seed) pair, in parallel when enabled. A failed run is
/// recorded and does not stop the others.
pub fn run_matrix(matrix: &ExperimentMatrix) -> MatrixReport {
    execute(matrix, true)
}

pub fn run_matrix_sequential(matrix: &ExperimentMatrix) -> MatrixReport {
    execute(matrix, false)
}

fn execute(matrix: &ExperimentMatrix, parallel: bool) -> MatrixReport {
    let jobs: Vec<(usize, u64)> = matrix
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |s| (i, *s)))
        .collect();
    let job = |&(cell, seed): &(usize, u64)| SeedOutcome {
        cell,
        seed,
        result: run_one(matrix, cell, seed),
    };
    let outcomes = if parallel { par::map(&jobs, job) } else { par::map_sequential(&jobs, job) };
    let rows = aggregate(matrix, &outcomes);
    MatrixReport { rows, outcomes }
}

fn aggregate(matrix: &ExperimentMatrix, outcomes: &[SeedOutcome]) -> Vec<MatrixRow> {
    let mut rows = Vec::new();
    for (i, cell) in matrix.cells.iter().enumerate() {
        for class in TrafficClass::ALL {
            for direction in Direction::ALL {
                let picked: Vec<_> = outcomes
                    .iter()
                    .filter(|o| o.cell == i)
                    .filter_map(|o| o.result.as_ref().ok())
                    .filter_map(|r| r.summary.row(cell.level, cell.policy, class, direction))
                    .collect();
                if picked.is_empty() {
                    continue;
                }
                let col = |f: fn(&crate::metrics::SummaryRow) -> f64| Stat::of(&picked.iter().map(|r| f(r)).collect::<Vec<_>>());
                rows.push(MatrixRow {
                    scenario: cell.scenario,
                    level: cell.level,
                    policy: cell.policy,
                    class,
                    direction,
                    seeds: picked.len(),
                    throughput: col(|r| r.per_user_throughput_bps),
                    latency: col(|r| r.mean_latency_ms),
                    delivery: col(|r| r.delivery_ratio),
                });
            }
        }
    }
    rows
}

pub const MATRIX_HEADER: &str = "scenario,level,policy,class,direction,seeds,per_user_throughput_bps,per_user_throughput_se,mean_latency_ms,mean_latency_se,delivery_ratio,delivery_ratio_se";

pub fn matrix_summary_csv(rows: &[MatrixRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MATRIX_HEADER}");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.1},{:.1},{:.3},{:.3},{:.6},{:.6}",
            r.scenario,
            r.level,
            r.policy,
            r.class,
            r.direction,
            r.seeds,
            r.throughput.mean,
            r.throughput.se,
            r.latency.mean,
            r.latency.se,
            r.delivery.mean,
            r.delivery.se
        );
    }
    s
}

pub fn seed_dir(root: &Path, cell: &Cell, seed: u64) -> PathBuf {
    root.join(&cell.name).join(format!("seed-{seed}"))
}

/// Writes per-seed outputs under `<root>/<cell>/seed-<n>/`, a config echo and
/// seed-averaged summary per cell, `status.csv` and `matrix_summary.csv`.
pub fn write_report(matrix: &ExperimentMatrix, report: &MatrixReport, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| SimError::io(root, e))?;
    let mut status = String::from("cell,seed,status,message\n");
    for o in &report.outcomes {
        let cell = &matrix.cells[o.cell];
        match &o.result {
            Ok(r) => {
                r.write_outputs(&seed_dir(root, cell, o.seed))?;
                let _ = writeln!(status, "{},{},ok,", cell.name, o.seed);
            }
            Err(msg) => {
                let _ = writeln!(status, "{},{},failed,\"{}\"", cell.name, o.seed, msg.replace('"', "'"));
            }
        }
    }
    for cell in &matrix.cells {
        let dir = root.join(&cell.name);
        std::fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
        let mut echo = cell.config(&matrix.base, cell.seeds.first().copied().unwrap_or(1))?.echo();
        let seeds: Vec<String> = cell.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(echo, "# seeds={}", seeds.join(" "));
        let path = dir.join("config.txt");
        std::fs::write(&path, echo).map_err(|e| SimError::io(path, e))?;
        let rows: Vec<MatrixRow> = report
            .rows
            .iter()
            .filter(|r| r.scenario == cell.scenario && r.level == cell.level && r.policy == cell.policy)
            .cloned()
            .collect();
        let path = dir.join("summary.csv");
        std::fs::write(&path, matrix_summary_csv(&rows)).map_err(|e| SimError::io(path, e))?;
    }
    let path = root.join("status.csv");
    std::fs::write(&path, status).map_err(|e| SimError::io(path, e))?;
    let path = root.join("matrix_summary.csv");
    std::fs::write(&path, matrix_summary_csv(&report.rows)).map_err(|e| SimError::io(path, e))
}
