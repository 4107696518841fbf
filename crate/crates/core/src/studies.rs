//! The experiment protocols behind `mmt reproduce`: learning curves at a
//! large displacement, update counts over displacement grids, and goal
//! learning under position uncertainty. Each study returns plain rows and
//! can write them as a versioned CSV table.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{run_farm_episodes, EpisodeConfig, EpisodeResult, Scenario};
use crate::policy::{Algorithm, Budget};

/// Bumped whenever a column is added, removed or changes meaning.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const DISPLACEMENT_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const UNCERTAINTY_GRID: [f64; 7] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07];
pub const FIG5_DISPLACEMENT: f64 = 0.4;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Cost per update at a 40 cm X displacement, all algorithms.
    Fig5,
    /// Updates to success over X displacements of the box.
    Fig6,
    /// Updates to success over Y displacements of the box.
    Fig7,
    /// Updates to success over X displacements of the cylinder.
    Cylinder,
    /// PI² goal learning over uncertainty magnitudes.
    Uncertainty,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::Fig5,
        Study::Fig6,
        Study::Fig7,
        Study::Cylinder,
        Study::Uncertainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::Fig5 => "fig5",
            Study::Fig6 => "fig6",
            Study::Fig7 => "fig7",
            Study::Cylinder => "cylinder",
            Study::Uncertainty => "uncertainty",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Study::ALL.iter().map(|s| s.name()).collect();
                format!("unknown study '{s}'; valid studies: {}", names.join(", "))
            })
    }
}

/// Knobs shared by every study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub seeds: Vec<u64>,
    pub algos: Vec<Algorithm>,
    pub budget: Budget,
    /// Overrides the per-algorithm initial exploration.
    pub sigma: Option<f64>,
    pub goal_sigma: f64,
    pub latency: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            algos: Algorithm::ALL.to_vec(),
            budget: Budget::default(),
            sigma: None,
            goal_sigma: 0.04,
            latency: 0.0,
        }
    }
}

impl StudyOptions {
    fn config(
        &self,
        scenario: &Scenario,
        algo: Algorithm,
        displacement: [f64; 2],
    ) -> Result<EpisodeConfig> {
        if self.seeds.is_empty() {
            return Err(Error::invariant("EpisodeConfig", "seeds must not be empty"));
        }
        let mut cfg = EpisodeConfig::new(scenario, algo, displacement, self.seeds.clone())
            .with_budget(self.budget);
        if let Some(sigma) = self.sigma {
            cfg.learn.schedule.sigma_init = sigma;
        }
        cfg.learn.schedule.goal_sigma = self.goal_sigma;
        cfg.channel.latency = self.latency;
        Ok(cfg)
    }
}

/// Noise-free policy cost per update for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig5Curve {
    pub algo: Algorithm,
    /// Mean over seeds, starting with the DMP-only cost at index 0.
    pub mean_cost: Vec<f64>,
    pub per_seed: Vec<Vec<f64>>,
    pub updates_to_threshold: Vec<usize>,
}

impl Fig5Curve {
    pub fn initial(&self) -> f64 {
        self.mean_cost[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.mean_cost.last().expect("curve has the initial point")
    }

    pub fn mean_updates_to_threshold(&self) -> f64 {
        self.updates_to_threshold.iter().sum::<usize>() as f64
            / self.updates_to_threshold.len() as f64
    }
}

/// First update whose cost is within 10% of the total improvement of the
/// final cost. A run that ends no better than it started never converged
/// and is charged the whole budget.
pub fn updates_to_threshold(curve: &[f64]) -> usize {
    let budget = curve.len().saturating_sub(1);
    let (Some(&initial), Some(&last)) = (curve.first(), curve.last()) else {
        return 0;
    };
    if !(last < initial) {
        return budget;
    }
    let threshold = last + 0.1 * (initial - last);
    curve.iter().position(|&c| c <= threshold).unwrap_or(budget)
}

pub fn fig5(scenario: &Scenario, opts: &StudyOptions) -> Result<Vec<Fig5Curve>> {
    opts.algos
        .iter()
        .map(|&algo| {
            let mut cfg = opts.config(scenario, algo, [FIG5_DISPLACEMENT, 0.0])?;
            cfg.learn.stop_on_success = false;
            let runs = run_farm_episodes(scenario, &cfg)?;
            let per_seed: Vec<Vec<f64>> =
                runs.iter().map(|r| r.state.policy_cost_curve()).collect();
            let len = per_seed.iter().map(Vec::len).min().unwrap_or(0);
            let mean_cost = (0..len)
                .map(|k| per_seed.iter().map(|c| c[k]).sum::<f64>() / per_seed.len() as f64)
                .collect();
            Ok(Fig5Curve {
                algo,
                mean_cost,
                updates_to_threshold: per_seed.iter().map(|c| updates_to_threshold(c)).collect(),
                per_seed,
            })
        })
        .collect()
}

/// One farm member of a grid study. `level` is the displacement or the
/// uncertainty magnitude, in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRow {
    pub level: f64,
    pub algo: Algorithm,
    pub seed: u64,
    pub updates: usize,
    pub success: bool,
}

fn rows(
    level: f64,
    algo: Algorithm,
    runs: &[EpisodeResult],
) -> impl Iterator<Item = UpdateRow> + '_ {
    runs.iter().map(move |r| UpdateRow {
        level,
        algo,
        seed: r.seed,
        updates: r.state.update_index,
        success: r.state.success,
    })
}

/// Updates to success over a displacement grid along `axis` (0 = X, 1 = Y).
pub fn displacement_study(
    scenario: &Scenario,
    axis: usize,
    grid: &[f64],
    opts: &StudyOptions,
) -> Result<Vec<UpdateRow>> {
    if axis > 1 {
        return Err(Error::invariant(
            "ExperimentSuite",
            "displacement axis must be 0 (X) or 1 (Y)",
        ));
    }
    let mut out = Vec::new();
    for &d in grid {
        let mut displacement = [0.0; 2];
        displacement[axis] = d;
        for &algo in &opts.algos {
            let cfg = opts.config(scenario, algo, displacement)?;
            out.extend(rows(d, algo, &run_farm_episodes(scenario, &cfg)?));
        }
    }
    Ok(out)
}

/// End-effector X position over time for one uncertainty trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub magnitude: f64,
    pub seed: u64,
    pub t: f64,
    pub x: f64,
}

/// PI² shape-and-goal learning over uncertainty magnitudes. Traces follow
/// the deployed roll-out, or the best roll-out for runs that never
/// succeeded.
pub fn uncertainty_study(
    scenario: &Scenario,
    grid: &[f64],
    opts: &StudyOptions,
) -> Result<(Vec<UpdateRow>, Vec<TraceRow>)> {
    let mut updates = Vec::new();
    let mut traces = Vec::new();
    for &m in grid {
        let mut cfg = opts.config(scenario, Algorithm::Pi2, [0.0, 0.0])?;
        cfg.uncertainty = m;
        cfg.learn.goal_learning = true;
        let runs = run_farm_episodes(scenario, &cfg)?;
        updates.extend(rows(m, Algorithm::Pi2, &runs));
        for r in &runs {
            let shown = r.state.deployed.as_ref().or_else(|| r.state.elites.first());
            if let Some(traj) = shown.and_then(|ro| ro.trajectory.as_ref()) {
                traces.extend(traj.samples().iter().map(|s| TraceRow {
                    magnitude: m,
                    seed: r.seed,
                    t: s.t,
                    x: s.pose[0],
                }));
            }
        }
    }
    Ok((updates, traces))
}

/// Fraction of successful runs per level, in grid order.
pub fn success_rates(rows: &[UpdateRow], algo: Algorithm) -> Vec<(f64, f64)> {
    let mut levels: Vec<f64> = Vec::new();
    for r in rows.iter().filter(|r| r.algo == algo) {
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
    }
    levels
        .into_iter()
        .map(|l| {
            let at: Vec<_> = rows
                .iter()
                .filter(|r| r.algo == algo && r.level == l)
                .collect();
            (
                l,
                at.iter().filter(|r| r.success).count() as f64 / at.len() as f64,
            )
        })
        .collect()
}

/// Writes `records` under a `# mmt-csv` schema line. Refuses to replace an
/// existing file unless `force` is set.
pub fn write_csv<T: Serialize>(path: &Path, table: &str, records: &[T], force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Io(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut file = File::create(path)?;
    writeln!(file, "# mmt-csv schema={CSV_SCHEMA_VERSION} table={table}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV record of the displacement studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementRecord {
    pub displacement: f64,
    pub algo: Algorithm,
    pub seed: u64,
    pub updates: usize,
    pub success: bool,
}

/// CSV record of the uncertainty study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyRecord {
    pub magnitude: f64,
    pub seed: u64,
    pub updates: usize,
    pub success: bool,
}

pub fn displacement_records(rows: &[UpdateRow]) -> Vec<DisplacementRecord> {
    rows.iter()
        .map(|r| DisplacementRecord {
            displacement: r.level,
            algo: r.algo,
            seed: r.seed,
            updates: r.updates,
            success: r.success,
        })
        .collect()
}

pub fn uncertainty_records(rows: &[UpdateRow]) -> Vec<UncertaintyRecord> {
    rows.iter()
        .map(|r| UncertaintyRecord {
            magnitude: r.level,
            seed: r.seed,
            updates: r.updates,
            success: r.success,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig5Row {
    pub update: usize,
    pub algo: Algorithm,
    pub mean_cost: f64,
}

pub fn fig5_rows(curves: &[Fig5Curve]) -> Vec<Fig5Row> {
    curves
        .iter()
        .flat_map(|c| {
            c.mean_cost
                .iter()
                .enumerate()
                .map(move |(update, &mean_cost)| Fig5Row {
                    update,
                    algo: c.algo,
                    mean_cost,
                })
        })
        .collect()
}
