use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mmt_core::harness::{farm_from_results, run_farm_episodes, EpisodeConfig, Scenario};
use mmt_core::policy::{Algorithm, Budget};
use mmt_core::studies::{self, Study, StudyOptions};

const CONFIG_DIR_ENV: &str = "MMT_CONFIG_DIR";

/// Model-mediated teleoperation learning lab.
#[derive(Debug, Parser)]
#[command(name = "mmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one avatar episode per seed and stream its update reports.
    Learn(LearnArgs),
    /// Regenerate the tables behind one of the experiment studies.
    Reproduce(ReproduceArgs),
    /// Check a scenario file without running it.
    Validate {
        /// Scenario file, or the name of a scenario in the config directory.
        scenario: String,
    },
}

#[derive(Debug, Args)]
struct Overrides {
    /// Roll-out updates allowed per episode.
    #[arg(long)]
    updates: Option<usize>,
    /// Roll-outs per update.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Initial exploration (parameter std for pi2/power, action std for enac).
    #[arg(long)]
    sigma: Option<f64>,
    /// Goal exploration std in meters.
    #[arg(long)]
    goal_sigma: Option<f64>,
    /// One-way channel latency in seconds.
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Option<Vec<u64>>,
    /// A single seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.seed) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => vec![s],
            (None, None) => studies::DEFAULT_SEEDS.to_vec(),
        }
    }

    fn budget(&self) -> Budget {
        let d = Budget::default();
        Budget {
            update_max: self.updates.unwrap_or(d.update_max),
            rollouts_per_update: self.rollouts.unwrap_or(d.rollouts_per_update),
        }
    }
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// Scenario file, or the name of a scenario in the config directory.
    #[arg(long, default_value = "box")]
    scenario: String,
    /// pi2, power or enac.
    #[arg(long, default_value = "pi2")]
    algo: Algorithm,
    /// Object displacement in the table plane, meters: X,Y.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0])]
    displacement: Vec<f64>,
    /// Distance between believed and true object position, meters.
    #[arg(long, default_value_t = 0.0)]
    uncertainty: f64,
    /// Also adapt the goal (defaults to on when uncertainty is set).
    #[arg(long)]
    goal_learning: Option<bool>,
    /// Write the farm summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing summary file.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// fig5, fig6, fig7, cylinder or uncertainty.
    study: String,
    /// Directory for the CSV tables.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Replace existing result files.
    #[arg(long)]
    force: bool,
    /// Scenario replacing the study's default one.
    #[arg(long)]
    scenario: Option<String>,
    /// Restrict to one algorithm (grid studies only).
    #[arg(long)]
    algo: Option<Algorithm>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Exit code for a run that used its whole budget without a grasp.
const EXIT_BUDGET: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Learn(args) => learn(args),
        Command::Reproduce(args) => reproduce(args),
        Command::Validate { scenario } => load_scenario(&scenario).map(|_| {
            println!("{scenario}: ok");
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

fn config_dir() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from)
}

/// Resolves a scenario argument: an existing path, then `<name>.json` in the
/// config directory, then the bundled scenarios.
fn load_scenario(arg: &str) -> anyhow::Result<Scenario> {
    let direct = Path::new(arg);
    let path = if direct.is_file() {
        Some(direct.to_path_buf())
    } else {
        config_dir()
            .map(|d| d.join(format!("{arg}.json")))
            .filter(|p| p.is_file())
    };
    let scenario = match (path, arg) {
        (Some(p), _) => {
            let text =
                fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Scenario::from_json(&text).with_context(|| format!("in {}", p.display()))?
        }
        (None, "box") => Scenario::default_box(),
        (None, "cylinder") => Scenario::default_cylinder(),
        (None, _) => {
            bail!("scenario '{arg}' not found (looked for a file, then in ${CONFIG_DIR_ENV})")
        }
    };
    Ok(scenario)
}

fn learn(args: LearnArgs) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(&args.scenario)?;
    let o = &args.overrides;
    let &[dx, dy] = args.displacement.as_slice() else {
        bail!("--displacement takes exactly two values, X,Y");
    };
    let displacement = [dx, dy];
    let mut cfg =
        EpisodeConfig::new(&scenario, args.algo, displacement, o.seeds()).with_budget(o.budget());
    if let Some(s) = o.sigma {
        cfg.learn.schedule.sigma_init = s;
    }
    if let Some(g) = o.goal_sigma {
        cfg.learn.schedule.goal_sigma = g;
    }
    cfg.uncertainty = args.uncertainty;
    cfg.learn.goal_learning = args.goal_learning.unwrap_or(args.uncertainty > 0.0);
    cfg.channel.latency = o.latency;
    if let Some(out) = &args.out {
        refuse_overwrite(out, args.force)?;
    }

    let runs = run_farm_episodes(&scenario, &cfg)?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let farm = farm_from_results(&cfg, runs.clone());
    for (run, member) in runs.iter().zip(&farm.members) {
        for report in &run.state.history {
            let mut line = serde_json::to_value(report)?;
            line["seed"] = run.seed.into();
            line["kind"] = "update".into();
            writeln!(lock, "{line}")?;
        }
        let mut line = serde_json::to_value(member)?;
        line["kind"] = "summary".into();
        writeln!(lock, "{line}")?;
    }
    if let Some(out) = &args.out {
        fs::write(out, farm.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    let a = &farm.aggregate;
    eprintln!(
        "{}/{} seeds grasped; updates median {} (q1 {}, q3 {})",
        a.successes, a.runs, a.median, a.q1, a.q3
    );
    Ok(if a.successes == a.runs {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_BUDGET)
    })
}

fn refuse_overwrite(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}

fn reproduce(args: ReproduceArgs) -> anyhow::Result<ExitCode> {
    let study: Study = args.study.parse().map_err(anyhow::Error::msg)?;
    let o = &args.overrides;
    let mut opts = StudyOptions {
        seeds: o.seeds(),
        budget: o.budget(),
        sigma: o.sigma,
        latency: o.latency,
        ..StudyOptions::default()
    };
    if let Some(g) = o.goal_sigma {
        opts.goal_sigma = g;
    }
    if let Some(a) = args.algo {
        opts.algos = vec![a];
    }
    if opts.seeds.is_empty() {
        bail!("the seed set must not be empty");
    }
    let default_scenario = if study == Study::Cylinder {
        "cylinder"
    } else {
        "box"
    };
    let scenario = load_scenario(args.scenario.as_deref().unwrap_or(default_scenario))?;
    let out = |name: &str| args.out.join(format!("{}.csv", name));

    match study {
        Study::Fig5 => {
            let path = out("fig5");
            refuse_overwrite(&path, args.force)?;
            let curves = studies::fig5(&scenario, &opts)?;
            studies::write_csv(&path, "fig5", &studies::fig5_rows(&curves), args.force)?;
            for c in &curves {
                println!(
                    "{}: cost {:.4} -> {:.4}, mean updates to threshold {:.1}",
                    c.algo,
                    c.initial(),
                    c.final_cost(),
                    c.mean_updates_to_threshold()
                );
            }
            println!("wrote {}", path.display());
        }
        Study::Fig6 | Study::Fig7 | Study::Cylinder => {
            let path = out(study.name());
            refuse_overwrite(&path, args.force)?;
            let axis = usize::from(study == Study::Fig7);
            let rows =
                studies::displacement_study(&scenario, axis, &studies::DISPLACEMENT_GRID, &opts)?;
            studies::write_csv(
                &path,
                study.name(),
                &studies::displacement_records(&rows),
                args.force,
            )?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
        }
        Study::Uncertainty => {
            let path = out("uncertainty");
            let trace_path = out("uncertainty_trace");
            refuse_overwrite(&path, args.force)?;
            refuse_overwrite(&trace_path, args.force)?;
            let (rows, traces) =
                studies::uncertainty_study(&scenario, &studies::UNCERTAINTY_GRID, &opts)?;
            studies::write_csv(
                &path,
                "uncertainty",
                &studies::uncertainty_records(&rows),
                args.force,
            )?;
            studies::write_csv(&trace_path, "uncertainty_trace", &traces, args.force)?;
            for (m, rate) in studies::success_rates(&rows, Algorithm::Pi2) {
                println!("uncertainty {m:.2} m: success {:.0}%", rate * 100.0);
            }
            println!("wrote {} and {}", path.display(), trace_path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
