//! `v2b`: sample scenarios, solve the oracle, train and evaluate policies.

mod config;
mod output;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use v2b_core::datagen::{estimate_peak, optimal_peaks, sample_month, split_daily};
use v2b_core::eval::{building_only_demand, rows_to_csv, run_policy, summarize, EvalOptions, PolicyId};
use v2b_core::io::{EpisodeFile, Provenance};
use v2b_core::lp::LpStatus;
use v2b_core::oracle::build_episode_lp;
use v2b_core::rl::{train, Checkpoint};
use v2b_core::{
    compute_bill, solve_lp, AssignmentPolicy, BillBreakdown, ChargerSpec, Episode, Error, LpOptions, ObjectiveWeights,
    Simulator,
};

use crate::config::{load_toml, parse_weights, SampleConfig, TrainConfig};
use crate::output::{write_atomic, write_json, Manifest};

#[derive(Debug, Parser)]
#[command(name = "v2b", version, about = "Vehicle-to-building charging laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory; defaults to <V2B_OUT_ROOT>/<command>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "V2B_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
}

impl OutArgs {
    fn dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.out_root.join(command))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw billing periods and write them as episode files.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `n` from the config.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve the oracle LP for one episode file.
    Solve {
        episode: PathBuf,
        /// Objective weights λ_S,λ_E,λ_D.
        #[arg(long, default_value = "1,1,3")]
        weights: String,
        /// Also write the LP in CPLEX format.
        #[arg(long)]
        dump_lp: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a masked DDPG policy.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `ddpg.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Benchmark policies on a directory of episode files.
    Eval {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated policy ids.
        #[arg(long, default_value = "fc,trickle,t-llf,t-edf,cf-llf,cf-edf,oracle")]
        policies: String,
        #[arg(long, default_value = "1,1,3")]
        weights: String,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Infeasible or non-optimal LP outcome.
#[derive(Debug)]
struct SolverStatus(LpStatus);

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "oracle LP ended {:?}", self.0)
    }
}

impl std::error::Error for SolverStatus {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<SolverStatus>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::InvalidInput(_) | Error::Json(_) => 2,
                Error::NegativeDraw { .. } | Error::Solver(_) => 3,
                Error::Numeric(_) => 4,
                Error::Io(_) => 1,
            };
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { config, seed, n, jobs, out } => {
            let mut cfg: SampleConfig = match &config {
                Some(path) => load_toml(path)?,
                None => SampleConfig::default(),
            };
            if let Some(n) = n {
                cfg.n = n;
            }
            cfg.validate()?;
            with_pool(jobs, || cmd_sample(&cfg, seed, &out.dir("sample")))
        }
        Command::Solve { episode, weights, dump_lp, out } => {
            let weights = parse_weights(&weights)?;
            cmd_solve(&episode, weights, dump_lp, &out.dir("solve"))
        }
        Command::Train { config, seed, out } => {
            let mut cfg: TrainConfig = load_toml(&config)?;
            cfg.resolve_paths(config.parent().unwrap_or(Path::new(".")));
            if let Some(seed) = seed {
                cfg.ddpg.seed = seed;
            }
            cfg.ddpg.validate()?;
            cmd_train(&cfg, &out.dir("train"))
        }
        Command::Eval { episodes, checkpoint, policies, weights, jobs, out } => {
            let weights = parse_weights(&weights)?;
            let policies: Vec<PolicyId> =
                policies.split(',').map(|p| p.trim().parse()).collect::<v2b_core::Result<_>>()?;
            if policies.is_empty() {
                return Err(Error::Config("no policies requested".into()).into());
            }
            with_pool(jobs, || cmd_eval(&episodes, checkpoint.as_deref(), &policies, weights, &out.dir("eval")))
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()).into());
        }
        builder = builder.num_threads(j);
    }
    builder.build().context("building thread pool")?.install(f)
}

fn cmd_sample(cfg: &SampleConfig, seed: u64, out: &Path) -> Result<()> {
    let chargers = cfg.scenario.chargers();
    let mut months: Vec<Episode> = (0..cfg.n)
        .into_par_iter()
        .map(|i| sample_month(&cfg.scenario, seed.wrapping_add(i as u64)))
        .collect::<v2b_core::Result<_>>()?;
    let peaks: Vec<f64> = months
        .par_iter()
        .map(|m| optimal_peaks(std::slice::from_ref(m), &chargers, cfg.assignment, cfg.weights).map(|p| p[0]))
        .collect::<v2b_core::Result<_>>()?;
    let p_hat = estimate_peak(&peaks, cfg.peak_inflation)?;
    for m in &mut months {
        m.estimated_peak_kw = p_hat;
    }

    let mut manifest = Manifest::new("sample", Some(seed), cfg);
    for (i, month) in months.iter().enumerate() {
        let month_seed = seed.wrapping_add(i as u64);
        let path = out.join("monthly").join(format!("month_{i:03}.json"));
        let file = EpisodeFile::new(
            chargers.clone(),
            month.clone(),
            Provenance { seed: Some(month_seed), sample: Some(i), day: None },
        );
        write_atomic(&path, file.to_json()?.as_bytes())?;
        manifest.add(out, &path, Some(month_seed));
        if cfg.daily {
            let weekdays = month.day_of_week.iter().enumerate().filter(|(_, &d)| d < 5).map(|(k, _)| k);
            for (day, ep) in weekdays.zip(split_daily(month)?) {
                let path = out.join("daily").join(format!("month_{i:03}_day_{day:02}.json"));
                let file = EpisodeFile::new(
                    chargers.clone(),
                    ep,
                    Provenance { seed: Some(month_seed), sample: Some(i), day: Some(day) },
                );
                write_atomic(&path, file.to_json()?.as_bytes())?;
                manifest.add(out, &path, Some(month_seed));
            }
        }
    }
    manifest.write(out)?;
    println!("wrote {} monthly episodes to {} (estimated peak {p_hat:.3} kW)", cfg.n, out.display());
    Ok(())
}

fn read_episode(path: &Path) -> Result<EpisodeFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EpisodeFile::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

/// Episode files of a directory in name order; `manifest.json` is skipped.
fn read_episode_dir(dir: &Path) -> Result<(Vec<ChargerSpec>, Vec<(String, Episode)>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no episode files in {}", dir.display())).into());
    }
    let mut chargers: Option<Vec<ChargerSpec>> = None;
    let mut episodes = Vec::with_capacity(paths.len());
    for path in &paths {
        let file = read_episode(path)?;
        match &chargers {
            None => chargers = Some(file.chargers),
            Some(c) if *c != file.chargers => {
                return Err(Error::Config(format!("{} uses a different fleet", path.display())).into());
            }
            Some(_) => {}
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        episodes.push((name, file.episode));
    }
    Ok((chargers.expect("at least one file"), episodes))
}

#[derive(Debug, Serialize)]
struct SolveReport {
    status: LpStatus,
    objective_value: f64,
    peak_kw: f64,
    iterations: usize,
    bill: BillBreakdown,
    missing_soc_kwh: Vec<(usize, f64)>,
    schedule_kw: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct SolveConfig<'a> {
    episode: &'a Path,
    weights: ObjectiveWeights,
}

fn cmd_solve(episode_path: &Path, weights: ObjectiveWeights, dump_lp: bool, out: &Path) -> Result<()> {
    let file = read_episode(episode_path)?;
    let options = LpOptions { weights, ..Default::default() };
    let assignment = AssignmentPolicy::default();
    let problem = build_episode_lp(&file.episode, &file.chargers, assignment, &options)?;
    let mut manifest = Manifest::new("solve", file.provenance.seed, SolveConfig { episode: episode_path, weights });
    if dump_lp {
        let path = out.join("problem.lp");
        write_atomic(&path, problem.to_lp_format().as_bytes())?;
        manifest.add(out, &path, None);
    }
    let sol = solve_lp(&problem)?;
    if sol.status != LpStatus::Optimal {
        manifest.write(out)?;
        return Err(SolverStatus(sol.status).into());
    }
    let mut sim = Simulator::new(&file.episode, &file.chargers, assignment)?;
    for action in &sol.schedule {
        sim.step(action)?;
    }
    let bill = compute_bill(&file.episode, &sol.schedule, &sim.state.soc)?;
    let report = SolveReport {
        status: sol.status,
        objective_value: sol.objective_value,
        peak_kw: sol.peak_kw,
        iterations: sol.iterations,
        bill,
        missing_soc_kwh: sol.missing_soc_kwh,
        schedule_kw: sol.schedule.into_iter().map(|a| a.power_kw).collect(),
    };
    let path = out.join("solution.json");
    write_json(&path, &report)?;
    manifest.add(out, &path, None);
    manifest.write(out)?;
    println!(
        "optimal: total bill {:.4} USD (energy {:.4}, demand {:.4}), peak {:.3} kW, missing {:.4} kWh",
        bill.total_usd, bill.energy_cost_usd, bill.demand_charge_usd, bill.peak_power_kw, bill.missing_soc_kwh
    );
    Ok(())
}

fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let (chargers, train_eps) = read_episode_dir(&cfg.train_dir)?;
    let train_eps: Vec<Episode> = train_eps.into_iter().map(|(_, e)| e).collect();
    let held_out: Vec<Episode> = match &cfg.held_out_dir {
        Some(dir) => {
            let (c, eps) = read_episode_dir(dir)?;
            if c != chargers {
                bail!(Error::Config("held-out episodes use a different fleet".into()));
            }
            eps.into_iter().map(|(_, e)| e).collect()
        }
        None => Vec::new(),
    };
    let outcome = train(&train_eps, &held_out, &chargers, &cfg.ddpg)?;
    let mut manifest = Manifest::new("train", Some(cfg.ddpg.seed), cfg);

    let ckpt = outcome.checkpoint(&chargers, cfg.ddpg.offpeak_greedy);
    let path = out.join("checkpoint.json");
    write_atomic(&path, ckpt.to_json()?.as_bytes())?;
    manifest.add(out, &path, Some(cfg.ddpg.seed));

    let mut csv = String::from("step,episode,reward,eval_objective\n");
    for row in &outcome.log {
        let eval = row.eval_objective.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(csv, "{},{},{:.6},{eval}", row.step, row.episode, row.reward)?;
    }
    let path = out.join("train_log.csv");
    write_atomic(&path, csv.as_bytes())?;
    manifest.add(out, &path, None);
    manifest.write(out)?;
    println!(
        "trained {} steps over {} episodes{}",
        outcome.steps,
        outcome.log.len(),
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalConfig<'a> {
    episodes: &'a Path,
    checkpoint: Option<&'a Path>,
    policies: Vec<&'static str>,
    weights: ObjectiveWeights,
}

#[derive(Debug, Serialize)]
struct EpisodeResult {
    policy: &'static str,
    episode: String,
    bill: BillBreakdown,
    shave_usd: f64,
}

fn cmd_eval(
    dir: &Path,
    checkpoint: Option<&Path>,
    policies: &[PolicyId],
    weights: ObjectiveWeights,
    out: &Path,
) -> Result<()> {
    let (chargers, episodes) = read_episode_dir(dir)?;
    let rl = match checkpoint {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let ckpt = Checkpoint::from_json(&text)?;
            if ckpt.chargers != chargers {
                bail!(Error::Config("checkpoint was trained on a different fleet".into()));
            }
            Some(ckpt.policy()?)
        }
        None => None,
    };
    if policies.contains(&PolicyId::Rl) && rl.is_none() {
        bail!(Error::Config("policy rl needs --checkpoint".into()));
    }
    let mut ids = policies.to_vec();
    ids.sort_by_key(|p| p.id());
    ids.dedup();
    let options = EvalOptions { weights, ..Default::default() };

    let baseline: Vec<f64> = episodes
        .par_iter()
        .map(|(_, e)| building_only_demand(e, chargers.len()))
        .collect::<v2b_core::Result<_>>()?;
    let mut rows = Vec::with_capacity(ids.len());
    let mut per_episode = Vec::new();
    for &p in &ids {
        let bills: Vec<BillBreakdown> = episodes
            .par_iter()
            .map(|(_, e)| run_policy(e, &chargers, p, rl.as_ref(), &options))
            .collect::<v2b_core::Result<_>>()?;
        rows.push(summarize(p.id(), &bills, &baseline, &weights));
        for ((name, _), (bill, base)) in episodes.iter().zip(bills.iter().zip(&baseline)) {
            per_episode.push(EpisodeResult {
                policy: p.id(),
                episode: name.clone(),
                bill: *bill,
                shave_usd: base - bill.demand_charge_usd,
            });
        }
    }

    let cfg = EvalConfig { episodes: dir, checkpoint, policies: ids.iter().map(|p| p.id()).collect(), weights };
    let mut manifest = Manifest::new("eval", None, cfg);
    let path = out.join("eval.csv");
    write_atomic(&path, rows_to_csv(&rows).as_bytes())?;
    manifest.add(out, &path, None);
    let path = out.join("eval.json");
    write_json(&path, &rows)?;
    manifest.add(out, &path, None);

    let mut csv = String::from("policy,episode,total_usd,energy_usd,demand_usd,peak_kw,missing_kwh,shave_usd\n");
    for r in &per_episode {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.policy,
            r.episode,
            r.bill.total_usd,
            r.bill.energy_cost_usd,
            r.bill.demand_charge_usd,
            r.bill.peak_power_kw,
            r.bill.missing_soc_kwh,
            r.shave_usd
        )?;
    }
    let path = out.join("eval_episodes.csv");
    write_atomic(&path, csv.as_bytes())?;
    manifest.add(out, &path, None);
    manifest.write(out)?;
    print!("{}", rows_to_csv(&rows));
    Ok(())
}
