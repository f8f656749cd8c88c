use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use saferl::falsify::Algorithm;
use saferl::library::Library;
use saferl::orchestrator::{
    self, build_risky_suite, evaluate_suite, evaluate_uniform, export_trajectories, read_suite, run_loop,
    write_suite, EvalGroup, EvalPolicy, EvalReport, RunConfig,
};
use saferl::policy::{self, PolicyParams};
use saferl::sim::{IdmController, ScenarioParams};
use saferl::util;
use saferl::{Error, Result};

/// Self-improving adaptive cruise control: train, falsify, replay.
#[derive(Parser)]
#[command(name = "saferl", version)]
struct Cli {
    /// TOML file overlaid on the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for single-run commands; for `loop` and evaluations, replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Start from the desk-scale profile instead of the full-size one.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Driver {
    /// Weight file of a trained policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Use the rule-based IDM controller.
    #[arg(long)]
    idm: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one generation.
    Train {
        /// Start from these weights instead of a random init.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Replay scenarios from this library.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Run one falsifier against a policy.
    Verify {
        #[arg(long)]
        algo: Algorithm,
        #[arg(long)]
        policy: PathBuf,
        /// Evaluation budget; defaults to `n_verify`.
        #[arg(long)]
        n: Option<usize>,
        /// Generation index written into the records.
        #[arg(long, default_value_t = 0)]
        gen: usize,
    },
    /// Train, verify and store for every generation and seed.
    Loop,
    /// Collision counts on uniform scenarios.
    EvalUniform {
        /// Weight files; each becomes one report group.
        #[arg(long = "policy")]
        policies: Vec<PathBuf>,
        /// Add the IDM baseline as a group.
        #[arg(long)]
        idm: bool,
    },
    /// Pool risky falsifier samples into a scenario suite.
    BuildSuite {
        #[arg(long = "policy", required = true)]
        policies: Vec<PathBuf>,
    },
    /// Collision counts on a scenario suite.
    EvalSuite {
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        driver: Driver,
    },
    /// Write per-step trajectories for a list of scenarios.
    ExportTraj {
        /// Any JSON-lines file whose records carry `params`.
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        driver: Driver,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "policy".into(), |s| s.to_string_lossy().into_owned())
}

fn driver_policy(d: &Driver, stochastic: bool) -> Result<EvalPolicy> {
    match &d.policy {
        Some(p) => Ok(EvalPolicy::from_params(policy::load(p)?, stochastic)),
        None => Ok(EvalPolicy::Idm(IdmController::default())),
    }
}

fn driver_label(d: &Driver) -> String {
    d.policy.as_deref().map_or_else(|| "idm".into(), label_of)
}

fn write_records(path: &Path, recs: &mut [orchestrator::EpisodeRecord], hash: &str) -> Result<()> {
    recs.iter_mut().for_each(|r| r.config_hash = Some(hash.to_string()));
    util::write_atomic(path, &util::to_jsonl(recs.iter())?)
}

/// Scenario vectors from the `params` field of each JSON line.
fn read_scenarios(path: &Path) -> Result<Vec<ScenarioParams>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        let Some(p) = v.get("params") else { continue };
        let p: Vec<f64> = serde_json::from_value(p.clone()).map_err(|e| {
            Error::InvalidArgument(format!("{}:{}: {e}", path.display(), k + 1))
        })?;
        out.push(ScenarioParams::from_slice(&p)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.desk_scale)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.out = Some(out.clone());
    if let Command::Verify { algo, n, .. } = &cli.command {
        cfg.algorithm = *algo;
        cfg.n_verify = n.unwrap_or(cfg.n_verify);
        cfg.validate()?;
    }
    let seed = cfg.seeds[0];
    let hash = cfg.hash();

    match cli.command {
        Command::Train { init, library } => {
            let init = match init {
                Some(p) => policy::load(&p)?,
                None => orchestrator::initial_policy(&cfg, seed),
            };
            let mut library = match library {
                Some(p) => Library::open(&p)?,
                None => Library::new(cfg.sim.bounds),
            };
            library.tau_filter = cfg.tau_filter.then_some(cfg.tau);
            let gen = library.num_generations();
            let params = orchestrator::train_stage(&init, &library, &cfg, seed, gen, &out, &hash)?;
            Ok(json!({
                "command": "train",
                "policy": out.join("policy.bin"),
                "fingerprint": params.fingerprint(),
                "steps": cfg.train.steps_per_generation,
                "config_hash": hash,
            }))
        }
        Command::Verify { policy: path, gen, .. } => {
            let params: PolicyParams = policy::load(&path)?;
            let est = orchestrator::verify_policy(&params, &cfg, seed, gen)?;
            util::write_atomic(&out.join("verify.jsonl"), &est.to_jsonl(gen, Some(hash.clone()))?)?;
            Ok(serde_json::to_value(est.summary(gen, Some(hash)))?)
        }
        Command::Loop => {
            let outcome = run_loop(&cfg, &out)?;
            let ratios: Vec<Option<f64>> = (0..=cfg.generations).map(|g| outcome.ratio(g)).collect();
            Ok(json!({
                "command": "loop",
                "report": out.join("report.json"),
                "ratios": ratios,
                "config_hash": hash,
            }))
        }
        Command::EvalUniform { policies, idm } => {
            if policies.is_empty() && !idm {
                return Err(Error::InvalidArgument("give at least one --policy or --idm".into()));
            }
            let mut drivers: Vec<(String, EvalPolicy)> = Vec::new();
            for p in &policies {
                drivers.push((label_of(p), EvalPolicy::from_params(policy::load(p)?, cfg.eval_stochastic)));
            }
            if idm {
                drivers.push(("idm".into(), EvalPolicy::Idm(IdmController::default())));
            }
            let mut groups = Vec::new();
            let mut records = Vec::new();
            for (label, pol) in &drivers {
                let (g, r) = evaluate_uniform(pol, label, &cfg.sim, cfg.n_eval_scenarios, &cfg.seeds)?;
                groups.push(g);
                records.extend(r);
            }
            finish_report(groups, records, &out, "eval_uniform", &hash)
        }
        Command::BuildSuite { policies } => {
            let params = policies.iter().map(|p| policy::load(p)).collect::<Result<Vec<_>>>()?;
            let mut suite = build_risky_suite(&params, &cfg.suite, cfg.n_verify, cfg.tau, &cfg.sim, seed)?;
            suite.header.config_hash = Some(hash);
            let path = out.join("suite.jsonl");
            write_suite(&suite, &path)?;
            Ok(json!({"command": "build-suite", "suite": path, "header": suite.header}))
        }
        Command::EvalSuite { suite, driver } => {
            let suite = read_suite(&suite)?.scenarios();
            let pol = driver_policy(&driver, cfg.eval_stochastic)?;
            let (g, r) = evaluate_suite(&pol, &driver_label(&driver), &cfg.sim, &suite, &cfg.seeds)?;
            finish_report(vec![g], r, &out, "eval_suite", &hash)
        }
        Command::ExportTraj { scenarios, limit, driver } => {
            let mut list = read_scenarios(&scenarios)?;
            if let Some(l) = limit {
                list.truncate(l);
            }
            let pol = driver_policy(&driver, cfg.eval_stochastic)?;
            let index = export_trajectories(&pol, &list, &cfg.sim, &out, Some(&hash))?;
            Ok(json!({
                "command": "export-traj",
                "index": out.join("index.jsonl"),
                "count": index.len(),
                "collisions": index.iter().filter(|r| r.collided).count(),
            }))
        }
    }
}

fn finish_report(
    groups: Vec<EvalGroup>,
    mut records: Vec<orchestrator::EpisodeRecord>,
    out: &Path,
    stem: &str,
    hash: &str,
) -> Result<serde_json::Value> {
    write_records(&out.join(format!("{stem}.jsonl")), &mut records, hash)?;
    let first = groups[0].label.clone();
    let mut report = EvalReport::new(groups, Some(hash.to_string()));
    report.normalize(&first)?;
    let path = out.join(format!("{stem}_report.json"));
    util::write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    Ok(json!({
        "command": stem.replace('_', "-"),
        "report": path,
        "collisions": report.groups.iter().map(|g| json!({"label": g.label, "mean": g.collisions.mean, "std": g.collisions.std})).collect::<Vec<_>>(),
    }))
}
