use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wadmarket_cli::report::{self, num, Table};
use wadmarket_cli::scenario::{formal_phase, selection_phase, trial_phase};
use wadmarket_cli::{run_scenario, run_study, Artifacts, KvConfig, Scenario, ScenarioConfig, Study};
use wadmarket_core::estimation::{self, at_budget, budgets, fit, min_budget_for_target, project_scale, r_squared, DEFAULT_RIDGE};
use wadmarket_market::{audit_no_raw_leak, serve, AuditLog, SelectionOutcome, DEFAULT_PORT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportKind {
    Inproc,
    Tcp,
}

/// Federated data-marketplace simulator: trial runs, performance estimation,
/// mixing-ratio selection and formal training.
#[derive(Debug, Parser)]
#[command(name = "wadmarket", version)]
struct Cli {
    /// Scenario config (`key = value` lines); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra config entries, e.g. `--set fed.rounds=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_enum, default_value_t = TransportKind::Inproc)]
    transport: TransportKind,
    /// Party host address for `--transport tcp`.
    #[arg(long, global = true)]
    connect: Option<String>,
    /// Address `serve` binds to.
    #[arg(long, global = true)]
    listen: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write every party's data as CSV under `<out>/data`.
    GenData,
    /// Trial runs at both budgets; resumes from `records.jsonl`.
    TrialRuns,
    /// Fit the configured estimator at each trial budget.
    Fit,
    /// Optimise the mixing ratio from the recorded trials.
    Select,
    /// Project each ratio's trial performance to a larger budget.
    Project {
        /// Target budget; the config's formal budget by default.
        #[arg(long)]
        n: Option<usize>,
        /// Also report the smallest budget reaching this value.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Formal training at the selected ratio (or `--p`).
    FormalTrain {
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
    },
    /// Run one of the canned studies.
    Study {
        #[arg(value_enum)]
        name: Study,
    },
    /// Check every `audit*.jsonl` in the output directory for raw-data leaks.
    Audit,
    /// Trial runs, selection and formal training in one session.
    Run,
    /// Host the sellers and buyer for one platform connection over TCP.
    Serve,
}

impl Cli {
    fn scenario_config(&self) -> Result<ScenarioConfig> {
        let mut overrides: Vec<(String, String)> = Vec::new();
        for entry in &self.set {
            let (k, v) = entry
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{entry}`"))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), s.to_string()));
        }
        if let Some(o) = &self.out {
            overrides.push(("out".into(), o.display().to_string()));
        }
        let cfg = match &self.config {
            Some(path) => {
                let pairs: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                ScenarioConfig::load(path, &pairs).with_context(|| format!("loading {}", path.display()))?
            }
            None => {
                let mut kv = KvConfig::parse("<defaults>", "")?;
                for (k, v) in &overrides {
                    kv.set(k, v.clone());
                }
                ScenarioConfig::from_kv(&kv, None)?
            }
        };
        Ok(cfg)
    }

    fn connect(&self) -> Result<Option<String>> {
        match (self.transport, &self.connect) {
            (TransportKind::Inproc, None) => Ok(None),
            (TransportKind::Inproc, Some(_)) => bail!("--connect needs --transport tcp"),
            (TransportKind::Tcp, Some(addr)) => Ok(Some(addr.clone())),
            (TransportKind::Tcp, None) => Ok(Some(format!("127.0.0.1:{DEFAULT_PORT}"))),
        }
    }
}

fn records_or_bail(art: &Artifacts) -> Result<Vec<estimation::TrialRecord>> {
    let path = art.records();
    let records = estimation::read_records(&path)?;
    if records.is_empty() {
        bail!("no trial records in {}; run `trial-runs` first", path.display());
    }
    Ok(records)
}

fn audit_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut logs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("audit") && n.ends_with(".jsonl"))
        })
        .collect();
    logs.sort();
    Ok(logs)
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = cli.scenario_config()?;
    let out = cfg.out.clone();
    let connect = cli.connect()?;
    let scenario = Scenario::build(cfg.clone())?;
    let art = Artifacts::new(&out)?;
    let m = cfg.num_sellers;
    match &cli.command {
        Command::GenData => {
            for p in scenario.write_data(&out.join("data"))? {
                println!("{}", p.display());
            }
        }
        Command::TrialRuns => {
            let mut session = scenario.session(connect.as_deref())?.with_records(&art.records())?;
            let records = trial_phase(&scenario, &mut session)?;
            session.finish().write(&art.audit())?;
            report::write_report(&art.report(), &records, None, m)?;
            report::write_curves(&art.curves(), &records)?;
            println!("{} trial records in {}", records.len(), art.records().display());
        }
        Command::Fit => {
            let records = records_or_bail(&art)?;
            let mut table = Table::new(&["n", "estimator", "records", "r2"]);
            let mut fitted = Vec::new();
            for n in budgets(&records) {
                let at_n = at_budget(&records, n);
                let est = fit(&at_n, cfg.estimator, DEFAULT_RIDGE)?;
                let r2 = r_squared(&est, &at_n)?;
                table.push(vec![n.to_string(), cfg.estimator.name().into(), at_n.len().to_string(), num(r2.value)]);
                fitted.push(est);
            }
            report::write_json(&out.join("fit.json"), &fitted)?;
            print!("{table}");
        }
        Command::Select => {
            records_or_bail(&art)?;
            let mut session = scenario.session(connect.as_deref())?.with_records(&art.records())?;
            let outcome = selection_phase(&scenario, &mut session)?;
            session.finish().write(&out.join("audit_select.jsonl"))?;
            report::write_json(&art.selection(), &outcome)?;
            report::write_trajectory(&art.trajectory(), &outcome.trajectory)?;
            println!("p* = {:?}  projected = {}", outcome.p_star, num(outcome.projected));
        }
        Command::Project { n, target } => {
            let records = records_or_bail(&art)?;
            let found = budgets(&records);
            if found.len() < 2 {
                bail!("projection needs trials at two budgets, found {found:?}");
            }
            let (n_i, n_j) = (found[0], found[found.len() - 1]);
            let n = n.unwrap_or(cfg.formal_n);
            let mut header = vec!["run_id", "v_i", "v_j", "projected"];
            if target.is_some() {
                header.push("min_budget");
            }
            let mut table = Table::new(&header);
            for r in at_budget(&records, n_i) {
                let Some(other) = records.iter().find(|o| o.n == n_j && o.p == r.p) else {
                    continue;
                };
                let mut row = vec![r.run_id.clone(), num(r.v), num(other.v), num(project_scale(r.v, other.v, n_i, n_j, n)?)];
                if let Some(t) = target {
                    let b = min_budget_for_target(r.v, other.v, n_i, n_j, *t, 1, 1 << 40)?;
                    row.push(b.map_or_else(|| "unreachable".into(), |b| b.to_string()));
                }
                table.push(row);
            }
            table.write_csv(&out.join("projection.csv"))?;
            print!("{table}");
        }
        Command::FormalTrain { p } => {
            let p = match p {
                Some(p) => p.clone(),
                None => {
                    let sel: SelectionOutcome = report::read_json(&art.selection())
                        .context("no selection.json; run `select` first or pass --p")?;
                    sel.p_star
                }
            };
            let mut session = scenario.session(connect.as_deref())?;
            let formal = formal_phase(&scenario, &mut session, &p)?;
            session.finish().write(&out.join("audit_formal.jsonl"))?;
            report::write_json(&art.formal(), &formal)?;
            let records = estimation::read_records(&art.records())?;
            report::write_report(&art.report(), &records, Some(&formal), m)?;
            println!("accuracy = {}  loss = {}", num(formal.eval.accuracy), num(formal.eval.loss));
        }
        Command::Study { name } => {
            let table = run_study(*name, &cfg, &out)?;
            print!("{table}");
        }
        Command::Audit => {
            let logs = audit_logs(&out)?;
            if logs.is_empty() {
                bail!("no audit logs in {}", out.display());
            }
            let raw = scenario.raw_views();
            let mut all = true;
            for path in logs {
                let log = AuditLog::read(&path)?;
                let rep = audit_no_raw_leak(&log, &raw, cfg.t_min);
                println!(
                    "{}: {} ({} messages{})",
                    path.display(),
                    if rep.pass { "PASS" } else { "FAIL" },
                    rep.messages_checked,
                    if rep.complete { "" } else { ", incomplete" }
                );
                for v in &rep.violations {
                    println!("  message {}: {:?}: {}", v.message, v.rule, v.detail);
                }
                all &= rep.pass;
            }
            return Ok(all);
        }
        Command::Run => {
            let run = run_scenario(&scenario, connect.as_deref(), &out)?;
            let rep = audit_no_raw_leak(&run.log, &scenario.raw_views(), cfg.t_min);
            println!("trials: {}", run.records.len());
            println!("p* = {:?}  projected = {}", run.selection.p_star, num(run.selection.projected));
            println!("formal accuracy = {}", num(run.formal.eval.accuracy));
            println!("audit: {}", if rep.pass { "PASS" } else { "FAIL" });
            return Ok(rep.pass);
        }
        Command::Serve => {
            let addr = cli.listen.clone().unwrap_or_else(|| format!("127.0.0.1:{DEFAULT_PORT}"));
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            log::info!("serving {} sellers and the buyer on {addr}", m);
            let mut host = scenario.session_config().host(scenario.sellers.clone(), scenario.val.clone())?;
            serve(&listener, &mut host)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
