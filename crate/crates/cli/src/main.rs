//! `mnl-assort`: run experiments, generate instances, solve LPs and run the
//! verification suites.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric or solver
//! failure, 4 verification failure. Errors are reported on stderr as one
//! JSON object.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use mnl_assortment::lp::{solve_lp, LpData, SolverOptions};
use mnl_assortment::simulator::{
    generate_instance, read_runs_csv, summarize_rows, ClassTuple, ExperimentConfig, GeneratorConfig, SimError,
};
use mnl_assortment::verify::{run_suite, VerifyOptions, SUITES};
use mnl_assortment::{FamilyKind, Instance, UtilityVector};

#[derive(Parser)]
#[command(name = "mnl-assort", version, about = "Online MNL assortment optimization with resource constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `master_seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw a random instance and write it as JSON.
    GenInstance {
        /// `cardinality:B` or `partition:p:b`.
        #[arg(long)]
        family: String,
        #[arg(long = "n")]
        n: usize,
        #[arg(long = "k")]
        k: usize,
        #[arg(long = "r")]
        r: f64,
        #[arg(long = "horizon")]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve LP(v) for an instance, by default with its true utilities.
    SolveLp {
        #[arg(long)]
        instance: PathBuf,
        /// Comma-separated utilities replacing the instance's.
        #[arg(long, value_delimiter = ',')]
        utility: Option<Vec<f64>>,
        /// Write the solution JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the final restricted master in LP format.
        #[arg(long)]
        lp_dump: Option<PathBuf>,
    },
    /// Run a verification suite (or `all`).
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        cap_n: usize,
        #[arg(long, default_value_t = 100_000)]
        cap_family_size: u64,
    },
    /// Re-aggregate one or more per-run CSVs.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Write the aggregate JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Verification(_) => 4,
        }
    }

    fn report(&self) -> String {
        let (kind, message) = match self {
            Failure::Config(m) => ("config", m),
            Failure::Numeric(m) => ("numeric", m),
            Failure::Verification(m) => ("verification", m),
        };
        json!({ "error": kind, "message": message, "exit_code": self.code() }).to_string()
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Io(_) => Failure::Config(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn parse_family(text: &str) -> Result<FamilyKind, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| Failure::Config(format!("family: bad number {s:?} in {text:?}")));
    match parts.as_slice() {
        ["cardinality", b] => Ok(FamilyKind::Cardinality { max_size: num(b)? }),
        ["partition", p, b] => Ok(FamilyKind::PartitionMatroid { blocks: num(p)?, per_block: num(b)? }),
        _ => Err(Failure::Config(format!("family: expected cardinality:B or partition:p:b, got {text:?}"))),
    }
}

fn cmd_run(config: &Path, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let report = mnl_assortment::simulator::run_experiment(&cfg)?;
    report.write(&dir)?;
    for cell in &report.cells {
        println!(
            "class={} T={} runs={} mean_ratio={:.6} mean_regret={:.6} support_match={:.4} cg_iter_max={} failures={}",
            cell.class,
            cell.horizon,
            cell.runs,
            cell.mean_ratio,
            cell.mean_regret,
            cell.support_match_fraction,
            cell.cg_iter_max,
            cell.failures
        );
    }
    for s in &report.slopes {
        match s.regret_slope {
            Some(v) => println!("class={} regret_slope={v:.6}", s.class),
            None => println!("class={} regret_slope=none", s.class),
        }
    }
    info!("wrote results to {}", dir.display());
    if report.capacity_violations > 0 {
        return Err(Failure::Numeric(format!("{} capacity violations", report.capacity_violations)));
    }
    Ok(())
}

fn cmd_gen_instance(family: &str, n: usize, k: usize, r: f64, horizon: u64, seed: u64, out: &Path) -> Result<(), Failure> {
    let class = ClassTuple { name: "cli".into(), family: parse_family(family)?, n, k, bound: r };
    let inst = generate_instance(&class, horizon, seed, &GeneratorConfig::default())?;
    inst.save(out).map_err(|e| Failure::Config(e.to_string()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_solve_lp(instance: &Path, utility: Option<Vec<f64>>, out: Option<PathBuf>, lp_dump: Option<PathBuf>) -> Result<(), Failure> {
    let inst = Instance::load(instance).map_err(|e| Failure::Config(e.to_string()))?;
    let v = match utility {
        Some(values) if values.len() != inst.revenues.len() => {
            return Err(Failure::Config(format!("utility: expected {} values, got {}", inst.revenues.len(), values.len())));
        }
        Some(values) => UtilityVector::new(values, inst.bound()).map_err(|e| Failure::Config(format!("utility: {e}")))?,
        None => inst.v_star.clone(),
    };
    let a = inst.consumption_matrix();
    let data = LpData { revenues: &inst.revenues, consumption: &a, capacity: &inst.capacity_rates, family: &inst.family };
    let res = solve_lp(&data, &v, &SolverOptions::default()).map_err(|e| Failure::Numeric(e.to_string()))?;
    let support: Vec<_> = res
        .distribution
        .support()
        .iter()
        .map(|(s, w)| json!({ "assortment": s.items(), "weight": w }))
        .collect();
    let doc = json!({
        "objective": res.objective,
        "benchmark": res.objective * inst.horizon as f64,
        "support": support,
        "resource_duals": res.resource_duals,
        "convexity_dual": res.convexity_dual,
        "cg_iterations": res.cg_iterations,
        "status": res.status,
        "final_reduced_cost": res.final_reduced_cost,
        "dual_degenerate": res.dual_degenerate,
    });
    let text = serde_json::to_string_pretty(&doc).expect("solution serializes");
    match out {
        Some(path) => write_text(&path, &(text + "\n"))?,
        None => println!("{text}"),
    }
    if let Some(path) = lp_dump {
        write_text(&path, &res.master.to_lp_format())?;
    }
    Ok(())
}

fn cmd_verify(suite: &str, opts: VerifyOptions) -> Result<(), Failure> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let mut failed = Vec::new();
    for name in names {
        let rep = run_suite(name, &opts)
            .ok_or_else(|| Failure::Config(format!("unknown suite {name:?}; expected one of {} or all", SUITES.join(", "))))?;
        println!(
            "suite={} cases={} violations={} worst_slack={:e} status={}",
            rep.suite,
            rep.cases,
            rep.violations,
            rep.worst_slack,
            if rep.passed() { "pass" } else { "fail" }
        );
        for note in &rep.notes {
            println!("  note: {note}");
        }
        if !rep.passed() {
            failed.push(rep.suite);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed suites: {}", failed.join(", "))))
    }
}

fn cmd_report(inputs: &[PathBuf], out: Option<PathBuf>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(read_runs_csv(path)?);
    }
    let (cells, slopes) = summarize_rows(&rows);
    let doc = json!({ "runs": rows.len(), "cells": cells, "slopes": slopes });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    match out {
        Some(path) => write_text(&path, &(text + "\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, threads, seed } => cmd_run(&config, out, threads, seed),
        Command::GenInstance { family, n, k, r, horizon, seed, out } => cmd_gen_instance(&family, n, k, r, horizon, seed, &out),
        Command::SolveLp { instance, utility, out, lp_dump } => cmd_solve_lp(&instance, utility, out, lp_dump),
        Command::Verify { suite, seed, cap_n, cap_family_size } => {
            cmd_verify(&suite, VerifyOptions { seed, cap_n, cap_family_size })
        }
        Command::Report { input, out } => cmd_report(&input, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.code())
        }
    }
}
