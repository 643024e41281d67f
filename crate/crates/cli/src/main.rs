use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftguard_core::archive::Archive;
use driftguard_core::checkpoints::Verdict;
use driftguard_core::experiments::{
    run_ablation, run_sequence, run_single, session_medians, ExperimentConfig, Runtime, SessionSummary,
};
use driftguard_core::pipeline::{summarize, trace_to_jsonl, write_ablation_csv, Outcome, SessionTrace};

#[derive(Parser)]
#[command(name = "driftguard", version, about = "Checkpoint-guarded sensitivity analysis sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. DRIFTGUARD_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace the configured seeds with this one.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// One session; writes the trace JSONL and a summary.
    Run,
    /// Condition x seed grid; writes the comparison CSV.
    Ablate,
    /// Consecutive sessions sharing archive and policy; writes the session and CP0 tables.
    Sessions,
}

enum Failure {
    Config(String),
    Aborted(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.to_string())
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.out.join(format!("{}{suffix}", self.cfg.experiment))
    }
}

fn load(cli: &Cli) -> Result<Ctx, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = cli.seed_override {
        cfg = cfg.with_seed(s);
    }
    if cfg.session.archive_path.is_none() {
        cfg.session.archive_path = cfg.policy_path.clone();
    }
    let out = std::env::var_os("DRIFTGUARD_OUT")
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    ensure_writable(&out)?;
    Ok(Ctx { cfg, out, quiet: cli.quiet })
}

fn ensure_writable(dir: &Path) -> Result<(), Failure> {
    let bad = |e: std::io::Error| Failure::Config(format!("output directory {} is not writable: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(bad)?;
    let probe = dir.join(".driftguard-write-test");
    fs::write(&probe, b"").map_err(bad)?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write_traces<'a>(path: &Path, traces: impl IntoIterator<Item = &'a SessionTrace>) -> Result<(), Failure> {
    let mut text = String::new();
    for t in traces {
        text += &trace_to_jsonl(t)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_run(ctx: &Ctx) -> Result<(), Failure> {
    let mut cfg = ctx.cfg.clone();
    cfg.session.seed = cfg.seeds[0];
    let t = run_single(&cfg)?;
    let stem = format!("-seed{}", cfg.session.seed);
    write_traces(&ctx.path(&format!("{stem}.jsonl")), [&t])?;
    let summary = serde_json::json!({
        "session_id": t.session_id,
        "outcome": t.outcome,
        "best_reward": t.best_reward,
        "iterations": t.iterations.len(),
        "iterations_to_converge": t.iterations_to_converge,
        "mismatches": t.mismatches(),
        "cp_blocks": t.count_verdicts(Verdict::Block),
        "cp_warnings": t.count_verdicts(Verdict::Warn),
        "submartingale_flags": t.submartingale_flags,
        "abort_reason": t.abort_reason,
    });
    fs::write(ctx.path(&format!("{stem}.summary.json")), serde_json::to_string_pretty(&summary)? + "\n")?;
    ctx.say(format!(
        "{}: {:?} best {:.2} after {} iterations, {} checkpoint blocks, {} warnings",
        t.session_id,
        t.outcome,
        t.best_reward,
        t.iterations.len(),
        t.count_verdicts(Verdict::Block),
        t.count_verdicts(Verdict::Warn)
    ));
    match t.outcome {
        Outcome::Aborted => Err(Failure::Aborted(t.abort_reason.unwrap_or_default())),
        _ => Ok(()),
    }
}

fn cmd_ablate(ctx: &Ctx) -> Result<(), Failure> {
    let run = run_ablation(&ctx.cfg)?;
    write_ablation_csv(&run.rows, BufWriter::new(File::create(ctx.path(".csv"))?))?;
    write_traces(&ctx.path(".jsonl"), &run.traces)?;
    let summary = summarize(&run.rows);
    let mut w = csv::Writer::from_path(ctx.path(".summary.csv"))?;
    for s in &summary {
        w.serialize(s)?;
        ctx.say(format!(
            "{}: {} runs, {} with mismatch, mean first reward {:.2}, median iterations to converge {:?}, {} blocks",
            s.condition, s.runs, s.runs_with_mismatch, s.mean_first_reward, s.median_iterations_to_converge, s.cp_blocks
        ));
    }
    w.flush()?;
    Ok(())
}

/// The serde name of a unit variant.
fn label<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn cmd_sessions(ctx: &Ctx) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let mut rows: Vec<SessionSummary> = Vec::new();
    let mut traces = Vec::new();
    let rt = Runtime::new(cfg)?;
    // With a path, one archive file carries over across seeds in seed order.
    let mut shared = cfg.session.archive_path.as_deref().map(Archive::load).transpose()?;
    for &seed in &cfg.seeds {
        let mut fresh = Archive::in_memory();
        let archive = shared.as_mut().unwrap_or(&mut fresh);
        for (s, t) in run_sequence(&rt, cfg, seed, archive)? {
            rows.push(s);
            traces.push(t);
        }
    }
    let mut w = csv::Writer::from_path(ctx.path(".sessions.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut cp0 = csv::Writer::from_path(ctx.path(".cp0.csv"))?;
    cp0.write_record(["seed", "session", "model_id", "similarity", "match", "exploration_mode", "screening_first"])?;
    for r in &rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        cp0.write_record([
            r.seed.to_string(),
            r.session.to_string(),
            r.model_id.clone(),
            opt(r.cp0_similarity.map(|s| format!("{s:.4}"))),
            opt(r.cp0_match.map(label)),
            opt(r.exploration_mode.map(label)),
            r.screening_first.to_string(),
        ])?;
        ctx.say(format!(
            "seed {} session {} {}: best {:.2} at iteration {:?}; CP0 {:?}/{:?} [{}]",
            r.seed, r.session, r.model_id, r.best_reward, r.iterations_to_best, r.cp0_match, r.exploration_mode, r.estimators
        ));
    }
    cp0.flush()?;
    write_traces(&ctx.path(".jsonl"), &traces)?;
    if cfg.seeds.len() > 1 {
        let per_seed: Vec<Vec<SessionSummary>> =
            cfg.seeds.iter().map(|s| rows.iter().filter(|r| r.seed == *s).cloned().collect()).collect();
        let (best, iters) = session_medians(&per_seed);
        ctx.say(format!("medians over {} seeds: best {best:?}, iterations to best {iters:?}", cfg.seeds.len()));
    }
    match rows.iter().find(|r| r.outcome == Outcome::Aborted) {
        Some(r) => Err(Failure::Aborted(format!("{} aborted", r.session_id))),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|ctx| match cli.command {
        Command::Run => cmd_run(&ctx),
        Command::Ablate => cmd_ablate(&ctx),
        Command::Sessions => cmd_sessions(&ctx),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Aborted(m)) => {
            eprintln!("session aborted: {m}");
            ExitCode::from(2)
        }
    }
}
