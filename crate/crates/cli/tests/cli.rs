use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn driftguard(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftguard"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env_remove("DRIFTGUARD_OUT")
        .output()
        .unwrap()
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    driftguard(&args, out)
}

/// Writes an edited copy of a shipped config.
fn edited(name: &str, dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(config(name)).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join(format!("{name}-edited.json"));
    fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| l.split(',').map(String::from).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].as_str()).collect()
}

#[test]
fn beam_run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", &config("beam_run"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = dir.path().join("beam_run-seed0.jsonl");
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.lines().next().unwrap().contains("\"type\":\"header\""));
    assert!(text.lines().last().unwrap().contains("\"type\":\"summary\""));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("beam_run-seed0.summary.json")).unwrap()).unwrap();
    assert!(summary["best_reward"].as_f64().unwrap() > 0.0);
    assert!(summary.get("cp_blocks").is_some());
}

#[test]
fn unknown_problem_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("beam_run", dir.path(), |v| v["problem"]["model_id"] = "no_such_model".into());
    let o = run("run", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_model"));
}

#[test]
fn missing_config_and_unwritable_output_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(driftguard(&["run"], dir.path()).status.code(), Some(1));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(run("run", &config("beam_run"), &blocker, &[]).status.code(), Some(1));
}

#[test]
fn off_topic_request_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("beam_run", dir.path(), |v| {
        v["problem"]["request"] = "please book two train tickets to the seaside for saturday".into()
    });
    let o = run("run", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run("run", &config("eq3_ablation"), out, &["--seed-override", "5"]).status.code(), Some(0));
    }
    let read = |d: &Path| fs::read(d.join("eq3_ablation-seed5.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn env_var_overrides_out() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_driftguard"))
        .args(["run", "--quiet", "--config", config("beam_run").to_str().unwrap(), "--out"])
        .arg(dir.path().join("from_flag"))
        .env("DRIFTGUARD_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env_out.join("beam_run-seed0.jsonl").exists());
    assert!(!dir.path().join("from_flag").exists());
}

#[test]
fn eq3_ablation_table_shape() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("ablate", &config("eq3_ablation"), dir.path(), &[]).status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("eq3_ablation.csv"));
    assert_eq!(rows.len(), 6);
    assert!(header.iter().any(|h| h == "match"));
    assert_eq!(column(&header, &rows, "condition"), ["no_cp", "no_cp", "no_cp", "cp", "cp", "cp"]);
    assert!(column(&header, &rows, "mismatches")[3..].iter().all(|m| *m == "0"));
    assert!(dir.path().join("eq3_ablation.summary.csv").exists());
}

#[test]
fn cp5_table_reports_iterations_to_converge() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("ablate", &config("cp5_method_swap"), dir.path(), &[]).status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("cp5_method_swap.csv"));
    let conv = column(&header, &rows, "iterations_to_converge");
    assert_eq!(column(&header, &rows, "condition"), ["ablated", "full"]);
    assert!(conv[0].parse::<u32>().unwrap() >= 3);
    assert_eq!(conv[1], "1");
}

#[test]
fn no_conditions_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("eq3_ablation", dir.path(), |v| v["conditions"] = Value::Array(vec![]));
    assert_eq!(run("ablate", &cfg, &dir.path().join("out"), &[]).status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("out/eq3_ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn g_function_sessions_best_reward_never_drops() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("sessions", &config("g_function_sessions"), dir.path(), &["--seed-override", "0"]).status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("g_function_sessions.sessions.csv"));
    let best: Vec<f64> = column(&header, &rows, "best_reward").iter().map(|b| b.parse().unwrap()).collect();
    assert_eq!(best.len(), 3);
    assert!(best.windows(2).all(|w| w[1] >= w[0]), "{best:?}");
}

#[test]
fn cp0_contrast_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("sessions", &config("cp0_contrast"), dir.path(), &[]).status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.path().join("cp0_contrast.cp0.csv"));
    let m = column(&header, &rows, "match");
    let e = column(&header, &rows, "exploration_mode");
    assert_eq!((m[1], e[1]), ("close", "exploit"));
    assert_eq!((m[2], e[2]), ("none", "explore_max"));
    assert_eq!(column(&header, &rows, "screening_first")[2], "true");
}

#[test]
fn one_session_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited("g_function_sessions", dir.path(), |v| {
        v["sessions"] = Value::Array(vec![]);
        v["seeds"] = serde_json::json!([0]);
    });
    assert_eq!(run("sessions", &cfg, &dir.path().join("out"), &[]).status.code(), Some(0));
    let (_, rows) = csv_rows(&dir.path().join("out/g_function_sessions.sessions.csv"));
    assert_eq!(rows.len(), 1);
}

#[test]
fn policy_file_carries_over_between_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("archive.json");
    let cfg = edited("beam_run", dir.path(), |v| {
        v["policy_path"] = archive.to_str().unwrap().into();
        v["session"]["persist_policy"] = true.into();
    });
    for (i, out) in ["one", "two"].iter().enumerate() {
        assert_eq!(run("sessions", &cfg, &dir.path().join(out), &[]).status.code(), Some(0));
        let (header, rows) = csv_rows(&dir.path().join(out).join("beam_run.cp0.csv"));
        assert_eq!(column(&header, &rows, "match")[0], if i == 0 { "none" } else { "close" });
    }
    let stored: Value = serde_json::from_str(&fs::read_to_string(&archive).unwrap()).unwrap();
    assert_eq!(stored["entries"].as_array().unwrap().len(), 2);
    assert!(!stored["policy"].is_null());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        driftguard_core::experiments::ExperimentConfig::from_json(&fs::read_to_string(&p).unwrap())
            .unwrap_or_else(|err| panic!("{}: {err}", p.display()));
        n += 1;
    }
    assert_eq!(n, 7);
}
