use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relmem_core::fixtures;
use tempfile::TempDir;

const DATABASES: [(&str, &str); 5] = [
    ("restaurants", fixtures::RESTAURANTS_DDL),
    ("singer", fixtures::SINGER_DDL),
    ("employee_hire_evaluation", fixtures::EMPLOYEE_DDL),
    ("city", fixtures::CITY_DDL),
    ("hospital", fixtures::HOSPITAL_DDL),
];

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Env {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("dbs")).unwrap();
        for (id, ddl) in DATABASES {
            fixtures::write_database(&dir.path().join("dbs"), id, ddl).unwrap();
        }
        Env { dir }
    }

    fn store(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_relmem"));
        for (k, _) in std::env::vars() {
            if k.starts_with("RELMEM_") {
                cmd.env_remove(k);
            }
        }
        cmd.env("RELMEM_STORE", self.store())
            .env("RELMEM_TRACE_TIMINGS", "false")
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn registered() -> Env {
        let env = Env::new();
        for (id, _) in DATABASES {
            let path = format!("dbs/{id}.sqlite");
            env.ok(&["catalog", "add", &path, "--id", id]);
        }
        env
    }

    fn indexed() -> Env {
        let env = Env::registered();
        env.ok(&["index", "build"]);
        env
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn catalog_add_and_list() {
    let env = Env::registered();
    let list = env.ok(&["catalog", "list"]);
    let ids: Vec<&str> = list.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["restaurants", "singer", "employee_hire_evaluation", "city", "hospital"]);
    assert!(list.lines().next().unwrap().contains("2 tables"));

    let json = env.ok(&["catalog", "list", "--json"]);
    let first: serde_json::Value = serde_json::from_str(json.lines().next().unwrap()).unwrap();
    assert_eq!(first["tables"], serde_json::json!(["geographic", "restaurant"]));

    let dup = env.run(&["catalog", "add", "dbs/singer.sqlite", "--id", "singer"]);
    assert_eq!(dup.status.code(), Some(1));
    assert!(stderr(&dup).starts_with("error: catalog: "));
}

#[test]
fn index_build_is_idempotent() {
    let env = Env::registered();
    let first = env.ok(&["index", "build"]);
    assert!(first.starts_with("selection index: wrote 1 file\n"), "{first}");
    assert!(!first.contains("\nup-to-date\n"));
    let before = snapshot(&env.store());
    let second = env.ok(&["index", "build"]);
    for line in second.lines() {
        assert!(line.ends_with("up-to-date"), "{line}");
    }
    assert_eq!(second.lines().last(), Some("up-to-date"));
    assert_eq!(snapshot(&env.store()), before);
    assert_eq!(env.ok(&["index", "build", "--schemas"]), "selection index: up-to-date\nup-to-date\n");
}

#[test]
fn ask_prints_a_tagged_result() {
    let env = Env::indexed();
    let script = data("thai.jsonl");
    let out = env.ok(&[
        "ask",
        "Show me all the Thai restaurants in New York",
        "--mock-script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(out, golden("ask_thai.txt"));
}

#[test]
fn ask_writes_a_trace_file() {
    let env = Env::indexed();
    let script = data("thai.jsonl");
    let trace = env.dir.path().join("trace.jsonl");
    env.ok(&[
        "ask",
        "Show me all the Thai restaurants in New York",
        "--mock-script",
        script.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
        "--json",
    ]);
    let stages: Vec<String> = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(stages.first().map(String::as_str), Some("context_switch"));
    assert_eq!(stages.last().map(String::as_str), Some("return_type"));
}

#[test]
fn ask_reports_pipeline_failures() {
    let env = Env::indexed();
    let script = data("outage.jsonl");
    let out = env.run(&["ask", "How many singers are there?", "--mock-script", script.to_str().unwrap(), "--trace"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    let last = err.lines().last().unwrap();
    assert!(last.starts_with("error: provider_unavailable: "), "{last}");
    // The partial trace precedes the error line.
    assert!(err.lines().next().unwrap().contains("\"stage\":\"context_switch\""));
}

#[test]
fn ask_without_index_is_a_config_error() {
    let env = Env::registered();
    let script = data("thai.jsonl");
    let out = env.run(&["ask", "anything", "--mock-script", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(78));
    assert!(stderr(&out).contains("relmem index build"));
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    let env = Env::new();
    let out = env.run(&["ask"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(stderr(&out).starts_with("error: usage: "));
    assert_eq!(stderr(&out).lines().count(), 1);
    assert_eq!(env.run(&["frobnicate"]).status.code(), Some(64));

    let out = env.run(&["catalog", "list", "--k-databases", "0"]);
    assert_eq!(out.status.code(), Some(78));
    assert!(stderr(&out).starts_with("error: config: "));

    let conf = env.dir.path().join("bad.conf");
    fs::write(&conf, "[pipeline]\nk_values = \"ten\"\n").unwrap();
    let out = env.run(&["catalog", "list", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(78));

    let out = env.run(&["ask", "hi"]);
    assert_eq!(out.status.code(), Some(78));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let env = Env::registered();
    let conf = env.dir.path().join("relmem.conf");
    fs::write(&conf, "store = \"elsewhere\"\n").unwrap();
    // The file's store beats RELMEM_STORE, so nothing is registered there.
    assert_eq!(env.ok(&["catalog", "list", "--config", conf.to_str().unwrap()]), "");
    let store = env.store();
    let out = env.ok(&["catalog", "list", "--config", conf.to_str().unwrap(), "--store", store.to_str().unwrap()]);
    assert_eq!(out.lines().count(), 5);
}

#[test]
fn eval_run_writes_reports() {
    let env = Env::indexed();
    let script = data("eval.jsonl");
    let dataset = data("eval_dataset.jsonl");
    let out_dir = env.dir.path().join("report");
    let table = env.ok(&[
        "eval",
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--parallelism",
        "2",
        "--mock-script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(table, fs::read_to_string(out_dir.join("report.txt")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["dataset_size"], 4);
    assert_eq!(report["by_type"]["single_db"]["answer_acc"], 1.0);
    assert_eq!(report["by_type"]["double_db"]["sql_acc"], 1.0);
    assert_eq!(report["selection"]["refined"]["precision"], 1.0);
}

#[test]
fn compose_double_pairs_scalar_questions() {
    let env = Env::registered();
    let dataset = data("singles.jsonl");
    let out = env.ok(&["compose-double", "--dataset", dataset.to_str().unwrap(), "--count", "100", "--seed", "3"]);
    let questions: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // 3 scalar questions on 3 databases give 6 ordered pairs.
    assert_eq!(questions.len(), 6);
    for q in &questions {
        assert_eq!(q["qtype"], "double_db");
        assert_ne!(q["gold_db_ids"][0], q["gold_db_ids"][1]);
        assert!(q["question"].as_str().unwrap().starts_with("Which question has a larger number as its answer. Q1: "));
    }
    let singer_vs_employee = questions
        .iter()
        .find(|q| q["id"] == "singers+employees")
        .unwrap();
    assert_eq!(singer_vs_employee["gold_answer"], "Q2");
    let again = env.ok(&["compose-double", "--dataset", dataset.to_str().unwrap(), "--count", "100", "--seed", "3"]);
    assert_eq!(out, again);
}

#[test]
fn compose_train_writes_labeled_pairs() {
    let env = Env::registered();
    let triples = data("triples.jsonl");
    let target = env.dir.path().join("train.jsonl");
    env.ok(&[
        "compose-train",
        "--questions",
        triples.to_str().unwrap(),
        "--out",
        target.to_str().unwrap(),
        "--negatives",
        "2",
        "--composites",
        "1",
    ]);
    let records: Vec<serde_json::Value> = fs::read_to_string(&target)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let positives = records.iter().filter(|r| r["source"] == "positive").count();
    let negatives = records.iter().filter(|r| r["source"] == "negative").count();
    assert_eq!((positives, negatives), (3, 6));
    assert!(records.iter().any(|r| r["source"] == "composite"));
}

#[test]
fn help_lists_every_flag() {
    let env = Env::new();
    assert_eq!(env.ok(&["--help"]), golden("help.txt"));
    assert_eq!(env.ok(&["ask", "--help"]), golden("help_ask.txt"));
    assert_eq!(env.ok(&["eval", "run", "--help"]), golden("help_eval_run.txt"));
}
