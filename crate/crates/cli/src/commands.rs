use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relmem_core::eval::{load_dataset, run_eval, write_dataset, EvalQuestion, QuestionType};
use relmem_core::pipeline::PipelineFailure;
use relmem_core::selection::{compose_training_data, write_training_jsonl, QaTriple, TrainingDataConfig};
use relmem_core::{compose_double_db, AnswerKind, Pipeline, PipelineResponse, SqlExecutor, TraceEntry};

use crate::cli::{
    AskArgs, CatalogCommand, Cli, Command, ComposeDoubleArgs, ComposeTrainArgs, EvalCommand, GlobalArgs,
    IndexCommand, ReplArgs, ServeArgs,
};
use crate::config::{CliConfig, Settings};
use crate::error::{CliError, EXIT_FAILURE, EXIT_PIPELINE};
use crate::server;
use crate::store::Store;

/// Resolves configuration from flags, the config file, and `get` (the
/// environment).
pub fn load_config(global: &GlobalArgs, get: impl Fn(&str) -> Option<String>) -> Result<CliConfig, CliError> {
    let env = Settings::from_env(&get)?;
    let path = global.config.clone().or_else(|| get("RELMEM_CONFIG").map(PathBuf::from));
    let file = match path {
        Some(p) => Settings::from_file(&p)?,
        None => Settings::default(),
    };
    CliConfig::resolve(Settings::default().overlay(env).overlay(file).overlay(global.as_settings()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(&cli.global, |k| std::env::var(k).ok())?;
    let store = Store::new(&config.store);
    match cli.command {
        Command::Catalog(c) => catalog(&store, c, out),
        Command::Index(IndexCommand::Build { schemas, values }) => index_build(&store, &config, schemas, values, out),
        Command::Ask(args) => ask(&store.pipeline(&config)?, &args, out),
        Command::Repl(args) => repl(&store.pipeline(&config)?, &args, out),
        Command::ComposeTrain(args) => compose_train(&store, &args, out),
        Command::ComposeDouble(args) => compose_double(&store, &args, out),
        Command::Eval(EvalCommand::Run {
            dataset,
            out: dir,
            parallelism,
        }) => eval_run(&store.pipeline(&config)?, &dataset, &dir, usize::from(parallelism), out),
        Command::Serve(args) => serve(store.pipeline(&config)?, &config, &args),
    }
}

fn write_err(e: io::Error) -> CliError {
    CliError::io(e.to_string())
}

fn catalog(store: &Store, cmd: CatalogCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let mut catalog = store.catalog()?;
    match cmd {
        CatalogCommand::Add { path, id, name } => {
            let path = fs::canonicalize(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let entry = catalog
                .register_named(&path, &id, name.as_deref().unwrap_or(&id))
                .map_err(|e| CliError::new("catalog", e.to_string(), EXIT_FAILURE))?;
            writeln!(out, "registered {} ({} tables)", entry.id, entry.tables.len()).map_err(write_err)?;
            store.save_catalog(&catalog)
        }
        CatalogCommand::List { json } => {
            for entry in catalog.entries() {
                if json {
                    let line = serde_json::json!({
                        "id": entry.id,
                        "name": entry.name,
                        "path": entry.location,
                        "tables": entry.tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
                    });
                    writeln!(out, "{line}")
                } else {
                    writeln!(out, "{}\t{} tables\t{}", entry.id, entry.tables.len(), entry.location.display())
                }
                .map_err(write_err)?;
            }
            Ok(())
        }
    }
}

fn index_build(
    store: &Store,
    config: &CliConfig,
    schemas: bool,
    values: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (schemas, values) = if schemas || values { (schemas, values) } else { (true, true) };
    let embedder = config.embedder();
    let mut reports = Vec::new();
    if schemas {
        reports.push(store.build_selection(embedder.as_ref())?);
    }
    if values {
        reports.extend(store.build_values(embedder.as_ref(), &config.values)?);
    }
    for r in &reports {
        let status = match r.files_written {
            0 => "up-to-date".to_string(),
            1 => "wrote 1 file".to_string(),
            n => format!("wrote {n} files"),
        };
        writeln!(out, "{}: {status}", r.artifact).map_err(write_err)?;
    }
    if reports.iter().all(|r| r.files_written == 0) {
        writeln!(out, "up-to-date").map_err(write_err)?;
    }
    Ok(())
}

/// Human-readable answer: a `[text]` or `[sql_result]` tag line, then the
/// body.
pub fn render_answer(r: &PipelineResponse) -> String {
    match (r.kind, &r.answer_result) {
        (AnswerKind::SqlResult, Some(a)) => {
            let mut s = format!("[sql_result] {}\n{}\n", a.db_id, a.sql);
            s.push_str(&a.result.columns.join(" | "));
            s.push('\n');
            for row in &a.result.rows {
                let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                s.push_str(&cells.join(" | "));
                s.push('\n');
            }
            let n = a.result.rows.len();
            s.push_str(&format!("({n} row{})\n", if n == 1 { "" } else { "s" }));
            s
        }
        _ => format!("[text]\n{}\n", r.answer_text.as_deref().unwrap_or("")),
    }
}

fn write_trace(target: &str, trace: &[TraceEntry]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for entry in trace {
        serde_json::to_writer(&mut buf, entry).map_err(|e| CliError::io(e.to_string()))?;
        buf.push(b'\n');
    }
    if target == "-" {
        io::stderr().write_all(&buf).map_err(write_err)
    } else {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(target)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| CliError::io(format!("{target}: {e}")))
    }
}

fn failure_error(f: &PipelineFailure) -> CliError {
    CliError::new(f.kind.code(), f.kind.to_string(), EXIT_PIPELINE)
}

fn answer_once(
    pipeline: &Pipeline,
    question: &str,
    json: bool,
    trace: Option<&str>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match pipeline.answer(question) {
        Ok(r) => {
            if let Some(t) = trace {
                write_trace(t, &r.trace)?;
            }
            if json {
                writeln!(out, "{}", r.to_wire(false))
            } else {
                out.write_all(render_answer(&r).as_bytes())
            }
            .map_err(write_err)
        }
        Err(f) => {
            if let Some(t) = trace {
                write_trace(t, &f.trace)?;
            }
            Err(failure_error(&f))
        }
    }
}

fn ask(pipeline: &Pipeline, args: &AskArgs, out: &mut dyn Write) -> Result<(), CliError> {
    answer_once(pipeline, &args.question, args.json, args.trace.as_deref(), out)
}

fn repl(pipeline: &Pipeline, args: &ReplArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    loop {
        if interactive {
            eprint!("relmem> ");
            let _ = io::stderr().flush();
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(write_err)? == 0 {
            break;
        }
        let question = line.trim();
        match question {
            "" => continue,
            "exit" | "quit" => break,
            _ => {}
        }
        if let Err(e) = answer_once(pipeline, question, args.json, None, out) {
            eprintln!("{e}");
        }
        out.flush().map_err(write_err)?;
    }
    Ok(())
}

fn output(path: &Option<PathBuf>, bytes: &[u8], out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::io(format!("{}: {e}", p.display()))),
        None => out.write_all(bytes).map_err(write_err),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn compose_train(store: &Store, args: &ComposeTrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = store.catalog()?;
    let triples: Vec<QaTriple> = read_jsonl(&args.questions)?;
    let config = TrainingDataConfig {
        negatives_per_positive: args.negatives,
        composite_k: args.composite_k,
        composites: args.composites,
        seed: args.seed,
    };
    let records = compose_training_data(&triples, &catalog, &config).map_err(|e| CliError::data(e.to_string()))?;
    let mut buf = Vec::new();
    write_training_jsonl(&records, &mut buf).map_err(write_err)?;
    output(&args.out, &buf, out)
}

fn compose_double(store: &Store, args: &ComposeDoubleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = store.catalog()?;
    let exec = SqlExecutor::default();
    let dataset = load_dataset(&args.dataset).map_err(|e| CliError::data(e.to_string()))?;
    // Only questions whose gold SQL yields one number can be compared.
    let mut scalar: Vec<&EvalQuestion> = Vec::new();
    for q in dataset.iter().filter(|q| q.qtype == QuestionType::SingleDb) {
        let entry = catalog
            .get(&q.gold_db_ids[0])
            .ok_or_else(|| CliError::data(format!("question {}: unknown database `{}`", q.id, q.gold_db_ids[0])))?;
        match exec.execute(entry, &q.gold_sqls[0]) {
            Ok(r) if r.scalar_number().is_some() => scalar.push(q),
            Ok(_) => {}
            Err(e) => return Err(CliError::data(format!("question {}: gold SQL failed: {e}", q.id))),
        }
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..scalar.len() {
        for j in 0..scalar.len() {
            if i != j && scalar[i].gold_db_ids[0] != scalar[j].gold_db_ids[0] {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(CliError::data(
            "need scalar-answer single_db questions on at least two different databases",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    pairs.shuffle(&mut rng);
    if pairs.len() < args.count {
        eprintln!("only {} composite questions are possible", pairs.len());
    }
    let composites = pairs
        .into_iter()
        .take(args.count)
        .map(|(i, j)| compose_double_db(scalar[i], scalar[j], &catalog, &exec))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::data(e.to_string()))?;
    output(&args.out, write_dataset(&composites).as_bytes(), out)
}

fn eval_run(
    pipeline: &Pipeline,
    dataset: &Path,
    dir: &Path,
    parallelism: usize,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dataset = load_dataset(dataset).map_err(|e| CliError::data(e.to_string()))?;
    let report = run_eval(&dataset, pipeline, pipeline.llm.as_ref(), parallelism)
        .map_err(|e| CliError::data(e.to_string()))?;
    report.write(dir).map_err(|e| CliError::io(e.to_string()))?;
    out.write_all(report.to_table().as_bytes()).map_err(write_err)?;
    eprintln!("wrote {} and {}", dir.join("report.json").display(), dir.join("report.txt").display());
    Ok(())
}

fn serve(pipeline: Pipeline, config: &CliConfig, args: &ServeArgs) -> Result<(), CliError> {
    let addr = format!("{}:{}", args.host, args.port.unwrap_or(config.port));
    let runtime = tokio::runtime::Runtime::new().map_err(write_err)?;
    runtime
        .block_on(server::serve(Arc::new(pipeline), &addr))
        .map_err(|e| CliError::io(format!("{addr}: {e}")))
}
