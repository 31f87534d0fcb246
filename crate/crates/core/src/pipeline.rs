//! Question answering over the catalog.
//!
//! Stages, in order: context switch, database selection, plan refinement,
//! per-target SQL generation with value grounding and error-driven
//! correction, execution, return-type decision, and output generation.
//! Every stage leaves an entry in the response trace.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{serialize_schema, Catalog, SchemaText};
use crate::embedding::{EmbeddingProvider, VectorIndex};
use crate::llm::{
    self, CandidateValues, CompletionProvider, ContextDecision, Exchange, LlmError, Recorder,
    RetrievalPlan, RetrievalTarget,
};
use crate::selection::{select_top_k, SelectionCandidate, SelectionError};
use crate::sql::{extract_conditions, truncate_result, SqlExecutor, SqlResult};
use crate::values::{ColumnKey, ValueMemories, ValueMemoryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_databases: usize,
    pub k_values: usize,
    pub max_correction_attempts: usize,
    pub result_truncation_rows: usize,
    pub execution_timeout_secs: f64,
    /// Ground string literals against the data value memory.
    pub use_value_memory: bool,
    /// Record wall-clock stage durations. Off gives byte-stable traces.
    pub trace_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_databases: 5,
            k_values: 10,
            max_correction_attempts: 3,
            result_truncation_rows: 10,
            execution_timeout_secs: 5.0,
            use_value_memory: true,
            trace_timings: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_databases == 0 {
            return Err("k_databases must be positive".into());
        }
        if self.k_values == 0 {
            return Err("k_values must be positive".into());
        }
        if self.result_truncation_rows == 0 {
            return Err("result_truncation_rows must be positive".into());
        }
        if self.max_correction_attempts > 20 {
            return Err("max_correction_attempts must be at most 20".into());
        }
        if !(self.execution_timeout_secs.is_finite() && self.execution_timeout_secs > 0.0) {
            return Err("execution_timeout_secs must be a positive number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub input: Value,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeResult {
    Rows { result: SqlResult },
    Excluded { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub target: RetrievalTarget,
    pub final_sql: String,
    pub result: OutcomeResult,
    pub correction_attempts: usize,
}

impl RetrievalOutcome {
    pub fn rows(&self) -> Option<&SqlResult> {
        match &self.result {
            OutcomeResult::Rows { result } => Some(result),
            OutcomeResult::Excluded { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Text,
    SqlResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAnswer {
    pub sql: String,
    pub db_id: String,
    pub result: SqlResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResponse {
    pub question: String,
    pub kind: AnswerKind,
    pub answer_text: Option<String>,
    pub answer_result: Option<SqlAnswer>,
    /// Databases returned by the selection memory, best first.
    pub candidates: Vec<SelectionCandidate>,
    pub plan: Option<RetrievalPlan>,
    pub outcomes: Vec<RetrievalOutcome>,
    pub trace: Vec<TraceEntry>,
}

impl PipelineResponse {
    /// `{"kind": ..., "answer": ..., "trace": [...]}`; the trace is included
    /// only on request.
    pub fn to_wire(&self, with_trace: bool) -> Value {
        let answer = match self.kind {
            AnswerKind::Text => json!(self.answer_text),
            AnswerKind::SqlResult => json!(self.answer_result),
        };
        let mut out = json!({ "kind": self.kind, "answer": answer });
        if with_trace {
            out["trace"] = json!(self.trace);
        }
        out
    }

    /// Databases the plan targeted, in plan order, without repeats.
    pub fn targeted_databases(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        if let Some(plan) = &self.plan {
            for t in &plan.targets {
                if !out.contains(&t.db_id) {
                    out.push(t.db_id.clone());
                }
            }
        }
        out
    }

    /// The answer as text; a table answer is stringified.
    pub fn answer_string(&self) -> String {
        match (&self.answer_text, &self.answer_result) {
            (Some(text), _) => text.clone(),
            (None, Some(a)) => a.result.to_answer_string(),
            (None, None) => String::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FailureKind {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Values(#[from] ValueMemoryError),
}

impl FailureKind {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FailureKind::EmptyQuestion => "empty_question",
            FailureKind::Llm(LlmError::PromptTooLarge { .. }) => "prompt_too_large",
            FailureKind::Llm(LlmError::UnmatchedPrompt(_) | LlmError::Script(_)) => "mock_script",
            FailureKind::Llm(_) => "provider_unavailable",
            FailureKind::Selection(_) => "selection",
            FailureKind::Values(_) => "value_memory",
        }
    }
}

/// A run that could not finish, with the trace up to the failure.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct PipelineFailure {
    pub kind: FailureKind,
    pub trace: Vec<TraceEntry>,
}

pub type PipelineResult = Result<PipelineResponse, PipelineFailure>;

/// Everything a run needs. Immutable; share it behind an `Arc` for
/// concurrent use.
pub struct Pipeline {
    pub catalog: Arc<Catalog>,
    pub selection_index: Arc<VectorIndex>,
    pub value_memories: Arc<ValueMemories>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub llm: Arc<dyn CompletionProvider>,
    pub config: PipelineConfig,
    executor: SqlExecutor,
}

struct Run<'p> {
    pipeline: &'p Pipeline,
    llm: Recorder<'p>,
    trace: Vec<TraceEntry>,
}

impl Run<'_> {
    fn record(&mut self, stage: &str, input: Value, output: Value, started: Instant) {
        let duration_ms = self
            .pipeline
            .config
            .trace_timings
            .then(|| started.elapsed().as_secs_f64() * 1e3);
        self.trace.push(TraceEntry {
            stage: stage.to_string(),
            input,
            output,
            exchanges: self.llm.take(),
            duration_ms,
        });
    }

    fn fail(mut self, stage: &str, input: Value, started: Instant, kind: FailureKind) -> PipelineFailure {
        let output = json!({ "error": kind.to_string() });
        self.record(stage, input, output, started);
        PipelineFailure {
            kind,
            trace: self.trace,
        }
    }
}

macro_rules! try_stage {
    ($run:ident, $stage:expr, $input:expr, $started:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return Err($run.fail($stage, $input, $started, err.into())),
        }
    };
}

impl Pipeline {
    pub fn new(
        catalog: Arc<Catalog>,
        selection_index: Arc<VectorIndex>,
        value_memories: Arc<ValueMemories>,
        embedder: Arc<dyn EmbeddingProvider>,
        llm: Arc<dyn CompletionProvider>,
        config: PipelineConfig,
    ) -> Result<Self, String> {
        config.validate()?;
        let executor = SqlExecutor::new(Duration::from_secs_f64(config.execution_timeout_secs));
        Ok(Self {
            catalog,
            selection_index,
            value_memories,
            embedder,
            llm,
            config,
            executor,
        })
    }

    pub fn answer(&self, question: &str) -> PipelineResult {
        let mut run = Run {
            pipeline: self,
            llm: Recorder::new(self.llm.as_ref()),
            trace: Vec::new(),
        };
        let question = question.trim();
        let started = Instant::now();
        let q_input = json!({ "question": question });
        if question.is_empty() {
            return Err(run.fail("input", q_input, started, FailureKind::EmptyQuestion));
        }

        // Context switch.
        let decision = try_stage!(
            run,
            "context_switch",
            q_input.clone(),
            started,
            llm::decide_context_switch(&run.llm, question)
        );
        run.record("context_switch", q_input.clone(), json!(decision), started);
        if decision == ContextDecision::Answerable {
            let started = Instant::now();
            let text = try_stage!(
                run,
                "output_generation",
                json!({ "question": question, "evidence": [] }),
                started,
                llm::generate_output(&run.llm, question, &[])
            );
            run.record(
                "output_generation",
                json!({ "question": question, "evidence": [] }),
                json!({ "answer": text }),
                started,
            );
            return Ok(PipelineResponse {
                question: question.to_string(),
                kind: AnswerKind::Text,
                answer_text: Some(text),
                answer_result: None,
                candidates: Vec::new(),
                plan: None,
                outcomes: Vec::new(),
                trace: run.trace,
            });
        }

        // Database selection.
        let started = Instant::now();
        let sel_input = json!({ "question": question, "k": self.config.k_databases });
        let candidates = try_stage!(
            run,
            "selection",
            sel_input.clone(),
            started,
            select_top_k(
                question,
                &self.selection_index,
                self.embedder.as_ref(),
                self.config.k_databases
            )
        );
        run.record("selection", sel_input, json!(candidates), started);

        // Plan refinement. Oversized prompts shed the lowest-ranked schema.
        let started = Instant::now();
        let mut schemas: Vec<SchemaText> = candidates
            .iter()
            .filter_map(|c| self.catalog.get(&c.db_id))
            .map(serialize_schema)
            .collect();
        let mut dropped = Vec::new();
        let plan = loop {
            let input = json!({ "question": question, "databases": schemas.iter().map(|s| &s.db_id).collect::<Vec<_>>() });
            if schemas.is_empty() {
                break RetrievalPlan {
                    targets: Vec::new(),
                    warnings: vec!["no candidate schema fits the prompt limit".into()],
                };
            }
            match llm::generate_plan(&run.llm, question, &schemas) {
                Ok(plan) => break plan,
                Err(LlmError::PromptTooLarge { .. }) => {
                    dropped.push(schemas.pop().expect("non-empty").db_id);
                }
                Err(e) => return Err(run.fail("planning", input, started, e.into())),
            }
        };
        run.record(
            "planning",
            json!({
                "question": question,
                "databases": schemas.iter().map(|s| &s.db_id).collect::<Vec<_>>(),
                "dropped_for_size": dropped,
            }),
            json!(plan),
            started,
        );

        // Retrieval per target, in plan order.
        let mut outcomes = Vec::new();
        for target in &plan.targets {
            outcomes.push(self.retrieve(&mut run, target)?);
        }

        // Return-type decision.
        for outcome in &outcomes {
            let Some(result) = outcome.rows() else {
                continue;
            };
            let started = Instant::now();
            let input = json!({ "question": question, "sql": outcome.final_sql });
            let equivalent = try_stage!(
                run,
                "return_type",
                input.clone(),
                started,
                llm::is_goal_sql_equivalent(&run.llm, question, &outcome.final_sql)
            );
            run.record("return_type", input, json!({ "equivalent": equivalent }), started);
            if equivalent {
                let answer = SqlAnswer {
                    sql: outcome.final_sql.clone(),
                    db_id: outcome.target.db_id.clone(),
                    result: result.clone(),
                };
                return Ok(PipelineResponse {
                    question: question.to_string(),
                    kind: AnswerKind::SqlResult,
                    answer_text: None,
                    answer_result: Some(answer),
                    candidates,
                    plan: Some(plan),
                    outcomes,
                    trace: run.trace,
                });
            }
        }

        // Output generation over the successful evidence.
        let started = Instant::now();
        let mut evidence: Vec<(String, SqlResult)> = outcomes
            .iter()
            .filter_map(|o| {
                o.rows().map(|r| {
                    (o.final_sql.clone(), truncate_result(r, self.config.result_truncation_rows))
                })
            })
            .collect();
        let text = loop {
            let input = json!({ "question": question, "evidence": evidence.iter().map(|(s, _)| s).collect::<Vec<_>>() });
            match llm::generate_output(&run.llm, question, &evidence) {
                Ok(text) => break text,
                Err(LlmError::PromptTooLarge { .. }) if !evidence.is_empty() => {
                    evidence.pop();
                }
                Err(e) => return Err(run.fail("output_generation", input, started, e.into())),
            }
        };
        run.record(
            "output_generation",
            json!({ "question": question, "evidence": evidence.iter().map(|(s, _)| s).collect::<Vec<_>>() }),
            json!({ "answer": text }),
            started,
        );
        Ok(PipelineResponse {
            question: question.to_string(),
            kind: AnswerKind::Text,
            answer_text: Some(text),
            answer_result: None,
            candidates,
            plan: Some(plan),
            outcomes,
            trace: run.trace,
        })
    }

    fn retrieve(&self, run: &mut Run<'_>, target: &RetrievalTarget) -> Result<RetrievalOutcome, PipelineFailure> {
        let entry = self
            .catalog
            .get(&target.db_id)
            .expect("plan targets are drawn from catalog candidates");
        let schema = serialize_schema(entry).text;

        // Text-to-SQL, seeded with the plan's SQL. Without usable SQL in the
        // answer the plan's SQL is used as is.
        let started = Instant::now();
        let input = json!({ "goal": target.goal, "db_id": target.db_id, "seed_sql": target.candidate_sql });
        let mut sql = match llm::text_to_sql(&run.llm, &target.goal, &schema, Some(&target.candidate_sql)) {
            Ok(sql) => sql,
            Err(LlmError::NoSqlInResponse) => target.candidate_sql.clone(),
            Err(LlmError::PromptTooLarge { .. }) => target.candidate_sql.clone(),
            Err(e) => return Err(run.fail_ref("text_to_sql", input, started, e.into())),
        };
        run.record("text_to_sql", input, json!({ "sql": sql }), started);

        if self.config.use_value_memory {
            let started = Instant::now();
            let candidates = self.value_candidates(run, &target.db_id, &sql, started)?;
            if !candidates.is_empty() {
                let started = Instant::now();
                let input = json!({ "sql": sql, "candidates": candidates });
                let corrected = match llm::correct_sql_with_values(&run.llm, &sql, &candidates, &target.goal) {
                    Ok(s) => s,
                    Err(LlmError::PromptTooLarge { .. }) => sql.clone(),
                    Err(e) => return Err(run.fail_ref("value_correction", input, started, e.into())),
                };
                run.record("value_correction", input, json!({ "sql": corrected }), started);
                sql = corrected;
            }
        }

        let mut attempts = 0;
        loop {
            let started = Instant::now();
            let input = json!({ "db_id": target.db_id, "sql": sql });
            match self.executor.execute(entry, &sql) {
                Ok(result) => {
                    run.record(
                        "execution",
                        input,
                        json!({ "rows": result.rows.len(), "columns": result.columns }),
                        started,
                    );
                    return Ok(RetrievalOutcome {
                        target: target.clone(),
                        final_sql: sql,
                        result: OutcomeResult::Rows { result },
                        correction_attempts: attempts,
                    });
                }
                Err(err) => {
                    run.record("execution", input, json!({ "error": err.message }), started);
                    if attempts >= self.config.max_correction_attempts {
                        let reason = format!(
                            "still failing after {attempts} correction attempts: {}",
                            err.message
                        );
                        run.record(
                            "exclusion",
                            json!({ "db_id": target.db_id, "sql": sql }),
                            json!({ "reason": reason }),
                            Instant::now(),
                        );
                        return Ok(RetrievalOutcome {
                            target: target.clone(),
                            final_sql: sql,
                            result: OutcomeResult::Excluded { reason },
                            correction_attempts: attempts,
                        });
                    }
                    attempts += 1;
                    let started = Instant::now();
                    let input = json!({ "attempt": attempts, "sql": sql, "error": err.message });
                    let next = match llm::correct_sql_with_error(&run.llm, &schema, &target.goal, &sql, &err) {
                        Ok(s) => s,
                        Err(LlmError::NoSqlInResponse | LlmError::PromptTooLarge { .. }) => sql.clone(),
                        Err(e) => return Err(run.fail_ref("error_correction", input, started, e.into())),
                    };
                    run.record("error_correction", input, json!({ "sql": next }), started);
                    sql = next;
                }
            }
        }
    }

    /// Stored values close to each string literal of `sql`, grouped per
    /// column in first-seen order.
    fn value_candidates(
        &self,
        run: &mut Run<'_>,
        db_id: &str,
        sql: &str,
        started: Instant,
    ) -> Result<Vec<CandidateValues>, PipelineFailure> {
        let input = json!({ "db_id": db_id, "sql": sql, "k": self.config.k_values });
        let Some(entry) = self.catalog.get(db_id) else {
            return Ok(Vec::new());
        };
        let conditions = match extract_conditions(sql, entry) {
            Ok(c) => c,
            Err(e) => {
                run.record("value_lookup", input, json!({ "skipped": e.to_string() }), started);
                return Ok(Vec::new());
            }
        };
        let Some(memory) = self.value_memories.get(db_id) else {
            run.record("value_lookup", input, json!({ "skipped": "no value memory" }), started);
            return Ok(Vec::new());
        };
        let mut grouped: Vec<CandidateValues> = Vec::new();
        let mut lookups = Vec::new();
        for cond in &conditions {
            let key = ColumnKey::new(db_id, &cond.table, &cond.column);
            if !memory.contains(&key) {
                lookups.push(json!({ "condition": cond, "values": [] }));
                continue;
            }
            let hits = match memory.lookup_synonyms(&key, &cond.literal, self.config.k_values, self.embedder.as_ref()) {
                Ok(h) => h,
                Err(e) => return Err(run.fail_ref("value_lookup", input, started, e.into())),
            };
            lookups.push(json!({ "condition": cond, "values": hits.iter().map(|(v, _)| v).collect::<Vec<_>>() }));
            if hits.is_empty() {
                continue;
            }
            let slot = match grouped
                .iter()
                .position(|c| c.table == cond.table && c.column == cond.column)
            {
                Some(i) => i,
                None => {
                    grouped.push(CandidateValues {
                        table: cond.table.clone(),
                        column: cond.column.clone(),
                        values: Vec::new(),
                    });
                    grouped.len() - 1
                }
            };
            for (value, _) in hits {
                if !grouped[slot].values.contains(&value) {
                    grouped[slot].values.push(value);
                }
            }
        }
        run.record("value_lookup", input, json!({ "lookups": lookups }), started);
        Ok(grouped)
    }

    /// Answers every question, `parallelism` at a time. Results keep the
    /// input order and one failure does not affect the others.
    pub fn answer_batch(&self, questions: &[String], parallelism: usize) -> Vec<PipelineResult> {
        let workers = parallelism.max(1).min(questions.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<BTreeMap<usize, PipelineResult>> = Mutex::new(BTreeMap::new());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else {
                        break;
                    };
                    let r = self.answer(q);
                    slots.lock().unwrap_or_else(|p| p.into_inner()).insert(i, r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_values()
            .collect()
    }
}

impl Run<'_> {
    /// Like `fail`, for callers that only hold a mutable borrow.
    fn fail_ref(&mut self, stage: &str, input: Value, started: Instant, kind: FailureKind) -> PipelineFailure {
        let output = json!({ "error": kind.to_string() });
        self.record(stage, input, output, started);
        PipelineFailure {
            kind,
            trace: std::mem::take(&mut self.trace),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::fixtures;
    use crate::llm::{ScriptRule, ScriptedMock};
    use crate::selection::index_schemas;
    use crate::values::ValueMemory;

    struct Setup {
        _dir: tempfile::TempDir,
        catalog: Arc<Catalog>,
        index: Arc<VectorIndex>,
        values: Arc<ValueMemories>,
    }

    fn setup() -> Setup {
        let dir = tempfile::tempdir().unwrap();
        let catalog = fixtures::standard_catalog(dir.path()).unwrap();
        let e = HashingEmbedder::new();
        let index = index_schemas(&catalog, &e).unwrap();
        let values = catalog
            .entries()
            .iter()
            .map(|entry| (entry.id.clone(), ValueMemory::build(entry, &e, &Default::default()).unwrap()))
            .collect();
        Setup {
            _dir: dir,
            catalog: Arc::new(catalog),
            index: Arc::new(index),
            values: Arc::new(values),
        }
    }

    fn pipeline(s: &Setup, rules: Vec<ScriptRule>) -> (Pipeline, Arc<ScriptedMock>) {
        let mock = Arc::new(ScriptedMock::new(rules).unwrap());
        let config = PipelineConfig { trace_timings: false, ..Default::default() };
        let p = Pipeline::new(
            s.catalog.clone(),
            s.index.clone(),
            s.values.clone(),
            Arc::new(HashingEmbedder::new()),
            mock.clone(),
            config,
        )
        .unwrap();
        (p, mock)
    }

    const THAI_PLAN: &str = "Goal: names of Thai restaurants in New York\n\
        *Begin SQL* SELECT name FROM restaurant WHERE food_type = 'thai' AND location = 'New York' *End SQL*\n\
        Database restaurants";

    fn thai_rules(equivalent: &str) -> Vec<ScriptRule> {
        vec![
            ScriptRule::new("Does context of the question", "(NO) The context is empty"),
            ScriptRule::new("Input Question: Show me all the Thai restaurants in New York", THAI_PLAN),
            ScriptRule::new(
                "Return one SQL query only.",
                "SELECT name FROM restaurant WHERE food_type = 'Thai' AND location = 'New York'",
            ),
            ScriptRule::new(
                "Candidate Values:",
                "Corrected SQL: SELECT name FROM restaurant WHERE food_type = 'thai' AND location = 'New York'\nReasons: stored lowercase",
            ),
            ScriptRule::new("Is the goal and SQL equivalent?", equivalent),
            ScriptRule::new("# SQL Results", "Thai Palace and Bangkok Bites."),
        ]
    }

    #[test]
    fn single_database_question_returns_rows() {
        let s = setup();
        let (p, _) = pipeline(&s, thai_rules("Yes"));
        let r = p.answer("Show me all the Thai restaurants in New York").unwrap();
        assert_eq!(r.kind, AnswerKind::SqlResult);
        let answer = r.answer_result.as_ref().unwrap();
        assert_eq!(answer.db_id, "restaurants");
        let mut names: Vec<String> = answer.result.rows.iter().map(|row| row[0].to_string()).collect();
        names.sort();
        assert_eq!(names, ["Bangkok Bites", "Thai Palace"]);
        assert!(r.answer_text.is_none());
        let stages: Vec<&str> = r.trace.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(
            stages,
            ["context_switch", "selection", "planning", "text_to_sql", "value_lookup", "value_correction", "execution", "return_type"]
        );
    }

    #[test]
    fn non_equivalent_sql_falls_back_to_text() {
        let s = setup();
        let (p, _) = pipeline(&s, thai_rules("No"));
        let r = p.answer("Show me all the Thai restaurants in New York").unwrap();
        assert_eq!(r.kind, AnswerKind::Text);
        assert_eq!(r.answer_text.as_deref(), Some("Thai Palace and Bangkok Bites."));
        assert!(r.answer_result.is_none());
        assert_eq!(r.trace.last().unwrap().stage, "output_generation");
    }

    #[test]
    fn answerable_questions_skip_retrieval() {
        let s = setup();
        let (p, mock) = pipeline(
            &s,
            vec![
                ScriptRule::new("Does context of the question", "(YES) explicitly given"),
                ScriptRule::new("# SQL Results\n\nQuestion:", "3"),
            ],
        );
        let r = p.answer("LA has 2 universities, SF has 3 universities. The number of universities in SF is {?}").unwrap();
        assert_eq!(r.kind, AnswerKind::Text);
        assert_eq!(r.answer_text.as_deref(), Some("3"));
        let stages: Vec<&str> = r.trace.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["context_switch", "output_generation"]);
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn empty_plan_answers_directly() {
        let s = setup();
        let (p, _) = pipeline(
            &s,
            vec![
                ScriptRule::new("Does context of the question", "(NO)"),
                ScriptRule::new("Input Question:", "No SQL is needed."),
                ScriptRule::new("# SQL Results\n\nQuestion:", "Green."),
            ],
        );
        let r = p.answer("The color of grass is {?}").unwrap();
        assert_eq!(r.answer_text.as_deref(), Some("Green."));
        assert!(r.outcomes.is_empty());
        assert!(r.plan.unwrap().targets.is_empty());
    }

    #[test]
    fn provider_outage_aborts_with_partial_trace() {
        let s = setup();
        let (p, _) = pipeline(
            &s,
            vec![
                ScriptRule::new("Does context of the question", "(NO)"),
                ScriptRule::unavailable("Input Question:"),
            ],
        );
        let err = p.answer("How many singers are there?").unwrap_err();
        assert!(matches!(err.kind, FailureKind::Llm(LlmError::ProviderUnavailable(_))));
        assert_eq!(err.kind.code(), "provider_unavailable");
        let stages: Vec<&str> = err.trace.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(stages, ["context_switch", "selection", "planning"]);
        assert!(p.answer("  ").is_err());
    }

    /// Rejects plan prompts above a size limit, like a provider with a
    /// small context window would.
    struct SmallPlanner {
        inner: ScriptedMock,
        limit: usize,
    }

    impl CompletionProvider for SmallPlanner {
        fn name(&self) -> &str {
            "small-planner"
        }
        fn max_prompt_chars(&self) -> usize {
            usize::MAX
        }
        fn complete(&self, prompt: &str) -> Result<String, LlmError> {
            let chars = prompt.chars().count();
            if prompt.contains("Input Question:") && chars > self.limit {
                return Err(LlmError::PromptTooLarge { chars, max: self.limit });
            }
            self.inner.complete(prompt)
        }
    }

    #[test]
    fn oversized_prompts_shed_low_ranked_schemas() {
        let s = setup();
        let planner = Arc::new(SmallPlanner {
            inner: ScriptedMock::new(vec![
                ScriptRule::new("Does context of the question", "(NO)"),
                ScriptRule::new("Input Question:", "nothing"),
                ScriptRule::new("# SQL Results", "no idea"),
            ])
            .unwrap(),
            limit: 1_500,
        });
        let p = Pipeline::new(
            s.catalog.clone(),
            s.index.clone(),
            s.values.clone(),
            Arc::new(HashingEmbedder::new()),
            planner.clone(),
            PipelineConfig { trace_timings: false, ..Default::default() },
        )
        .unwrap();
        let r = p.answer("How many singers are there?").unwrap();
        let planning = r.trace.iter().find(|t| t.stage == "planning").unwrap();
        let kept: Vec<&str> = planning.input["databases"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        let dropped: Vec<&str> = planning.input["dropped_for_size"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert!(!kept.is_empty() && !dropped.is_empty());
        assert_eq!(kept.len() + dropped.len(), 5);
        // Dropped schemas are the lowest-ranked ones.
        let ranked: Vec<&str> = r.candidates.iter().map(|c| c.db_id.as_str()).collect();
        assert_eq!(&ranked[..kept.len()], kept.as_slice());
        let plan_prompt = planner.inner.prompts().into_iter().rfind(|p| p.contains("Input Question:")).unwrap();
        assert!(plan_prompt.chars().count() <= 1_500);
    }

    #[test]
    fn batches_keep_order_and_isolate_failures() {
        let s = setup();
        let rules = vec![
            ScriptRule::unavailable("Question: boom"),
            ScriptRule::new("Does context of the question", "(YES)"),
            ScriptRule::new("# SQL Results\n\nQuestion: one", "1"),
            ScriptRule::new("# SQL Results\n\nQuestion: three", "3"),
        ];
        let (p, _) = pipeline(&s, rules);
        let qs: Vec<String> = ["one", "boom", "three"].iter().map(|s| s.to_string()).collect();
        let r = p.answer_batch(&qs, 2);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].as_ref().unwrap().answer_text.as_deref(), Some("1"));
        assert!(r[1].is_err());
        assert_eq!(r[2].as_ref().unwrap().answer_text.as_deref(), Some("3"));
        assert!(p.answer_batch(&[], 4).is_empty());
    }

    #[test]
    fn parallelism_does_not_change_answers() {
        let s = setup();
        let (p, _) = pipeline(&s, thai_rules("Yes"));
        let qs: Vec<String> = vec!["Show me all the Thai restaurants in New York".into(); 6];
        let one: Vec<_> = p.answer_batch(&qs, 1).into_iter().map(|r| serde_json::to_string(&r.unwrap()).unwrap()).collect();
        let four: Vec<_> = p.answer_batch(&qs, 4).into_iter().map(|r| serde_json::to_string(&r.unwrap()).unwrap()).collect();
        assert_eq!(one, four);
    }

    #[test]
    fn wire_format() {
        let s = setup();
        let (p, _) = pipeline(&s, thai_rules("Yes"));
        let r = p.answer("Show me all the Thai restaurants in New York").unwrap();
        let wire = r.to_wire(false);
        assert_eq!(wire["kind"], "sql_result");
        assert_eq!(wire["answer"]["db_id"], "restaurants");
        assert!(wire.get("trace").is_none());
        assert!(r.to_wire(true)["trace"].as_array().unwrap().len() > 3);
        assert_eq!(r.answer_result.unwrap().result.rows[0].len(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        assert!(PipelineConfig { k_databases: 0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { execution_timeout_secs: 0.0, ..Default::default() }.validate().is_err());
    }
}
