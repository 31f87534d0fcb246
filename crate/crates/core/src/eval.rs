//! Evaluation: dataset model, composite questions, accuracy and selection
//! metrics, and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::llm::{judge_equivalence, CompletionProvider, LlmError};
use crate::pipeline::{AnswerKind, Pipeline, PipelineResponse};
use crate::sql::{results_equal, SqlExecutor, SqlResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("question {id}: {reason}")]
    InvalidQuestion { id: String, reason: String },
    #[error("question {id}: gold SQL does not return a single number")]
    NonScalarGold { id: String },
    #[error("question {id}: gold database `{db_id}` is not registered")]
    UnknownDatabase { id: String, db_id: String },
    #[error("question {id}: gold SQL failed: {message}")]
    GoldExecution { id: String, message: String },
    #[error("selection decisions and gold labels cover different (question, database) pairs")]
    CoverageMismatch,
    #[error("dataset line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    ZeroDb,
    SingleDb,
    DoubleDb,
    Unanswerable,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::ZeroDb => "zero_db",
            QuestionType::SingleDb => "single_db",
            QuestionType::DoubleDb => "double_db",
            QuestionType::Unanswerable => "unanswerable",
        }
    }

    fn needs_databases(self) -> bool {
        matches!(self, QuestionType::SingleDb | QuestionType::DoubleDb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub qtype: QuestionType,
    pub question: String,
    #[serde(default)]
    pub gold_db_ids: Vec<String>,
    #[serde(default)]
    pub gold_sqls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<String>,
}

impl EvalQuestion {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::InvalidQuestion {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.question.trim().is_empty() {
            return bad("question text is empty");
        }
        if self.gold_db_ids.len() != self.gold_sqls.len() {
            return bad("gold_db_ids and gold_sqls differ in length");
        }
        match self.qtype {
            QuestionType::ZeroDb if !self.gold_sqls.is_empty() => bad("zero_db questions have no gold SQL"),
            QuestionType::ZeroDb if self.gold_answer.is_none() => bad("zero_db questions need a gold_answer"),
            QuestionType::SingleDb if self.gold_sqls.len() != 1 => bad("single_db questions need exactly 1 gold SQL"),
            QuestionType::DoubleDb if self.gold_sqls.len() != 2 => bad("double_db questions need exactly 2 gold SQLs"),
            QuestionType::Unanswerable if !self.gold_sqls.is_empty() || self.gold_answer.is_some() => {
                bad("unanswerable questions carry no gold")
            }
            _ => Ok(()),
        }
    }
}

/// Reads a JSON Lines dataset. Blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalQuestion>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: EvalQuestion = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        q.validate()?;
        out.push(q);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalQuestion>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn write_dataset(questions: &[EvalQuestion]) -> String {
    let mut out = String::new();
    for q in questions {
        out.push_str(&serde_json::to_string(q).expect("question serializes"));
        out.push('\n');
    }
    out
}

fn execute_golds(
    q: &EvalQuestion,
    catalog: &Catalog,
    executor: &SqlExecutor,
) -> Result<Vec<SqlResult>, EvalError> {
    q.gold_db_ids
        .iter()
        .zip(&q.gold_sqls)
        .map(|(db, sql)| {
            let entry = catalog.get(db).ok_or_else(|| EvalError::UnknownDatabase {
                id: q.id.clone(),
                db_id: db.clone(),
            })?;
            executor.execute(entry, sql).map_err(|e| EvalError::GoldExecution {
                id: q.id.clone(),
                message: e.message,
            })
        })
        .collect()
}

/// Builds "which of two questions has the larger answer". Both inputs must
/// be single-database questions whose gold SQL returns one number. Equal
/// numbers make Q1 the answer.
pub fn compose_double_db(
    q1: &EvalQuestion,
    q2: &EvalQuestion,
    catalog: &Catalog,
    executor: &SqlExecutor,
) -> Result<EvalQuestion, EvalError> {
    let mut numbers = Vec::new();
    for q in [q1, q2] {
        if q.qtype != QuestionType::SingleDb {
            return Err(EvalError::InvalidQuestion {
                id: q.id.clone(),
                reason: "composite members must be single_db questions".into(),
            });
        }
        q.validate()?;
        let gold = execute_golds(q, catalog, executor)?;
        let n = gold[0]
            .scalar_number()
            .ok_or_else(|| EvalError::NonScalarGold { id: q.id.clone() })?;
        numbers.push(n);
    }
    let answer = if numbers[1] > numbers[0] { "Q2" } else { "Q1" };
    Ok(EvalQuestion {
        id: format!("{}+{}", q1.id, q2.id),
        qtype: QuestionType::DoubleDb,
        question: format!(
            "Which question has a larger number as its answer. Q1: {}; Q2: {}",
            q1.question, q2.question
        ),
        gold_db_ids: vec![q1.gold_db_ids[0].clone(), q2.gold_db_ids[0].clone()],
        gold_sqls: vec![q1.gold_sqls[0].clone(), q2.gold_sqls[0].clone()],
        gold_answer: Some(answer.to_string()),
        perturbation: None,
    })
}

/// Kuhn's augmenting-path matching: can every gold get its own retrieved
/// result?
fn perfect_matching(golds: &[&SqlResult], retrieved: &[SqlResult]) -> bool {
    fn augment(
        g: usize,
        golds: &[&SqlResult],
        retrieved: &[SqlResult],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for r in 0..retrieved.len() {
            if seen[r] || !results_equal(golds[g], &retrieved[r]) {
                continue;
            }
            seen[r] = true;
            if owner[r].map_or(true, |other| augment(other, golds, retrieved, seen, owner)) {
                owner[r] = Some(g);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; retrieved.len()];
    (0..golds.len()).all(|g| {
        let mut seen = vec![false; retrieved.len()];
        augment(g, golds, retrieved, &mut seen, &mut owner)
    })
}

/// 1 when the retrieved results cover the golds: for one gold, any exact
/// match; for several, each distinct gold needs its own matching result.
/// `None` for question types that do not touch databases.
pub fn sql_accuracy(q: &EvalQuestion, retrieved: &[SqlResult], golds: &[SqlResult]) -> Option<u8> {
    if !q.qtype.needs_databases() {
        return None;
    }
    let mut distinct: Vec<&SqlResult> = Vec::new();
    for g in golds {
        if !distinct.iter().any(|d| results_equal(d, g)) {
            distinct.push(g);
        }
    }
    Some(u8::from(!distinct.is_empty() && perfect_matching(&distinct, retrieved)))
}

/// Rows each retrieval outcome produced, in plan order.
pub fn retrieved_results(response: &PipelineResponse) -> Vec<SqlResult> {
    response.outcomes.iter().filter_map(|o| o.rows().cloned()).collect()
}

/// `None` for unanswerable questions.
pub fn answer_accuracy(
    q: &EvalQuestion,
    response: &PipelineResponse,
    golds: &[SqlResult],
    judge: &dyn CompletionProvider,
) -> Result<Option<u8>, LlmError> {
    let judged = |gold: &Option<String>| -> Result<u8, LlmError> {
        let answer = response.answer_string();
        match gold {
            Some(gold) if !answer.trim().is_empty() => Ok(u8::from(judge_equivalence(judge, gold, &answer)?)),
            _ => Ok(0),
        }
    };
    Ok(match q.qtype {
        QuestionType::Unanswerable => None,
        QuestionType::ZeroDb => Some(judged(&q.gold_answer)?),
        QuestionType::SingleDb => Some(u8::from(
            response.kind == AnswerKind::SqlResult
                && match (&response.answer_result, golds.first()) {
                    (Some(a), Some(g)) => results_equal(&a.result, g),
                    _ => false,
                },
        )),
        QuestionType::DoubleDb => {
            if sql_accuracy(q, &retrieved_results(response), golds) != Some(1) {
                Some(0)
            } else {
                Some(judged(&q.gold_answer)?)
            }
        }
    })
}

/// One (question, database) pair of the selection classification task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SelectionLabel {
    pub question_id: String,
    pub db_id: String,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Precision, recall and F1 of `decisions` against `gold`. Both must label
/// the same pairs; zero denominators give 0.
pub fn selection_metrics(
    decisions: &[SelectionLabel],
    gold: &[SelectionLabel],
) -> Result<SelectionMetrics, EvalError> {
    let index = |labels: &[SelectionLabel]| -> Result<BTreeMap<(String, String), bool>, EvalError> {
        let mut map = BTreeMap::new();
        for l in labels {
            if map.insert((l.question_id.clone(), l.db_id.clone()), l.positive).is_some() {
                return Err(EvalError::CoverageMismatch);
            }
        }
        Ok(map)
    };
    let d = index(decisions)?;
    let g = index(gold)?;
    if d.len() != g.len() || d.keys().zip(g.keys()).any(|(a, b)| a != b) {
        return Err(EvalError::CoverageMismatch);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (selected, relevant) in d.values().zip(g.values()) {
        match (selected, relevant) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SelectionMetrics { precision, recall, f1, tp, fp, fn_, tn })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub id: String,
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AnswerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_acc: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_acc: Option<u8>,
    pub candidate_dbs: Vec<String>,
    pub targeted_dbs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_size: usize,
    /// Only question types present in the dataset appear.
    pub by_type: BTreeMap<String, TypeSummary>,
    /// `refined`: databases the plan targeted. `top_k`: raw selection
    /// memory candidates.
    pub selection: BTreeMap<String, SelectionMetrics>,
    pub questions: Vec<QuestionVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Runs the pipeline over `dataset` and scores it. Gold SQL is executed
/// once up front; pipeline and judge failures score 0 and are noted on the
/// question.
pub fn run_eval(
    dataset: &[EvalQuestion],
    pipeline: &Pipeline,
    judge: &dyn CompletionProvider,
    parallelism: usize,
) -> Result<EvalReport, EvalError> {
    let executor = SqlExecutor::default();
    let mut golds = Vec::with_capacity(dataset.len());
    for q in dataset {
        q.validate()?;
        golds.push(execute_golds(q, &pipeline.catalog, &executor)?);
    }
    let texts: Vec<String> = dataset.iter().map(|q| q.question.clone()).collect();
    let responses = pipeline.answer_batch(&texts, parallelism);

    let db_ids: Vec<String> = pipeline.catalog.ids().map(str::to_string).collect();
    let mut verdicts = Vec::new();
    let mut notes = Vec::new();
    let mut gold_labels = Vec::new();
    let mut refined = Vec::new();
    let mut top_k = Vec::new();

    for ((q, gold), response) in dataset.iter().zip(&golds).zip(&responses) {
        let mut verdict = QuestionVerdict {
            id: q.id.clone(),
            qtype: q.qtype,
            kind: None,
            sql_acc: None,
            answer_acc: None,
            candidate_dbs: Vec::new(),
            targeted_dbs: Vec::new(),
            failure: None,
        };
        let scored = q.qtype != QuestionType::Unanswerable;
        match response {
            Ok(r) => {
                verdict.kind = Some(r.kind);
                verdict.candidate_dbs = r.candidates.iter().map(|c| c.db_id.clone()).collect();
                verdict.targeted_dbs = r.targeted_databases();
                verdict.sql_acc = sql_accuracy(q, &retrieved_results(r), gold);
                verdict.answer_acc = match answer_accuracy(q, r, gold, judge) {
                    Ok(a) => a,
                    Err(e) => {
                        verdict.failure = Some(format!("judge: {e}"));
                        scored.then_some(0)
                    }
                };
                if q.qtype == QuestionType::DoubleDb && r.kind == AnswerKind::SqlResult {
                    notes.push(format!(
                        "{}: double_db question answered with a table; judged on its string form",
                        q.id
                    ));
                }
            }
            Err(failure) => {
                verdict.failure = Some(format!("{}: {}", failure.kind.code(), failure.kind));
                verdict.sql_acc = q.qtype.needs_databases().then_some(0);
                verdict.answer_acc = scored.then_some(0);
            }
        }
        if scored {
            for db in &db_ids {
                let label = |positive| SelectionLabel {
                    question_id: q.id.clone(),
                    db_id: db.clone(),
                    positive,
                };
                gold_labels.push(label(q.gold_db_ids.contains(db)));
                refined.push(label(verdict.targeted_dbs.contains(db)));
                top_k.push(label(verdict.candidate_dbs.contains(db)));
            }
        }
        verdicts.push(verdict);
    }

    let mut by_type: BTreeMap<String, TypeSummary> = BTreeMap::new();
    for qtype in [
        QuestionType::ZeroDb,
        QuestionType::SingleDb,
        QuestionType::DoubleDb,
        QuestionType::Unanswerable,
    ] {
        let of_type: Vec<&QuestionVerdict> = verdicts.iter().filter(|v| v.qtype == qtype).collect();
        if of_type.is_empty() {
            continue;
        }
        let mean = |f: fn(&QuestionVerdict) -> Option<u8>| -> Option<f64> {
            let xs: Vec<u8> = of_type.iter().filter_map(|v| f(v)).collect();
            (!xs.is_empty()).then(|| xs.iter().map(|&x| f64::from(x)).sum::<f64>() / xs.len() as f64)
        };
        by_type.insert(
            qtype.as_str().to_string(),
            TypeSummary {
                count: of_type.len(),
                sql_acc: mean(|v| v.sql_acc),
                answer_acc: mean(|v| v.answer_acc),
            },
        );
    }

    let mut selection = BTreeMap::new();
    selection.insert("refined".to_string(), selection_metrics(&refined, &gold_labels)?);
    selection.insert("top_k".to_string(), selection_metrics(&top_k, &gold_labels)?);

    Ok(EvalReport {
        dataset_size: dataset.len(),
        by_type,
        selection,
        questions: verdicts,
        notes,
    })
}

impl EvalReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Fixed-width accuracy table per question type, then selection metrics.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:>7}{:>10}{:>12}", "type", "count", "SQL Acc", "Answer Acc");
        for (name, s) in &self.by_type {
            let _ = writeln!(
                out,
                "{:<14}{:>7}{:>10}{:>12}",
                name,
                s.count,
                cell(s.sql_acc),
                cell(s.answer_acc)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<14}{:>11}{:>9}{:>9}", "selection", "precision", "recall", "f1");
        for (name, m) in &self.selection {
            let _ = writeln!(
                out,
                "{:<14}{:>11.3}{:>9.3}{:>9.3}",
                name, m.precision, m.recall, m.f1
            );
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("report.json"), self.to_json_bytes()).map_err(io)?;
        fs::write(dir.join("report.txt"), self.to_table()).map_err(io)?;
        Ok(())
    }
}
