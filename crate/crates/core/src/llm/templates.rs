//! Prompt templates and their rendering.
//!
//! Slots are written `{name}`. Rendering is a single left-to-right pass that
//! only replaces known slot names, so braces in the template text (such as
//! `{?}`) and braces inside substituted values are left alone.

use serde::{Deserialize, Serialize};

use crate::catalog::SchemaText;
use crate::sql::SqlResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ContextSwitch,
    PlanGeneration,
    ValueCorrection,
    ErrorCorrection,
    ReturnTypeDecision,
    OutputGeneration,
    AnswerJudge,
    TextToSql,
}

impl PromptKind {
    pub const ALL: [PromptKind; 8] = [
        PromptKind::ContextSwitch,
        PromptKind::PlanGeneration,
        PromptKind::ValueCorrection,
        PromptKind::ErrorCorrection,
        PromptKind::ReturnTypeDecision,
        PromptKind::OutputGeneration,
        PromptKind::AnswerJudge,
        PromptKind::TextToSql,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::ContextSwitch => include_str!("../../templates/context_switch.txt"),
            PromptKind::PlanGeneration => include_str!("../../templates/plan_generation.txt"),
            PromptKind::ValueCorrection => include_str!("../../templates/value_correction.txt"),
            PromptKind::ErrorCorrection => include_str!("../../templates/error_correction.txt"),
            PromptKind::ReturnTypeDecision => include_str!("../../templates/return_type.txt"),
            PromptKind::OutputGeneration => include_str!("../../templates/output_generation.txt"),
            PromptKind::AnswerJudge => include_str!("../../templates/answer_judge.txt"),
            PromptKind::TextToSql => include_str!("../../templates/text_to_sql.txt"),
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            PromptKind::ContextSwitch => &["question"],
            PromptKind::PlanGeneration => &["databases", "question"],
            PromptKind::ValueCorrection => &["sql", "candidate_values", "question"],
            PromptKind::ErrorCorrection => &["schema", "question", "sql", "error"],
            PromptKind::ReturnTypeDecision => &["question", "SQL"],
            PromptKind::OutputGeneration => &["sql_results", "question"],
            PromptKind::AnswerJudge => &["gold", "answer"],
            PromptKind::TextToSql => &["schema", "goal", "example"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::ContextSwitch => "context_switch",
            PromptKind::PlanGeneration => "plan_generation",
            PromptKind::ValueCorrection => "value_correction",
            PromptKind::ErrorCorrection => "error_correction",
            PromptKind::ReturnTypeDecision => "return_type_decision",
            PromptKind::OutputGeneration => "output_generation",
            PromptKind::AnswerJudge => "answer_judge",
            PromptKind::TextToSql => "text_to_sql",
        }
    }
}

/// Substitutes `{name}` slots. Unknown names are copied through verbatim.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots
                .iter()
                .find(|(slot, _)| *slot == name)
                .map(|(_, value)| (close, *value))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Candidate values for one column, shown to the value-correction prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateValues {
    pub table: String,
    pub column: String,
    pub values: Vec<String>,
}

/// Python `repr` of a string: single quotes unless the text contains a
/// single quote and no double quote.
pub fn py_repr(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

pub fn render_candidate_values(candidates: &[CandidateValues]) -> String {
    candidates
        .iter()
        .map(|c| {
            let values: Vec<String> = c.values.iter().map(|v| py_repr(v)).collect();
            format!(
                "Table: {}; Column: {}; Values: [{}]",
                c.table,
                c.column,
                values.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_databases(schemas: &[SchemaText]) -> String {
    schemas
        .iter()
        .map(|s| format!("Database {}\nSchema: {}", s.db_id, s.body()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_evidence(evidence: &[(String, SqlResult)]) -> String {
    evidence
        .iter()
        .map(|(sql, result)| format!("SQL: {sql}\nResult: {}", result.to_json()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn context_switch_prompt(question: &str) -> String {
    render(PromptKind::ContextSwitch.template(), &[("question", question)])
}

pub fn plan_prompt(question: &str, schemas: &[SchemaText]) -> String {
    render(
        PromptKind::PlanGeneration.template(),
        &[("databases", &render_databases(schemas)), ("question", question)],
    )
}

pub fn value_correction_prompt(sql: &str, candidates: &[CandidateValues], question: &str) -> String {
    render(
        PromptKind::ValueCorrection.template(),
        &[
            ("sql", sql),
            ("candidate_values", &render_candidate_values(candidates)),
            ("question", question),
        ],
    )
}

pub fn error_correction_prompt(schema: &str, question: &str, sql: &str, error: &str) -> String {
    render(
        PromptKind::ErrorCorrection.template(),
        &[("schema", schema), ("question", question), ("sql", sql), ("error", error)],
    )
}

pub fn return_type_prompt(goal: &str, sql: &str) -> String {
    render(PromptKind::ReturnTypeDecision.template(), &[("question", goal), ("SQL", sql)])
}

pub fn output_prompt(question: &str, evidence: &[(String, SqlResult)]) -> String {
    render(
        PromptKind::OutputGeneration.template(),
        &[("sql_results", &render_evidence(evidence)), ("question", question)],
    )
}

pub fn judge_prompt(gold: &str, answer: &str) -> String {
    render(PromptKind::AnswerJudge.template(), &[("gold", gold), ("answer", answer)])
}

pub fn text_to_sql_prompt(goal: &str, schema: &str, seed_sql: Option<&str>) -> String {
    let example = seed_sql
        .filter(|s| !s.trim().is_empty())
        .map(|s| format!("Example SQL: {s}\n"))
        .unwrap_or_default();
    render(
        PromptKind::TextToSql.template(),
        &[("schema", schema), ("goal", goal), ("example", &example)],
    )
}
