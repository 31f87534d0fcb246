//! Completion providers, prompt templates, response parsers, and the prompt
//! operations built from them.

mod http;
mod mock;
mod parse;
pub mod templates;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SchemaText;
use crate::sql::{ExecutionError, SqlResult};

pub use http::HttpCompletionProvider;
pub use mock::{ScriptRule, ScriptedMock, MOCK_MAX_PROMPT_CHARS};
pub use parse::{
    extract_sql, parse_context_switch, parse_corrected_sql, parse_plan, parse_yes_no,
    ContextDecision, RetrievalPlan, RetrievalTarget,
};
pub use templates::{CandidateValues, PromptKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("completion provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("prompt has {chars} characters; the provider accepts {max}")]
    PromptTooLarge { chars: usize, max: usize },
    #[error("completion provider returned an empty completion")]
    EmptyCompletion,
    #[error("no scripted rule matches prompt starting {0:?}")]
    UnmatchedPrompt(String),
    #[error("mock script: {0}")]
    Script(String),
    #[error("response contains no SQL statement")]
    NoSqlInResponse,
}

impl LlmError {
    /// Errors that mean the provider itself failed, as opposed to an
    /// unusable answer.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            LlmError::ProviderUnavailable(_)
                | LlmError::EmptyCompletion
                | LlmError::UnmatchedPrompt(_)
                | LlmError::Script(_)
        )
    }
}

/// Single prompt in, single completion out. Implementations must accept
/// concurrent calls.
pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn max_prompt_chars(&self) -> usize;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// One prompt/response pair as seen by a [`Recorder`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

/// Wraps a provider and keeps every successful exchange.
pub struct Recorder<'a> {
    inner: &'a dyn CompletionProvider,
    log: Mutex<Vec<Exchange>>,
}

impl<'a> Recorder<'a> {
    pub fn new(inner: &'a dyn CompletionProvider) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Removes and returns the exchanges recorded so far.
    pub fn take(&self) -> Vec<Exchange> {
        std::mem::take(&mut *self.log.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

impl CompletionProvider for Recorder<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn max_prompt_chars(&self) -> usize {
        self.inner.max_prompt_chars()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let response = self.inner.complete(prompt)?;
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(Exchange {
                prompt: prompt.to_string(),
                response: response.clone(),
            });
        Ok(response)
    }
}

fn call(provider: &dyn CompletionProvider, prompt: &str) -> Result<String, LlmError> {
    let chars = prompt.chars().count();
    let max = provider.max_prompt_chars();
    if chars > max {
        return Err(LlmError::PromptTooLarge { chars, max });
    }
    let response = provider.complete(prompt)?;
    if response.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(response)
}

/// Whether the question already carries its own answer. A response with
/// neither `(YES)` nor `(NO)` counts as needing retrieval.
pub fn decide_context_switch(
    provider: &dyn CompletionProvider,
    question: &str,
) -> Result<ContextDecision, LlmError> {
    let response = call(provider, &templates::context_switch_prompt(question))?;
    Ok(parse_context_switch(&response).unwrap_or_else(|| {
        tracing::warn!("context switch response has no decision token; retrieving");
        ContextDecision::NeedsRetrieval
    }))
}

/// Asks for a retrieval plan over the candidate schemas. Targets on
/// databases outside the candidates are dropped and reported as warnings.
pub fn generate_plan(
    provider: &dyn CompletionProvider,
    question: &str,
    candidate_schemas: &[SchemaText],
) -> Result<RetrievalPlan, LlmError> {
    let response = call(provider, &templates::plan_prompt(question, candidate_schemas))?;
    let ids: Vec<&str> = candidate_schemas.iter().map(|s| s.db_id.as_str()).collect();
    let plan = parse_plan(&response, &ids);
    for w in &plan.warnings {
        tracing::warn!("{w}");
    }
    Ok(plan)
}

/// Lets the LLM swap string literals for stored values. Without candidates
/// no call is made; an unparseable answer leaves the SQL unchanged.
pub fn correct_sql_with_values(
    provider: &dyn CompletionProvider,
    sql: &str,
    candidates: &[CandidateValues],
    question: &str,
) -> Result<String, LlmError> {
    if candidates.is_empty() {
        return Ok(sql.to_string());
    }
    let response = call(
        provider,
        &templates::value_correction_prompt(sql, candidates, question),
    )?;
    Ok(parse_corrected_sql(&response).unwrap_or_else(|| sql.to_string()))
}

pub fn correct_sql_with_error(
    provider: &dyn CompletionProvider,
    schema_text: &str,
    question: &str,
    sql: &str,
    error: &ExecutionError,
) -> Result<String, LlmError> {
    let prompt = templates::error_correction_prompt(schema_text, question, sql, &error.message);
    extract_sql(&call(provider, &prompt)?).ok_or(LlmError::NoSqlInResponse)
}

/// `false` unless the first yes/no token of the response is "yes".
pub fn is_goal_sql_equivalent(
    provider: &dyn CompletionProvider,
    goal: &str,
    sql: &str,
) -> Result<bool, LlmError> {
    let response = call(provider, &templates::return_type_prompt(goal, sql))?;
    Ok(parse_yes_no(&response).unwrap_or(false))
}

pub fn generate_output(
    provider: &dyn CompletionProvider,
    question: &str,
    evidence: &[(String, SqlResult)],
) -> Result<String, LlmError> {
    Ok(call(provider, &templates::output_prompt(question, evidence))?
        .trim()
        .to_string())
}

fn fold(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Answers that are equal after case and whitespace folding are equivalent
/// without asking the provider.
pub fn judge_equivalence(
    provider: &dyn CompletionProvider,
    gold_answer: &str,
    answer: &str,
) -> Result<bool, LlmError> {
    if fold(gold_answer) == fold(answer) {
        return Ok(true);
    }
    let response = call(provider, &templates::judge_prompt(gold_answer, answer))?;
    Ok(parse_yes_no(&response).unwrap_or(false))
}

pub fn text_to_sql(
    provider: &dyn CompletionProvider,
    goal: &str,
    schema_text: &str,
    seed_sql: Option<&str>,
) -> Result<String, LlmError> {
    let response = call(provider, &templates::text_to_sql_prompt(goal, schema_text, seed_sql))?;
    extract_sql(&response).ok_or(LlmError::NoSqlInResponse)
}
