//! Response parsers. Each one accepts any string.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextDecision {
    Answerable,
    NeedsRetrieval,
}

/// One retrieval objective of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalTarget {
    pub goal: String,
    pub candidate_sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub targets: Vec<RetrievalTarget>,
    /// Blocks that could not be used, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// `Some` for whichever of `(YES)` / `(NO)` comes first, `None` if neither
/// appears.
pub fn parse_context_switch(response: &str) -> Option<ContextDecision> {
    let upper = response.to_ascii_uppercase();
    match (upper.find("(YES)"), upper.find("(NO)")) {
        (Some(y), Some(n)) if y < n => Some(ContextDecision::Answerable),
        (Some(_), None) => Some(ContextDecision::Answerable),
        (_, Some(_)) => Some(ContextDecision::NeedsRetrieval),
        (None, None) => None,
    }
}

fn plan_block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?is)goal\s*:\s*(?P<goal>.*?)\s*\*\s*begin\s+sql\s*\*\s*(?P<sql>.*?)\s*\*\s*end\s+sql\s*\*(?P<tail>.*?)(?:goal\s*:|\z)"#,
        )
        .expect("valid regex")
    })
}

fn database_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)database\s*(?:name\s*)?[:=]?\s*[*"'`]*(?P<db>[A-Za-z0-9_\-.]+)"#)
            .expect("valid regex")
    })
}

/// Parses `Goal:` / `*Begin SQL* ... *End SQL*` / `Database xxx` blocks in
/// emission order. Database names match `candidates` case-insensitively and
/// come back in the candidate's spelling; other blocks become warnings.
pub fn parse_plan(response: &str, candidates: &[&str]) -> RetrievalPlan {
    let mut plan = RetrievalPlan::default();
    let mut pos = 0;
    while pos < response.len() {
        let Some(caps) = plan_block_re().captures_at(response, pos) else {
            break;
        };
        let tail = caps.name("tail").expect("group");
        // The next block starts at the `Goal:` that terminated this one.
        pos = tail.end();
        let goal = caps["goal"].trim().to_string();
        let sql = strip_trailing_semicolons(caps["sql"].trim()).to_string();
        let db = database_re()
            .captures(tail.as_str())
            .map(|c| c["db"].trim_end_matches('.').to_string());
        match db {
            None => plan
                .warnings
                .push(format!("dropped target without a database: {goal}")),
            Some(db) => match candidates.iter().find(|c| c.eq_ignore_ascii_case(&db)) {
                Some(id) if !sql.is_empty() => plan.targets.push(RetrievalTarget {
                    goal,
                    candidate_sql: sql,
                    db_id: id.to_string(),
                }),
                Some(_) => plan.warnings.push(format!("dropped target with empty SQL: {goal}")),
                None => plan
                    .warnings
                    .push(format!("dropped target on database `{db}` outside the candidates")),
            },
        }
    }
    plan
}

fn strip_trailing_semicolons(sql: &str) -> &str {
    sql.trim_end().trim_end_matches(';').trim_end()
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```").map_or(t, |rest| {
        rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric())
    });
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn starts_like_query(sql: &str) -> bool {
    let head: String = sql.chars().take(6).collect::<String>().to_ascii_uppercase();
    head.starts_with("SELECT") || head.starts_with("WITH")
}

/// The statement after the last `Corrected SQL:` marker, up to `Reasons:`.
/// `None` when there is no marker or what follows is not a query.
pub fn parse_corrected_sql(response: &str) -> Option<String> {
    let lower = response.to_ascii_lowercase();
    let start = lower.rfind("corrected sql:")? + "corrected sql:".len();
    let rest = &response[start..];
    let end = rest.to_ascii_lowercase().find("reasons:").unwrap_or(rest.len());
    let body = strip_fences(&rest[..end]);
    let body = body.split(';').next().unwrap_or("").trim();
    if starts_like_query(body) {
        Some(body.to_string())
    } else {
        None
    }
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_]*\s*\n?(.*?)```").expect("valid regex"))
}

fn query_start_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bSELECT\b|\bWITH\s+(?:RECURSIVE\s+)?[A-Za-z_][A-Za-z0-9_]*\s*(?:\([^)]*\))?\s*AS\s*\(")
            .expect("valid regex")
    })
}

fn blank_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n[ \t]*\n").expect("valid regex"))
}

/// First SQL statement in a free-form response: the first fenced block that
/// holds a query, otherwise the text from the first `SELECT` (or `WITH`) to
/// a `;`, a blank line, or the end.
pub fn extract_sql(response: &str) -> Option<String> {
    for caps in fence_re().captures_iter(response) {
        let body = strip_trailing_semicolons(caps[1].trim());
        if let Some(m) = query_start_re().find(body) {
            let body = body[m.start()..].split(';').next().unwrap_or("").trim();
            if !body.is_empty() {
                return Some(body.to_string());
            }
        }
    }
    let m = query_start_re().find(response)?;
    let rest = &response[m.start()..];
    let mut end = rest.find(';').unwrap_or(rest.len());
    if let Some(blank) = blank_line_re().find(rest) {
        end = end.min(blank.start());
    }
    let sql = rest[..end].trim();
    let sql = sql.strip_suffix("```").unwrap_or(sql).trim();
    Some(sql.to_string())
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"))
}

/// The first standalone yes/no token, case-insensitive.
pub fn parse_yes_no(response: &str) -> Option<bool> {
    yes_no_re()
        .captures(response)
        .map(|c| c[1].eq_ignore_ascii_case("yes"))
}
