#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use relmem_core::fixtures;
use relmem_core::llm::{ScriptRule, ScriptedMock};
use relmem_core::{
    index_schemas, Catalog, HashingEmbedder, Pipeline, PipelineConfig, ValueMemories, ValueMemory,
    VectorIndex,
};

pub struct Stores {
    pub dir: tempfile::TempDir,
    pub catalog: Arc<Catalog>,
    pub index: Arc<VectorIndex>,
    pub values: Arc<ValueMemories>,
}

pub fn build_stores(make: fn(&Path) -> Result<Catalog, relmem_core::CatalogError>) -> Stores {
    let dir = tempfile::tempdir().unwrap();
    let catalog = make(dir.path()).unwrap();
    let e = HashingEmbedder::new();
    let index = index_schemas(&catalog, &e).unwrap();
    let values = catalog
        .entries()
        .iter()
        .map(|entry| (entry.id.clone(), ValueMemory::build(entry, &e, &Default::default()).unwrap()))
        .collect();
    Stores {
        dir,
        catalog: Arc::new(catalog),
        index: Arc::new(index),
        values: Arc::new(values),
    }
}

pub fn standard() -> Stores {
    build_stores(fixtures::standard_catalog)
}

pub fn quiet_config() -> PipelineConfig {
    PipelineConfig {
        trace_timings: false,
        ..Default::default()
    }
}

pub fn pipeline_with(s: &Stores, rules: Vec<ScriptRule>, config: PipelineConfig) -> (Pipeline, Arc<ScriptedMock>) {
    let mock = Arc::new(ScriptedMock::new(rules).unwrap());
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

pub const CONTEXT_SWITCH: &str = "Does context of the question";
pub const TEXT_TO_SQL: &str = "Return one SQL query only.";
pub const VALUE_CORRECTION: &str = "Candidate Values:";
pub const ERROR_CORRECTION: &str = "Error Message:";
pub const RETURN_TYPE: &str = "Is the goal and SQL equivalent?";
pub const OUTPUT: &str = "# SQL Results";
pub const JUDGE: &str = "Are the following two answers equivalent?";

pub fn needs_retrieval() -> ScriptRule {
    ScriptRule::new(CONTEXT_SWITCH, "(NO) The context is empty")
}

pub const LA_QUESTION: &str = "Show me the restaurants in Los Angeles";
pub const LA_GOLD: &str = "SELECT name FROM restaurant WHERE location = 'LA'";

/// Planner and generator write the city as the question does; the value
/// corrector only fixes it when the candidates actually contain 'LA'.
pub fn la_rules() -> Vec<ScriptRule> {
    let wrong = "SELECT name FROM restaurant WHERE location = 'Los Angeles'";
    vec![
        needs_retrieval(),
        ScriptRule::new(
            format!("Input Question: {LA_QUESTION}"),
            format!("Goal: names of restaurants located in Los Angeles\n*Begin SQL* {wrong} *End SQL*\nDatabase restaurants"),
        ),
        ScriptRule::new(TEXT_TO_SQL, wrong),
        ScriptRule::new(r"(?s)Candidate Values: .*Column: location; Values: \[[^\]]*'LA'", format!("Corrected SQL: {LA_GOLD}\nReasons: stored as LA")).regex(),
        ScriptRule::new(VALUE_CORRECTION, format!("Corrected SQL: {wrong}")),
        ScriptRule::new(RETURN_TYPE, "Yes"),
        ScriptRule::new(OUTPUT, "I could not find restaurants in Los Angeles."),
    ]
}

pub const SINGER_Q: &str = "How many singers are there?";
pub const EMPLOYEE_Q: &str = "How many employees are there?";
pub const SINGER_GOLD: &str = "SELECT count(*) FROM singer";
pub const EMPLOYEE_GOLD: &str = "SELECT count(*) FROM employee";

pub fn composite_question() -> String {
    format!("Which question has a larger number as its answer. Q1: {SINGER_Q}; Q2: {EMPLOYEE_Q}")
}

pub fn composite_rules() -> Vec<ScriptRule> {
    vec![
        needs_retrieval(),
        ScriptRule::new(
            "Input Question: Which question has a larger number",
            format!(
                "Goal: Count the singers\n*Begin SQL* {SINGER_GOLD} *End SQL*\nDatabase singer\n\
                 Goal: Count the employees\n*Begin SQL* {EMPLOYEE_GOLD} *End SQL*\nDatabase employee_hire_evaluation"
            ),
        ),
        ScriptRule::new(r"(?s)Goal: Count the singers\n.*Return one SQL query only\.", SINGER_GOLD).regex(),
        ScriptRule::new(r"(?s)Goal: Count the employees\n.*Return one SQL query only\.", EMPLOYEE_GOLD).regex(),
        ScriptRule::new(RETURN_TYPE, "No"),
        ScriptRule::new(OUTPUT, "Q2"),
    ]
}

pub const THAI_QUESTION: &str = "Show me all the Thai restaurants in New York";
pub const THAI_GOLD: &str = "SELECT name FROM restaurant WHERE food_type = 'thai' AND location = 'New York'";

pub fn thai_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::new(
            format!("Input Question: {THAI_QUESTION}"),
            format!("Goal: names of Thai restaurants in New York\n*Begin SQL* {THAI_GOLD} *End SQL*\nDatabase restaurants"),
        ),
        ScriptRule::new(
            r"(?s)Goal: names of Thai restaurants.*Return one SQL query only\.",
            "SELECT name FROM restaurant WHERE food_type = 'Thai' AND location = 'New York'",
        )
        .regex(),
        ScriptRule::new(r"(?s)food_type = 'Thai'.*Candidate Values: ", format!("Corrected SQL: {THAI_GOLD}")).regex(),
    ]
}

pub const MOON_QUESTION: &str = "What is the capital of the moon?";
pub const PARIS_QUESTION: &str = "Paris is the capital of France. The capital of France is {?}.";

/// Script covering the four-question evaluation fixture.
pub fn eval_rules() -> Vec<ScriptRule> {
    let mut rules = vec![
        ScriptRule::new(format!("Question: {PARIS_QUESTION}\nBased on"), "Paris"),
        ScriptRule::new(format!("Question: {MOON_QUESTION}\nBased on"), "The moon has no capital."),
        ScriptRule::new(format!("Question: {PARIS_QUESTION}\n"), "(YES) the context names it"),
        needs_retrieval(),
    ];
    rules.extend(thai_rules());
    rules.extend(composite_rules().into_iter().skip(1).filter(|r| r.pattern != RETURN_TYPE && r.pattern != OUTPUT));
    rules.push(ScriptRule::new(format!("Input Question: {MOON_QUESTION}"), "No database can answer this."));
    rules.push(ScriptRule::new(format!("Answer yes or no.\nQuestion: {THAI_QUESTION}\n"), "Yes"));
    rules.push(ScriptRule::new(RETURN_TYPE, "No"));
    rules.push(ScriptRule::new(OUTPUT, "Q2"));
    rules
}

pub fn eval_dataset() -> &'static str {
    include_str!("../data/eval_fixture.jsonl")
}
