//! Retrieval over a collection of relational databases for question
//! answering with an unmodified LLM.
//!
//! Two memories sit outside the model: a database selection memory (schema
//! embeddings) and a data value memory (per-column embeddings of stored
//! values). The [`pipeline`] wires them to the prompt stages in [`llm`].

pub mod catalog;
pub mod embedding;
pub mod eval;
pub mod fixtures;
pub mod llm;
pub mod pipeline;
pub mod selection;
pub mod sql;
pub mod values;

mod persist;

pub use catalog::{
    serialize_schema, Catalog, CatalogError, Column, ColumnType, DatabaseEntry, ForeignKey,
    SchemaText, TableSchema,
};
pub use embedding::{
    load_index, save_index, EmbedError, EmbeddingProvider, EmbeddingVector, HashingEmbedder,
    HttpEmbeddingProvider, IndexError, ScoredId, VectorIndex,
};
pub use persist::write_if_changed;
pub use selection::{index_schemas, select_top_k, SelectionCandidate, SelectionError};
pub use sql::{
    extract_conditions, results_equal, truncate_result, Cell, ExecutionError, SqlCondition,
    SqlExecutor, SqlResult,
};
pub use values::{ColumnKey, ValueMemories, ValueMemory, ValueMemoryConfig, ValueMemoryError};
pub use pipeline::{
    AnswerKind, OutcomeResult, Pipeline, PipelineConfig, PipelineFailure, PipelineResponse,
    RetrievalOutcome, TraceEntry,
};
pub use eval::{
    compose_double_db, run_eval, selection_metrics, sql_accuracy, EvalError, EvalQuestion,
    EvalReport, QuestionType, SelectionMetrics,
};
