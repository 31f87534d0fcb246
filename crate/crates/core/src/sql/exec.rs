use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::{Cell, SqlResult};
use crate::catalog::{open_read_only, DatabaseEntry};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// A database-side failure, carrying the engine's message verbatim so it can
/// be fed back to the LLM for correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionError {
    pub message: String,
    pub sql: String,
}

impl ExecutionError {
    fn new(message: impl Into<String>, sql: &str) -> Self {
        let message = message.into();
        Self {
            message: if message.is_empty() {
                "unknown database error".to_string()
            } else {
                message
            },
            sql: sql.to_string(),
        }
    }
}

impl fmt::Display for ExecutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ExecutionError {}

/// Read-only executor. Keeps one connection per database id; executions
/// against the same database are serialized by that connection's lock.
pub struct SqlExecutor {
    timeout: Duration,
    connections: Mutex<HashMap<String, Arc<Mutex<Connection>>>>,
}

impl Default for SqlExecutor {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

impl SqlExecutor {
    pub fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            connections: Mutex::new(HashMap::new()),
        }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn connection(&self, entry: &DatabaseEntry) -> Result<Arc<Mutex<Connection>>, String> {
        let mut pool = self.connections.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(conn) = pool.get(&entry.id) {
            return Ok(conn.clone());
        }
        let conn = open_read_only(&entry.location).map_err(|e| e.to_string())?;
        let conn = Arc::new(Mutex::new(conn));
        pool.insert(entry.id.clone(), conn.clone());
        Ok(conn)
    }

    pub fn execute(&self, entry: &DatabaseEntry, sql: &str) -> Result<SqlResult, ExecutionError> {
        self.execute_with_timeout(entry, sql, self.timeout)
    }

    /// Runs one read-only statement and materializes the whole result.
    /// Statements that would write are rejected before running.
    pub fn execute_with_timeout(
        &self,
        entry: &DatabaseEntry,
        sql: &str,
        timeout: Duration,
    ) -> Result<SqlResult, ExecutionError> {
        let conn = self
            .connection(entry)
            .map_err(|m| ExecutionError::new(m, sql))?;
        let conn = conn.lock().unwrap_or_else(|p| p.into_inner());

        let deadline = Instant::now() + timeout;
        conn.progress_handler(1_000, Some(move || Instant::now() >= deadline))
            .map_err(|e| ExecutionError::new(e.to_string(), sql))?;
        let result = run(&conn, sql, timeout);
        let _ = conn.progress_handler(0, None::<fn() -> bool>);
        result
    }
}

fn run(conn: &Connection, sql: &str, timeout: Duration) -> Result<SqlResult, ExecutionError> {
    let interrupted = |e: rusqlite::Error| {
        if e.sqlite_error_code() == Some(rusqlite::ErrorCode::OperationInterrupted) {
            ExecutionError::new(
                format!("query interrupted: exceeded the {}s execution timeout", timeout.as_secs_f64()),
                sql,
            )
        } else {
            ExecutionError::new(engine_message(&e), sql)
        }
    };
    let mut stmt = conn.prepare(sql).map_err(interrupted)?;
    if !stmt.readonly() {
        return Err(ExecutionError::new(
            "write attempt rejected: only read-only SELECT statements may be executed",
            sql,
        ));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([]).map_err(interrupted)?;
    while let Some(row) = cursor.next().map_err(interrupted)? {
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match row.get_ref(i).map_err(interrupted)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Integer(v),
                ValueRef::Real(v) => Cell::Real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Text(hex_blob(b)),
            });
        }
        rows.push(cells);
    }
    Ok(SqlResult::new(columns, rows))
}

/// The bare SQLite message (e.g. `no such column: nam`) without rusqlite's
/// wrapping.
fn engine_message(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        rusqlite::Error::SqlInputError { msg, .. } => msg.clone(),
        other => other.to_string(),
    }
}

fn hex_blob(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2 + 3);
    s.push_str("x'");
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s.push('\'');
    s
}
