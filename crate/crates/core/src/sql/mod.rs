//! SQL-side machinery: result tables, comparison, truncation, read-only
//! execution, and extraction of string-literal conditions.

mod conditions;
mod exec;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use conditions::{extract_conditions, ConditionError, ConditionOp, SqlCondition};
pub use exec::{ExecutionError, SqlExecutor, DEFAULT_TIMEOUT};

/// A typed result cell. Serializes to a bare JSON null, number, or string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
        }
    }

    /// Null, then numbers by value, then text by bytes.
    fn canonical_cmp(&self, other: &Cell) -> Ordering {
        match (self, other) {
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Integer(a), Cell::Integer(b)) => a.cmp(b),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => self.rank().cmp(&other.rank()),
            },
        }
    }

    /// Numbers match within relative tolerance 1e-6; text and null match
    /// exactly.
    pub fn matches(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Null, Cell::Null) => true,
            (Cell::Text(a), Cell::Text(b)) => a == b,
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => {
                    a == b || (a - b).abs() <= NUMERIC_RTOL * a.abs().max(b.abs())
                }
                _ => false,
            },
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

pub const NUMERIC_RTOL: f64 = 1e-6;

/// A materialized query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    #[serde(default)]
    pub truncated: bool,
}

impl SqlResult {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Self {
        Self {
            columns,
            rows,
            truncated: false,
        }
    }

    /// Builds a result from rows only, naming columns `c0, c1, ...`.
    pub fn from_rows(rows: Vec<Vec<Cell>>) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        Self::new((0..width).map(|i| format!("c{i}")).collect(), rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }

    /// The single numeric value of a 1x1 result.
    pub fn scalar_number(&self) -> Option<f64> {
        match self.rows.as_slice() {
            [row] if row.len() == 1 && self.columns.len() == 1 => row[0].as_f64(),
            _ => None,
        }
    }

    /// Short string form used when a table has to be judged as text: the
    /// bare value for 1x1 results, JSON otherwise.
    pub fn to_answer_string(&self) -> String {
        match self.rows.as_slice() {
            [row] if row.len() == 1 => row[0].to_string(),
            _ => self.to_json(),
        }
    }
}

fn canonical_rows(r: &SqlResult) -> Vec<&Vec<Cell>> {
    let mut rows: Vec<&Vec<Cell>> = r.rows.iter().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.canonical_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.len().cmp(&b.len()))
    });
    rows
}

/// Execution match: equal column counts and equal row multisets, ignoring
/// row order and column names.
pub fn results_equal(a: &SqlResult, b: &SqlResult) -> bool {
    if a.columns.len() != b.columns.len() || a.rows.len() != b.rows.len() {
        return false;
    }
    canonical_rows(a)
        .into_iter()
        .zip(canonical_rows(b))
        .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.matches(q)))
}

/// Keeps the first `n` rows and marks the result as truncated if any rows
/// were dropped.
pub fn truncate_result(r: &SqlResult, n: usize) -> SqlResult {
    if r.rows.len() <= n {
        return r.clone();
    }
    SqlResult {
        columns: r.columns.clone(),
        rows: r.rows[..n].to_vec(),
        truncated: true,
    }
}
