//! Data value memory.
//!
//! One embedding index per text column of a database, over the column's
//! distinct stored values. Looking up a literal from a generated SQL query
//! returns the stored values closest to it, so a query written with
//! `'Los Angeles'` can be grounded to the stored `'LA'`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rusqlite::types::ValueRef;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{open_read_only, quote_ident, DatabaseEntry};
use crate::embedding::{load_index, EmbedError, EmbeddingProvider, IndexError, VectorIndex};
use crate::persist::write_if_changed;

#[derive(Debug, Error)]
pub enum ValueMemoryError {
    #[error("reading {db_id}.{table}.{column}: {reason}")]
    Execution {
        db_id: String,
        table: String,
        column: String,
        reason: String,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("unknown column {0}")]
    UnknownColumn(ColumnKey),
    #[error("k must be positive")]
    ZeroK,
    #[error("value memory manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub db_id: String,
    pub table: String,
    pub column: String,
}

impl ColumnKey {
    pub fn new(db_id: impl Into<String>, table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            db_id: db_id.into(),
            table: table.into(),
            column: column.into(),
        }
    }

    /// File stem used on disk: `<table>.<column>`.
    pub fn file_stem(&self) -> String {
        format!("{}.{}", self.table, self.column)
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.db_id, self.table, self.column)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValueMemoryConfig {
    /// Keep only the most frequent values of very large columns.
    pub max_values_per_column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct ColumnMemory {
    index: VectorIndex,
    /// Raw stored value per record id.
    raw: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueMemory {
    db_id: String,
    columns: BTreeMap<ColumnKey, ColumnMemory>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    db_id: String,
    dim: usize,
    columns: Vec<ManifestColumn>,
}

#[derive(Serialize, Deserialize)]
struct ManifestColumn {
    table: String,
    column: String,
    values: BTreeMap<String, String>,
}

pub const VALUES_MANIFEST: &str = "values.json";

fn record_id(ordinal: usize) -> String {
    format!("{ordinal:08}")
}

/// Distinct non-null values of one column with their frequencies, keyed by
/// exact bytes. Numbers are stringified; blobs and non-UTF-8 text are
/// skipped.
fn distinct_values(
    entry: &DatabaseEntry,
    table: &str,
    column: &str,
) -> Result<BTreeMap<String, usize>, String> {
    let conn = open_read_only(&entry.location).map_err(|e| e.to_string())?;
    let sql = format!(
        "SELECT {c} FROM {t} WHERE {c} IS NOT NULL",
        c = quote_ident(column),
        t = quote_ident(table)
    );
    let mut stmt = conn.prepare(&sql).map_err(|e| e.to_string())?;
    let mut rows = stmt.query([]).map_err(|e| e.to_string())?;
    let mut counts = BTreeMap::new();
    while let Some(row) = rows.next().map_err(|e| e.to_string())? {
        let value = match row.get_ref(0).map_err(|e| e.to_string())? {
            ValueRef::Text(t) => match std::str::from_utf8(t) {
                Ok(s) => s.to_string(),
                Err(_) => continue,
            },
            ValueRef::Integer(i) => i.to_string(),
            ValueRef::Real(r) => r.to_string(),
            ValueRef::Null | ValueRef::Blob(_) => continue,
        };
        *counts.entry(value).or_insert(0usize) += 1;
    }
    Ok(counts)
}

fn cap(counts: BTreeMap<String, usize>, max: Option<usize>) -> Vec<String> {
    match max {
        Some(max) if counts.len() > max => {
            let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
            // Stable sort keeps byte order among equal frequencies.
            by_freq.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
            let mut kept: Vec<String> = by_freq.into_iter().take(max).map(|(v, _)| v).collect();
            kept.sort();
            kept
        }
        _ => counts.into_keys().collect(),
    }
}

impl ValueMemory {
    /// Indexes every text column of `entry`.
    pub fn build(
        entry: &DatabaseEntry,
        provider: &dyn EmbeddingProvider,
        config: &ValueMemoryConfig,
    ) -> Result<ValueMemory, ValueMemoryError> {
        let mut columns = BTreeMap::new();
        for table in &entry.tables {
            for column in table.columns.iter().filter(|c| c.declared_type.is_text()) {
                let key = ColumnKey::new(&entry.id, &table.name, &column.name);
                let counts = distinct_values(entry, &table.name, &column.name).map_err(|reason| {
                    ValueMemoryError::Execution {
                        db_id: entry.id.clone(),
                        table: table.name.clone(),
                        column: column.name.clone(),
                        reason,
                    }
                })?;
                let values = cap(counts, config.max_values_per_column);
                let mut index = VectorIndex::new(provider.dimension())?;
                let mut raw = BTreeMap::new();
                for (i, value) in values.into_iter().enumerate() {
                    let id = record_id(i);
                    // Whitespace-only values cannot be embedded by every
                    // provider; they are still kept, with the vector of a
                    // placeholder so the record exists.
                    let text = if value.trim().is_empty() { "(blank)" } else { value.as_str() };
                    index.insert(id.clone(), provider.embed(text)?)?;
                    raw.insert(id, value);
                }
                columns.insert(key, ColumnMemory { index, raw });
            }
        }
        Ok(ValueMemory {
            db_id: entry.id.clone(),
            columns,
        })
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn keys(&self) -> impl Iterator<Item = &ColumnKey> {
        self.columns.keys()
    }

    pub fn contains(&self, key: &ColumnKey) -> bool {
        self.find(key).is_some()
    }

    /// Number of distinct values indexed for `key`.
    pub fn value_count(&self, key: &ColumnKey) -> Option<usize> {
        self.find(key).map(|(_, m)| m.raw.len())
    }

    pub fn index(&self, key: &ColumnKey) -> Option<&VectorIndex> {
        self.find(key).map(|(_, m)| &m.index)
    }

    pub fn raw_value(&self, key: &ColumnKey, record_id: &str) -> Option<&str> {
        self.find(key)
            .and_then(|(_, m)| m.raw.get(record_id))
            .map(String::as_str)
    }

    // Table and column names match case-insensitively, like SQLite.
    fn find(&self, key: &ColumnKey) -> Option<(&ColumnKey, &ColumnMemory)> {
        self.columns.get_key_value(key).or_else(|| {
            self.columns.iter().find(|(k, _)| {
                k.db_id == key.db_id
                    && k.table.eq_ignore_ascii_case(&key.table)
                    && k.column.eq_ignore_ascii_case(&key.column)
            })
        })
    }

    /// The `k` stored values closest to `query_value`, best first, as
    /// `(raw value, score)`.
    pub fn lookup_synonyms(
        &self,
        key: &ColumnKey,
        query_value: &str,
        k: usize,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<(String, f64)>, ValueMemoryError> {
        if k == 0 {
            return Err(ValueMemoryError::ZeroK);
        }
        let (_, memory) = self
            .find(key)
            .ok_or_else(|| ValueMemoryError::UnknownColumn(key.clone()))?;
        if memory.index.is_empty() {
            return Ok(Vec::new());
        }
        let text = if query_value.trim().is_empty() { "(blank)" } else { query_value };
        let query = provider.embed(text)?;
        Ok(memory
            .index
            .search(&query, k)?
            .into_iter()
            .map(|hit| (memory.raw[&hit.id].clone(), hit.score))
            .collect())
    }

    /// Writes `<dir>/<table>.<column>.vidx` per column plus `values.json`.
    /// Files whose bytes would not change are left alone. Returns the number
    /// of files written.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<usize, ValueMemoryError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| ValueMemoryError::Index(IndexError::Io(e.to_string()));
        let mut written = 0;
        let mut manifest = ManifestFile {
            db_id: self.db_id.clone(),
            dim: 0,
            columns: Vec::new(),
        };
        for (key, memory) in &self.columns {
            manifest.dim = memory.index.dim();
            let path = dir.join(format!("{}.vidx", key.file_stem()));
            if write_if_changed(&path, &memory.index.to_bytes()).map_err(io)? {
                written += 1;
            }
            manifest.columns.push(ManifestColumn {
                table: key.table.clone(),
                column: key.column.clone(),
                values: memory.raw.clone(),
            });
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        if write_if_changed(&dir.join(VALUES_MANIFEST), &bytes).map_err(io)? {
            written += 1;
        }
        Ok(written)
    }

    /// Loads a memory written by [`ValueMemory::save`]. Every index must
    /// agree with the manifest's record ids, otherwise nothing is returned.
    pub fn load(dir: impl AsRef<Path>) -> Result<ValueMemory, ValueMemoryError> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(VALUES_MANIFEST);
        let bad = |reason: String| ValueMemoryError::Manifest {
            path: manifest_path.display().to_string(),
            reason,
        };
        let bytes = fs::read(&manifest_path).map_err(|e| bad(e.to_string()))?;
        let manifest: ManifestFile = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut columns = BTreeMap::new();
        for col in manifest.columns {
            let key = ColumnKey::new(&manifest.db_id, col.table, col.column);
            let index = load_index(dir.join(format!("{}.vidx", key.file_stem())))?;
            if index.dim() != manifest.dim {
                return Err(bad(format!(
                    "{key}: index dimension {} differs from {}",
                    index.dim(),
                    manifest.dim
                )));
            }
            let ids: Vec<&str> = index.records().map(|(id, _)| id).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if sorted.len() != col.values.len() || sorted.iter().zip(col.values.keys()).any(|(a, b)| *a != b) {
                return Err(bad(format!("{key}: record ids do not match the index")));
            }
            if columns.contains_key(&key) {
                return Err(bad(format!("{key}: listed twice")));
            }
            columns.insert(key, ColumnMemory { index, raw: col.values });
        }
        Ok(ValueMemory {
            db_id: manifest.db_id,
            columns,
        })
    }
}

/// Value memories of a whole catalog, keyed by database id.
pub type ValueMemories = HashMap<String, ValueMemory>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::embedding::HashingEmbedder;
    use crate::fixtures;
    use rusqlite::Connection;

    fn setup() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let catalog = fixtures::standard_catalog(dir.path()).unwrap();
        (dir, catalog)
    }

    fn sql_distinct(entry: &DatabaseEntry, table: &str, column: &str) -> usize {
        let conn = Connection::open(&entry.location).unwrap();
        conn.query_row(
            &format!("SELECT count(DISTINCT {column}) FROM {table}"),
            [],
            |r| r.get::<_, i64>(0),
        )
        .unwrap() as usize
    }

    #[test]
    fn one_record_per_distinct_value() {
        let (_d, catalog) = setup();
        let entry = catalog.get("restaurants").unwrap();
        let memory = ValueMemory::build(entry, &HashingEmbedder::new(), &Default::default()).unwrap();
        for (table, column) in [("restaurant", "location"), ("restaurant", "food_type"), ("geographic", "region")] {
            let key = ColumnKey::new("restaurants", table, column);
            assert_eq!(memory.value_count(&key), Some(sql_distinct(entry, table, column)), "{key}");
        }
        assert_eq!(memory.value_count(&ColumnKey::new("restaurants", "restaurant", "location")), Some(3));
    }

    #[test]
    fn non_text_columns_are_skipped_and_nulls_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixtures::write_database(
            dir.path(),
            "t",
            "CREATE TABLE t(id INTEGER, note TEXT, score REAL, tag TEXT);
             INSERT INTO t VALUES (1, NULL, 1.5, 'LA'), (2, NULL, 2.5, 'la'), (3, NULL, 1.5, 'LA');",
        )
        .unwrap();
        let mut catalog = Catalog::new();
        catalog.register(&path, "t").unwrap();
        let memory = ValueMemory::build(catalog.get("t").unwrap(), &HashingEmbedder::new(), &Default::default()).unwrap();
        let keys: Vec<_> = memory.keys().map(|k| k.column.clone()).collect();
        assert_eq!(keys, ["note", "tag"]);
        assert_eq!(memory.value_count(&ColumnKey::new("t", "t", "note")), Some(0));
        // Byte-exact distinctness keeps 'LA' and 'la' apart.
        assert_eq!(memory.value_count(&ColumnKey::new("t", "t", "tag")), Some(2));
        assert!(memory.index(&ColumnKey::new("t", "t", "id")).is_none());
    }

    #[test]
    fn lookups_return_stored_values() {
        let (_d, catalog) = setup();
        let entry = catalog.get("restaurants").unwrap();
        let e = HashingEmbedder::new();
        let memory = ValueMemory::build(entry, &e, &Default::default()).unwrap();
        let key = ColumnKey::new("restaurants", "restaurant", "location");

        let hits = memory.lookup_synonyms(&key, "la", 10, &e).unwrap();
        assert_eq!(hits[0].0, "LA");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(hits.len(), 3);

        let hits = memory.lookup_synonyms(&key, "New York", 1, &e).unwrap();
        assert_eq!(hits, vec![("New York".to_string(), hits[0].1)]);

        let conn = Connection::open(&entry.location).unwrap();
        for (value, _) in memory.lookup_synonyms(&key, "Los Angeles", 10, &e).unwrap() {
            let n: i64 = conn
                .query_row("SELECT count(*) FROM restaurant WHERE location = ?1", [&value], |r| r.get(0))
                .unwrap();
            assert!(n > 0, "{value}");
        }
    }

    #[test]
    fn privacy_bound_and_errors() {
        let (_d, catalog) = setup();
        let e = HashingEmbedder::new();
        let memory = ValueMemory::build(catalog.get("restaurants").unwrap(), &e, &Default::default()).unwrap();
        let names = ColumnKey::new("restaurants", "restaurant", "name");
        assert_eq!(memory.lookup_synonyms(&names, "thai", 2, &e).unwrap().len(), 2);
        assert!(matches!(
            memory.lookup_synonyms(&ColumnKey::new("restaurants", "restaurant", "rating"), "x", 2, &e),
            Err(ValueMemoryError::UnknownColumn(_))
        ));
        assert!(matches!(memory.lookup_synonyms(&names, "x", 0, &e), Err(ValueMemoryError::ZeroK)));
        // Keys match case-insensitively on table and column.
        assert!(memory.contains(&ColumnKey::new("restaurants", "RESTAURANT", "Name")));
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixtures::write_database(
            dir.path(),
            "c",
            "CREATE TABLE c(v TEXT); INSERT INTO c VALUES ('a'), ('b'), ('b'), ('c'), ('c'), ('c');",
        )
        .unwrap();
        let mut catalog = Catalog::new();
        catalog.register(&path, "c").unwrap();
        let config = ValueMemoryConfig { max_values_per_column: Some(2) };
        let e = HashingEmbedder::new();
        let memory = ValueMemory::build(catalog.get("c").unwrap(), &e, &config).unwrap();
        let key = ColumnKey::new("c", "c", "v");
        let mut kept: Vec<String> = memory.lookup_synonyms(&key, "x", 10, &e).unwrap().into_iter().map(|h| h.0).collect();
        kept.sort();
        assert_eq!(kept, ["b", "c"]);
    }

    #[test]
    fn rebuild_is_identical_and_persistence_round_trips() {
        let (_d, catalog) = setup();
        let entry = catalog.get("restaurants").unwrap();
        let e = HashingEmbedder::new();
        let a = ValueMemory::build(entry, &e, &Default::default()).unwrap();
        let b = ValueMemory::build(entry, &e, &Default::default()).unwrap();
        assert_eq!(a, b);

        let store = tempfile::tempdir().unwrap();
        assert!(a.save(store.path()).unwrap() > 0);
        assert_eq!(a.save(store.path()).unwrap(), 0);
        let loaded = ValueMemory::load(store.path()).unwrap();
        assert_eq!(loaded, a);
        assert!(store.path().join("restaurant.location.vidx").is_file());
    }

    #[test]
    fn corrupted_store_is_a_typed_error() {
        let (_d, catalog) = setup();
        let e = HashingEmbedder::new();
        let memory = ValueMemory::build(catalog.get("singer").unwrap(), &e, &Default::default()).unwrap();
        let store = tempfile::tempdir().unwrap();
        memory.save(store.path()).unwrap();

        let index_path = store.path().join("singer.name.vidx");
        let bytes = fs::read(&index_path).unwrap();
        fs::write(&index_path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(ValueMemory::load(store.path()), Err(ValueMemoryError::Index(_))));

        fs::write(&index_path, &bytes).unwrap();
        fs::write(store.path().join(VALUES_MANIFEST), b"{not json").unwrap();
        assert!(matches!(ValueMemory::load(store.path()), Err(ValueMemoryError::Manifest { .. })));
    }
}
