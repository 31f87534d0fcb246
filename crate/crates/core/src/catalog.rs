//! Registry of candidate databases.
//!
//! A [`Catalog`] holds one [`DatabaseEntry`] per registered SQLite file. Each
//! entry is introspected once at registration time and can be rendered to a
//! canonical [`SchemaText`], which is what the selection memory embeds and
//! what the planning prompt shows the LLM.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unreadable database {path}: {reason}")]
    UnreadableDatabase { path: PathBuf, reason: String },
    #[error("database id `{0}` is already registered")]
    DuplicateId(String),
    #[error("database id must be non-empty")]
    EmptyId,
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("catalog manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// Declared column type, normalized from SQLite's free-form type strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Integer,
    Real,
    Blob,
    Unknown,
}

impl ColumnType {
    /// Normalizes a declared type using SQLite's affinity rules. Declarations
    /// that fall into NUMERIC affinity (or are empty) become `Unknown`.
    pub fn from_declared(declared: &str) -> Self {
        let upper = declared.to_ascii_uppercase();
        if upper.contains("INT") {
            ColumnType::Integer
        } else if upper.contains("CHAR") || upper.contains("CLOB") || upper.contains("TEXT") {
            ColumnType::Text
        } else if upper.contains("BLOB") {
            ColumnType::Blob
        } else if upper.contains("REAL") || upper.contains("FLOA") || upper.contains("DOUB") {
            ColumnType::Real
        } else {
            ColumnType::Unknown
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Blob => "blob",
            ColumnType::Unknown => "unknown",
        }
    }

    pub fn is_text(self) -> bool {
        self == ColumnType::Text
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub declared_type: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub local_column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableSchema {
    /// Case-insensitive column lookup, returning the column as declared.
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub id: String,
    pub name: String,
    pub location: PathBuf,
    pub tables: Vec<TableSchema>,
}

impl DatabaseEntry {
    /// Case-insensitive table lookup.
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Introspects a SQLite file. System tables (`sqlite_%`) are skipped;
    /// tables and columns keep the order in which the database lists them.
    pub fn introspect(
        location: impl AsRef<Path>,
        id: &str,
        name: &str,
    ) -> Result<DatabaseEntry, CatalogError> {
        let location = location.as_ref();
        if id.is_empty() {
            return Err(CatalogError::EmptyId);
        }
        let unreadable = |reason: String| CatalogError::UnreadableDatabase {
            path: location.to_path_buf(),
            reason,
        };
        if !location.is_file() {
            return Err(unreadable("no such file".into()));
        }
        let conn = open_read_only(location).map_err(|e| unreadable(e.to_string()))?;
        let tables = introspect_tables(&conn).map_err(|e| unreadable(e.to_string()))?;
        Ok(DatabaseEntry {
            id: id.to_string(),
            name: name.to_string(),
            location: location.to_path_buf(),
            tables: sanitize_foreign_keys(id, tables),
        })
    }
}

pub(crate) fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY
            | OpenFlags::SQLITE_OPEN_NO_MUTEX
            | OpenFlags::SQLITE_OPEN_URI,
    )
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn introspect_tables(conn: &Connection) -> rusqlite::Result<Vec<TableSchema>> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master \
         WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' \
         ORDER BY rowid",
    )?;
    let names = stmt
        .query_map([], |row| row.get::<_, String>(0))?
        .collect::<rusqlite::Result<Vec<_>>>()?;

    let mut tables = Vec::with_capacity(names.len());
    for name in names {
        let mut pk: Vec<(i64, String)> = Vec::new();
        let mut columns = Vec::new();
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(&name)))?;
        let mut rows = info.query([])?;
        while let Some(row) = rows.next()? {
            let col: String = row.get(1)?;
            let declared: Option<String> = row.get(2)?;
            let pk_pos: i64 = row.get(5)?;
            if pk_pos > 0 {
                pk.push((pk_pos, col.clone()));
            }
            columns.push(Column {
                name: col,
                declared_type: ColumnType::from_declared(declared.as_deref().unwrap_or("")),
            });
        }
        pk.sort();

        let mut foreign_keys = Vec::new();
        let mut fk_stmt =
            conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&name)))?;
        let mut rows = fk_stmt.query([])?;
        while let Some(row) = rows.next()? {
            let ref_table: String = row.get(2)?;
            let local_column: String = row.get(3)?;
            let ref_column: Option<String> = row.get(4)?;
            foreign_keys.push(ForeignKey {
                local_column,
                ref_table,
                // An omitted target column means the referenced primary key;
                // resolved once all tables are known.
                ref_column: ref_column.unwrap_or_default(),
            });
        }

        tables.push(TableSchema {
            name,
            columns,
            primary_key: pk.into_iter().map(|(_, c)| c).collect(),
            foreign_keys,
        });
    }
    Ok(tables)
}

/// Resolves implicit FK targets and drops foreign keys whose endpoints do not
/// exist, so every entry satisfies the referential invariant.
fn sanitize_foreign_keys(db_id: &str, mut tables: Vec<TableSchema>) -> Vec<TableSchema> {
    let snapshot = tables.clone();
    let find = |t: &str| snapshot.iter().find(|s| s.name.eq_ignore_ascii_case(t));
    for table in &mut tables {
        let local_cols: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
        let mut kept = Vec::with_capacity(table.foreign_keys.len());
        for mut fk in std::mem::take(&mut table.foreign_keys) {
            let Some(local) = local_cols
                .iter()
                .find(|c| c.eq_ignore_ascii_case(&fk.local_column))
            else {
                tracing::warn!(db = db_id, table = %table.name, column = %fk.local_column, "dropping foreign key with unknown local column");
                continue;
            };
            let Some(target) = find(&fk.ref_table) else {
                tracing::warn!(db = db_id, table = %table.name, target = %fk.ref_table, "dropping foreign key to unknown table");
                continue;
            };
            if fk.ref_column.is_empty() {
                match target.primary_key.as_slice() {
                    [single] => fk.ref_column = single.clone(),
                    _ => {
                        tracing::warn!(db = db_id, table = %table.name, target = %target.name, "dropping foreign key with unresolvable implicit target");
                        continue;
                    }
                }
            }
            let Some(target_col) = target.column(&fk.ref_column) else {
                tracing::warn!(db = db_id, table = %table.name, target = %target.name, column = %fk.ref_column, "dropping foreign key to unknown column");
                continue;
            };
            kept.push(ForeignKey {
                local_column: local.clone(),
                ref_table: target.name.clone(),
                ref_column: target_col.name.clone(),
            });
        }
        table.foreign_keys = kept;
    }
    tables
}

/// Canonical text form of a database schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaText {
    pub db_id: String,
    pub text: String,
}

impl SchemaText {
    /// Everything after the `Database <name>` header line.
    pub fn body(&self) -> &str {
        match self.text.split_once('\n') {
            Some((_, rest)) => rest,
            None => "",
        }
    }
}

/// Renders an entry as:
///
/// ```text
/// Database <name>
/// Table <t>(<c1>:<type>, <c2>:<type>)
/// Foreign keys: <t1.c1> = <t2.c2>; ...
/// ```
///
/// The foreign-key line is omitted when there are none.
pub fn serialize_schema(entry: &DatabaseEntry) -> SchemaText {
    let mut text = format!("Database {}", entry.name);
    for table in &entry.tables {
        let cols = table
            .columns
            .iter()
            .map(|c| format!("{}:{}", c.name, c.declared_type))
            .collect::<Vec<_>>()
            .join(", ");
        text.push_str(&format!("\nTable {}({})", table.name, cols));
    }
    let fks: Vec<String> = entry
        .tables
        .iter()
        .flat_map(|t| {
            t.foreign_keys.iter().map(move |fk| {
                format!("{}.{} = {}.{}", t.name, fk.local_column, fk.ref_table, fk.ref_column)
            })
        })
        .collect();
    if !fks.is_empty() {
        text.push_str("\nForeign keys: ");
        text.push_str(&fks.join("; "));
    }
    SchemaText {
        db_id: entry.id.clone(),
        text,
    }
}

/// One line of the persisted catalog manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub databases: Vec<ManifestEntry>,
}

/// The set of registered databases, in registration order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entries: Vec<DatabaseEntry>,
    /// Paths as the caller supplied them; persisted verbatim in the manifest.
    given_paths: Vec<PathBuf>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a database whose display name equals its id.
    pub fn register(
        &mut self,
        location: impl AsRef<Path>,
        id: &str,
    ) -> Result<&DatabaseEntry, CatalogError> {
        self.register_named(location, id, id)
    }

    pub fn register_named(
        &mut self,
        location: impl AsRef<Path>,
        id: &str,
        name: &str,
    ) -> Result<&DatabaseEntry, CatalogError> {
        let location = location.as_ref();
        self.register_resolved(location, location, id, name)
    }

    fn register_resolved(
        &mut self,
        given: &Path,
        resolved: &Path,
        id: &str,
        name: &str,
    ) -> Result<&DatabaseEntry, CatalogError> {
        if self.get(id).is_some() {
            return Err(CatalogError::DuplicateId(id.to_string()));
        }
        let entry = DatabaseEntry::introspect(resolved, id, name)?;
        self.entries.push(entry);
        self.given_paths.push(given.to_path_buf());
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn get(&self, id: &str) -> Option<&DatabaseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entry(&self, id: &str) -> Result<&DatabaseEntry, CatalogError> {
        self.get(id)
            .ok_or_else(|| CatalogError::UnknownDatabase(id.to_string()))
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            databases: self
                .entries
                .iter()
                .zip(&self.given_paths)
                .map(|(e, p)| ManifestEntry {
                    id: e.id.clone(),
                    name: e.name.clone(),
                    path: p.clone(),
                })
                .collect(),
        }
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn save_manifest(&self, path: impl AsRef<Path>) -> Result<(), CatalogError> {
        let path = path.as_ref();
        crate::persist::write_atomic(path, &self.manifest_bytes()).map_err(|e| {
            CatalogError::Manifest {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }
        })
    }

    /// Loads a manifest and re-introspects every listed database. Relative
    /// paths are resolved against the manifest's directory. Either every
    /// database loads or an error is returned.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
        let path = path.as_ref();
        let manifest_err = |reason: String| CatalogError::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let raw = fs::read(path).map_err(|e| manifest_err(e.to_string()))?;
        let manifest: Manifest =
            serde_json::from_slice(&raw).map_err(|e| manifest_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = HashSet::new();
        let mut catalog = Catalog::new();
        for db in manifest.databases {
            if !seen.insert(db.id.clone()) {
                return Err(manifest_err(format!("duplicate id `{}`", db.id)));
            }
            let resolved = if db.path.is_absolute() {
                db.path.clone()
            } else {
                base.join(&db.path)
            };
            catalog.register_resolved(&db.path, &resolved, &db.id, &db.name)?;
        }
        Ok(catalog)
    }
}
