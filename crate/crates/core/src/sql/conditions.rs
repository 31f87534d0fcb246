use std::fmt;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Expr, Ident, Query, Select, SelectItem, SetExpr, Spanned, Statement,
    TableFactor, TableWithJoins, Value,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::Location;
use thiserror::Error;

use crate::catalog::DatabaseEntry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConditionError {
    #[error("cannot parse SQL: {0}")]
    Parse(String),
    #[error("expected a single SELECT statement")]
    NotASelect,
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    NotEq,
    #[serde(rename = "<>")]
    Ne,
    #[serde(rename = "LIKE")]
    Like,
    #[serde(rename = "IN")]
    In,
}

impl fmt::Display for ConditionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionOp::Eq => "=",
            ConditionOp::NotEq => "!=",
            ConditionOp::Ne => "<>",
            ConditionOp::Like => "LIKE",
            ConditionOp::In => "IN",
        })
    }
}

/// A string-literal predicate on a stored column. `table` and `column` use
/// the schema's spelling, whatever case or alias the query used.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlCondition {
    pub table: String,
    pub column: String,
    pub operator: ConditionOp,
    pub literal: String,
}

#[derive(Debug, Clone)]
enum Source {
    Table(String),
    /// Subquery, CTE, or anything else whose columns are not stored columns.
    Opaque,
}

#[derive(Debug, Default, Clone)]
struct Scope {
    sources: Vec<(String, Source)>,
}

struct Extractor<'a> {
    entry: &'a DatabaseEntry,
    line_starts: Vec<usize>,
    sql: &'a str,
    out: Vec<SqlCondition>,
}

/// Finds every `column <op> 'string'` predicate (op in `=`, `!=`, `<>`,
/// `LIKE`, `IN`) in WHERE and HAVING clauses, including those of nested
/// queries. Column-to-column comparisons, negated forms, and non-string
/// literals are ignored. In SQLite a double-quoted token that does not name
/// a column is a string, and it is treated as one here.
pub fn extract_conditions(
    sql: &str,
    entry: &DatabaseEntry,
) -> Result<Vec<SqlCondition>, ConditionError> {
    let statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| ConditionError::Parse(e.to_string()))?;
    let [Statement::Query(query)] = statements.as_slice() else {
        return Err(ConditionError::NotASelect);
    };
    let mut line_starts = vec![0];
    line_starts.extend(sql.match_indices('\n').map(|(i, _)| i + 1));
    let mut ex = Extractor {
        entry,
        line_starts,
        sql,
        out: Vec::new(),
    };
    ex.query(query, &[])?;
    Ok(ex.out)
}

type Res = Result<(), ConditionError>;

fn ident_eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

impl<'a> Extractor<'a> {
    fn query(&mut self, q: &Query, outer: &[Scope]) -> Res {
        let mut ctes = Vec::new();
        if let Some(with) = &q.with {
            for cte in &with.cte_tables {
                self.query(&cte.query, outer)?;
                ctes.push(cte.alias.name.value.clone());
            }
        }
        self.set_expr(&q.body, outer, &ctes)
    }

    fn set_expr(&mut self, body: &SetExpr, outer: &[Scope], ctes: &[String]) -> Res {
        match body {
            SetExpr::Select(select) => self.select(select, outer, ctes),
            SetExpr::Query(q) => self.query(q, outer),
            SetExpr::SetOperation { left, right, .. } => {
                self.set_expr(left, outer, ctes)?;
                self.set_expr(right, outer, ctes)
            }
            _ => Ok(()),
        }
    }

    fn select(&mut self, s: &Select, outer: &[Scope], ctes: &[String]) -> Res {
        let mut scope = Scope::default();
        for twj in &s.from {
            self.add_from(twj, &mut scope, outer, ctes)?;
        }
        let mut scopes = outer.to_vec();
        scopes.push(scope);

        if let Some(selection) = &s.selection {
            self.expr(selection, &scopes, true)?;
        }
        if let Some(having) = &s.having {
            self.expr(having, &scopes, true)?;
        }
        for item in &s.projection {
            match item {
                SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => {
                    self.expr(e, &scopes, false)?
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn add_from(
        &mut self,
        twj: &TableWithJoins,
        scope: &mut Scope,
        outer: &[Scope],
        ctes: &[String],
    ) -> Res {
        self.add_factor(&twj.relation, scope, outer, ctes)?;
        for join in &twj.joins {
            self.add_factor(&join.relation, scope, outer, ctes)?;
        }
        Ok(())
    }

    fn add_factor(
        &mut self,
        factor: &TableFactor,
        scope: &mut Scope,
        outer: &[Scope],
        ctes: &[String],
    ) -> Res {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let Some(table_name) = name.0.last().and_then(|p| p.as_ident()) else {
                    return Ok(());
                };
                let key = alias
                    .as_ref()
                    .map_or_else(|| table_name.value.clone(), |a| a.name.value.clone());
                let source = if ctes.iter().any(|c| ident_eq(c, &table_name.value)) {
                    Source::Opaque
                } else {
                    match self.entry.table(&table_name.value) {
                        Some(t) => Source::Table(t.name.clone()),
                        None => Source::Opaque,
                    }
                };
                scope.sources.push((key, source));
            }
            TableFactor::Derived {
                subquery, alias, ..
            } => {
                self.query(subquery, outer)?;
                if let Some(alias) = alias {
                    scope.sources.push((alias.name.value.clone(), Source::Opaque));
                }
            }
            TableFactor::NestedJoin {
                table_with_joins, ..
            } => self.add_from(table_with_joins, scope, outer, ctes)?,
            _ => {}
        }
        Ok(())
    }

    /// Walks an expression. With `collect` set, predicates found here are
    /// recorded; nested queries are always descended into and collect their
    /// own WHERE/HAVING predicates.
    fn expr(&mut self, e: &Expr, scopes: &[Scope], collect: bool) -> Res {
        match e {
            Expr::BinaryOp { left, op, right } => {
                if collect {
                    let op = match op {
                        BinaryOperator::Eq => Some(ConditionOp::Eq),
                        BinaryOperator::NotEq => Some(self.not_eq_spelling(left, right)),
                        _ => None,
                    };
                    if let Some(op) = op {
                        self.comparison(left, op, right, scopes)?;
                    }
                }
                let nested = collect && matches!(op, BinaryOperator::And | BinaryOperator::Or);
                self.expr(left, scopes, nested)?;
                self.expr(right, scopes, nested)
            }
            Expr::Nested(inner) => self.expr(inner, scopes, collect),
            Expr::UnaryOp { expr, .. } => self.expr(expr, scopes, false),
            Expr::Like {
                negated,
                expr,
                pattern,
                ..
            } => {
                if collect && !negated {
                    self.comparison(expr, ConditionOp::Like, pattern, scopes)?;
                }
                self.expr(expr, scopes, false)?;
                self.expr(pattern, scopes, false)
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                if collect && !negated {
                    if let Some(parts) = column_parts(expr) {
                        for item in list {
                            if let Some(lit) = self.literal(item, scopes) {
                                if let Some((table, column)) = self.resolve(parts, scopes)? {
                                    self.push(table, column, ConditionOp::In, lit);
                                }
                            }
                        }
                    }
                }
                self.expr(expr, scopes, false)?;
                for item in list {
                    self.expr(item, scopes, false)?;
                }
                Ok(())
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.expr(expr, scopes, false)?;
                self.query(subquery, scopes)
            }
            Expr::Subquery(q) | Expr::Exists { subquery: q, .. } => self.query(q, scopes),
            Expr::Between {
                expr, low, high, ..
            } => {
                self.expr(expr, scopes, false)?;
                self.expr(low, scopes, false)?;
                self.expr(high, scopes, false)
            }
            Expr::IsNull(inner) | Expr::IsNotNull(inner) => self.expr(inner, scopes, false),
            _ => Ok(()),
        }
    }

    fn comparison(&mut self, left: &Expr, op: ConditionOp, right: &Expr, scopes: &[Scope]) -> Res {
        for (col, lit) in [(left, right), (right, left)] {
            let Some(parts) = column_parts(col) else {
                continue;
            };
            let Some(literal) = self.literal(lit, scopes) else {
                continue;
            };
            if let Some((table, column)) = self.resolve(parts, scopes)? {
                self.push(table, column, op, literal);
            }
            return Ok(());
        }
        Ok(())
    }

    fn push(&mut self, table: String, column: String, operator: ConditionOp, literal: String) {
        self.out.push(SqlCondition {
            table,
            column,
            operator,
            literal,
        });
    }

    /// A string literal, or a double-quoted identifier that names no column.
    fn literal(&self, e: &Expr, scopes: &[Scope]) -> Option<String> {
        match e {
            Expr::Value(v) => match &v.value {
                Value::SingleQuotedString(s)
                | Value::DoubleQuotedString(s)
                | Value::NationalStringLiteral(s) => Some(s.clone()),
                _ => None,
            },
            Expr::Identifier(id) if id.quote_style == Some('"') => {
                match self.resolve(std::slice::from_ref(id), scopes) {
                    Ok(Some(_)) | Err(ConditionError::AmbiguousColumn(_)) => None,
                    _ => Some(id.value.clone()),
                }
            }
            Expr::Nested(inner) => self.literal(inner, scopes),
            _ => None,
        }
    }

    /// Resolves a column reference to `(table, column)` in schema spelling.
    /// `Ok(None)` means it belongs to a subquery or CTE rather than a stored
    /// table.
    fn resolve(
        &self,
        parts: &[Ident],
        scopes: &[Scope],
    ) -> Result<Option<(String, String)>, ConditionError> {
        let display = parts
            .iter()
            .map(|p| p.value.as_str())
            .collect::<Vec<_>>()
            .join(".");
        let column = &parts[parts.len() - 1].value;
        if parts.len() >= 2 {
            let qualifier = &parts[parts.len() - 2].value;
            for scope in scopes.iter().rev() {
                if let Some((_, source)) = scope.sources.iter().find(|(k, _)| ident_eq(k, qualifier)) {
                    return match source {
                        Source::Opaque => Ok(None),
                        Source::Table(t) => self
                            .column_of(t, column)
                            .map(|c| Some((t.clone(), c)))
                            .ok_or(ConditionError::UnknownColumn(display)),
                    };
                }
            }
            return Err(ConditionError::UnknownColumn(display));
        }

        let mut saw_opaque = false;
        for scope in scopes.iter().rev() {
            let mut hits = Vec::new();
            for (_, source) in &scope.sources {
                match source {
                    Source::Table(t) => {
                        if let Some(c) = self.column_of(t, column) {
                            if !hits.iter().any(|(ht, _): &(String, String)| ht == t) {
                                hits.push((t.clone(), c));
                            }
                        }
                    }
                    Source::Opaque => saw_opaque = true,
                }
            }
            match hits.len() {
                0 => continue,
                1 => return Ok(hits.pop()),
                _ => return Err(ConditionError::AmbiguousColumn(display)),
            }
        }
        if saw_opaque {
            Ok(None)
        } else {
            Err(ConditionError::UnknownColumn(display))
        }
    }

    fn column_of(&self, table: &str, column: &str) -> Option<String> {
        self.entry
            .table(table)
            .and_then(|t| t.column(column))
            .map(|c| c.name.clone())
    }

    /// `!=` and `<>` parse to the same operator; recover the spelling from
    /// the source text between the operands.
    fn not_eq_spelling(&self, left: &Expr, right: &Expr) -> ConditionOp {
        let (start, end) = (left.span().end, right.span().start);
        match (self.offset(start), self.offset(end)) {
            (Some(a), Some(b)) if a <= b && self.sql[a..b].contains("<>") => ConditionOp::Ne,
            _ => ConditionOp::NotEq,
        }
    }

    fn offset(&self, loc: Location) -> Option<usize> {
        if loc.line == 0 || loc.column == 0 {
            return None;
        }
        let line_start = *self.line_starts.get(loc.line as usize - 1)?;
        let line = &self.sql[line_start..];
        let chars_in = loc.column as usize - 1;
        match line.char_indices().nth(chars_in) {
            Some((i, _)) => Some(line_start + i),
            None => Some(self.sql.len()),
        }
    }
}

fn column_parts(e: &Expr) -> Option<&[Ident]> {
    match e {
        Expr::Identifier(id) => Some(std::slice::from_ref(id)),
        Expr::CompoundIdentifier(parts) if !parts.is_empty() => Some(parts),
        Expr::Nested(inner) => column_parts(inner),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::fixtures;

    fn restaurants() -> (tempfile::TempDir, DatabaseEntry) {
        let dir = tempfile::tempdir().unwrap();
        let catalog: Catalog = fixtures::standard_catalog(dir.path()).unwrap();
        let entry = catalog.get("restaurants").unwrap().clone();
        (dir, entry)
    }

    fn cond(table: &str, column: &str, op: ConditionOp, lit: &str) -> SqlCondition {
        SqlCondition {
            table: table.into(),
            column: column.into(),
            operator: op,
            literal: lit.into(),
        }
    }

    #[test]
    fn simple_equality() {
        let (_d, e) = restaurants();
        assert_eq!(
            extract_conditions("SELECT name FROM restaurant WHERE location='Los Angeles'", &e).unwrap(),
            vec![cond("restaurant", "location", ConditionOp::Eq, "Los Angeles")]
        );
    }

    #[test]
    fn no_where_clause() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = fixtures::standard_catalog(dir.path()).unwrap();
        let hospital = catalog.get("hospital").unwrap();
        assert!(extract_conditions("SELECT count(*) FROM hospital", hospital).unwrap().is_empty());
    }

    #[test]
    fn join_with_aliases_skips_join_keys_and_numbers() {
        let (_d, e) = restaurants();
        let sql = "SELECT r.name FROM restaurant r JOIN geographic g ON r.city_name=g.city_name \
                   WHERE r.city_name='San Francisco City' AND rating>3";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![cond("restaurant", "city_name", ConditionOp::Eq, "San Francisco City")]
        );
    }

    #[test]
    fn uppercase_and_unqualified_ambiguity() {
        let (_d, e) = restaurants();
        let sql = "SELECT avg(RATING) FROM RESTAURANT JOIN GEOGRAPHIC ON RESTAURANT.CITY_NAME = GEOGRAPHIC.CITY_NAME \
                   WHERE NAME = 'Tifft Jane Caterer' AND RESTAURANT.CITY_NAME = 'San Francisco City'";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![
                cond("restaurant", "name", ConditionOp::Eq, "Tifft Jane Caterer"),
                cond("restaurant", "city_name", ConditionOp::Eq, "San Francisco City"),
            ]
        );
        let ambiguous = "SELECT 1 FROM restaurant JOIN geographic ON restaurant.city_name = geographic.city_name \
                         WHERE city_name = 'x'";
        assert_eq!(
            extract_conditions(ambiguous, &e),
            Err(ConditionError::AmbiguousColumn("city_name".into()))
        );
        assert_eq!(
            extract_conditions("SELECT 1 FROM restaurant WHERE nope = 'x'", &e),
            Err(ConditionError::UnknownColumn("nope".into()))
        );
    }

    #[test]
    fn operators() {
        let (_d, e) = restaurants();
        let sql = "SELECT name FROM restaurant WHERE food_type != 'thai' OR location <> 'SF' \
                   OR name LIKE '%Taco%' OR location IN ('LA', 'New York', 3) \
                   OR name NOT LIKE 'x' OR location NOT IN ('y')";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![
                cond("restaurant", "food_type", ConditionOp::NotEq, "thai"),
                cond("restaurant", "location", ConditionOp::Ne, "SF"),
                cond("restaurant", "name", ConditionOp::Like, "%Taco%"),
                cond("restaurant", "location", ConditionOp::In, "LA"),
                cond("restaurant", "location", ConditionOp::In, "New York"),
            ]
        );
    }

    #[test]
    fn reversed_operands_and_double_quotes() {
        let (_d, e) = restaurants();
        let sql = r#"SELECT name FROM restaurant WHERE 'LA' = location AND food_type = "thai" AND name = "name""#;
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![
                cond("restaurant", "location", ConditionOp::Eq, "LA"),
                cond("restaurant", "food_type", ConditionOp::Eq, "thai"),
            ]
        );
    }

    #[test]
    fn nested_queries_and_having() {
        let (_d, e) = restaurants();
        let sql = "SELECT food_type, count(*) FROM restaurant \
                   WHERE city_name IN (SELECT city_name FROM geographic WHERE region = 'bay area') \
                   GROUP BY food_type HAVING food_type = 'thai' \
                   UNION SELECT name, 1 FROM restaurant WHERE EXISTS (SELECT 1 FROM geographic g WHERE g.county = 'x')";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![
                cond("geographic", "region", ConditionOp::Eq, "bay area"),
                cond("restaurant", "food_type", ConditionOp::Eq, "thai"),
                cond("geographic", "county", ConditionOp::Eq, "x"),
            ]
        );
    }

    #[test]
    fn correlated_subquery_sees_outer_alias() {
        let (_d, e) = restaurants();
        let sql = "SELECT name FROM restaurant r WHERE EXISTS \
                   (SELECT 1 FROM geographic g WHERE g.city_name = r.city_name AND r.location = 'LA')";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![cond("restaurant", "location", ConditionOp::Eq, "LA")]
        );
    }

    #[test]
    fn derived_tables_and_ctes() {
        let (_d, e) = restaurants();
        let sql = "WITH la AS (SELECT * FROM restaurant WHERE location = 'LA') \
                   SELECT t.name FROM (SELECT name FROM restaurant WHERE food_type = 'thai') t, la \
                   WHERE t.name = 'Siam Garden' AND la.name = 'Taco Loco'";
        assert_eq!(
            extract_conditions(sql, &e).unwrap(),
            vec![
                cond("restaurant", "location", ConditionOp::Eq, "LA"),
                cond("restaurant", "food_type", ConditionOp::Eq, "thai"),
            ]
        );
    }

    #[test]
    fn parse_failures() {
        let (_d, e) = restaurants();
        assert!(matches!(extract_conditions("SELEC name FROM", &e), Err(ConditionError::Parse(_))));
        assert_eq!(
            extract_conditions("DELETE FROM restaurant", &e),
            Err(ConditionError::NotASelect)
        );
        assert_eq!(
            extract_conditions("SELECT 1; SELECT 2", &e),
            Err(ConditionError::NotASelect)
        );
    }

    #[test]
    fn multiline_not_equal_spelling() {
        let (_d, e) = restaurants();
        let sql = "SELECT name\nFROM restaurant\nWHERE location\n  <> 'SF' AND name != 'é'";
        let got = extract_conditions(sql, &e).unwrap();
        assert_eq!(got[0].operator, ConditionOp::Ne);
        assert_eq!(got[1].operator, ConditionOp::NotEq);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn predicate() -> impl Strategy<Value = String> {
            (
                prop::sample::select(vec!["name", "food_type", "location", "city_name"]),
                prop::sample::select(vec!["=", "!=", "<>", "LIKE"]),
                "[a-zA-Z ]{0,8}",
            )
                .prop_map(|(c, op, lit)| format!("{c} {op} '{lit}'"))
        }

        proptest! {
            #[test]
            fn adding_a_predicate_only_adds_conditions(
                preds in prop::collection::vec(predicate(), 0..4),
                extra in predicate(),
            ) {
                let (_d, e) = restaurants();
                let base = if preds.is_empty() {
                    "SELECT name FROM restaurant".to_string()
                } else {
                    format!("SELECT name FROM restaurant WHERE {}", preds.join(" AND "))
                };
                let more = if preds.is_empty() {
                    format!("{base} WHERE {extra}")
                } else {
                    format!("{base} AND {extra}")
                };
                let a = extract_conditions(&base, &e).unwrap();
                let b = extract_conditions(&more, &e).unwrap();
                for c in &a {
                    prop_assert!(b.contains(c));
                }
                prop_assert_eq!(b.len(), a.len() + 1);
            }
        }
    }
}
