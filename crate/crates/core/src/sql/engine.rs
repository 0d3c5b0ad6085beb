//! In-process relational engine with trigger-style change capture.
//!
//! Every row changed by a successful transaction produces one captured change
//! that is appended to the current block's digest. Transactions are
//! all-or-nothing: a failing statement rolls back every row change and every
//! captured change of its transaction.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::ast::*;
use super::parser::{parse_transaction, ParseError};
use super::value::{Collation, ColumnType, RoundingMode, Value};
use crate::digest::{encode_tuple, hash_row, BlockDigest, CapturedChange, ChangeType};

pub type Row = Vec<Value>;
pub type Key = Vec<Value>;

/// Behavioral deviations between engine instances. Fixed for an engine's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct QuirkConfig {
    pub decimal_rounding: RoundingMode,
    pub text_collation: Collation,
    /// Whether an UPDATE leaving a row byte-identical still emits a digest tuple.
    pub update_noop_emits_digest: bool,
}

impl Default for QuirkConfig {
    fn default() -> Self {
        QuirkConfig {
            decimal_rounding: RoundingMode::HalfEven,
            text_collation: Collation::Binary,
            update_noop_emits_digest: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("bind error: {0}")]
    Bind(String),
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("schema mismatch for table `{0}`")]
    SchemaMismatch(String),
}

/// The engine could not run at all; unlike a failing transaction this aborts the block.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("engine failure: {0}")]
pub struct EngineFailure(pub String);

/// Anything that can run a transaction for the staged executor.
pub trait TransactionExecutor: Sync {
    fn execute(&self, statements: &[Statement]) -> Result<bool, EngineFailure>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatementResult {
    Created,
    Affected(usize),
    Rows(Vec<Row>),
}

static VERSION_CLOCK: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    VERSION_CLOCK.fetch_add(1, AtomicOrdering::Relaxed)
}

#[derive(Debug, Clone)]
struct Table {
    schema: Arc<TableSchema>,
    pk: Arc<Vec<usize>>,
    rows: Arc<BTreeMap<Key, Row>>,
    /// Changes whenever the contents change; shared with snapshots taken since.
    version: u64,
}

impl Table {
    fn new(schema: TableSchema) -> Self {
        let pk = schema.pk_indices();
        Table { schema: Arc::new(schema), pk: Arc::new(pk), rows: Arc::new(BTreeMap::new()), version: next_version() }
    }

    fn key_of(&self, row: &Row) -> Key {
        self.pk.iter().map(|&i| row[i].clone()).collect()
    }

    fn rows_mut(&mut self) -> &mut BTreeMap<Key, Row> {
        self.version = next_version();
        Arc::make_mut(&mut self.rows)
    }
}

/// Immutable copy of one table. Cloning is cheap; the engine copies on write.
#[derive(Debug, Clone)]
pub struct TableSnapshot {
    schema: Arc<TableSchema>,
    rows: Arc<BTreeMap<Key, Row>>,
    version: u64,
}

impl TableSnapshot {
    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Content version of the table when the snapshot was taken.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// True when both snapshots share the same row storage (no copy was made).
    pub fn shares_storage_with(&self, other: &TableSnapshot) -> bool {
        Arc::ptr_eq(&self.rows, &other.rows)
    }

    /// Builds a snapshot from explicit rows, e.g. when loading a dump.
    pub fn from_rows(schema: TableSchema, rows: Vec<Row>) -> Result<Self, EngineError> {
        let mut table = Table::new(schema);
        let mut map = BTreeMap::new();
        for row in rows {
            if row.len() != table.schema.columns.len() {
                return Err(EngineError::Bind(format!("row arity mismatch for `{}`", table.schema.name)));
            }
            let key = table.key_of(&row);
            if map.insert(key, row).is_some() {
                return Err(EngineError::ConstraintViolation(format!(
                    "duplicate primary key in `{}`",
                    table.schema.name
                )));
            }
        }
        table.rows = Arc::new(map);
        Ok(TableSnapshot { schema: table.schema, rows: table.rows, version: table.version })
    }

    /// Returns a copy with the row at `key` replaced (or inserted); used for fault injection.
    pub fn with_row(&self, row: Row) -> TableSnapshot {
        let pk = self.schema.pk_indices();
        let key: Key = pk.iter().map(|&i| row[i].clone()).collect();
        let mut rows = (*self.rows).clone();
        rows.insert(key, row);
        TableSnapshot { schema: self.schema.clone(), rows: Arc::new(rows), version: next_version() }
    }
}

impl PartialEq for TableSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.rows.len() == other.rows.len()
            && self.rows.values().zip(other.rows.values()).all(|(a, b)| encode_tuple(a) == encode_tuple(b))
    }
}

/// Snapshot of every table, keyed by table name.
pub type DatabaseSnapshot = BTreeMap<String, TableSnapshot>;

enum Undo {
    Row { table: String, key: Key, before: Option<Row> },
    Created(String),
}

#[derive(Default)]
struct TxnContext {
    undo: Vec<Undo>,
    changes: Vec<CapturedChange>,
}

pub struct Engine {
    quirks: QuirkConfig,
    tables: RwLock<BTreeMap<String, Arc<Mutex<Table>>>>,
    digest: Mutex<BlockDigest>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("quirks", &self.quirks).field("tables", &self.table_names()).finish()
    }
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(QuirkConfig::default())
    }
}

impl Engine {
    pub fn new(quirks: QuirkConfig) -> Self {
        Engine { quirks, tables: RwLock::new(BTreeMap::new()), digest: Mutex::new(BlockDigest::new()) }
    }

    pub fn quirks(&self) -> QuirkConfig {
        self.quirks
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().keys().cloned().collect()
    }

    pub fn schema(&self, table: &str) -> Option<Arc<TableSchema>> {
        self.tables.read().get(table).map(|t| t.lock().schema.clone())
    }

    /// Schemas of all current tables.
    pub fn catalog(&self) -> BTreeMap<String, Arc<TableSchema>> {
        self.tables.read().iter().map(|(k, t)| (k.clone(), t.lock().schema.clone())).collect()
    }

    pub fn row_count(&self, table: &str) -> Option<usize> {
        self.tables.read().get(table).map(|t| t.lock().rows.len())
    }

    /// Looks up a row by its primary key values.
    pub fn get_row(&self, table: &str, key: &[Value]) -> Option<Row> {
        let handle = self.tables.read().get(table).cloned()?;
        let guard = handle.lock();
        guard.rows.get(key).cloned()
    }

    /// Starts a new block: the digest tables are emptied.
    pub fn begin_block(&self) {
        *self.digest.lock() = BlockDigest::new();
    }

    /// Removes and returns the digest accumulated since `begin_block`.
    pub fn take_digest(&self) -> BlockDigest {
        std::mem::take(&mut *self.digest.lock())
    }

    /// Hash of the digest accumulated so far, without consuming it.
    pub fn digest_hash(&self) -> crate::hash::EffectHash {
        self.digest.lock().hash_digest()
    }

    pub fn digest_tuple_count(&self) -> usize {
        self.digest.lock().tuple_count()
    }

    /// Parses and runs `sql` as one transaction; returns the success flag.
    pub fn execute_sql(&self, sql: &str) -> bool {
        match parse_transaction(sql) {
            Ok(stmts) => self.execute_transaction(&stmts),
            Err(_) => false,
        }
    }

    /// All-or-nothing execution; `false` means nothing of the transaction remains.
    pub fn execute_transaction(&self, statements: &[Statement]) -> bool {
        self.run_transaction(statements).is_ok()
    }

    /// Like [`Engine::execute_transaction`] but reports the results or the first error.
    pub fn run_transaction(&self, statements: &[Statement]) -> Result<Vec<StatementResult>, EngineError> {
        let mut ctx = TxnContext::default();
        let mut results = Vec::with_capacity(statements.len());
        for stmt in statements {
            match self.apply(stmt, &mut ctx) {
                Ok(r) => results.push(r),
                Err(e) => {
                    self.rollback(ctx);
                    return Err(e);
                }
            }
        }
        if !ctx.changes.is_empty() {
            let mut digest = self.digest.lock();
            for change in ctx.changes {
                digest.record(change);
            }
        }
        Ok(results)
    }

    /// Single-statement transaction.
    pub fn execute_statement(&self, stmt: &Statement) -> Result<StatementResult, EngineError> {
        self.run_transaction(std::slice::from_ref(stmt)).map(|mut r| r.pop().unwrap())
    }

    /// Applies a statement bypassing change capture, the way an administrator
    /// editing the database directly would. Used for fault injection.
    pub fn execute_external(&self, stmt: &Statement) -> Result<StatementResult, EngineError> {
        let mut ctx = TxnContext::default();
        match self.apply(stmt, &mut ctx) {
            Ok(r) => Ok(r),
            Err(e) => {
                self.rollback(ctx);
                Err(e)
            }
        }
    }

    fn table_handle(&self, name: &str) -> Result<Arc<Mutex<Table>>, EngineError> {
        self.tables.read().get(name).cloned().ok_or_else(|| EngineError::Bind(format!("unknown table `{name}`")))
    }

    fn rollback(&self, ctx: TxnContext) {
        for undo in ctx.undo.into_iter().rev() {
            match undo {
                Undo::Row { table, key, before } => {
                    let handle = self.tables.read().get(&table).cloned().expect("table exists during rollback");
                    let mut guard = handle.lock();
                    let rows = guard.rows_mut();
                    match before {
                        Some(row) => {
                            rows.insert(key, row);
                        }
                        None => {
                            rows.remove(&key);
                        }
                    }
                }
                Undo::Created(name) => {
                    self.tables.write().remove(&name);
                }
            }
        }
    }

    fn apply(&self, stmt: &Statement, ctx: &mut TxnContext) -> Result<StatementResult, EngineError> {
        match stmt {
            Statement::CreateTable(schema) => {
                schema.validate().map_err(EngineError::Bind)?;
                let mut tables = self.tables.write();
                if tables.contains_key(&schema.name) {
                    return Err(EngineError::Bind(format!("table `{}` already exists", schema.name)));
                }
                for check in &schema.checks {
                    let col = schema.column(&check.column).unwrap();
                    bind_literal(&col.ty, &check.value, &check.column)?;
                }
                tables.insert(schema.name.clone(), Arc::new(Mutex::new(Table::new(schema.clone()))));
                ctx.undo.push(Undo::Created(schema.name.clone()));
                Ok(StatementResult::Created)
            }
            Statement::Insert(insert) => {
                let handle = self.table_handle(&insert.table)?;
                let mut table = handle.lock();
                self.insert(&mut table, insert, ctx)
            }
            Statement::Update(update) => {
                let handle = self.table_handle(&update.table)?;
                let mut table = handle.lock();
                self.update(&mut table, update, ctx)
            }
            Statement::Delete(delete) => {
                let handle = self.table_handle(&delete.table)?;
                let mut table = handle.lock();
                self.delete(&mut table, delete, ctx)
            }
            Statement::Select(select) => {
                let handle = self.table_handle(&select.table)?;
                let table = handle.lock();
                self.select(&table, select)
            }
        }
    }

    fn insert(&self, table: &mut Table, insert: &Insert, ctx: &mut TxnContext) -> Result<StatementResult, EngineError> {
        let schema = table.schema.clone();
        let positions: Vec<usize> = match &insert.columns {
            None => (0..schema.columns.len()).collect(),
            Some(cols) => {
                let mut seen = HashSet::new();
                let mut out = Vec::with_capacity(cols.len());
                for c in cols {
                    if !seen.insert(c) {
                        return Err(EngineError::Bind(format!("column `{c}` listed twice")));
                    }
                    out.push(
                        schema
                            .column_index(c)
                            .ok_or_else(|| EngineError::Bind(format!("unknown column `{c}` in `{}`", schema.name)))?,
                    );
                }
                if out.len() != schema.columns.len() {
                    return Err(EngineError::Bind(format!("INSERT into `{}` must supply every column", schema.name)));
                }
                out
            }
        };
        let mut new_rows = Vec::with_capacity(insert.rows.len());
        let mut new_keys = HashSet::new();
        for literals in &insert.rows {
            if literals.len() != positions.len() {
                return Err(EngineError::Bind(format!("wrong number of values for `{}`", schema.name)));
            }
            let mut row: Row = vec![Value::Int(0); schema.columns.len()];
            for (lit, &pos) in literals.iter().zip(&positions) {
                let col = &schema.columns[pos];
                row[pos] = self.coerce(lit.to_value(), &col.ty, &col.name)?;
            }
            self.check_row(&schema, &row)?;
            let key = table.key_of(&row);
            if table.rows.contains_key(&key) || !new_keys.insert(key.clone()) {
                return Err(EngineError::ConstraintViolation(format!("duplicate primary key in `{}`", schema.name)));
            }
            new_rows.push((key, row));
        }
        let count = new_rows.len();
        let rows = table.rows_mut();
        for (key, row) in new_rows {
            ctx.changes.push(CapturedChange {
                table: schema.name.clone(),
                pk: encode_tuple(&key),
                hash: hash_row(&row),
                change_type: ChangeType::Insert,
            });
            ctx.undo.push(Undo::Row { table: schema.name.clone(), key: key.clone(), before: None });
            rows.insert(key, row);
        }
        Ok(StatementResult::Affected(count))
    }

    fn update(&self, table: &mut Table, update: &Update, ctx: &mut TxnContext) -> Result<StatementResult, EngineError> {
        let schema = table.schema.clone();
        let mut targets = Vec::with_capacity(update.assignments.len());
        for (col, expr) in &update.assignments {
            let idx = schema
                .column_index(col)
                .ok_or_else(|| EngineError::Bind(format!("unknown column `{col}` in `{}`", schema.name)))?;
            if targets.iter().any(|(i, _)| *i == idx) {
                return Err(EngineError::Bind(format!("column `{col}` assigned twice")));
            }
            let mut cols = Vec::new();
            expr.columns(&mut cols);
            for c in cols {
                if schema.column_index(&c).is_none() {
                    return Err(EngineError::Bind(format!("unknown column `{c}` in `{}`", schema.name)));
                }
            }
            targets.push((idx, expr));
        }
        let matched = self.matching(table, &update.predicate)?;
        if matched.is_empty() {
            return Ok(StatementResult::Affected(0));
        }
        let mut changes = Vec::with_capacity(matched.len());
        for (key, old) in &matched {
            let mut new = old.clone();
            for (idx, expr) in &targets {
                let value = self.eval(expr, &schema, old)?;
                let col = &schema.columns[*idx];
                new[*idx] = self.coerce(value, &col.ty, &col.name)?;
            }
            self.check_row(&schema, &new)?;
            let new_key = table.key_of(&new);
            changes.push((key.clone(), old.clone(), new_key, new));
        }
        let old_keys: HashSet<&Key> = changes.iter().map(|c| &c.0).collect();
        let mut new_keys = HashSet::new();
        for (_, _, new_key, _) in &changes {
            let clashes_existing = !old_keys.contains(new_key) && table.rows.contains_key(new_key);
            if clashes_existing || !new_keys.insert(new_key.clone()) {
                return Err(EngineError::ConstraintViolation(format!("duplicate primary key in `{}`", schema.name)));
            }
        }
        let count = changes.len();
        let emit_noop = self.quirks.update_noop_emits_digest;
        let rows = table.rows_mut();
        for (key, old, _, _) in &changes {
            rows.remove(key);
            ctx.undo.push(Undo::Row { table: schema.name.clone(), key: key.clone(), before: Some(old.clone()) });
        }
        for (_, old, new_key, new) in changes {
            let unchanged = encode_tuple(&old) == encode_tuple(&new);
            if emit_noop || !unchanged {
                ctx.changes.push(CapturedChange {
                    table: schema.name.clone(),
                    pk: encode_tuple(&new_key),
                    hash: hash_row(&new),
                    change_type: ChangeType::Update,
                });
            }
            ctx.undo.push(Undo::Row { table: schema.name.clone(), key: new_key.clone(), before: None });
            rows.insert(new_key, new);
        }
        Ok(StatementResult::Affected(count))
    }

    fn delete(&self, table: &mut Table, delete: &Delete, ctx: &mut TxnContext) -> Result<StatementResult, EngineError> {
        let matched = self.matching(table, &delete.predicate)?;
        let name = table.schema.name.clone();
        if matched.is_empty() {
            return Ok(StatementResult::Affected(0));
        }
        let rows = table.rows_mut();
        for (key, row) in &matched {
            // Hashed before removal.
            ctx.changes.push(CapturedChange {
                table: name.clone(),
                pk: encode_tuple(key),
                hash: hash_row(row),
                change_type: ChangeType::Delete,
            });
            rows.remove(key);
            ctx.undo.push(Undo::Row { table: name.clone(), key: key.clone(), before: Some(row.clone()) });
        }
        Ok(StatementResult::Affected(matched.len()))
    }

    fn select(&self, table: &Table, select: &Select) -> Result<StatementResult, EngineError> {
        let schema = &table.schema;
        let projection: Vec<usize> = match &select.columns {
            None => (0..schema.columns.len()).collect(),
            Some(cols) => cols
                .iter()
                .map(|c| {
                    schema
                        .column_index(c)
                        .ok_or_else(|| EngineError::Bind(format!("unknown column `{c}` in `{}`", schema.name)))
                })
                .collect::<Result<_, _>>()?,
        };
        let matched = self.matching(table, &select.predicate)?;
        Ok(StatementResult::Rows(
            matched.into_iter().map(|(_, row)| projection.iter().map(|&i| row[i].clone()).collect()).collect(),
        ))
    }

    /// Rows satisfying the predicate, in key order.
    fn matching(&self, table: &Table, predicate: &Predicate) -> Result<Vec<(Key, Row)>, EngineError> {
        let schema = &table.schema;
        let mut bound = Vec::with_capacity(predicate.len());
        for cmp in predicate {
            let idx = schema
                .column_index(cmp.column())
                .ok_or_else(|| EngineError::Bind(format!("unknown column `{}` in `{}`", cmp.column(), schema.name)))?;
            let ty = &schema.columns[idx].ty;
            match cmp {
                Comparison::Cmp { value, column, .. } => bind_literal(ty, value, column)?,
                Comparison::Between { lo, hi, column } => {
                    bind_literal(ty, lo, column)?;
                    bind_literal(ty, hi, column)?;
                }
            }
            bound.push((idx, cmp));
        }
        let collation = self.quirks.text_collation;
        let matches = |row: &Row| bound.iter().all(|(idx, cmp)| compare(&row[*idx], cmp, collation));

        // Point lookup when every key column is pinned by equality.
        let point: Option<Key> = table
            .pk
            .iter()
            .map(|&k| {
                bound.iter().find_map(|(idx, cmp)| match cmp {
                    Comparison::Cmp { op: CmpOp::Eq, value, .. } if *idx == k => Some(value.to_value()),
                    _ => None,
                })
            })
            .collect();
        if let Some(key) = point {
            return Ok(table
                .rows
                .get_key_value(&key)
                .filter(|(_, row)| matches(row))
                .map(|(k, r)| vec![(k.clone(), r.clone())])
                .unwrap_or_default());
        }
        Ok(table.rows.iter().filter(|(_, row)| matches(row)).map(|(k, r)| (k.clone(), r.clone())).collect())
    }

    fn eval(&self, expr: &Expr, schema: &TableSchema, row: &Row) -> Result<Value, EngineError> {
        match expr {
            Expr::Literal(l) => Ok(l.to_value()),
            Expr::Column(c) => Ok(row[schema.column_index(c).expect("bound column")].clone()),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval(lhs, schema, row)?;
                let b = self.eval(rhs, schema, row)?;
                let overflow = || EngineError::ConstraintViolation("numeric overflow".into());
                match (&a, &b) {
                    (Value::Int(x), Value::Int(y)) => {
                        let r = match op {
                            ArithOp::Add => x.checked_add(*y),
                            ArithOp::Sub => x.checked_sub(*y),
                        };
                        r.map(Value::Int).ok_or_else(overflow)
                    }
                    _ => {
                        let (Some(x), Some(y)) = (a.as_decimal(), b.as_decimal()) else {
                            return Err(EngineError::Bind("arithmetic on TEXT".into()));
                        };
                        let r = match op {
                            ArithOp::Add => x.checked_add(&y),
                            ArithOp::Sub => x.checked_sub(&y),
                        };
                        r.map(Value::Decimal).ok_or_else(overflow)
                    }
                }
            }
        }
    }

    /// Converts a value to the column's storage form. DECIMAL columns round to
    /// their declared scale with the configured rounding mode.
    fn coerce(&self, value: Value, ty: &ColumnType, column: &str) -> Result<Value, EngineError> {
        match (ty, value) {
            (ColumnType::Int, Value::Int(v)) => Ok(Value::Int(v)),
            (ColumnType::Int, Value::Decimal(d)) if d.fits_scale(0) => {
                let units = d.rescale(0, RoundingMode::Truncate).map_err(|_| overflow(column))?.units();
                i64::try_from(units).map(Value::Int).map_err(|_| overflow(column))
            }
            (ColumnType::Text, Value::Text(s)) => Ok(Value::Text(s)),
            (ColumnType::Decimal { precision, scale }, v @ (Value::Int(_) | Value::Decimal(_))) => {
                let d = v
                    .as_decimal()
                    .unwrap()
                    .rescale(*scale, self.quirks.decimal_rounding)
                    .map_err(|_| overflow(column))?;
                if d.digits() > *precision as u32 {
                    return Err(overflow(column));
                }
                Ok(Value::Decimal(d))
            }
            (ty, v) => Err(EngineError::Bind(format!("cannot store {} in {ty} column `{column}`", v.type_name()))),
        }
    }

    fn check_row(&self, schema: &TableSchema, row: &Row) -> Result<(), EngineError> {
        for check in &schema.checks {
            let idx = schema.column_index(&check.column).expect("validated check");
            let ord = row[idx].collated_cmp(&check.value.to_value(), self.quirks.text_collation);
            if !check.op.holds(ord) {
                return Err(EngineError::ConstraintViolation(format!(
                    "CHECK ({} {} {}) on `{}`",
                    check.column, check.op, check.value, schema.name
                )));
            }
        }
        Ok(())
    }

    /// Immutable copy of the table contents.
    pub fn snapshot_table(&self, table: &str) -> Result<TableSnapshot, EngineError> {
        let handle = self.tables.read().get(table).cloned().ok_or_else(|| EngineError::UnknownTable(table.into()))?;
        let guard = handle.lock();
        Ok(TableSnapshot { schema: guard.schema.clone(), rows: guard.rows.clone(), version: guard.version })
    }

    /// Replaces the table contents with the snapshot. Emits no digest tuples.
    pub fn restore_table(&self, table: &str, snapshot: &TableSnapshot) -> Result<(), EngineError> {
        let handle = self.tables.read().get(table).cloned().ok_or_else(|| EngineError::UnknownTable(table.into()))?;
        let mut guard = handle.lock();
        if *guard.schema != *snapshot.schema {
            return Err(EngineError::SchemaMismatch(table.into()));
        }
        if !Arc::ptr_eq(&guard.rows, &snapshot.rows) {
            guard.rows = snapshot.rows.clone();
            guard.version = snapshot.version;
        }
        Ok(())
    }

    pub fn snapshot_all(&self) -> DatabaseSnapshot {
        let names = self.table_names();
        names.into_iter().filter_map(|n| self.snapshot_table(&n).ok().map(|s| (n, s))).collect()
    }

    /// Makes the whole database equal to `snapshot`: tables absent from it are dropped.
    pub fn restore_all(&self, snapshot: &DatabaseSnapshot) {
        let mut tables = self.tables.write();
        tables.clear();
        for (name, snap) in snapshot {
            let pk = snap.schema.pk_indices();
            tables.insert(
                name.clone(),
                Arc::new(Mutex::new(Table {
                    schema: snap.schema.clone(),
                    pk: Arc::new(pk),
                    rows: snap.rows.clone(),
                    version: snap.version,
                })),
            );
        }
    }

    /// Drops every table and the pending digest.
    pub fn reset(&self) {
        self.tables.write().clear();
        self.begin_block();
    }
}

impl TransactionExecutor for Engine {
    fn execute(&self, statements: &[Statement]) -> Result<bool, EngineFailure> {
        Ok(self.execute_transaction(statements))
    }
}

fn overflow(column: &str) -> EngineError {
    EngineError::ConstraintViolation(format!("value out of range for column `{column}`"))
}

fn bind_literal(ty: &ColumnType, lit: &Literal, column: &str) -> Result<(), EngineError> {
    let ok = match ty {
        ColumnType::Text => matches!(lit, Literal::Text(_)),
        ColumnType::Int | ColumnType::Decimal { .. } => !matches!(lit, Literal::Text(_)),
    };
    if ok {
        Ok(())
    } else {
        Err(EngineError::Bind(format!("cannot compare {ty} column `{column}` with {lit}")))
    }
}

fn compare(value: &Value, cmp: &Comparison, collation: Collation) -> bool {
    match cmp {
        // Equality is binary regardless of collation.
        Comparison::Cmp { op: CmpOp::Eq, value: lit, .. } => value.total_cmp(&lit.to_value()).is_eq(),
        Comparison::Cmp { op, value: lit, .. } => op.holds(value.collated_cmp(&lit.to_value(), collation)),
        Comparison::Between { lo, hi, .. } => {
            value.collated_cmp(&lo.to_value(), collation).is_ge() && value.collated_cmp(&hi.to_value(), collation).is_le()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parser::parse_statement;
    use crate::sql::value::Decimal;

    const FOO: &str = "CREATE TABLE foo (pk INT, c INT, d TEXT, e DECIMAL(5,1), PRIMARY KEY (pk))";

    fn foo_engine() -> Engine {
        let engine = Engine::default();
        assert!(engine.execute_sql(FOO));
        assert!(engine.execute_sql(
            "INSERT INTO foo VALUES (1, 5, 'a', 1.0), (2, 6, 'b', 2.5), (3, 0, 'x', 3.3), (4, 8, 'z', 4.2)"
        ));
        engine.begin_block();
        engine
    }

    fn stmt(sql: &str) -> Statement {
        parse_statement(sql).unwrap()
    }

    fn dec(s: &str) -> Value {
        Value::Decimal(Decimal::parse(s).unwrap())
    }

    #[test]
    fn update_emits_one_update_tuple() {
        let engine = foo_engine();
        let r = engine.execute_statement(&stmt("UPDATE Foo SET C=42, E=7.9 WHERE PK=4")).unwrap();
        assert_eq!(r, StatementResult::Affected(1));
        let row = engine.get_row("foo", &[Value::Int(4)]).unwrap();
        assert_eq!(row, vec![Value::Int(4), Value::Int(42), Value::Text("z".into()), dec("7.9")]);
        let digest = engine.take_digest();
        let tuples = digest.table("foo").unwrap().tuples();
        assert_eq!(tuples.len(), 1);
        assert_eq!(tuples[0].serial, 0);
        assert_eq!(tuples[0].change_type, ChangeType::Update);
        assert_eq!(tuples[0].pk, encode_tuple(&[Value::Int(4)]));
        assert_eq!(tuples[0].hash, hash_row(&row));
    }

    #[test]
    fn delete_hashes_pre_image() {
        let engine = foo_engine();
        let before = engine.get_row("foo", &[Value::Int(3)]).unwrap();
        engine.execute_statement(&stmt("DELETE FROM Foo WHERE PK=3")).unwrap();
        assert!(engine.get_row("foo", &[Value::Int(3)]).is_none());
        let digest = engine.take_digest();
        let t = &digest.table("foo").unwrap().tuples()[0];
        assert_eq!((t.serial, t.change_type), (0, ChangeType::Delete));
        assert_eq!(t.hash, hash_row(&before));
    }

    #[test]
    fn update_with_empty_match_has_no_effect() {
        let engine = foo_engine();
        let r = engine.execute_statement(&stmt("UPDATE foo SET c = 1 WHERE pk = 99")).unwrap();
        assert_eq!(r, StatementResult::Affected(0));
        assert_eq!(engine.digest_tuple_count(), 0);
    }

    #[test]
    fn failed_transaction_leaves_no_trace() {
        let engine = foo_engine();
        let before = engine.snapshot_all();
        assert!(!engine.execute_sql("INSERT INTO foo VALUES (1, 0, 'dup', 0.0)"));
        assert_eq!(engine.digest_tuple_count(), 0);
        assert!(!engine.execute_sql("UPDATE foo SET c = 100 WHERE pk = 1; INSERT INTO foo VALUES (2, 0, 'dup', 0.0)"));
        assert_eq!(engine.digest_tuple_count(), 0);
        assert_eq!(engine.snapshot_all(), before);
    }

    #[test]
    fn successful_transaction_emits_in_statement_order() {
        let engine = foo_engine();
        assert!(engine.execute_sql("UPDATE foo SET c = 42 WHERE pk = 4; DELETE FROM foo WHERE pk = 3"));
        let digest = engine.take_digest();
        let kinds: Vec<ChangeType> = digest.table("foo").unwrap().tuples().iter().map(|t| t.change_type).collect();
        assert_eq!(kinds, vec![ChangeType::Update, ChangeType::Delete]);
    }

    #[test]
    fn repeated_changes_get_rising_serials() {
        let engine = foo_engine();
        assert!(engine.execute_sql("UPDATE foo SET c = c + 1 WHERE pk = 4"));
        assert!(engine.execute_sql("UPDATE foo SET c = c + 1 WHERE pk = 4"));
        let digest = engine.take_digest();
        let serials: Vec<u64> = digest.table("foo").unwrap().tuples().iter().map(|t| t.serial).collect();
        assert_eq!(serials, vec![0, 1]);
    }

    #[test]
    fn bind_errors() {
        let engine = foo_engine();
        for sql in [
            "UPDATE nope SET c = 1 WHERE pk = 1",
            "UPDATE foo SET nope = 1 WHERE pk = 1",
            "SELECT * FROM foo WHERE nope = 1",
            "UPDATE foo SET c = 'text' WHERE pk = 1",
            "SELECT * FROM foo WHERE d = 3",
            "INSERT INTO foo VALUES (9, 1)",
            "INSERT INTO foo (pk, c) VALUES (9, 1)",
        ] {
            let err = engine.run_transaction(&parse_transaction(sql).unwrap()).unwrap_err();
            assert!(matches!(err, EngineError::Bind(_)), "{sql}: {err}");
        }
    }

    #[test]
    fn decimal_rounding_quirk_changes_stored_value() {
        let even = Engine::new(QuirkConfig::default());
        let trunc = Engine::new(QuirkConfig { decimal_rounding: RoundingMode::Truncate, ..QuirkConfig::default() });
        for engine in [&even, &trunc] {
            assert!(engine.execute_sql("CREATE TABLE a (id INT PRIMARY KEY, bal DECIMAL(10,2))"));
            assert!(engine.execute_sql("INSERT INTO a VALUES (1, 10.00)"));
            assert!(engine.execute_sql("UPDATE a SET bal = bal + 0.016 WHERE id = 1"));
        }
        assert_eq!(even.get_row("a", &[Value::Int(1)]).unwrap()[1].canonical(), "10.02");
        assert_eq!(trunc.get_row("a", &[Value::Int(1)]).unwrap()[1].canonical(), "10.01");
    }

    #[test]
    fn collation_quirk_changes_range_matches() {
        let binary = Engine::default();
        let folded = Engine::new(QuirkConfig { text_collation: Collation::CaseInsensitive, ..QuirkConfig::default() });
        for engine in [&binary, &folded] {
            assert!(engine.execute_sql("CREATE TABLE n (id INT PRIMARY KEY, name TEXT)"));
            assert!(engine.execute_sql("INSERT INTO n VALUES (1, 'alice'), (2, 'Bob')"));
        }
        let q = stmt("SELECT id FROM n WHERE name > 'a'");
        assert_eq!(binary.execute_statement(&q).unwrap(), StatementResult::Rows(vec![vec![Value::Int(1)]]));
        assert_eq!(
            folded.execute_statement(&q).unwrap(),
            StatementResult::Rows(vec![vec![Value::Int(1)], vec![Value::Int(2)]])
        );
        let eq = stmt("SELECT id FROM n WHERE name = 'bob'");
        assert_eq!(folded.execute_statement(&eq).unwrap(), StatementResult::Rows(vec![]));
    }

    #[test]
    fn noop_update_quirk() {
        let emitting = Engine::default();
        let silent = Engine::new(QuirkConfig { update_noop_emits_digest: false, ..QuirkConfig::default() });
        for engine in [&emitting, &silent] {
            assert!(engine.execute_sql("CREATE TABLE a (id INT PRIMARY KEY, v INT)"));
            assert!(engine.execute_sql("INSERT INTO a VALUES (1, 5)"));
            engine.begin_block();
            assert!(engine.execute_sql("UPDATE a SET v = 5 WHERE id = 1"));
        }
        assert_eq!(emitting.digest_tuple_count(), 1);
        assert_eq!(silent.digest_tuple_count(), 0);
    }

    #[test]
    fn check_constraint_fails_transaction() {
        let engine = Engine::default();
        assert!(engine.execute_sql("CREATE TABLE c (id INT PRIMARY KEY, bal DECIMAL(10,2) CHECK (bal >= 0))"));
        assert!(engine.execute_sql("INSERT INTO c VALUES (1, 5.00), (2, 0.00)"));
        assert!(!engine.execute_sql("UPDATE c SET bal = bal + 3 WHERE id = 2; UPDATE c SET bal = bal - 6 WHERE id = 1"));
        assert_eq!(engine.get_row("c", &[Value::Int(2)]).unwrap()[1].canonical(), "0.00");
    }

    #[test]
    fn primary_key_update_and_clash() {
        let engine = foo_engine();
        assert!(engine.execute_sql("UPDATE foo SET pk = 10 WHERE pk = 1"));
        assert!(engine.get_row("foo", &[Value::Int(10)]).is_some());
        assert!(!engine.execute_sql("UPDATE foo SET pk = 2 WHERE pk = 10"));
        assert!(engine.execute_sql("UPDATE foo SET pk = pk + 1 WHERE pk >= 3 AND pk <= 4"), "shift onto a vacated key");
    }

    #[test]
    fn snapshot_is_isolated_and_restorable() {
        let engine = foo_engine();
        let snap = engine.snapshot_table("foo").unwrap();
        assert!(engine.execute_sql("UPDATE foo SET c = 1000 WHERE pk = 1; DELETE FROM foo WHERE pk = 2"));
        assert_eq!(snap.len(), 4);
        assert_eq!(snap.rows().next().unwrap()[1], Value::Int(5));
        engine.begin_block();
        engine.restore_table("foo", &snap).unwrap();
        assert_eq!(engine.snapshot_table("foo").unwrap(), snap);
        assert_eq!(engine.digest_tuple_count(), 0);
        engine.restore_table("foo", &snap).unwrap();
        assert_eq!(engine.snapshot_table("foo").unwrap(), snap);
    }

    #[test]
    fn restore_rejects_other_schema() {
        let engine = foo_engine();
        assert!(engine.execute_sql("CREATE TABLE bar (pk INT PRIMARY KEY)"));
        let snap = engine.snapshot_table("bar").unwrap();
        assert!(snap.is_empty());
        assert_eq!(engine.restore_table("foo", &snap), Err(EngineError::SchemaMismatch("foo".into())));
        assert!(matches!(engine.snapshot_table("nope"), Err(EngineError::UnknownTable(_))));
    }

    #[test]
    fn external_statements_bypass_capture() {
        let engine = foo_engine();
        engine.execute_external(&stmt("UPDATE foo SET c = 0 WHERE pk = 1")).unwrap();
        assert_eq!(engine.digest_tuple_count(), 0);
        assert_eq!(engine.get_row("foo", &[Value::Int(1)]).unwrap()[1], Value::Int(0));
    }

    #[test]
    fn between_and_compound_predicates() {
        let engine = foo_engine();
        let r = engine.execute_statement(&stmt("SELECT pk FROM foo WHERE pk BETWEEN 2 AND 3 AND c >= 1")).unwrap();
        assert_eq!(r, StatementResult::Rows(vec![vec![Value::Int(2)]]));
    }
}
