//! Read/write set extraction.
//!
//! A transaction's accesses are regions: a table plus a conjunction of
//! per-column intervals. A column without an interval is unconstrained. Two
//! regions on the same table intersect unless some column they both
//! constrain has disjoint intervals.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::sql::ast::{CmpOp, Comparison, Expr, Literal, Predicate, Statement, TableSchema};
use crate::sql::parser::{parse_transaction, ParseError};
use crate::sql::value::{ColumnType, Value};

pub type Catalog = BTreeMap<String, Arc<TableSchema>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Unbounded,
    Included(Value),
    Excluded(Value),
}

/// Interval over a column's domain, compared with the binary/numeric order.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub fn full() -> Self {
        Interval { lo: Bound::Unbounded, hi: Bound::Unbounded }
    }

    pub fn point(v: Value) -> Self {
        Interval { lo: Bound::Included(v.clone()), hi: Bound::Included(v) }
    }

    pub fn as_point(&self) -> Option<&Value> {
        match (&self.lo, &self.hi) {
            (Bound::Included(a), Bound::Included(b)) if a.total_cmp(b).is_eq() => Some(a),
            _ => None,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!((&self.lo, &self.hi), (Bound::Unbounded, Bound::Unbounded))
    }

    pub fn is_empty(&self) -> bool {
        match (&self.lo, &self.hi) {
            (Bound::Unbounded, _) | (_, Bound::Unbounded) => false,
            (Bound::Included(a), Bound::Included(b)) => a.total_cmp(b) == Ordering::Greater,
            (Bound::Included(a) | Bound::Excluded(a), Bound::Included(b) | Bound::Excluded(b)) => {
                a.total_cmp(b) != Ordering::Less
            }
        }
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        Interval { lo: tighter(&self.lo, &other.lo, Ordering::Greater), hi: tighter(&self.hi, &other.hi, Ordering::Less) }
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        !self.intersect(other).is_empty()
    }
}

/// Picks the more restrictive bound; `prefer` is the ordering a restrictive value has.
fn tighter(a: &Bound, b: &Bound, prefer: Ordering) -> Bound {
    match (a, b) {
        (Bound::Unbounded, x) | (x, Bound::Unbounded) => x.clone(),
        (Bound::Included(x) | Bound::Excluded(x), Bound::Included(y) | Bound::Excluded(y)) => {
            match x.total_cmp(y) {
                Ordering::Equal => {
                    if matches!(a, Bound::Excluded(_)) {
                        a.clone()
                    } else {
                        b.clone()
                    }
                }
                o if o == prefer => a.clone(),
                _ => b.clone(),
            }
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.lo {
            Bound::Unbounded => f.write_str("(-inf")?,
            Bound::Included(v) => write!(f, "[{v}")?,
            Bound::Excluded(v) => write!(f, "({v}")?,
        }
        f.write_str(", ")?;
        match &self.hi {
            Bound::Unbounded => f.write_str("+inf)"),
            Bound::Included(v) => write!(f, "{v}]"),
            Bound::Excluded(v) => write!(f, "{v})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessMode {
    Read,
    Write,
}

/// Rows of `table` possibly touched by one statement.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessRegion {
    pub table: String,
    pub mode: AccessMode,
    /// Constrained columns; absent columns span their whole domain.
    pub columns: BTreeMap<String, Interval>,
    /// Columns assigned by the statement (informational; conflicts are keyed on the region).
    pub written: Vec<String>,
}

impl AccessRegion {
    pub fn whole_table(table: &str, mode: AccessMode) -> Self {
        AccessRegion { table: table.to_string(), mode, columns: BTreeMap::new(), written: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.columns.values().any(Interval::is_empty)
    }

    pub fn intersects(&self, other: &AccessRegion) -> bool {
        if self.table != other.table || self.is_empty() || other.is_empty() {
            return false;
        }
        self.columns.iter().all(|(col, iv)| other.columns.get(col).is_none_or(|o| iv.intersects(o)))
    }

    pub fn conflicts(&self, other: &AccessRegion) -> bool {
        (self.mode == AccessMode::Write || other.mode == AccessMode::Write) && self.intersects(other)
    }

    pub fn interval(&self, column: &str) -> Interval {
        self.columns.get(column).cloned().unwrap_or_else(Interval::full)
    }
}

impl fmt::Display for AccessRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verb = match self.mode {
            AccessMode::Read => "read",
            AccessMode::Write => "write",
        };
        write!(f, "{verb} {}", self.table)?;
        if !self.written.is_empty() {
            write!(f, ".{{{}}}", self.written.join(","))?;
        }
        if self.columns.is_empty() {
            return f.write_str(" everywhere");
        }
        f.write_str(" where ")?;
        for (i, (c, iv)) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{c} in {iv}")?;
        }
        Ok(())
    }
}

/// One column interval of a region, flattened for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessInterval {
    pub table: String,
    pub column: String,
    pub interval: Interval,
    pub mode: AccessMode,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TxnAccessSet {
    pub index: usize,
    pub reads: Vec<AccessRegion>,
    pub writes: Vec<AccessRegion>,
}

impl TxnAccessSet {
    pub fn regions(&self) -> impl Iterator<Item = &AccessRegion> {
        self.reads.iter().chain(&self.writes)
    }

    pub fn conflicts(&self, other: &TxnAccessSet) -> bool {
        self.regions().any(|a| other.regions().any(|b| a.conflicts(b)))
    }

    pub fn intervals(&self) -> Vec<AccessInterval> {
        self.regions()
            .flat_map(|r| {
                r.columns.iter().map(move |(c, iv)| AccessInterval {
                    table: r.table.clone(),
                    column: c.clone(),
                    interval: iv.clone(),
                    mode: r.mode,
                })
            })
            .collect()
    }
}

/// Parses `sql` and extracts its access set.
pub fn analyze_sql(index: usize, sql: &str, catalog: &Catalog) -> Result<TxnAccessSet, ParseError> {
    Ok(analyze(index, &parse_transaction(sql)?, catalog))
}

pub fn analyze(index: usize, statements: &[Statement], catalog: &Catalog) -> TxnAccessSet {
    let mut set = TxnAccessSet { index, ..Default::default() };
    // Tables created earlier in this transaction have no catalog entry yet.
    let mut local: Catalog = BTreeMap::new();
    for stmt in statements {
        let schema = local.get(stmt.table()).or_else(|| catalog.get(stmt.table())).cloned();
        match stmt {
            Statement::CreateTable(s) => {
                set.writes.push(AccessRegion::whole_table(&s.name, AccessMode::Write));
                local.insert(s.name.clone(), Arc::new(s.clone()));
            }
            Statement::Select(s) => set.reads.push(region(&s.table, AccessMode::Read, &s.predicate, schema.as_deref())),
            Statement::Delete(d) => set.writes.push(region(&d.table, AccessMode::Write, &d.predicate, schema.as_deref())),
            Statement::Update(u) => {
                let mut pre = region(&u.table, AccessMode::Write, &u.predicate, schema.as_deref());
                pre.written = u.assignments.iter().map(|(c, _)| c.clone()).collect();
                // Rows leave the region through assignments to constrained columns.
                let mut post = pre.clone();
                for (col, expr) in &u.assignments {
                    if !post.columns.contains_key(col) {
                        continue;
                    }
                    match exact_point(expr, col, schema.as_deref()) {
                        Some(v) => post.columns.insert(col.clone(), Interval::point(v)),
                        None => post.columns.remove(col),
                    };
                }
                let moved = post != pre;
                set.writes.push(pre);
                if moved {
                    set.writes.push(post);
                }
            }
            Statement::Insert(ins) => match schema.as_deref() {
                Some(schema) => {
                    for row in &ins.rows {
                        set.writes.push(insert_region(schema, ins.columns.as_deref(), row));
                    }
                }
                None => set.writes.push(AccessRegion::whole_table(&ins.table, AccessMode::Write)),
            },
        }
    }
    set
}

/// Region holding the key of an inserted row. The key alone decides whether
/// the insert succeeds, so the other columns are left unconstrained.
fn insert_region(schema: &TableSchema, columns: Option<&[String]>, row: &[Literal]) -> AccessRegion {
    let mut region = AccessRegion::whole_table(&schema.name, AccessMode::Write);
    region.written = schema.columns.iter().map(|c| c.name.clone()).collect();
    for key in &schema.primary_key {
        let pos = match columns {
            None => schema.column_index(key),
            Some(cols) => cols.iter().position(|c| c == key),
        };
        if let Some(lit) = pos.and_then(|p| row.get(p)) {
            if let Some(v) = exact_literal(lit, &schema.column(key).unwrap().ty) {
                region.columns.insert(key.clone(), Interval::point(v));
            }
        }
    }
    region
}

fn region(table: &str, mode: AccessMode, predicate: &Predicate, schema: Option<&TableSchema>) -> AccessRegion {
    let mut region = AccessRegion::whole_table(table, mode);
    let Some(schema) = schema else {
        return region;
    };
    for cmp in predicate {
        let Some(col) = schema.column(cmp.column()) else {
            continue;
        };
        if let Some(iv) = comparison_interval(cmp, &col.ty) {
            let merged = match region.columns.get(&col.name) {
                Some(existing) => existing.intersect(&iv),
                None => iv,
            };
            region.columns.insert(col.name.clone(), merged);
        }
    }
    region
}

/// Interval of values satisfying one comparison; `None` leaves the column unconstrained.
fn comparison_interval(cmp: &Comparison, ty: &ColumnType) -> Option<Interval> {
    let numeric_column = !matches!(ty, ColumnType::Text);
    let usable = |lit: &Literal| numeric_column != matches!(lit, Literal::Text(_));
    match cmp {
        Comparison::Cmp { op: CmpOp::Eq, value, .. } if usable(value) => Some(Interval::point(value.to_value())),
        // Text ranges depend on the engine's collation.
        _ if !numeric_column => None,
        Comparison::Cmp { op, value, .. } if usable(value) => {
            let v = value.to_value();
            let int_step = |delta: i64| match (ty, &v) {
                (ColumnType::Int, Value::Int(x)) => x.checked_add(delta).map(|y| Bound::Included(Value::Int(y))),
                _ => None,
            };
            Some(match op {
                CmpOp::Lt => Interval { lo: Bound::Unbounded, hi: int_step(-1).unwrap_or(Bound::Excluded(v)) },
                CmpOp::Le => Interval { lo: Bound::Unbounded, hi: Bound::Included(v) },
                CmpOp::Gt => Interval { lo: int_step(1).unwrap_or(Bound::Excluded(v)), hi: Bound::Unbounded },
                CmpOp::Ge => Interval { lo: Bound::Included(v), hi: Bound::Unbounded },
                CmpOp::Eq => unreachable!(),
            })
        }
        Comparison::Between { lo, hi, .. } if usable(lo) && usable(hi) => {
            Some(Interval { lo: Bound::Included(lo.to_value()), hi: Bound::Included(hi.to_value()) })
        }
        _ => None,
    }
}

/// The value a literal takes when stored in a column of type `ty`, if no
/// rounding can be involved.
fn exact_literal(lit: &Literal, ty: &ColumnType) -> Option<Value> {
    match (ty, lit) {
        (ColumnType::Int, Literal::Int(v)) => Some(Value::Int(*v)),
        (ColumnType::Text, Literal::Text(s)) => Some(Value::Text(s.clone())),
        (ColumnType::Decimal { scale, .. }, Literal::Int(_) | Literal::Decimal(_)) => {
            let v = lit.to_value();
            v.as_decimal().filter(|d| d.fits_scale(*scale)).map(|_| v)
        }
        _ => None,
    }
}

fn exact_point(expr: &Expr, column: &str, schema: Option<&TableSchema>) -> Option<Value> {
    let ty = &schema?.column(column)?.ty;
    exact_literal(expr.as_literal()?, ty)
}
