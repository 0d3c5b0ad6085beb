use std::fmt;

use super::value::{ColumnType, Decimal, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    /// The operator obtained by swapping operands: `5 < x` is `x > 5`.
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Le => ord != Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Decimal(Decimal),
    Text(String),
}

impl Literal {
    pub fn to_value(&self) -> Value {
        match self {
            Literal::Int(v) => Value::Int(*v),
            Literal::Decimal(d) => Value::Decimal(*d),
            Literal::Text(s) => Value::Text(s.clone()),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_value(), f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    Cmp { column: String, op: CmpOp, value: Literal },
    Between { column: String, lo: Literal, hi: Literal },
}

impl Comparison {
    pub fn column(&self) -> &str {
        match self {
            Comparison::Cmp { column, .. } | Comparison::Between { column, .. } => column,
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Comparison::Cmp { column, op, value } => write!(f, "{column} {op} {value}"),
            Comparison::Between { column, lo, hi } => write!(f, "{column} BETWEEN {lo} AND {hi}"),
        }
    }
}

/// A conjunction of comparisons; empty means "every row".
pub type Predicate = Vec<Comparison>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Column(String),
    Binary { op: ArithOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Expr::Literal(l) => Some(l),
            _ => None,
        }
    }

    pub fn columns(&self, out: &mut Vec<String>) {
        match self {
            Expr::Literal(_) => {}
            Expr::Column(c) => out.push(c.clone()),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.columns(out);
                rhs.columns(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Column(c) => f.write_str(c),
            Expr::Binary { op, lhs, rhs } => {
                let sym = if *op == ArithOp::Add { '+' } else { '-' };
                write!(f, "{lhs} {sym} {rhs}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

/// Column-level `CHECK (column op literal)` constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckConstraint {
    pub column: String,
    pub op: CmpOp,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
    pub checks: Vec<CheckConstraint>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn pk_indices(&self) -> Vec<usize> {
        self.primary_key
            .iter()
            .map(|k| self.column_index(k).expect("validated primary key"))
            .collect()
    }

    /// Checks the structural invariants: unique column names and a non-empty
    /// primary key over existing columns.
    pub fn validate(&self) -> Result<(), String> {
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(format!("duplicate column `{}`", c.name));
            }
        }
        if self.primary_key.is_empty() {
            return Err("primary key must not be empty".into());
        }
        for (i, k) in self.primary_key.iter().enumerate() {
            if self.column(k).is_none() {
                return Err(format!("primary key column `{k}` does not exist"));
            }
            if self.primary_key[..i].contains(k) {
                return Err(format!("primary key column `{k}` listed twice"));
            }
        }
        for check in &self.checks {
            if self.column(&check.column).is_none() {
                return Err(format!("check on unknown column `{}`", check.column));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TableSchema {
    /// Canonical `CREATE TABLE` text; parsing it yields an equal schema.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CREATE TABLE {} (", self.name)?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{} {}", c.name, c.ty)?;
        }
        write!(f, ", PRIMARY KEY ({})", self.primary_key.join(", "))?;
        for c in &self.checks {
            write!(f, ", CHECK ({} {} {})", c.column, c.op, c.value)?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insert {
    pub table: String,
    pub columns: Option<Vec<String>>,
    pub rows: Vec<Vec<Literal>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub table: String,
    pub assignments: Vec<(String, Expr)>,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delete {
    pub table: String,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub table: String,
    /// `None` projects every column.
    pub columns: Option<Vec<String>>,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    CreateTable(TableSchema),
    Insert(Insert),
    Update(Update),
    Delete(Delete),
    Select(Select),
}

impl Statement {
    pub fn table(&self) -> &str {
        match self {
            Statement::CreateTable(s) => &s.name,
            Statement::Insert(i) => &i.table,
            Statement::Update(u) => &u.table,
            Statement::Delete(d) => &d.table,
            Statement::Select(s) => &s.table,
        }
    }

    pub fn is_read_only(&self) -> bool {
        matches!(self, Statement::Select(_))
    }
}
