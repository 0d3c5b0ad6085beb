//! Tokenizer and recursive-descent parser for the supported SQL subset.
//!
//! Keywords are case-insensitive; unquoted identifiers are folded to lower
//! case. String literals may use single or double quotes. A transaction is one
//! text holding one or more statements separated by `;`.

use std::fmt;

use super::ast::*;
use super::value::{ColumnType, Decimal, MAX_DECIMAL_PRECISION};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) | Token::Number(s) => f.write_str(s),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Sym(s) => f.write_str(s),
        }
    }
}

const SYMBOLS: [&str; 17] = ["<=", ">=", "==", "<>", "(", ")", ",", ";", "=", "<", ">", "*", "+", "-", ".", "[", "]"];

pub fn tokenize(input: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(input[start..i].to_string())));
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push((start, Token::Number(input[start..i].to_string())));
        } else if c == b'\'' || c == b'"' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            loop {
                let Some(ch) = input[i..].chars().next() else {
                    return Err(ParseError { offset: start, message: "unterminated string literal".into() });
                };
                if ch as u32 == quote as u32 {
                    if bytes.get(i + 1) == Some(&quote) {
                        s.push(ch);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push((start, Token::Str(s)));
        } else if let Some(sym) = SYMBOLS.iter().find(|s| input[i..].starts_with(**s)) {
            i += sym.len();
            out.push((start, Token::Sym(sym)));
        } else if c == b']' {
            i += 1;
            out.push((start, Token::Sym("]")));
        } else {
            let ch = input[i..].chars().next().unwrap();
            return Err(ParseError { offset: start, message: format!("unexpected character `{ch}`") });
        }
    }
    Ok(out)
}

/// Cursor over a token stream, shared with the agreement predicate parser.
pub struct Cursor {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Cursor {
    pub fn new(input: &str) -> Result<Self, ParseError> {
        let tokens = tokenize(input)?;
        Ok(Cursor { tokens, pos: 0, end: input.len() })
    }

    pub fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    pub fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    pub fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset: self.offset(), message: message.into() })
    }

    pub fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.error(format!("expected {kw}"))
        }
    }

    pub fn peek_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Token::Sym(s)) if *s == sym)
    }

    pub fn eat_sym(&mut self, sym: &str) -> bool {
        if self.peek_sym(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.error(format!("expected `{sym}`"))
        }
    }

    pub fn identifier(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token::Ident(s)) if !is_reserved(s) => {
                let s = s.to_ascii_lowercase();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error("expected identifier"),
        }
    }

    pub fn literal(&mut self) -> Result<Literal, ParseError> {
        let start = self.pos;
        let negative = if self.eat_sym("-") {
            true
        } else {
            self.eat_sym("+");
            false
        };
        match self.next() {
            Some(Token::Number(n)) => {
                let text = if negative { format!("-{n}") } else { n };
                if text.contains('.') {
                    Decimal::parse(&text).map(Literal::Decimal).map_err(|e| ParseError {
                        offset: self.offset(),
                        message: e.to_string(),
                    })
                } else {
                    match text.parse::<i64>() {
                        Ok(v) => Ok(Literal::Int(v)),
                        Err(_) => Decimal::parse(&text).map(Literal::Decimal).map_err(|e| ParseError {
                            offset: self.offset(),
                            message: e.to_string(),
                        }),
                    }
                }
            }
            Some(Token::Str(s)) if !negative => Ok(Literal::Text(s)),
            _ => {
                self.pos = start;
                self.error("expected literal")
            }
        }
    }

    pub fn peek_literal(&self) -> bool {
        match self.peek() {
            Some(Token::Number(_)) | Some(Token::Str(_)) => true,
            Some(Token::Sym("-")) | Some(Token::Sym("+")) => {
                matches!(self.tokens.get(self.pos + 1), Some((_, Token::Number(_))))
            }
            _ => false,
        }
    }

    pub fn comparison_op(&mut self) -> Result<CmpOp, ParseError> {
        let op = match self.peek() {
            Some(Token::Sym("=")) | Some(Token::Sym("==")) => CmpOp::Eq,
            Some(Token::Sym("<")) => CmpOp::Lt,
            Some(Token::Sym(">")) => CmpOp::Gt,
            Some(Token::Sym("<=")) => CmpOp::Le,
            Some(Token::Sym(">=")) => CmpOp::Ge,
            _ => return self.error("expected comparison operator"),
        };
        self.pos += 1;
        Ok(op)
    }
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "and", "insert", "into", "values", "update", "set", "delete", "create", "table",
    "primary", "key", "check", "between", "or", "not", "null",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| word.eq_ignore_ascii_case(r))
}

/// Parses one transaction: one or more `;`-separated statements.
pub fn parse_transaction(sql: &str) -> Result<Vec<Statement>, ParseError> {
    let mut cur = Cursor::new(sql)?;
    let mut statements = Vec::new();
    loop {
        while cur.eat_sym(";") {}
        if cur.at_end() {
            break;
        }
        statements.push(statement(&mut cur)?);
        if !cur.at_end() && !cur.peek_sym(";") {
            return cur.error("expected `;` or end of input");
        }
    }
    if statements.is_empty() {
        return Err(ParseError { offset: 0, message: "empty transaction".into() });
    }
    Ok(statements)
}

/// Parses exactly one statement (a trailing `;` is allowed).
pub fn parse_statement(sql: &str) -> Result<Statement, ParseError> {
    let mut stmts = parse_transaction(sql)?;
    if stmts.len() != 1 {
        return Err(ParseError { offset: 0, message: format!("expected one statement, found {}", stmts.len()) });
    }
    Ok(stmts.pop().unwrap())
}

fn statement(cur: &mut Cursor) -> Result<Statement, ParseError> {
    if cur.eat_keyword("create") {
        cur.expect_keyword("table")?;
        create_table(cur).map(Statement::CreateTable)
    } else if cur.eat_keyword("insert") {
        cur.expect_keyword("into")?;
        insert(cur).map(Statement::Insert)
    } else if cur.eat_keyword("update") {
        update(cur).map(Statement::Update)
    } else if cur.eat_keyword("delete") {
        cur.expect_keyword("from")?;
        let table = cur.identifier()?;
        let predicate = where_clause(cur)?;
        Ok(Statement::Delete(Delete { table, predicate }))
    } else if cur.eat_keyword("select") {
        select(cur).map(Statement::Select)
    } else {
        cur.error("expected CREATE, INSERT, UPDATE, DELETE or SELECT")
    }
}

fn column_type(cur: &mut Cursor) -> Result<ColumnType, ParseError> {
    let Some(Token::Ident(word)) = cur.peek().cloned() else {
        return cur.error("expected column type");
    };
    cur.next();
    match word.to_ascii_lowercase().as_str() {
        "int" | "integer" | "bigint" => Ok(ColumnType::Int),
        "text" | "varchar" | "char" => {
            if cur.eat_sym("(") {
                match cur.next() {
                    Some(Token::Number(_)) => {}
                    _ => return cur.error("expected length"),
                }
                cur.expect_sym(")")?;
            }
            Ok(ColumnType::Text)
        }
        "decimal" | "numeric" => {
            let (mut precision, mut scale) = (18u32, 0u32);
            if cur.eat_sym("(") {
                precision = small_number(cur)?;
                if cur.eat_sym(",") {
                    scale = small_number(cur)?;
                }
                cur.expect_sym(")")?;
            }
            if precision == 0 || precision > MAX_DECIMAL_PRECISION as u32 || scale > precision {
                return cur.error(format!("unsupported DECIMAL({precision},{scale})"));
            }
            Ok(ColumnType::Decimal { precision: precision as u8, scale: scale as u8 })
        }
        other => cur.error(format!("unknown column type `{other}`")),
    }
}

fn small_number(cur: &mut Cursor) -> Result<u32, ParseError> {
    match cur.next() {
        Some(Token::Number(n)) => n.parse().or_else(|_| cur.error("number too large")),
        _ => cur.error("expected number"),
    }
}

fn check_constraint(cur: &mut Cursor) -> Result<CheckConstraint, ParseError> {
    cur.expect_sym("(")?;
    let column = cur.identifier()?;
    let op = cur.comparison_op()?;
    let value = cur.literal()?;
    cur.expect_sym(")")?;
    Ok(CheckConstraint { column, op, value })
}

fn create_table(cur: &mut Cursor) -> Result<TableSchema, ParseError> {
    let name = cur.identifier()?;
    cur.expect_sym("(")?;
    let mut schema = TableSchema { name, columns: Vec::new(), primary_key: Vec::new(), checks: Vec::new() };
    loop {
        if cur.eat_keyword("primary") {
            cur.expect_keyword("key")?;
            if !schema.primary_key.is_empty() {
                return cur.error("multiple primary keys");
            }
            schema.primary_key = ident_list(cur)?;
        } else if cur.eat_keyword("check") {
            schema.checks.push(check_constraint(cur)?);
        } else {
            let name = cur.identifier()?;
            let ty = column_type(cur)?;
            loop {
                if cur.eat_keyword("primary") {
                    cur.expect_keyword("key")?;
                    if !schema.primary_key.is_empty() {
                        return cur.error("multiple primary keys");
                    }
                    schema.primary_key = vec![name.clone()];
                } else if cur.peek_keyword("check") {
                    cur.next();
                    let mut check = check_constraint(cur)?;
                    if check.column != name {
                        return cur.error("column check must reference its own column");
                    }
                    check.column = name.clone();
                    schema.checks.push(check);
                } else {
                    break;
                }
            }
            schema.columns.push(ColumnDef { name, ty });
        }
        if cur.eat_sym(")") {
            break;
        }
        cur.expect_sym(",")?;
    }
    if let Err(message) = schema.validate() {
        return cur.error(message);
    }
    Ok(schema)
}

fn ident_list(cur: &mut Cursor) -> Result<Vec<String>, ParseError> {
    cur.expect_sym("(")?;
    let mut out = vec![cur.identifier()?];
    while cur.eat_sym(",") {
        out.push(cur.identifier()?);
    }
    cur.expect_sym(")")?;
    Ok(out)
}

fn insert(cur: &mut Cursor) -> Result<Insert, ParseError> {
    let table = cur.identifier()?;
    let columns = if cur.peek_sym("(") { Some(ident_list(cur)?) } else { None };
    cur.expect_keyword("values")?;
    let mut rows = Vec::new();
    loop {
        cur.expect_sym("(")?;
        let mut row = vec![cur.literal()?];
        while cur.eat_sym(",") {
            row.push(cur.literal()?);
        }
        cur.expect_sym(")")?;
        rows.push(row);
        if !cur.eat_sym(",") {
            break;
        }
    }
    Ok(Insert { table, columns, rows })
}

fn update(cur: &mut Cursor) -> Result<Update, ParseError> {
    let table = cur.identifier()?;
    cur.expect_keyword("set")?;
    let mut assignments = Vec::new();
    loop {
        let column = cur.identifier()?;
        cur.expect_sym("=")?;
        let value = expr(cur)?;
        assignments.push((column, value));
        if !cur.eat_sym(",") {
            break;
        }
    }
    let predicate = where_clause(cur)?;
    Ok(Update { table, assignments, predicate })
}

fn select(cur: &mut Cursor) -> Result<Select, ParseError> {
    let columns = if cur.eat_sym("*") {
        None
    } else {
        let mut cols = vec![cur.identifier()?];
        while cur.eat_sym(",") {
            cols.push(cur.identifier()?);
        }
        Some(cols)
    };
    cur.expect_keyword("from")?;
    let table = cur.identifier()?;
    let predicate = where_clause(cur)?;
    Ok(Select { table, columns, predicate })
}

fn where_clause(cur: &mut Cursor) -> Result<Predicate, ParseError> {
    if !cur.eat_keyword("where") {
        return Ok(Vec::new());
    }
    let mut out = vec![comparison(cur)?];
    while cur.eat_keyword("and") {
        out.push(comparison(cur)?);
    }
    Ok(out)
}

fn comparison(cur: &mut Cursor) -> Result<Comparison, ParseError> {
    if cur.peek_literal() {
        let value = cur.literal()?;
        let op = cur.comparison_op()?.flipped();
        let column = cur.identifier()?;
        return Ok(Comparison::Cmp { column, op, value });
    }
    let column = cur.identifier()?;
    if cur.eat_keyword("between") {
        let lo = cur.literal()?;
        cur.expect_keyword("and")?;
        let hi = cur.literal()?;
        return Ok(Comparison::Between { column, lo, hi });
    }
    let op = cur.comparison_op()?;
    let value = cur.literal()?;
    Ok(Comparison::Cmp { column, op, value })
}

fn expr(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = primary(cur)?;
    loop {
        let op = if cur.eat_sym("+") {
            ArithOp::Add
        } else if cur.eat_sym("-") {
            ArithOp::Sub
        } else {
            return Ok(lhs);
        };
        let rhs = primary(cur)?;
        lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
    }
}

fn primary(cur: &mut Cursor) -> Result<Expr, ParseError> {
    if cur.eat_sym("(") {
        let e = expr(cur)?;
        cur.expect_sym(")")?;
        return Ok(e);
    }
    if cur.peek_literal() {
        return cur.literal().map(Expr::Literal);
    }
    cur.identifier().map(Expr::Column)
}
