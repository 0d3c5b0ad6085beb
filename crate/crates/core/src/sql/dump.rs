//! Deterministic textual dump of a database.
//!
//! Each table starts with a header line `0x1E` + canonical `CREATE TABLE`,
//! followed by one line per row in primary-key order holding the canonical
//! values joined with `0x1F`. Backslash, newline, `0x1E` and `0x1F` inside
//! values are backslash-escaped. Two databases with equal contents produce
//! byte-identical dumps.

use std::io::{self, BufRead, Write};

use super::ast::Statement;
use super::engine::{DatabaseSnapshot, Engine, EngineError, Row, TableSnapshot};
use super::parser::parse_statement;
use super::value::{ColumnType, Decimal, Value};

const TABLE_MARK: char = '\u{1E}';
const FIELD_MARK: char = '\u{1F}';

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            TABLE_MARK => out.push_str("\\r"),
            FIELD_MARK => out.push_str("\\f"),
            c => out.push(c),
        }
    }
}

fn split_fields(line: &str) -> Result<Vec<String>, String> {
    let mut fields = vec![String::new()];
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            FIELD_MARK => fields.push(String::new()),
            '\\' => {
                let unescaped = match chars.next() {
                    Some('\\') => '\\',
                    Some('n') => '\n',
                    Some('r') => TABLE_MARK,
                    Some('f') => FIELD_MARK,
                    other => return Err(format!("bad escape {other:?}")),
                };
                fields.last_mut().unwrap().push(unescaped);
            }
            c => fields.last_mut().unwrap().push(c),
        }
    }
    Ok(fields)
}

fn parse_field(text: &str, ty: &ColumnType) -> Result<Value, String> {
    match ty {
        ColumnType::Int => text.parse().map(Value::Int).map_err(|e| format!("bad INT `{text}`: {e}")),
        ColumnType::Text => Ok(Value::Text(text.to_string())),
        ColumnType::Decimal { scale, .. } => {
            let d = Decimal::parse(text).map_err(|e| format!("bad DECIMAL `{text}`: {e}"))?;
            if d.scale() != *scale {
                return Err(format!("DECIMAL `{text}` does not have scale {scale}"));
            }
            Ok(Value::Decimal(d))
        }
    }
}

/// Writes the snapshot in dump format.
pub fn write_dump(snapshot: &DatabaseSnapshot, mut out: impl Write) -> io::Result<()> {
    let mut line = String::new();
    for table in snapshot.values() {
        line.clear();
        line.push(TABLE_MARK);
        line.push_str(&table.schema().to_string());
        line.push('\n');
        out.write_all(line.as_bytes())?;
        for row in table.rows() {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(FIELD_MARK);
                }
                escape(&v.canonical(), &mut line);
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}

pub fn dump_to_string(snapshot: &DatabaseSnapshot) -> String {
    let mut buf = Vec::new();
    write_dump(snapshot, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("dump is UTF-8")
}

/// Parses a dump back into a snapshot.
pub fn read_dump(input: impl BufRead) -> Result<DatabaseSnapshot, DumpError> {
    let mut snapshot = DatabaseSnapshot::new();
    let mut current: Option<(crate::sql::ast::TableSchema, Vec<Row>)> = None;
    let finish = |cur: Option<(crate::sql::ast::TableSchema, Vec<Row>)>, snap: &mut DatabaseSnapshot| {
        if let Some((schema, rows)) = cur {
            let name = schema.name.clone();
            snap.insert(name, TableSnapshot::from_rows(schema, rows)?);
        }
        Ok::<_, DumpError>(())
    };
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let err = |message: String| DumpError::Format { line: lineno, message };
        if let Some(header) = line.strip_prefix(TABLE_MARK) {
            finish(current.take(), &mut snapshot)?;
            match parse_statement(header) {
                Ok(Statement::CreateTable(schema)) => {
                    schema.validate().map_err(err)?;
                    current = Some((schema, Vec::new()));
                }
                Ok(_) => return Err(err("header is not CREATE TABLE".into())),
                Err(e) => return Err(err(e.to_string())),
            }
        } else {
            let Some((schema, rows)) = current.as_mut() else {
                return Err(err("row before any table header".into()));
            };
            let fields = split_fields(&line).map_err(err)?;
            if fields.len() != schema.columns.len() {
                return Err(err(format!("expected {} fields, found {}", schema.columns.len(), fields.len())));
            }
            let row = fields
                .iter()
                .zip(&schema.columns)
                .map(|(f, c)| parse_field(f, &c.ty))
                .collect::<Result<Row, _>>()
                .map_err(err)?;
            rows.push(row);
        }
    }
    finish(current.take(), &mut snapshot)?;
    Ok(snapshot)
}

impl Engine {
    pub fn dump(&self) -> String {
        dump_to_string(&self.snapshot_all())
    }

    /// Replaces the whole database with the dumped contents.
    pub fn load_dump(&self, input: impl BufRead) -> Result<(), DumpError> {
        let snapshot = read_dump(input)?;
        self.restore_all(&snapshot);
        Ok(())
    }
}
