//! Optional pre-ordering approval of transactions.
//!
//! A table may carry an agreement policy listing the organizations that must
//! approve every transaction touching it. Each organization decides with its
//! own predicate, evaluated read-only against its last committed state, and
//! answers with a signed verdict. A proposal plus all required yes-verdicts
//! forms a chained transaction, which is what the orderer accepts.
//!
//! Predicate syntax: clauses joined by `AND`, each `operand op operand`, where
//! an operand is a literal, a transaction field `txn.col`, or a lookup
//! `table.col[keycol = operand AND ...]` that must match exactly one row.
//! Without brackets a lookup requires the table to hold exactly one row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, KeyRegistry, OrgId, SignatureBytes};
use crate::hash::EffectHash;
use crate::sql::ast::{CmpOp, Comparison, Literal, Select, Statement};
use crate::sql::engine::{Engine, StatementResult};
use crate::sql::parser::{parse_transaction, Cursor, ParseError};
use crate::sql::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementPolicy {
    pub table: String,
    pub required_orgs: BTreeSet<OrgId>,
}

#[derive(Debug, Clone, PartialEq)]
enum Operand {
    Literal(Literal),
    Field(String),
    Lookup { table: String, column: String, keys: Vec<(String, Operand)> },
}

#[derive(Debug, Clone, PartialEq)]
struct Clause {
    lhs: Operand,
    op: CmpOp,
    rhs: Operand,
}

/// One organization's condition for transactions on one table.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementPredicate {
    pub table: String,
    source: String,
    clauses: Vec<Clause>,
}

impl fmt::Display for AgreementPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn parse_operand(c: &mut Cursor) -> Result<Operand, ParseError> {
    if c.peek_literal() {
        return c.literal().map(Operand::Literal);
    }
    let first = c.identifier()?;
    c.expect_sym(".")?;
    let column = c.identifier()?;
    if first == "txn" {
        return Ok(Operand::Field(column));
    }
    let mut keys = Vec::new();
    if c.eat_sym("[") {
        loop {
            let key = c.identifier()?;
            c.expect_sym("=")?;
            keys.push((key, parse_operand(c)?));
            if !c.eat_keyword("and") {
                break;
            }
        }
        c.expect_sym("]")?;
    }
    Ok(Operand::Lookup { table: first, column, keys })
}

impl AgreementPredicate {
    pub fn parse(table: &str, source: &str) -> Result<Self, ParseError> {
        let mut c = Cursor::new(source)?;
        let mut clauses = Vec::new();
        loop {
            let lhs = parse_operand(&mut c)?;
            let op = c.comparison_op()?;
            let rhs = parse_operand(&mut c)?;
            clauses.push(Clause { lhs, op, rhs });
            if !c.eat_keyword("and") {
                break;
            }
        }
        if !c.at_end() {
            return c.error("unexpected trailing input");
        }
        Ok(AgreementPredicate { table: table.to_lowercase(), source: source.to_string(), clauses })
    }

    /// Evaluates against `fields` of one transaction row. Any missing field,
    /// failed lookup or incomparable pair makes the predicate false.
    pub fn evaluate(&self, fields: &BTreeMap<String, Value>, engine: &Engine) -> bool {
        self.clauses.iter().all(|cl| {
            match (resolve(&cl.lhs, fields, engine), resolve(&cl.rhs, fields, engine)) {
                (Some(a), Some(b)) if a.is_numeric() == b.is_numeric() => cl.op.holds(a.total_cmp(&b)),
                _ => false,
            }
        })
    }
}

fn resolve(op: &Operand, fields: &BTreeMap<String, Value>, engine: &Engine) -> Option<Value> {
    match op {
        Operand::Literal(l) => Some(l.to_value()),
        Operand::Field(f) => fields.get(f).cloned(),
        Operand::Lookup { table, column, keys } => {
            let mut predicate = Vec::with_capacity(keys.len());
            for (k, operand) in keys {
                let value = match resolve(operand, fields, engine)? {
                    Value::Int(v) => Literal::Int(v),
                    Value::Decimal(d) => Literal::Decimal(d),
                    Value::Text(s) => Literal::Text(s),
                };
                predicate.push(Comparison::Cmp { column: k.clone(), op: CmpOp::Eq, value });
            }
            let select = Statement::Select(Select {
                table: table.clone(),
                columns: Some(vec![column.clone()]),
                predicate,
            });
            match engine.execute_statement(&select) {
                Ok(StatementResult::Rows(mut rows)) if rows.len() == 1 => rows.pop().and_then(|mut r| r.pop()),
                _ => None,
            }
        }
    }
}

/// Field values a transaction supplies for `table`: one map per inserted row,
/// or the literal assignments of each UPDATE.
pub fn transaction_fields(statements: &[Statement], table: &str) -> Vec<BTreeMap<String, Value>> {
    let mut out = Vec::new();
    for stmt in statements.iter().filter(|s| s.table() == table) {
        match stmt {
            Statement::Insert(ins) => {
                for row in &ins.rows {
                    let names: Vec<String> = match &ins.columns {
                        Some(cols) => cols.clone(),
                        None => (0..row.len()).map(|i| format!("#{i}")).collect(),
                    };
                    out.push(names.into_iter().zip(row.iter().map(Literal::to_value)).collect());
                }
            }
            Statement::Update(up) => {
                let mut fields = BTreeMap::new();
                for (col, expr) in &up.assignments {
                    if let Some(l) = expr.as_literal() {
                        fields.insert(col.clone(), l.to_value());
                    }
                }
                for cmp in &up.predicate {
                    if let Comparison::Cmp { column, op: CmpOp::Eq, value } = cmp {
                        fields.entry(column.clone()).or_insert_with(|| value.to_value());
                    }
                }
                out.push(fields);
            }
            Statement::Delete(del) => {
                out.push(
                    del.predicate
                        .iter()
                        .filter_map(|c| match c {
                            Comparison::Cmp { column, op: CmpOp::Eq, value } => Some((column.clone(), value.to_value())),
                            _ => None,
                        })
                        .collect(),
                );
            }
            Statement::CreateTable(_) | Statement::Select(_) => out.push(BTreeMap::new()),
        }
    }
    out
}

/// A client's signed transaction proposal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub client: OrgId,
    pub sql: String,
    pub signature: SignatureBytes,
}

impl Proposal {
    pub fn digest_of(client: &str, sql: &str) -> EffectHash {
        let mut bytes = Vec::with_capacity(client.len() + sql.len() + 16);
        bytes.extend_from_slice(b"wlc-txn");
        bytes.extend_from_slice(&(client.len() as u32).to_be_bytes());
        bytes.extend_from_slice(client.as_bytes());
        bytes.extend_from_slice(&(sql.len() as u32).to_be_bytes());
        bytes.extend_from_slice(sql.as_bytes());
        EffectHash::of(&bytes)
    }

    pub fn sign(key: &KeyPair, client: impl Into<OrgId>, sql: impl Into<String>) -> Self {
        let client = client.into();
        let sql = sql.into();
        let signature = key.sign(Self::digest_of(&client, &sql).as_bytes());
        Proposal { client, sql, signature }
    }

    pub fn digest(&self) -> EffectHash {
        Self::digest_of(&self.client, &self.sql)
    }

    pub fn verify(&self, registry: &KeyRegistry) -> bool {
        registry.verify(&self.client, self.digest().as_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agreement {
    pub org: OrgId,
    pub txn_digest: EffectHash,
    pub verdict: bool,
    pub signature: SignatureBytes,
}

impl Agreement {
    fn signed_bytes(org: &str, digest: &EffectHash, verdict: bool) -> Vec<u8> {
        let mut out = Vec::with_capacity(org.len() + 48);
        out.extend_from_slice(b"wlc-agree");
        out.extend_from_slice(&(org.len() as u32).to_be_bytes());
        out.extend_from_slice(org.as_bytes());
        out.extend_from_slice(digest.as_bytes());
        out.push(verdict as u8);
        out
    }

    pub fn sign(key: &KeyPair, org: impl Into<OrgId>, txn_digest: EffectHash, verdict: bool) -> Self {
        let org = org.into();
        let signature = key.sign(&Self::signed_bytes(&org, &txn_digest, verdict));
        Agreement { org, txn_digest, verdict, signature }
    }

    pub fn verify(&self, registry: &KeyRegistry) -> bool {
        registry.verify(&self.org, &Self::signed_bytes(&self.org, &self.txn_digest, self.verdict), &self.signature)
    }
}

/// A proposal bundled with the agreements it needed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainedTransaction {
    pub proposal: Proposal,
    pub agreements: Vec<Agreement>,
}

impl ChainedTransaction {
    /// Transaction without agreement phase, e.g. on tables without a policy.
    pub fn unchained(proposal: Proposal) -> Self {
        ChainedTransaction { proposal, agreements: Vec::new() }
    }

    pub fn signers(&self) -> Vec<OrgId> {
        self.agreements.iter().map(|a| a.org.clone()).collect()
    }
}

/// Per-table agreement policies shared by all organizations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicySet {
    by_table: BTreeMap<String, BTreeSet<OrgId>>,
}

impl PolicySet {
    pub fn new(policies: impl IntoIterator<Item = AgreementPolicy>) -> Self {
        let mut by_table: BTreeMap<String, BTreeSet<OrgId>> = BTreeMap::new();
        for p in policies {
            by_table.entry(p.table.to_lowercase()).or_default().extend(p.required_orgs);
        }
        PolicySet { by_table }
    }

    /// Union of the required organizations over every table `sql` touches.
    /// `CREATE TABLE` requires no one: schemas are bootstrapped in consent.
    /// Unparsable SQL requires no one: it fails at execution anyway.
    pub fn required_for(&self, sql: &str) -> BTreeSet<OrgId> {
        match parse_transaction(sql) {
            Ok(stmts) => stmts
                .iter()
                .filter(|s| !matches!(s, Statement::CreateTable(_)))
                .filter_map(|s| self.by_table.get(s.table()))
                .flat_map(|orgs| orgs.iter().cloned())
                .collect(),
            Err(_) => BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_table.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgreementOutcome {
    Chained(ChainedTransaction),
    /// `dissenting` answered no (or with an invalid agreement); `timed_out` never answered.
    Rejected { dissenting: Vec<OrgId>, timed_out: Vec<OrgId> },
}

/// How a client reaches the organizations' agreement services.
pub trait AgreementService {
    /// `None` when the organization cannot be reached in time.
    fn request_agreement(&self, org: &str, proposal: &Proposal) -> Option<Agreement>;
}

/// Asks every required organization; any no, invalid answer or timeout rejects.
pub fn collect_agreements(
    proposal: Proposal,
    policies: &PolicySet,
    registry: &KeyRegistry,
    service: &dyn AgreementService,
) -> AgreementOutcome {
    let digest = proposal.digest();
    let mut agreements = Vec::new();
    let mut dissenting = Vec::new();
    let mut timed_out = Vec::new();
    for org in policies.required_for(&proposal.sql) {
        match service.request_agreement(&org, &proposal) {
            Some(a) if a.org == org && a.txn_digest == digest && a.verdict && a.verify(registry) => agreements.push(a),
            Some(_) => dissenting.push(org),
            None => timed_out.push(org),
        }
    }
    if dissenting.is_empty() && timed_out.is_empty() {
        AgreementOutcome::Chained(ChainedTransaction { proposal, agreements })
    } else {
        AgreementOutcome::Rejected { dissenting, timed_out }
    }
}

/// True iff the client signature and a valid yes-agreement from every
/// required organization cover this exact transaction.
pub fn verify_chained_transaction(ct: &ChainedTransaction, policies: &PolicySet, registry: &KeyRegistry) -> bool {
    if !ct.proposal.verify(registry) {
        return false;
    }
    let digest = ct.proposal.digest();
    policies.required_for(&ct.proposal.sql).iter().all(|org| {
        ct.agreements
            .iter()
            .any(|a| &a.org == org && a.txn_digest == digest && a.verdict && a.verify(registry))
    })
}

/// An organization's side of the agreement phase.
#[derive(Debug, Clone, Default)]
pub struct AgreementEvaluator {
    predicates: Vec<AgreementPredicate>,
}

impl AgreementEvaluator {
    pub fn new(predicates: Vec<AgreementPredicate>) -> Self {
        AgreementEvaluator { predicates }
    }

    pub fn predicates(&self) -> &[AgreementPredicate] {
        &self.predicates
    }

    /// Yes iff every predicate holds for every row the transaction supplies
    /// to the predicate's table. Unparsable SQL is refused.
    pub fn decide(&self, sql: &str, engine: &Engine) -> bool {
        let Ok(stmts) = parse_transaction(sql) else {
            return false;
        };
        self.predicates.iter().all(|p| transaction_fields(&stmts, &p.table).iter().all(|f| p.evaluate(f, engine)))
    }

    pub fn respond(&self, org: &str, key: &KeyPair, proposal: &Proposal, engine: &Engine) -> Agreement {
        Agreement::sign(key, org, proposal.digest(), self.decide(&proposal.sql, engine))
    }
}
