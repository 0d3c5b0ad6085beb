//! Stage-by-stage execution over `k` sessions.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};

use super::analysis::{analyze, Catalog, TxnAccessSet};
use super::graph::{build_graph, DependencyGraph};
use crate::ledger::BitList;
use crate::sql::ast::Statement;
use crate::sql::engine::{EngineFailure, TransactionExecutor};

/// A block position: the parsed statements, or `None` when the transaction
/// is not executed (it failed to parse or was not admitted).
pub type PreparedTxn = Option<Vec<Statement>>;

/// Runs every transaction in block order on a single session.
pub fn execute_serial(txns: &[PreparedTxn], exec: &dyn TransactionExecutor) -> Result<BitList, EngineFailure> {
    let mut bits = BitList::new();
    for txn in txns {
        bits.push(match txn {
            Some(stmts) => exec.execute(stmts)?,
            None => false,
        });
    }
    Ok(bits)
}

/// Runs the stages of `graph` in order. Within a stage, `k` sessions pull
/// transactions from a shared cursor; a barrier separates stages.
pub fn execute_staged(
    graph: &DependencyGraph,
    txns: &[PreparedTxn],
    exec: &dyn TransactionExecutor,
    k: usize,
) -> Result<BitList, EngineFailure> {
    assert_eq!(graph.len(), txns.len(), "graph built for a different block");
    let stages = graph.stages();
    let k = k.max(1);
    if k == 1 || stages.iter().all(|s| s.len() <= 1) {
        let mut bits: BitList = std::iter::repeat_n(false, txns.len()).collect();
        for stage in &stages {
            for &t in stage {
                if let Some(stmts) = &txns[t] {
                    bits.set(t, exec.execute(stmts)?);
                }
            }
        }
        return Ok(bits);
    }

    let results: Vec<AtomicBool> = txns.iter().map(|_| AtomicBool::new(false)).collect();
    let cursors: Vec<AtomicUsize> = stages.iter().map(|_| AtomicUsize::new(0)).collect();
    let failure: Mutex<Option<EngineFailure>> = Mutex::new(None);
    let failed = AtomicBool::new(false);
    let workers = k.min(stages.iter().map(Vec::len).max().unwrap_or(1));
    let barrier = Barrier::new(workers);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                for (stage, cursor) in stages.iter().zip(&cursors) {
                    loop {
                        let slot = cursor.fetch_add(1, Ordering::Relaxed);
                        if slot >= stage.len() || failed.load(Ordering::Relaxed) {
                            break;
                        }
                        let t = stage[slot];
                        let Some(stmts) = &txns[t] else { continue };
                        match exec.execute(stmts) {
                            Ok(ok) => results[t].store(ok, Ordering::Relaxed),
                            Err(e) => {
                                failed.store(true, Ordering::Relaxed);
                                failure.lock().unwrap().get_or_insert(e);
                            }
                        }
                    }
                    barrier.wait();
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(results.iter().map(|b| b.load(Ordering::Relaxed)).collect())
}

/// Analysis, graph construction and staged execution of one block.
pub fn execute_block(
    txns: &[PreparedTxn],
    catalog: &Catalog,
    exec: &dyn TransactionExecutor,
    k: usize,
) -> Result<(BitList, DependencyGraph), EngineFailure> {
    let sets: Vec<Option<TxnAccessSet>> =
        txns.iter().enumerate().map(|(i, t)| t.as_ref().map(|s| analyze(i, s, catalog))).collect();
    let graph = build_graph(&sets);
    let bits = execute_staged(&graph, txns, exec, k)?;
    Ok((bits, graph))
}
