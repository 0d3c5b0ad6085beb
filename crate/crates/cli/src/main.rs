use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wlc::bench::{format_table, sweep, BenchConfig};
use wlc::ledger::{verify_ledger_file, Ledger, LedgerVerdict};
use wlc::parallel::{analyze_sql, build_graph};
use wlc::recovery::replay_ledger;
use wlc::sim::{run_network, FaultScript, KeyLiteral, NetworkConfig, RowChange};
use wlc::smallbank::{generate_workload, SmallbankConfig, CREATE_CHECKING, CREATE_SAVINGS};
use wlc::sql::dump::read_dump;
use wlc::sql::engine::{Engine, QuirkConfig};
use wlc::sql::parser::parse_statement;

#[derive(Parser)]
#[command(name = "wlc", version, about = "Execute-then-agree ledger simulator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated network and write metrics, ledgers and final states.
    Run(RunArgs),
    /// Change one row of a database dump outside the protocol.
    Inject(InjectArgs),
    /// Check the hash chain of a ledger file.
    Verify {
        ledger: PathBuf,
    },
    /// Measure wall-clock throughput over block sizes and client counts.
    Bench(BenchArgs),
    /// Print the dependency graph of a block as Graphviz DOT.
    Graph(GraphArgs),
    /// Rebuild a database from its ledger and compare it with a dump.
    Recover(RecoverArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Network configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fault script (TOML), merged with faults from the configuration.
    #[arg(long)]
    faults: Option<PathBuf>,
    /// Transactions, one per line; Smallbank is generated when omitted.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    users: u32,
    #[arg(long, default_value_t = 40_960)]
    txns: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    dump: PathBuf,
    #[arg(long)]
    table: String,
    /// Primary key value of the row.
    #[arg(long)]
    key: String,
    /// `column=expression`, repeatable.
    #[arg(long = "set", required = true)]
    sets: Vec<String>,
    /// Output path; the input is overwritten when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024, 2048, 4096])]
    blocksizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [3, 6, 12, 24])]
    clients: Vec<usize>,
    #[arg(long, default_value_t = 16_384)]
    txns: usize,
    #[arg(long, default_value_t = 10_000)]
    users: u32,
    #[arg(long, default_value_t = 3)]
    orgs: usize,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    /// Delay before a published vote reaches peers.
    #[arg(long, default_value_t = 50.0)]
    latency_ms: f64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GraphArgs {
    /// Transactions, one per line.
    block: PathBuf,
    /// `CREATE TABLE` statements, one per line; Smallbank tables when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    ledger: PathBuf,
    /// Suspect database dump to compare against.
    #[arg(long)]
    dump: PathBuf,
    /// Where to write the rebuilt dump.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("--")).map(String::from).collect())
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(p) => NetworkConfig::load(p)?,
        None => NetworkConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let script = match &args.faults {
        Some(p) => FaultScript::load(p)?,
        None => FaultScript::default(),
    };
    let workload = match &args.workload {
        Some(p) => read_lines(p)?,
        None => {
            let sb = SmallbankConfig { num_users: args.users, clients: cfg.clients, ..SmallbankConfig::default() };
            generate_workload(&sb, cfg.seed, args.txns)?
        }
    };
    let report = run_network(cfg, workload, &script)?;
    fs::create_dir_all(&args.out)?;
    report.write_tsv(fs::File::create(args.out.join("metrics.tsv"))?)?;
    for (org, ledger) in &report.ledgers {
        ledger.save(args.out.join(format!("{org}.ledger")))?;
    }
    for (org, state) in &report.states {
        let mut f = fs::File::create(args.out.join(format!("{org}.dump")))?;
        wlc::sql::dump::write_dump(state, &mut f)?;
    }
    println!("ticks\t{}", report.final_tick);
    println!("blocks\t{}", report.blocks_cut);
    for org in report.ledgers.keys() {
        println!("{org}\thead {}\t{:.1} txn/tick", report.head(org), report.throughput(org));
    }
    if !report.excluded.is_empty() {
        println!("excluded\t{}", report.excluded.iter().cloned().collect::<Vec<_>>().join(","));
    }
    println!("ledgers agree\t{}", report.ledgers_agree());
    Ok(if report.completed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn load_engine(path: &Path) -> Result<Engine> {
    let engine = Engine::new(QuirkConfig::default());
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    engine.load_dump(BufReader::new(file))?;
    Ok(engine)
}

fn inject(args: InjectArgs) -> Result<ExitCode> {
    let engine = load_engine(&args.dump)?;
    let schema = engine.schema(&args.table).with_context(|| format!("no table {}", args.table))?;
    let [pk] = schema.primary_key.as_slice() else {
        bail!("table {} has a composite primary key", args.table);
    };
    let key = args.key.parse().map(KeyLiteral::Int).unwrap_or_else(|_| KeyLiteral::Text(args.key.clone()));
    let mut set = BTreeMap::new();
    for s in &args.sets {
        let (col, expr) = s.split_once('=').with_context(|| format!("expected column=expression, got `{s}`"))?;
        set.insert(col.trim().to_string(), expr.trim().to_string());
    }
    let sql = RowChange { table: args.table.clone(), key, set }.to_sql(pk);
    let result = engine.execute_external(&parse_statement(&sql)?)?;
    println!("{sql}\t{result:?}");
    fs::write(args.out.as_ref().unwrap_or(&args.dump), engine.dump())?;
    Ok(ExitCode::SUCCESS)
}

fn verify(path: &Path) -> Result<ExitCode> {
    match verify_ledger_file(path) {
        Ok(LedgerVerdict::Ok) => {
            println!("ok");
            Ok(ExitCode::SUCCESS)
        }
        Ok(LedgerVerdict::FirstBadBlock(id)) => {
            println!("first bad block\t{id}");
            Ok(ExitCode::FAILURE)
        }
        Err(e) => {
            println!("unreadable\t{e}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let base = BenchConfig {
        orgs: args.orgs,
        txns: args.txns,
        users: args.users,
        sessions: args.sessions,
        latency: Duration::from_secs_f64(args.latency_ms / 1000.0),
        seed: args.seed,
        ..BenchConfig::default()
    };
    let results = sweep(&base, &args.blocksizes, &args.clients, args.repeats)?;
    print!("{}", format_table(&results));
    Ok(ExitCode::SUCCESS)
}

fn graph(args: GraphArgs) -> Result<ExitCode> {
    let engine = Engine::new(QuirkConfig::default());
    let ddl = match &args.schema {
        Some(p) => read_lines(p)?,
        None => vec![CREATE_CHECKING.to_string(), CREATE_SAVINGS.to_string()],
    };
    for stmt in &ddl {
        engine.execute_external(&parse_statement(stmt)?)?;
    }
    let catalog = engine.catalog();
    let txns = read_lines(&args.block)?;
    let sets: Vec<_> = txns.iter().enumerate().map(|(i, sql)| analyze_sql(i, sql, &catalog).ok()).collect();
    let graph = build_graph(&sets);
    std::io::stdout().write_all(graph.to_dot(Some(&txns)).as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn recover(args: RecoverArgs) -> Result<ExitCode> {
    let ledger = Ledger::load(&args.ledger)?;
    let suspect = read_dump(BufReader::new(fs::File::open(&args.dump)?))?;
    let engine = Engine::new(QuirkConfig::default());
    let head = replay_ledger(&ledger, &engine, 0, args.sessions)?;
    let rebuilt = engine.snapshot_all();
    let mut differing = 0;
    for name in rebuilt.keys().chain(suspect.keys().filter(|k| !rebuilt.contains_key(*k))) {
        let same = match (rebuilt.get(name), suspect.get(name)) {
            (Some(a), Some(b)) => a.rows().eq(b.rows()),
            _ => false,
        };
        if !same {
            differing += 1;
            println!("differs\t{name}");
        }
    }
    println!("replayed\t{head} blocks");
    println!("differing tables\t{differing}");
    if let Some(out) = &args.out {
        fs::write(out, engine.dump())?;
    }
    Ok(if differing == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Inject(a) => inject(a),
        Command::Verify { ledger } => verify(&ledger),
        Command::Bench(a) => bench(a),
        Command::Graph(a) => graph(a),
        Command::Recover(a) => recover(a),
    }
}
