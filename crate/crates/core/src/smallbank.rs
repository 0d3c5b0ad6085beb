//! Smallbank workload: checking and savings accounts, four transaction types.
//!
//! Account ids are 1-based ranks, so under the skewed distribution account 1
//! is the hottest row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

pub const CREATE_CHECKING: &str = "CREATE TABLE checking (custid INT PRIMARY KEY, bal DECIMAL(12,2) CHECK (bal >= 0))";
pub const CREATE_SAVINGS: &str = "CREATE TABLE savings (custid INT PRIMARY KEY, bal DECIMAL(12,2) CHECK (bal >= 0))";

/// Rows per bootstrap INSERT.
pub const BOOTSTRAP_BATCH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AccountDistribution {
    Uniform,
    /// Probability of rank `r` proportional to `(v + r - 1)^-s`.
    Zipf { s: f64, v: f64 },
}

impl Default for AccountDistribution {
    fn default() -> Self {
        AccountDistribution::Zipf { s: 1.1, v: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallbankConfig {
    pub num_users: u32,
    pub distribution: AccountDistribution,
    /// Transactions per client batch.
    pub fire_rate: usize,
    pub clients: usize,
    /// Initial balances are drawn uniformly from this range, in whole units.
    pub min_balance: u32,
    pub max_balance: u32,
    /// Largest transferred amount, in thousandths.
    pub max_amount_milli: u32,
}

impl Default for SmallbankConfig {
    fn default() -> Self {
        SmallbankConfig {
            num_users: 10_000,
            distribution: AccountDistribution::default(),
            fire_rate: 4096,
            clients: 3,
            min_balance: 10_000,
            max_balance: 50_000,
            max_amount_milli: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallbankTxn {
    TransactSavings { custid: u32, milli: u32 },
    DepositChecking { custid: u32, milli: u32 },
    SendPayment { from: u32, to: u32, milli: u32 },
    WriteCheck { custid: u32, milli: u32 },
}

/// Amount in thousandths rendered with three decimals.
fn amount(milli: u32) -> String {
    format!("{}.{:03}", milli / 1000, milli % 1000)
}

impl SmallbankTxn {
    pub fn to_sql(&self) -> String {
        match *self {
            SmallbankTxn::TransactSavings { custid, milli } => {
                format!("UPDATE savings SET bal = bal + {} WHERE custid = {custid}", amount(milli))
            }
            SmallbankTxn::DepositChecking { custid, milli } => {
                format!("UPDATE checking SET bal = bal + {} WHERE custid = {custid}", amount(milli))
            }
            SmallbankTxn::SendPayment { from, to, milli } => format!(
                "UPDATE checking SET bal = bal - {a} WHERE custid = {from}; UPDATE checking SET bal = bal + {a} WHERE custid = {to}",
                a = amount(milli)
            ),
            SmallbankTxn::WriteCheck { custid, milli } => {
                format!("UPDATE checking SET bal = bal - {} WHERE custid = {custid}", amount(milli))
            }
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SmallbankError {
    #[error("invalid workload configuration: {0}")]
    Config(String),
}

enum Picker {
    Uniform(u32),
    Zipf { dist: Zipf<f64>, shift: u32, n: u32 },
}

impl Picker {
    fn pick(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            Picker::Uniform(n) => rng.random_range(1..=*n),
            // Ranks are drawn over an extended support and shifted down by v - 1,
            // rejecting the head that falls below rank 1.
            Picker::Zipf { dist, shift, n } => loop {
                let k = dist.sample(rng) as u32;
                if k > *shift && k - shift <= *n {
                    return k - shift;
                }
            },
        }
    }
}

/// Seeded stream of Smallbank transactions.
pub struct SmallbankGenerator {
    cfg: SmallbankConfig,
    rng: ChaCha8Rng,
    picker: Picker,
}

impl SmallbankGenerator {
    pub fn new(cfg: SmallbankConfig, seed: u64) -> Result<Self, SmallbankError> {
        if cfg.num_users == 0 {
            return Err(SmallbankError::Config("num_users must be positive".into()));
        }
        if cfg.min_balance > cfg.max_balance || cfg.max_amount_milli == 0 {
            return Err(SmallbankError::Config("empty balance or amount range".into()));
        }
        let picker = match cfg.distribution {
            AccountDistribution::Uniform => Picker::Uniform(cfg.num_users),
            AccountDistribution::Zipf { s, v } => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(SmallbankError::Config("zipf v must be an integer >= 1".into()));
                }
                let shift = v as u32 - 1;
                let dist = Zipf::new((cfg.num_users + shift) as f64, s)
                    .map_err(|e| SmallbankError::Config(format!("zipf: {e}")))?;
                Picker::Zipf { dist, shift, n: cfg.num_users }
            }
        };
        Ok(SmallbankGenerator { cfg, rng: ChaCha8Rng::seed_from_u64(seed), picker })
    }

    pub fn config(&self) -> &SmallbankConfig {
        &self.cfg
    }

    pub fn account(&mut self) -> u32 {
        self.picker.pick(&mut self.rng)
    }

    /// Table creation plus INSERT batches with seeded random balances.
    pub fn bootstrap(&mut self) -> Vec<String> {
        let mut out = vec![CREATE_CHECKING.to_string(), CREATE_SAVINGS.to_string()];
        for table in ["checking", "savings"] {
            let ids: Vec<u32> = (1..=self.cfg.num_users).collect();
            for chunk in ids.chunks(BOOTSTRAP_BATCH) {
                let rows: Vec<String> = chunk
                    .iter()
                    .map(|id| {
                        let cents = self.rng.random_range(self.cfg.min_balance * 100..=self.cfg.max_balance * 100);
                        format!("({id}, {}.{:02})", cents / 100, cents % 100)
                    })
                    .collect();
                out.push(format!("INSERT INTO {table} (custid, bal) VALUES {}", rows.join(", ")));
            }
        }
        out
    }

    pub fn next_txn(&mut self) -> SmallbankTxn {
        let milli = self.rng.random_range(1..=self.cfg.max_amount_milli);
        match self.rng.random_range(0..4) {
            0 => SmallbankTxn::TransactSavings { custid: self.account(), milli },
            1 => SmallbankTxn::DepositChecking { custid: self.account(), milli },
            2 => SmallbankTxn::SendPayment { from: self.account(), to: self.account(), milli },
            _ => SmallbankTxn::WriteCheck { custid: self.account(), milli },
        }
    }

    pub fn take_sql(&mut self, count: usize) -> Vec<String> {
        (0..count).map(|_| self.next_txn().to_sql()).collect()
    }
}

/// Bootstrap followed by `txns` random transactions.
pub fn generate_workload(cfg: &SmallbankConfig, seed: u64, txns: usize) -> Result<Vec<String>, SmallbankError> {
    let mut generator = SmallbankGenerator::new(cfg.clone(), seed)?;
    let mut out = generator.bootstrap();
    out.extend(generator.take_sql(txns));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_streams_repeat() {
        let cfg = SmallbankConfig { num_users: 500, ..Default::default() };
        assert_eq!(generate_workload(&cfg, 9, 300).unwrap(), generate_workload(&cfg, 9, 300).unwrap());
        assert_ne!(generate_workload(&cfg, 9, 300).unwrap(), generate_workload(&cfg, 10, 300).unwrap());
    }

    #[test]
    fn bootstrap_batches_cover_every_account() {
        let cfg = SmallbankConfig { num_users: 250, ..Default::default() };
        let boot = SmallbankGenerator::new(cfg, 1).unwrap().bootstrap();
        assert_eq!(boot.len(), 2 + 2 * 3);
        let engine = crate::sql::Engine::default();
        for sql in &boot {
            assert!(engine.execute_sql(sql), "{sql}");
        }
        assert_eq!(engine.row_count("checking"), Some(250));
        assert_eq!(engine.row_count("savings"), Some(250));
    }

    #[test]
    fn rendered_sql_parses() {
        let mut g = SmallbankGenerator::new(SmallbankConfig::default(), 3).unwrap();
        for _ in 0..200 {
            let sql = g.next_txn().to_sql();
            crate::sql::parse_transaction(&sql).unwrap();
        }
        assert_eq!(amount(1), "0.001");
        assert_eq!(amount(12345), "12.345");
    }

    /// Zipf(s) probability of rank `r` among `n`.
    fn zipf_pmf(r: u32, n: u32, s: f64) -> f64 {
        let norm: f64 = (1..=n).map(|k| (k as f64).powf(-s)).sum();
        (r as f64).powf(-s) / norm
    }

    #[test]
    fn zipf_frequencies_follow_pmf() {
        let n = 10_000;
        let cfg = SmallbankConfig { num_users: n, ..Default::default() };
        let mut g = SmallbankGenerator::new(cfg, 42).unwrap();
        let draws = 200_000;
        let mut counts = vec![0u64; n as usize + 1];
        for _ in 0..draws {
            counts[g.account() as usize] += 1;
        }
        assert!(counts[1] > counts[100]);
        // Chi-square over ranks 1..=10 plus the tail bucket, 10 degrees of freedom.
        let mut chi2 = 0.0;
        let mut head_p = 0.0;
        for r in 1..=10u32 {
            let p = zipf_pmf(r, n, 1.1);
            head_p += p;
            let expected = p * draws as f64;
            chi2 += (counts[r as usize] as f64 - expected).powi(2) / expected;
        }
        let tail_expected = (1.0 - head_p) * draws as f64;
        let tail: u64 = counts[11..].iter().sum();
        chi2 += (tail as f64 - tail_expected).powi(2) / tail_expected;
        // 99.9th percentile of chi-square with 10 degrees of freedom.
        assert!(chi2 < 29.59, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_draws_stay_in_range() {
        let cfg = SmallbankConfig { num_users: 7, distribution: AccountDistribution::Uniform, ..Default::default() };
        let mut g = SmallbankGenerator::new(cfg, 5).unwrap();
        let mut seen = [false; 8];
        for _ in 0..500 {
            seen[g.account() as usize] = true;
        }
        assert!(!seen[0] && seen[1..].iter().all(|s| *s));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SmallbankConfig { num_users: 0, ..Default::default() };
        assert!(SmallbankGenerator::new(bad, 1).is_err());
        let bad = SmallbankConfig { distribution: AccountDistribution::Zipf { s: 1.1, v: 0.5 }, ..Default::default() };
        assert!(SmallbankGenerator::new(bad, 1).is_err());
    }
}
