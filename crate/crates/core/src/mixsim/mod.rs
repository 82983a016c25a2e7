//! Round-by-round simulation of threshold and binomial pool mixes.

mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::UserPopulation;
use crate::seed::{stream_rng, Stream};

pub use trace::{Counts, MessageRecord, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKind {
    Threshold,
    BinomialPool,
}

impl fmt::Display for MixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixKind::Threshold => "threshold",
            MixKind::BinomialPool => "binomial_pool",
        })
    }
}

impl FromStr for MixKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(MixKind::Threshold),
            "binomial_pool" | "pool" => Ok(MixKind::BinomialPool),
            _ => Err(Error::invalid(format!("unknown mix kind '{s}'"))),
        }
    }
}

/// Mix parameters. For a threshold mix `alpha` is treated as 1 and `m` as 0
/// regardless of the stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    pub kind: MixKind,
    /// Messages collected per round.
    pub t: u32,
    /// Per-round departure probability of each pooled message.
    pub alpha: f64,
    /// Messages already in the pool when observation starts.
    pub m: u32,
    /// Probability that an initial pool message belongs to each sender.
    pub pool_prior: Option<Vec<f64>>,
}

impl MixConfig {
    pub fn threshold(t: u32) -> Self {
        MixConfig {
            kind: MixKind::Threshold,
            t,
            alpha: 1.0,
            m: 0,
            pool_prior: None,
        }
    }

    pub fn pool(t: u32, alpha: f64) -> Self {
        MixConfig {
            kind: MixKind::BinomialPool,
            t,
            alpha,
            m: 0,
            pool_prior: None,
        }
    }

    pub fn with_initial_pool(mut self, m: u32, prior: Vec<f64>) -> Self {
        self.m = m;
        self.pool_prior = Some(prior);
        self
    }

    pub fn effective_alpha(&self) -> f64 {
        match self.kind {
            MixKind::Threshold => 1.0,
            MixKind::BinomialPool => self.alpha,
        }
    }

    pub fn effective_m(&self) -> u32 {
        match self.kind {
            MixKind::Threshold => 0,
            MixKind::BinomialPool => self.m,
        }
    }

    pub fn validate(&self, n_senders: usize) -> Result<()> {
        if self.t == 0 {
            return Err(Error::invalid("threshold t must be at least 1"));
        }
        if self.kind == MixKind::Threshold {
            return Ok(());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha {} not in (0, 1]",
                self.alpha
            )));
        }
        if self.m > 0 {
            let prior = self
                .pool_prior
                .as_ref()
                .ok_or_else(|| Error::invalid("pool_prior required when m > 0"))?;
            if prior.len() != n_senders {
                return Err(Error::DimensionMismatch {
                    expected: format!("pool_prior of length {n_senders}"),
                    found: prior.len().to_string(),
                });
            }
            if prior.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("pool_prior entries must lie in [0, 1]"));
            }
            let s: f64 = prior.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("pool_prior sums to {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub record_ground_truth: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            record_ground_truth: true,
        }
    }
}

/// A message waiting in the pool.
#[derive(Debug, Clone, Copy)]
struct Pending {
    receiver: u32,
    /// Index into the ground-truth records, when recorded.
    record: Option<usize>,
}

/// Messages currently held by a pool mix, in insertion order.
#[derive(Debug, Default)]
pub struct PoolState {
    pending: Vec<Pending>,
}

impl PoolState {
    pub fn occupancy(&self) -> usize {
        self.pending.len()
    }
}

fn weighted(weights: impl IntoIterator<Item = f64>, what: &str) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// Simulate `rho` rounds with ground truth retained.
pub fn simulate_trace(
    pop: &UserPopulation,
    config: &MixConfig,
    rho: usize,
    seed: u64,
) -> Result<Trace> {
    simulate_trace_with(pop, config, rho, seed, SimOptions::default())
}

/// Simulate `rho` rounds of `config` fed by `pop`.
///
/// Each concern draws from its own substream of `seed`, so the first `k`
/// rounds of a run do not depend on `rho`, and a pool with `alpha = 1`,
/// `m = 0` reproduces the threshold output exactly.
pub fn simulate_trace_with(
    pop: &UserPopulation,
    config: &MixConfig,
    rho: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<Trace> {
    let ns = pop.n_senders();
    let nr = pop.n_receivers();
    config.validate(ns)?;
    if rho == 0 {
        return Err(Error::invalid("rho must be at least 1"));
    }

    let senders = weighted(pop.frequencies().iter().copied(), "sending frequencies")?;
    let recipients = pop
        .profiles()
        .row_iter()
        .map(|row| weighted(row.iter().copied(), "sender profile"))
        .collect::<Result<Vec<_>>>()?;

    let mut rng_senders = stream_rng(seed, Stream::Senders);
    let mut rng_recipients = stream_rng(seed, Stream::Recipients);
    let mut rng_departures = stream_rng(seed, Stream::Departures);

    let t = config.t as usize;
    let alpha = config.effective_alpha();
    let is_pool = config.kind == MixKind::BinomialPool;

    let mut u = Counts::zeros(rho, ns);
    let mut y = Counts::zeros(rho, nr);
    let mut records = opts.record_ground_truth.then(Vec::new);
    let mut pool = PoolState::default();

    let m = config.effective_m() as usize;
    if is_pool && m > 0 {
        let prior = weighted(
            config.pool_prior.as_ref().unwrap().iter().copied(),
            "pool prior",
        )?;
        let mut rng_init = stream_rng(seed, Stream::InitialPool);
        let mut initial = vec![0u32; ns];
        for _ in 0..m {
            initial[prior.sample(&mut rng_init)] += 1;
        }
        for (i, &c) in initial.iter().enumerate() {
            for _ in 0..c {
                let receiver = recipients[i].sample(&mut rng_init);
                let record = records.as_mut().map(|r: &mut Vec<MessageRecord>| {
                    r.push(MessageRecord {
                        sender: None,
                        receiver,
                        entry_round: 0,
                        exit_round: None,
                    });
                    r.len() - 1
                });
                pool.pending.push(Pending {
                    receiver: receiver as u32,
                    record,
                });
            }
        }
    }

    for r in 0..rho {
        let round = r + 1;
        let x = u.row_mut(r);
        for _ in 0..t {
            x[senders.sample(&mut rng_senders)] += 1;
        }
        let x = u.row(r).to_vec();
        let y_row = y.row_mut(r);
        for (i, &c) in x.iter().enumerate() {
            for _ in 0..c {
                let receiver = recipients[i].sample(&mut rng_recipients);
                let record = records.as_mut().map(|recs| {
                    recs.push(MessageRecord {
                        sender: Some(i),
                        receiver,
                        entry_round: round,
                        exit_round: if is_pool { None } else { Some(round) },
                    });
                    recs.len() - 1
                });
                if is_pool {
                    pool.pending.push(Pending {
                        receiver: receiver as u32,
                        record,
                    });
                } else {
                    y_row[receiver] += 1;
                }
            }
        }
        if is_pool {
            pool.pending.retain(|msg| {
                let departs = rng_departures.random::<f64>() < alpha;
                if departs {
                    y_row[msg.receiver as usize] += 1;
                    if let (Some(recs), Some(k)) = (records.as_mut(), msg.record) {
                        recs[k].exit_round = Some(round);
                    }
                }
                !departs
            });
        }
    }

    let trace = Trace {
        u,
        y,
        config: config.clone(),
        seed: Some(seed),
        ground_truth: records,
    };
    debug_assert_eq!(
        trace.final_pool_occupancy(),
        pool.occupancy() as i64,
        "message conservation"
    );
    Ok(trace)
}

/// Simulate the classic statistical-disclosure scenario: every round user 0
/// sends exactly one message drawn from `target_profile`, and the remaining
/// `t - 1` messages come from users `1..n_users` chosen uniformly, each
/// addressed to a receiver chosen uniformly among all `n_users`.
pub fn simulate_sda_scenario(
    target_profile: &[f64],
    t: u32,
    rho: usize,
    seed: u64,
) -> Result<Trace> {
    let n = target_profile.len();
    if n < 2 {
        return Err(Error::invalid("SDA scenario needs at least two users"));
    }
    if t == 0 || rho == 0 {
        return Err(Error::invalid("t and rho must be at least 1"));
    }
    let target = weighted(target_profile.iter().copied(), "target profile")?;
    let mut rng_senders = stream_rng(seed, Stream::Senders);
    let mut rng_recipients = stream_rng(seed, Stream::Recipients);

    let mut u = Counts::zeros(rho, n);
    let mut y = Counts::zeros(rho, n);
    for r in 0..rho {
        u.row_mut(r)[0] = 1;
        y.row_mut(r)[target.sample(&mut rng_recipients)] += 1;
        for _ in 1..t {
            let s = rng_senders.random_range(1..n);
            u.row_mut(r)[s] += 1;
            y.row_mut(r)[rng_recipients.random_range(0..n)] += 1;
        }
    }
    Ok(Trace {
        u,
        y,
        config: MixConfig::threshold(t),
        seed: Some(seed),
        ground_truth: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayStats {
    pub mean_delay_rounds: f64,
    /// Delay in rounds -> number of delivered messages.
    pub delay_histogram: BTreeMap<usize, u64>,
    pub delivered: u64,
}

/// Delay statistics over delivered messages that entered during the
/// observation window (initial pool messages have no entry round).
pub fn delay_stats(trace: &Trace) -> Result<DelayStats> {
    let records = trace
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::UnsupportedQuery("trace carries no ground truth".into()))?;
    let mut hist = BTreeMap::new();
    let mut total = 0u64;
    let mut delivered = 0u64;
    for rec in records.iter().filter(|r| r.sender.is_some()) {
        if let Some(exit) = rec.exit_round {
            let d = exit - rec.entry_round;
            *hist.entry(d).or_insert(0) += 1;
            total += d as u64;
            delivered += 1;
        }
    }
    let mean = if delivered == 0 {
        0.0
    } else {
        total as f64 / delivered as f64
    };
    Ok(DelayStats {
        mean_delay_rounds: mean,
        delay_histogram: hist,
        delivered,
    })
}
