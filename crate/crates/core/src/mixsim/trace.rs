use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{MixConfig, MixKind};
use crate::error::{Error, Result};

/// Dense row-major matrix of message counts (rounds x users).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl Counts {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Counts {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged count rows"));
        }
        Ok(Counts {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.cols + c]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&c| c as u64).sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }

    /// Keep only the rows selected by `keep`.
    pub fn select_rows(&self, keep: &[usize]) -> Counts {
        let mut out = Counts::zeros(keep.len(), self.cols);
        for (k, &r) in keep.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(r));
        }
        out
    }
}

/// Routing of one message: who sent it, who got it, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    /// `None` for messages that were already pooled before round 1.
    pub sender: Option<usize>,
    pub receiver: usize,
    /// 1-based; 0 for initial pool messages.
    pub entry_round: usize,
    /// `None` while still pooled at the end of the trace.
    pub exit_round: Option<usize>,
}

/// What the adversary sees (per-round input and output counts) plus the
/// hidden routing when the simulator kept it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// rounds x senders
    pub u: Counts,
    /// rounds x receivers
    pub y: Counts,
    pub config: MixConfig,
    pub seed: Option<u64>,
    pub ground_truth: Option<Vec<MessageRecord>>,
}

impl Trace {
    pub fn rounds(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_senders(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_receivers(&self) -> usize {
        self.y.ncols()
    }

    /// `m + rho*t - sum(Y)`; zero for threshold traces.
    pub fn final_pool_occupancy(&self) -> i64 {
        self.config.effective_m() as i64 + self.u.total() as i64 - self.y.total() as i64
    }

    /// Restrict to a subset of rounds (in the given order). Ground truth is
    /// dropped because its round indices would no longer line up.
    pub fn select_rounds(&self, keep: &[usize]) -> Trace {
        Trace {
            u: self.u.select_rows(keep),
            y: self.y.select_rows(keep),
            config: self.config.clone(),
            seed: self.seed,
            ground_truth: None,
        }
    }

    /// Append the rounds of `other` (same population and mix) after ours.
    pub fn concat(&self, other: &Trace) -> Result<Trace> {
        if self.n_senders() != other.n_senders() || self.n_receivers() != other.n_receivers() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_senders(), self.n_receivers()),
                found: format!("{}x{}", other.n_senders(), other.n_receivers()),
            });
        }
        let mut u = self.u.clone();
        u.rows += other.u.rows;
        u.data.extend_from_slice(&other.u.data);
        let mut y = self.y.clone();
        y.rows += other.y.rows;
        y.data.extend_from_slice(&other.y.data);
        Ok(Trace {
            u,
            y,
            config: self.config.clone(),
            seed: self.seed,
            ground_truth: None,
        })
    }

    /// Serialize to the line-oriented trace format:
    ///
    /// ```text
    /// trace n_senders=3 n_receivers=3 t=2 kind=threshold alpha=1 m=0 rho=2 seed=7
    /// prior 0.5 0.25 0.25            (only when m > 0)
    /// 1 in 0:1 2:1 out 1:2
    /// 2 in 1:2 out 0:1 2:1
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let cfg = &self.config;
        let seed = self.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
        writeln!(
            s,
            "trace n_senders={} n_receivers={} t={} kind={} alpha={} m={} rho={} seed={}",
            self.n_senders(),
            self.n_receivers(),
            cfg.t,
            cfg.kind,
            cfg.effective_alpha(),
            cfg.effective_m(),
            self.rounds(),
            seed
        )
        .unwrap();
        if cfg.effective_m() > 0 {
            if let Some(prior) = &cfg.pool_prior {
                s.push_str("prior");
                for p in prior {
                    write!(s, " {p}").unwrap();
                }
                s.push('\n');
            }
        }
        for r in 0..self.rounds() {
            write!(s, "{}", r + 1).unwrap();
            s.push_str(" in");
            write_sparse(&mut s, self.u.row(r));
            s.push_str(" out");
            write_sparse(&mut s, self.y.row(r));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Trace> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i as u64 + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::EmptyTrace("no header line".into()))?;
        let header = Header::parse(hline, header)?;

        let mut config = MixConfig {
            kind: header.kind,
            t: header.t,
            alpha: header.alpha,
            m: header.m,
            pool_prior: None,
        };
        let mut u = Counts::zeros(header.rho, header.n_senders);
        let mut y = Counts::zeros(header.rho, header.n_receivers);
        let mut seen = 0usize;

        for (ln, line) in lines {
            let perr = |message: String| Error::Parse { line: ln, message };
            let mut tok = line.split_whitespace();
            let first = tok.next().unwrap();
            if first == "prior" {
                let prior = tok
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| perr(format!("bad prior '{v}': {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                config.pool_prior = Some(prior);
                continue;
            }
            let round: usize = first
                .parse()
                .map_err(|_| perr(format!("bad round index '{first}'")))?;
            if round != seen + 1 || round > header.rho {
                return Err(perr(format!("unexpected round {round}")));
            }
            if tok.next() != Some("in") {
                return Err(perr("expected 'in'".into()));
            }
            let mut target = &mut u;
            let mut saw_out = false;
            for t in tok {
                if t == "out" {
                    if saw_out {
                        return Err(perr("duplicate 'out'".into()));
                    }
                    saw_out = true;
                    target = &mut y;
                    continue;
                }
                let (id, count) = t
                    .split_once(':')
                    .ok_or_else(|| perr(format!("expected user:count, got '{t}'")))?;
                let id: usize = id.parse().map_err(|_| perr(format!("bad user '{id}'")))?;
                let count: u32 = count
                    .parse()
                    .map_err(|_| perr(format!("bad count '{count}'")))?;
                if id >= target.ncols() {
                    return Err(perr(format!("user {id} out of range")));
                }
                target.row_mut(round - 1)[id] += count;
            }
            if !saw_out {
                return Err(perr("missing 'out'".into()));
            }
            seen = round;
        }
        if seen != header.rho {
            return Err(Error::EmptyTrace(format!(
                "header announces {} rounds, found {seen}",
                header.rho
            )));
        }
        config.validate(header.n_senders)?;
        Ok(Trace {
            u,
            y,
            config,
            seed: header.seed,
            ground_truth: None,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trace::from_text(&text)
    }
}

fn write_sparse(s: &mut String, row: &[u32]) {
    for (i, &c) in row.iter().enumerate().filter(|(_, c)| **c > 0) {
        write!(s, " {i}:{c}").unwrap();
    }
}

struct Header {
    n_senders: usize,
    n_receivers: usize,
    t: u32,
    kind: MixKind,
    alpha: f64,
    m: u32,
    rho: usize,
    seed: Option<u64>,
}

impl Header {
    fn parse(line_no: u64, line: &str) -> Result<Header> {
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let mut tok = line.split_whitespace();
        if tok.next() != Some("trace") {
            return Err(perr("header must start with 'trace'".into()));
        }
        let mut fields = std::collections::HashMap::new();
        for kv in tok {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, got '{kv}'")))?;
            fields.insert(k, v);
        }
        fn get<'a>(
            f: &std::collections::HashMap<&str, &'a str>,
            k: &str,
            perr: &dyn Fn(String) -> Error,
        ) -> Result<&'a str> {
            f.get(k)
                .copied()
                .ok_or_else(|| perr(format!("header missing '{k}'")))
        }
        macro_rules! num {
            ($k:expr) => {
                get(&fields, $k, &perr)?
                    .parse()
                    .map_err(|_| perr(format!("bad value for '{}'", $k)))?
            };
        }
        let seed = match get(&fields, "seed", &perr)? {
            "-" => None,
            s => Some(s.parse().map_err(|_| perr("bad seed".into()))?),
        };
        Ok(Header {
            n_senders: num!("n_senders"),
            n_receivers: num!("n_receivers"),
            t: num!("t"),
            kind: get(&fields, "kind", &perr)?
                .parse()
                .map_err(|e: Error| perr(e.to_string()))?,
            alpha: num!("alpha"),
            m: num!("m"),
            rho: num!("rho"),
            seed,
        })
    }
}
