//! The adversary's regressors: the observed input matrix `U` for a threshold
//! mix, and the expected pool departures `Û` for a binomial pool mix.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mixsim::{MixKind, Trace};

/// Lower-triangular `rho x rho` matrix with `B[r][k] = alpha (1-alpha)^(r-k)`.
pub fn convolution_matrix(alpha: f64, rho: usize) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} not in (0, 1]")));
    }
    Ok(DMatrix::from_fn(rho, rho, |r, k| {
        if r >= k {
            alpha * (1.0 - alpha).powi((r - k) as i32)
        } else {
            0.0
        }
    }))
}

/// Expected number of messages from each sender leaving the pool in each
/// round (`rho x n_senders`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedDepartures {
    pub u_hat: DMatrix<f64>,
}

/// Initial pool contribution `m * prior_i` per sender (zero when `m = 0`).
fn initial_pool_mass(trace: &Trace) -> Result<Vec<f64>> {
    let ns = trace.n_senders();
    let m = trace.config.effective_m();
    if m == 0 {
        return Ok(vec![0.0; ns]);
    }
    let prior = trace
        .config
        .pool_prior
        .as_ref()
        .ok_or_else(|| Error::invalid("pool_prior missing while m > 0"))?;
    if prior.len() != ns {
        return Err(Error::DimensionMismatch {
            expected: format!("pool_prior of length {ns}"),
            found: prior.len().to_string(),
        });
    }
    Ok(prior.iter().map(|p| m as f64 * p).collect())
}

/// Online form of the expected-departure recursion
/// `û^{r+1} = (1-alpha) û^r + alpha x^{r+1}`, seeded with the initial pool.
#[derive(Debug, Clone)]
pub struct DepartureFilter {
    alpha: f64,
    state: Vec<f64>,
    pending_initial: Option<Vec<f64>>,
}

impl DepartureFilter {
    pub fn for_trace(trace: &Trace) -> Result<Self> {
        let init = initial_pool_mass(trace)?;
        Ok(DepartureFilter {
            alpha: trace.config.effective_alpha(),
            state: vec![0.0; trace.n_senders()],
            pending_initial: Some(init),
        })
    }

    /// Feed one round of input counts and return that round's `û`.
    pub fn step(&mut self, x: &[u32]) -> &[f64] {
        let a = self.alpha;
        match self.pending_initial.take() {
            Some(init) => {
                for ((s, &xi), n0) in self.state.iter_mut().zip(x).zip(init) {
                    *s = a * (xi as f64 + n0);
                }
            }
            None => {
                for (s, &xi) in self.state.iter_mut().zip(x) {
                    *s = (1.0 - a) * *s + a * xi as f64;
                }
            }
        }
        &self.state
    }
}

/// `Û` by the linear-time recursion. A threshold trace returns `U` itself.
pub fn expected_departures(trace: &Trace) -> Result<ExpectedDepartures> {
    if trace.config.kind == MixKind::Threshold {
        return Ok(ExpectedDepartures {
            u_hat: trace.u.to_matrix(),
        });
    }
    let mut filter = DepartureFilter::for_trace(trace)?;
    let mut u_hat = DMatrix::zeros(trace.rounds(), trace.n_senders());
    for r in 0..trace.rounds() {
        let row = filter.step(trace.u.row(r));
        for (i, &v) in row.iter().enumerate() {
            u_hat[(r, i)] = v;
        }
    }
    Ok(ExpectedDepartures { u_hat })
}

/// `Û = B (U + N0)` with `B` materialized; only sensible for small `rho`.
pub fn expected_departures_dense(trace: &Trace) -> Result<ExpectedDepartures> {
    let b = convolution_matrix(trace.config.effective_alpha(), trace.rounds())?;
    let mut shifted = trace.u.to_matrix();
    if trace.rounds() > 0 {
        for (i, n0) in initial_pool_mass(trace)?.into_iter().enumerate() {
            shifted[(0, i)] += n0;
        }
    }
    Ok(ExpectedDepartures { u_hat: b * shifted })
}

impl ExpectedDepartures {
    /// Dump in the trace line format with real-valued "in" entries.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "expected_departures n_senders={} rho={}",
            self.u_hat.ncols(),
            self.u_hat.nrows()
        )
        .unwrap();
        for (r, row) in self.u_hat.row_iter().enumerate() {
            write!(s, "{} in", r + 1).unwrap();
            for (i, v) in row.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                write!(s, " {i}:{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}
