//! Recursive least squares: rounds are absorbed one at a time, so a trace can
//! be processed in segments without holding the full `rho x N` regressor.

use nalgebra::{DMatrix, DVector};

use super::gram::{residual_from_normal, GramFactor};
use super::{Method, ProfileEstimate};
use crate::error::{Error, Result};
use crate::mixsim::{MixKind, Trace};
use crate::observe::DepartureFilter;

/// Running normal-equation state.
///
/// Until the accumulated Gram matrix is invertible only sums are kept. The
/// inverse is first attempted once `n_senders` rounds have been seen, and
/// after each failure the next attempt waits until the round count doubles.
/// From then on every round is a rank-one Sherman–Morrison update of the
/// inverse.
#[derive(Debug, Clone)]
pub struct RlsState {
    filter: Option<DepartureFilter>,
    gram: DMatrix<f64>,
    inverse: Option<DMatrix<f64>>,
    cross: DMatrix<f64>,
    y_sq: f64,
    rounds: usize,
    next_attempt: usize,
    scratch: Vec<f64>,
}

impl RlsState {
    /// Empty state for rounds drawn from the same mix as `trace`.
    pub fn for_trace(trace: &Trace) -> Result<Self> {
        let ns = trace.n_senders();
        let nr = trace.n_receivers();
        let filter = match trace.config.kind {
            MixKind::Threshold => None,
            MixKind::BinomialPool => Some(DepartureFilter::for_trace(trace)?),
        };
        Ok(RlsState {
            filter,
            gram: DMatrix::zeros(ns, ns),
            inverse: None,
            cross: DMatrix::zeros(ns, nr),
            y_sq: 0.0,
            rounds: 0,
            next_attempt: ns.max(1),
            scratch: vec![0.0; ns],
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Absorb one round of sender counts `x` and receiver counts `y`.
    pub fn update(&mut self, x: &[u32], y: &[u32]) {
        let ns = self.gram.nrows();
        assert_eq!(x.len(), ns, "sender dimension");
        assert_eq!(y.len(), self.cross.ncols(), "receiver dimension");
        match self.filter.as_mut() {
            Some(f) => self.scratch.copy_from_slice(f.step(x)),
            None => {
                for (s, &xi) in self.scratch.iter_mut().zip(x) {
                    *s = xi as f64;
                }
            }
        }
        let a = DVector::from_column_slice(&self.scratch);
        let nz: Vec<usize> = (0..ns).filter(|&i| a[i] != 0.0).collect();

        for &i in &nz {
            for &k in &nz {
                self.gram[(i, k)] += a[i] * a[k];
            }
            for (j, &yj) in y.iter().enumerate() {
                if yj != 0 {
                    self.cross[(i, j)] += a[i] * yj as f64;
                }
            }
        }
        self.y_sq += y.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        self.rounds += 1;

        if let Some(inv) = self.inverse.as_mut() {
            if !nz.is_empty() {
                let mut k = DVector::zeros(ns);
                for &i in &nz {
                    k.axpy(a[i], &inv.column(i), 1.0);
                }
                let denom = 1.0 + a.dot(&k);
                inv.ger(-1.0 / denom, &k, &k, 1.0);
            }
        } else if self.rounds >= self.next_attempt {
            match GramFactor::new(&self.gram) {
                Ok(f) => self.inverse = Some(f.inverse()),
                Err(_) => self.next_attempt = self.rounds * 2,
            }
        }
    }

    /// Absorb every round of `trace`, continuing from the current state.
    pub fn absorb(&mut self, trace: &Trace) -> Result<()> {
        if trace.n_senders() != self.gram.nrows() || trace.n_receivers() != self.cross.ncols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.gram.nrows(), self.cross.ncols()),
                found: format!("{}x{}", trace.n_senders(), trace.n_receivers()),
            });
        }
        for r in 0..trace.rounds() {
            self.update(trace.u.row(r), trace.y.row(r));
        }
        Ok(())
    }

    /// Current estimate; the state is left untouched so absorption can
    /// continue afterwards.
    pub fn finalize(&self) -> Result<ProfileEstimate> {
        let p_hat = match &self.inverse {
            Some(inv) => inv * &self.cross,
            None => GramFactor::new(&self.gram)?.solve(&self.cross),
        };
        let residual = residual_from_normal(self.y_sq, &self.cross, &self.gram, &p_hat);
        Ok(ProfileEstimate {
            p_hat,
            method: Method::Rls,
            iterations: self.rounds,
            residual,
            converged: true,
        })
    }
}

/// Recursive least-squares attack over a whole trace.
pub fn rls(trace: &Trace) -> Result<ProfileEstimate> {
    let mut state = RlsState::for_trace(trace)?;
    state.absorb(trace)?;
    state.finalize()
}
