//! Empirical estimation error against a known population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ProfileEstimate;
use crate::population::UserPopulation;

fn check_dims(truth: &UserPopulation, est: &ProfileEstimate) -> Result<()> {
    let want = (truth.n_senders(), truth.n_receivers());
    if est.p_hat.shape() != want {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", want.0, want.1),
            found: format!("{}x{}", est.p_hat.nrows(), est.p_hat.ncols()),
        });
    }
    Ok(())
}

/// `Σ_j (p_{j|i} - p̂_{j|i})²` for sender `i`.
pub fn mse_profile(truth: &UserPopulation, est: &ProfileEstimate, i: usize) -> Result<f64> {
    check_dims(truth, est)?;
    if i >= truth.n_senders() {
        return Err(Error::IndexOutOfRange {
            index: i,
            size: truth.n_senders(),
        });
    }
    Ok((truth.profiles().row(i) - est.p_hat.row(i)).norm_squared())
}

/// Mean squared error over all `n_senders * n_receivers` transition
/// probabilities.
pub fn mse_transition(truth: &UserPopulation, est: &ProfileEstimate) -> Result<f64> {
    check_dims(truth, est)?;
    let n = (truth.n_senders() * truth.n_receivers()) as f64;
    Ok((truth.profiles() - &est.p_hat).norm_squared() / n)
}

pub fn mse_profiles(truth: &UserPopulation, est: &ProfileEstimate) -> Result<Vec<f64>> {
    (0..truth.n_senders())
        .map(|i| mse_profile(truth, est, i))
        .collect()
}

/// Errors aggregated over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    /// Per-sender error averaged over repetitions.
    pub mse_profile: Vec<f64>,
    /// Mean of the per-repetition transition errors.
    pub mse_transition: f64,
    pub mse_transition_std: f64,
    pub n_repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_repetition: Option<Vec<f64>>,
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl MseReport {
    /// Aggregate per-repetition per-sender errors for an
    /// `n_senders x n_receivers` system.
    pub fn from_repetitions(per_rep_profiles: &[Vec<f64>], n_receivers: usize) -> Result<Self> {
        let reps = per_rep_profiles.len();
        if reps == 0 {
            return Err(Error::invalid("no repetitions to aggregate"));
        }
        let ns = per_rep_profiles[0].len();
        if per_rep_profiles.iter().any(|p| p.len() != ns) {
            return Err(Error::invalid("repetitions disagree on sender count"));
        }
        let denom = (ns * n_receivers) as f64;
        let per_rep: Vec<f64> = per_rep_profiles
            .iter()
            .map(|p| p.iter().sum::<f64>() / denom)
            .collect();
        let mse_profile = (0..ns)
            .map(|i| per_rep_profiles.iter().map(|p| p[i]).sum::<f64>() / reps as f64)
            .collect();
        let (mean, std) = mean_std(&per_rep);
        Ok(MseReport {
            mse_profile,
            mse_transition: mean,
            mse_transition_std: std,
            n_repetitions: reps,
            per_repetition: Some(per_rep),
        })
    }
}
