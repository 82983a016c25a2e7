use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{Method, ProfileEstimate};
use crate::mixsim::Trace;

/// Rounds in which `user` sent exactly one message.
pub fn single_message_rounds(trace: &Trace, user: usize) -> Vec<usize> {
    (0..trace.rounds())
        .filter(|&r| trace.u.get(r, user) == 1)
        .collect()
}

/// Statistical disclosure attack on user 0, who must send exactly one
/// message in every round while everyone else writes uniformly to all
/// `n_users` receivers:
///
/// `p̂_j = mean_r(y_j^r) - (t - 1) / n_users`
///
/// Estimates may be negative.
pub fn sda(trace: &Trace, t: u32, n_users: usize) -> Result<Vec<f64>> {
    if trace.rounds() == 0 {
        return Err(Error::EmptyTrace("no rounds".into()));
    }
    if n_users == 0 {
        return Err(Error::invalid("n_users must be at least 1"));
    }
    if let Some(r) = (0..trace.rounds()).find(|&r| trace.u.get(r, 0) != 1) {
        return Err(Error::InvalidScenario {
            round: r + 1,
            reason: format!(
                "user 0 sent {} messages, expected exactly 1",
                trace.u.get(r, 0)
            ),
        });
    }
    let rho = trace.rounds() as f64;
    let background = (t as f64 - 1.0) / n_users as f64;
    Ok((0..trace.n_receivers())
        .map(|j| {
            let total: u64 = (0..trace.rounds()).map(|r| trace.y.get(r, j) as u64).sum();
            total as f64 / rho - background
        })
        .collect())
}

/// [`sda`] wrapped as a one-row estimate (user 0's profile only).
pub fn sda_estimate(trace: &Trace, t: u32, n_users: usize) -> Result<ProfileEstimate> {
    let p = sda(trace, t, n_users)?;
    Ok(ProfileEstimate {
        p_hat: DMatrix::from_row_slice(1, p.len(), &p),
        method: Method::Sda,
        iterations: 0,
        residual: f64::NAN,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tests::trace_from;

    fn scenario(rho: usize, t: u32, hits_on_0: usize) -> Trace {
        // receiver 0 gets `hits_on_0` messages in total, the rest go to 1
        let u: Vec<Vec<u32>> = (0..rho).map(|_| vec![1, t - 1]).collect();
        let y: Vec<Vec<u32>> = (0..rho)
            .map(|r| {
                let h = u32::from(r < hits_on_0);
                vec![h, t - h]
            })
            .collect();
        trace_from(&u, &y, t)
    }

    #[test]
    fn closed_form_examples() {
        let p = sda(&scenario(5, 2, 5), 2, 10).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        let p = sda(&scenario(5, 2, 0), 2, 10).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        let p = sda(&scenario(5, 1, 3), 1, 10).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_scenario() {
        let tr = trace_from(&[vec![1, 1], vec![2, 0]], &[vec![1, 1], vec![2, 0]], 2);
        match sda(&tr, 2, 2) {
            Err(Error::InvalidScenario { round, .. }) => assert_eq!(round, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(single_message_rounds(&tr, 0), vec![0]);
        assert!(sda(&tr.select_rounds(&[0]), 2, 2).is_ok());
    }

    #[test]
    fn estimate_wraps_single_row() {
        let est = sda_estimate(&scenario(4, 3, 2), 3, 4).unwrap();
        assert_eq!(est.p_hat.shape(), (1, 2));
        assert_eq!(est.p_hat[(0, 0)], 0.5 - 0.5);
    }
}
