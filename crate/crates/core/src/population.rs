//! Synthetic user populations: sender profiles and sending frequencies.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

/// Tolerance on row and frequency sums.
pub const SUM_TOL: f64 = 1e-12;

/// Ground truth of who talks to whom and how often.
///
/// `profiles[(i, j)]` is the probability that a message from sender `i` is
/// addressed to receiver `j`; `frequencies[i]` is the probability that a
/// message entering the mix comes from sender `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPopulation {
    profiles: DMatrix<f64>,
    frequencies: DVector<f64>,
    sender_labels: Option<Vec<String>>,
    receiver_labels: Option<Vec<String>>,
}

impl UserPopulation {
    pub fn new(profiles: DMatrix<f64>, frequencies: DVector<f64>) -> Result<Self> {
        let pop = UserPopulation {
            profiles,
            frequencies,
            sender_labels: None,
            receiver_labels: None,
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn with_labels(mut self, senders: Vec<String>, receivers: Vec<String>) -> Result<Self> {
        if senders.len() != self.n_senders() || receivers.len() != self.n_receivers() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} labels", self.n_senders(), self.n_receivers()),
                found: format!("{}x{}", senders.len(), receivers.len()),
            });
        }
        self.sender_labels = Some(senders);
        self.receiver_labels = Some(receivers);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, nr) = self.profiles.shape();
        if ns == 0 || nr == 0 {
            return Err(Error::invalid(
                "population needs at least one sender and receiver",
            ));
        }
        if self.frequencies.len() != ns {
            return Err(Error::DimensionMismatch {
                expected: format!("{ns} frequencies"),
                found: self.frequencies.len().to_string(),
            });
        }
        for i in 0..ns {
            let row = self.profiles.row(i);
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::invalid(format!(
                    "profile {i} has entry {p} outside [0,1]"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(Error::invalid(format!("profile {i} sums to {s}")));
            }
        }
        if let Some(f) = self.frequencies.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::invalid(format!("frequency {f} outside [0,1]")));
        }
        let s = self.frequencies.sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("frequencies sum to {s}")));
        }
        Ok(())
    }

    pub fn n_senders(&self) -> usize {
        self.profiles.nrows()
    }

    pub fn n_receivers(&self) -> usize {
        self.profiles.ncols()
    }

    pub fn profiles(&self) -> &DMatrix<f64> {
        &self.profiles
    }

    pub fn frequencies(&self) -> &DVector<f64> {
        &self.frequencies
    }

    pub fn sender_labels(&self) -> Option<&[String]> {
        self.sender_labels.as_deref()
    }

    pub fn receiver_labels(&self) -> Option<&[String]> {
        self.receiver_labels.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileDist {
    Zipf,
    Uniform,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqDist {
    Uniform,
    Zipf,
}

impl FromStr for ProfileDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zipf" => Ok(ProfileDist::Zipf),
            "uniform" => Ok(ProfileDist::Uniform),
            "deterministic" => Ok(ProfileDist::Deterministic),
            _ => Err(Error::invalid(format!(
                "unknown profile distribution '{s}'"
            ))),
        }
    }
}

impl FromStr for FreqDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(FreqDist::Uniform),
            "zipf" => Ok(FreqDist::Zipf),
            _ => Err(Error::invalid(format!(
                "unknown frequency distribution '{s}'"
            ))),
        }
    }
}

impl fmt::Display for ProfileDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileDist::Zipf => "zipf",
            ProfileDist::Uniform => "uniform",
            ProfileDist::Deterministic => "deterministic",
        })
    }
}

impl fmt::Display for FreqDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreqDist::Uniform => "uniform",
            FreqDist::Zipf => "zipf",
        })
    }
}

/// Zipf weights `(1/k) / H_n` for ranks `k = 1..=n`.
pub fn zipf_weights(n: usize) -> Vec<f64> {
    let h: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    (1..=n).map(|k| (1.0 / k as f64) / h).collect()
}

/// Generate a square population of `n_users` users, each with `n_friends`
/// distinct contacts drawn uniformly at random (self-contacts allowed).
///
/// Contacts are ranked in sampling order; with a Zipf profile the k-th
/// sampled contact gets weight `(1/k)/H_{n_friends}`.
pub fn gen_population(
    n_users: usize,
    n_friends: usize,
    profile_dist: ProfileDist,
    freq_dist: FreqDist,
    seed: u64,
) -> Result<UserPopulation> {
    if n_users == 0 {
        return Err(Error::invalid("n_users must be at least 1"));
    }
    if n_friends == 0 {
        return Err(Error::invalid("n_friends must be at least 1"));
    }
    if n_friends > n_users {
        return Err(Error::invalid(format!(
            "n_friends ({n_friends}) exceeds n_users ({n_users})"
        )));
    }

    let weights = match profile_dist {
        ProfileDist::Zipf => zipf_weights(n_friends),
        ProfileDist::Uniform => vec![1.0 / n_friends as f64; n_friends],
        ProfileDist::Deterministic => {
            let mut w = vec![0.0; n_friends];
            w[0] = 1.0;
            w
        }
    };

    let mut rng = stream_rng(seed, Stream::Population);
    let mut profiles = DMatrix::zeros(n_users, n_users);
    for i in 0..n_users {
        let contacts = index::sample(&mut rng, n_users, n_friends);
        for (rank, j) in contacts.iter().enumerate() {
            profiles[(i, j)] = weights[rank];
        }
    }

    let frequencies = match freq_dist {
        FreqDist::Uniform => DVector::from_element(n_users, 1.0 / n_users as f64),
        FreqDist::Zipf => DVector::from_vec(zipf_weights(n_users)),
    };

    let pop = UserPopulation::new(profiles, frequencies)?;
    debug_assert!(pop.validate().is_ok());
    Ok(pop)
}

/// Per-user profile uniformity and its frequency-weighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityStats {
    /// `u_i = 1 - sum_j p_{j|i}^2`
    pub u: Vec<f64>,
    /// `sum_i f_i u_i`
    pub u_bar: f64,
}

pub fn uniformity_stats(pop: &UserPopulation) -> UniformityStats {
    let u: Vec<f64> = pop
        .profiles
        .row_iter()
        .map(|row| 1.0 - row.iter().map(|p| p * p).sum::<f64>())
        .collect();
    let u_bar = u
        .iter()
        .zip(pop.frequencies.iter())
        .map(|(u, f)| u * f)
        .sum();
    UniformityStats { u, u_bar }
}

// ---------------------------------------------------------------------------
// Population file (JSON, sparse rows)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ContactRecord {
    receiver: usize,
    prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    user: usize,
    contacts: Vec<ContactRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PopulationFile {
    n_senders: usize,
    n_receivers: usize,
    frequencies: Vec<f64>,
    profiles: Vec<ProfileRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sender_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    receiver_labels: Option<Vec<String>>,
}

impl UserPopulation {
    /// Serialize as a population document. Floats are written in shortest
    /// round-trip form, so reading the file back is lossless.
    pub fn to_json(&self) -> Result<String> {
        let profiles = self
            .profiles
            .row_iter()
            .enumerate()
            .map(|(user, row)| ProfileRecord {
                user,
                contacts: row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(receiver, &prob)| ContactRecord { receiver, prob })
                    .collect(),
            })
            .collect();
        let file = PopulationFile {
            n_senders: self.n_senders(),
            n_receivers: self.n_receivers(),
            frequencies: self.frequencies.iter().copied().collect(),
            profiles,
            sender_labels: self.sender_labels.clone(),
            receiver_labels: self.receiver_labels.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PopulationFile = serde_json::from_str(text)?;
        let mut profiles = DMatrix::zeros(file.n_senders, file.n_receivers);
        for rec in &file.profiles {
            if rec.user >= file.n_senders {
                return Err(Error::IndexOutOfRange {
                    index: rec.user,
                    size: file.n_senders,
                });
            }
            for c in &rec.contacts {
                if c.receiver >= file.n_receivers {
                    return Err(Error::IndexOutOfRange {
                        index: c.receiver,
                        size: file.n_receivers,
                    });
                }
                profiles[(rec.user, c.receiver)] = c.prob;
            }
        }
        let mut pop = UserPopulation::new(profiles, DVector::from_vec(file.frequencies))?;
        if let (Some(s), Some(r)) = (file.sender_labels, file.receiver_labels) {
            pop = pop.with_labels(s, r)?;
        }
        Ok(pop)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn harmonic(n: usize) -> f64 {
        (1..=n).map(|k| 1.0 / k as f64).sum()
    }

    #[test]
    fn deterministic_single_contact() {
        let pop = gen_population(10, 1, ProfileDist::Deterministic, FreqDist::Uniform, 3).unwrap();
        for row in pop.profiles().row_iter() {
            assert_eq!(row.iter().filter(|p| **p == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|p| **p == 0.0).count(), 9);
        }
    }

    #[test]
    fn zipf_top_contact() {
        let pop = gen_population(100, 25, ProfileDist::Zipf, FreqDist::Uniform, 1).unwrap();
        // H_25 = 3.81596, 1/H_25 = 0.26206
        let h25 = harmonic(25);
        assert!((h25 - 3.81596).abs() < 1e-5);
        for row in pop.profiles().row_iter() {
            let top = row.iter().cloned().fold(0.0, f64::max);
            assert!((top - 1.0 / h25).abs() < 1e-15);
            assert!((top - 0.26206).abs() < 1e-5);
            assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 25);
        }
    }

    #[test]
    fn uniform_frequencies() {
        let pop = gen_population(100, 5, ProfileDist::Uniform, FreqDist::Uniform, 9).unwrap();
        assert!(pop.frequencies().iter().all(|f| *f == 0.01));
    }

    #[test]
    fn zipf_frequencies() {
        let pop = gen_population(4, 2, ProfileDist::Uniform, FreqDist::Zipf, 9).unwrap();
        let h = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        assert!((pop.frequencies()[0] - 1.0 / h).abs() < 1e-15);
        assert!((pop.frequencies()[3] - 0.25 / h).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_friend_counts() {
        assert!(matches!(
            gen_population(5, 6, ProfileDist::Zipf, FreqDist::Uniform, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            gen_population(5, 0, ProfileDist::Zipf, FreqDist::Uniform, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn uniformity_examples() {
        let det = gen_population(8, 1, ProfileDist::Deterministic, FreqDist::Uniform, 0).unwrap();
        let s = uniformity_stats(&det);
        assert!(s.u.iter().all(|u| *u == 0.0));
        assert_eq!(s.u_bar, 0.0);

        let n = 7;
        let full = gen_population(n, n, ProfileDist::Uniform, FreqDist::Uniform, 0).unwrap();
        let s = uniformity_stats(&full);
        for u in &s.u {
            assert!((u - (n as f64 - 1.0) / n as f64).abs() < 1e-14);
        }

        let zipf = gen_population(30, 25, ProfileDist::Zipf, FreqDist::Zipf, 0).unwrap();
        let s = uniformity_stats(&zipf);
        // 1 - (sum k^-2)/H_25^2 with sum k^-2 = 1.60572
        let sq: f64 = (1..=25).map(|k| 1.0 / (k * k) as f64).sum();
        assert!((sq - 1.60572).abs() < 1e-5);
        let expected = 1.0 - sq / harmonic(25).powi(2);
        for u in &s.u {
            assert!((u - expected).abs() < 1e-14);
            assert!((u - 0.88973).abs() < 1e-5);
        }
        assert!((s.u_bar - expected).abs() < 1e-14);
    }

    #[test]
    fn invalid_populations_rejected() {
        let p = DMatrix::from_row_slice(1, 2, &[0.6, 0.6]);
        assert!(UserPopulation::new(p, DVector::from_vec(vec![1.0])).is_err());
        let p = DMatrix::from_row_slice(1, 2, &[1.5, -0.5]);
        assert!(UserPopulation::new(p, DVector::from_vec(vec![1.0])).is_err());
        let p = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(UserPopulation::new(p, DVector::from_vec(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn json_round_trip_rectangular() {
        let p = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.7, 0.0, 1.0, 0.0]);
        let pop = UserPopulation::new(p, DVector::from_vec(vec![0.3, 0.7]))
            .unwrap()
            .with_labels(
                vec!["a".into(), "b".into()],
                vec!["x".into(), "y".into(), "z".into()],
            )
            .unwrap();
        let back = UserPopulation::from_json(&pop.to_json().unwrap()).unwrap();
        assert_eq!(pop, back);
    }

    proptest! {
        #[test]
        fn generated_populations_are_valid_and_reproducible(
            n in 1usize..40, k in 1usize..40, seed in any::<u64>(), zipf_f in any::<bool>()
        ) {
            let k = k.min(n);
            let fd = if zipf_f { FreqDist::Zipf } else { FreqDist::Uniform };
            let a = gen_population(n, k, ProfileDist::Zipf, fd, seed).unwrap();
            let b = gen_population(n, k, ProfileDist::Zipf, fd, seed).unwrap();
            prop_assert!(a.validate().is_ok());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn uniformity_is_permutation_invariant(
            w in proptest::collection::vec(0.01f64..1.0, 1..12), rot in 0usize..12
        ) {
            let s: f64 = w.iter().sum();
            let row: Vec<f64> = w.iter().map(|x| x / s).collect();
            let mut perm = row.clone();
            let r = rot % perm.len();
            perm.rotate_left(r);
            perm.reverse();
            let n = row.len();
            let mk = |v: Vec<f64>| {
                // renormalize to absorb rounding
                let s: f64 = v.iter().sum();
                let v: Vec<f64> = v.iter().map(|x| x / s).collect();
                UserPopulation::new(DMatrix::from_row_slice(1, n, &v), DVector::from_vec(vec![1.0])).unwrap()
            };
            let a = uniformity_stats(&mk(row));
            let b = uniformity_stats(&mk(perm));
            prop_assert!((a.u[0] - b.u[0]).abs() < 1e-14);
            prop_assert!(a.u[0] >= 0.0 && a.u[0] < 1.0);
        }
    }
}
