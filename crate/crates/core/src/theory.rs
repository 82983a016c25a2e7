//! Closed-form predictions of the unconstrained attack's profile error, and
//! the input autocorrelation matrix with its rank-one-update inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixsim::{MixConfig, MixKind};
use crate::population::{uniformity_stats, UserPopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Full expression in frequencies and profile uniformity.
    Exact,
    /// Leading term only, assuming `1/f_i >> 1` and `u_i ≈ 1`.
    RoughApprox,
}

/// Predicted error for one sender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ProfileMse {
    Finite(f64),
    /// The sender never writes (`f_i = 0`), so the profile cannot be learnt.
    Unidentifiable,
}

impl ProfileMse {
    pub fn value(&self) -> Option<f64> {
        match self {
            ProfileMse::Finite(v) => Some(*v),
            ProfileMse::Unidentifiable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePrediction {
    pub mse_profile: Vec<ProfileMse>,
    /// `(1/N²) Σ_i MSE_i`; `None` if any sender is unidentifiable.
    pub mse_transition: Option<f64>,
    pub regime: Regime,
    pub mix_kind: MixKind,
    pub alpha_q: f64,
    pub alpha_r: f64,
    /// Extra rounds factor `(2-α)/α` a pool needs to match a threshold mix.
    pub round_penalty: f64,
    /// `(1-α)/α`, in rounds.
    pub mean_delay: f64,
}

/// `α/(2-α)`
pub fn alpha_q(alpha: f64) -> f64 {
    alpha / (2.0 - alpha)
}

/// `α(2-α) / (2 - α(2-α))`
pub fn alpha_r(alpha: f64) -> f64 {
    let s = alpha * (2.0 - alpha);
    s / (2.0 - s)
}

fn check_inputs(f: &[f64], u: &[f64], t: u32, rho: usize) -> Result<()> {
    if f.is_empty() || f.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} uniformity values", f.len()),
            found: u.len().to_string(),
        });
    }
    if t == 0 || rho == 0 {
        return Err(Error::invalid("t and rho must be at least 1"));
    }
    if f.iter().any(|x| !(0.0..=1.0).contains(x)) || u.iter().any(|x| !(0.0..1.0).contains(x)) {
        return Err(Error::invalid(
            "frequencies must lie in [0,1] and uniformity in [0,1)",
        ));
    }
    Ok(())
}

fn assemble(
    f: &[f64],
    per_user: impl Fn(f64, f64) -> f64,
    u: &[f64],
    regime: Regime,
    mix_kind: MixKind,
    alpha: f64,
) -> MsePrediction {
    let mse_profile: Vec<ProfileMse> = f
        .iter()
        .zip(u)
        .map(|(&fi, &ui)| {
            if fi > 0.0 {
                ProfileMse::Finite(per_user(1.0 / fi, ui))
            } else {
                ProfileMse::Unidentifiable
            }
        })
        .collect();
    let n = f.len() as f64;
    let mse_transition = mse_profile
        .iter()
        .map(ProfileMse::value)
        .sum::<Option<f64>>()
        .map(|s| s / (n * n));
    MsePrediction {
        mse_profile,
        mse_transition,
        regime,
        mix_kind,
        alpha_q: alpha_q(alpha),
        alpha_r: alpha_r(alpha),
        round_penalty: (2.0 - alpha) / alpha,
        mean_delay: (1.0 - alpha) / alpha,
    }
}

/// Threshold-mix prediction:
///
/// `MSE_i ≈ (1/ρ) [ (1/f_i - 1)(1 - 1/t) ū + (1/f_i)(u_i/t) ]`
///
/// or `(1/f_i)/ρ` in the rough regime.
pub fn predict_mse_threshold(
    f: &[f64],
    u: &[f64],
    u_bar: f64,
    t: u32,
    rho: usize,
    regime: Regime,
) -> Result<MsePrediction> {
    check_inputs(f, u, t, rho)?;
    let (t, rho) = (t as f64, rho as f64);
    let per_user = move |inv_f: f64, ui: f64| match regime {
        Regime::Exact => ((inv_f - 1.0) * (1.0 - 1.0 / t) * u_bar + inv_f / t * ui) / rho,
        Regime::RoughApprox => inv_f / rho,
    };
    Ok(assemble(f, per_user, u, regime, MixKind::Threshold, 1.0))
}

/// Binomial pool prediction:
///
/// `MSE_i ≈ (1/ρ) { (1/f_i - 1) [ ū (1/α_r - 1/t) + (1/α_q - 1/α_r) ] + (1/f_i)(u_i/t) }`
///
/// or `(1/f_i)/ρ · (2-α)/α` in the rough regime. Reduces to the threshold
/// prediction at `α = 1`.
pub fn predict_mse_pool(
    f: &[f64],
    u: &[f64],
    u_bar: f64,
    t: u32,
    rho: usize,
    alpha: f64,
    regime: Regime,
) -> Result<MsePrediction> {
    check_inputs(f, u, t, rho)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} not in (0, 1]")));
    }
    let (t, rho) = (t as f64, rho as f64);
    let (aq, ar) = (alpha_q(alpha), alpha_r(alpha));
    let penalty = (2.0 - alpha) / alpha;
    let per_user = move |inv_f: f64, ui: f64| match regime {
        Regime::Exact => {
            ((inv_f - 1.0) * (u_bar * (1.0 / ar - 1.0 / t) + (1.0 / aq - 1.0 / ar))
                + inv_f / t * ui)
                / rho
        }
        Regime::RoughApprox => inv_f / rho * penalty,
    };
    Ok(assemble(
        f,
        per_user,
        u,
        regime,
        MixKind::BinomialPool,
        alpha,
    ))
}

/// Prediction for a population observed through `config` for `rho` rounds.
pub fn predict_for_population(
    pop: &UserPopulation,
    config: &MixConfig,
    rho: usize,
    regime: Regime,
) -> Result<MsePrediction> {
    let stats = uniformity_stats(pop);
    let f: Vec<f64> = pop.frequencies().iter().copied().collect();
    match config.kind {
        MixKind::Threshold => {
            predict_mse_threshold(&f, &stats.u, stats.u_bar, config.t, rho, regime)
        }
        MixKind::BinomialPool => predict_mse_pool(
            &f,
            &stats.u,
            stats.u_bar,
            config.t,
            rho,
            config.alpha,
            regime,
        ),
    }
}

/// Input autocorrelation `R_x = t [diag(f) + (t-1) f fᵀ]` and its inverse
/// `R_x⁻¹ = (1/t) [diag(f)⁻¹ - (1 - 1/t) 1 1ᵀ]`.
///
/// Panics if the product of the two deviates from the identity by more than
/// 1e-10 (relative to the largest entry of the inverse).
pub fn input_autocorr_inverse(f: &[f64], t: u32) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if t == 0 {
        return Err(Error::invalid("t must be at least 1"));
    }
    if let Some(index) = f.iter().position(|&x| x <= 0.0) {
        return Err(Error::SingularFrequency { index });
    }
    let n = f.len();
    let t = t as f64;
    let fv = DVector::from_column_slice(f);
    let mut rx = &fv * fv.transpose() * ((t - 1.0) * t);
    let mut inv = DMatrix::from_element(n, n, -(1.0 - 1.0 / t) / t);
    for i in 0..n {
        rx[(i, i)] += t * f[i];
        inv[(i, i)] += 1.0 / (t * f[i]);
    }
    let err = (&rx * &inv - DMatrix::identity(n, n)).amax();
    assert!(
        err <= 1e-10 * inv.amax().max(1.0),
        "autocorrelation inverse check failed: {err}"
    );
    Ok((rx, inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zipf_u(k: usize) -> f64 {
        let h: f64 = (1..=k).map(|i| 1.0 / i as f64).sum();
        let s: f64 = (1..=k).map(|i| 1.0 / (i * i) as f64).sum();
        1.0 - s / (h * h)
    }

    #[test]
    fn threshold_examples() {
        let p =
            predict_mse_threshold(&[0.5, 0.5], &[0.5, 0.5], 0.5, 1, 1000, Regime::Exact).unwrap();
        for m in &p.mse_profile {
            assert!((m.value().unwrap() - 0.001).abs() < 1e-15);
        }

        let u = zipf_u(25);
        let f = vec![0.01; 100];
        let uu = vec![u; 100];
        let p = predict_mse_threshold(&f, &uu, u, 10, 10_000, Regime::Exact).unwrap();
        let mi = p.mse_profile[0].value().unwrap();
        assert!((mi - 8.82e-3).abs() < 5e-6, "{mi}");
        assert!((p.mse_transition.unwrap() - 8.82e-5).abs() < 5e-8);

        let p = predict_mse_threshold(&[0.5, 0.5], &[0.0, 0.0], 0.0, 3, 10, Regime::Exact).unwrap();
        assert!(p.mse_profile.iter().all(|m| m.value() == Some(0.0)));
    }

    #[test]
    fn pool_examples() {
        let u = zipf_u(25);
        let f = vec![0.01; 100];
        let uu = vec![u; 100];
        let p = predict_mse_pool(&f, &uu, u, 10, 10_000, 0.5, Regime::Exact).unwrap();
        assert!((p.alpha_q - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.alpha_r - 0.6).abs() < 1e-15);
        // 99 (ū·1.5667 + 1.3333)/1e4 + 100·ū/10/1e4
        let mi = p.mse_profile[0].value().unwrap();
        assert!((mi - 2.789e-2).abs() < 5e-6, "{mi}");

        let rough =
            predict_mse_pool(&[0.01], &[0.9], 0.9, 10, 10_000, 0.5, Regime::RoughApprox).unwrap();
        assert!((rough.mse_profile[0].value().unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(rough.round_penalty, 3.0);
        assert_eq!(rough.mean_delay, 1.0);
    }

    #[test]
    fn zero_frequency_is_unidentifiable() {
        let p = predict_mse_threshold(&[1.0, 0.0], &[0.3, 0.3], 0.3, 2, 10, Regime::Exact).unwrap();
        assert_eq!(p.mse_profile[1], ProfileMse::Unidentifiable);
        assert!(p.mse_profile[0].value().is_some());
        assert_eq!(p.mse_transition, None);
    }

    #[test]
    fn autocorr_examples() {
        let (rx, inv) = input_autocorr_inverse(&[0.5, 0.5], 2).unwrap();
        assert_eq!(rx, DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]));
        assert_eq!(
            inv,
            DMatrix::from_row_slice(2, 2, &[0.75, -0.25, -0.25, 0.75])
        );

        let f = [0.2, 0.3, 0.5];
        let (rx, inv) = input_autocorr_inverse(&f, 1).unwrap();
        assert_eq!(rx, DMatrix::from_diagonal(&DVector::from_column_slice(&f)));
        for i in 0..3 {
            assert!((inv[(i, i)] - 1.0 / f[i]).abs() < 1e-15);
        }

        assert!(matches!(
            input_autocorr_inverse(&[0.5, 0.0, 0.5], 3),
            Err(Error::SingularFrequency { index: 1 })
        ));
    }

    proptest! {
        #[test]
        fn scales_as_inverse_rho(
            f in proptest::collection::vec(0.01f64..1.0, 1..10),
            u in 0.0f64..0.99, t in 1u32..30, rho in 1usize..100_000, alpha in 0.01f64..=1.0
        ) {
            let s: f64 = f.iter().sum();
            let f: Vec<f64> = f.iter().map(|x| x / s).collect();
            let uu = vec![u; f.len()];
            let a = predict_mse_pool(&f, &uu, u, t, rho, alpha, Regime::Exact).unwrap();
            let b = predict_mse_pool(&f, &uu, u, t, 2 * rho, alpha, Regime::Exact).unwrap();
            let th = predict_mse_threshold(&f, &uu, u, t, rho, Regime::Exact).unwrap();
            for ((x, y), z) in a.mse_profile.iter().zip(&b.mse_profile).zip(&th.mse_profile) {
                let (x, y, z) = (x.value().unwrap(), y.value().unwrap(), z.value().unwrap());
                prop_assert!((x - 2.0 * y).abs() <= 1e-12 * x.abs().max(1e-300));
                prop_assert!(x >= z * (1.0 - 1e-12));
            }
            prop_assert!(a.alpha_q <= a.alpha_r + 1e-15 && a.alpha_r <= 1.0 + 1e-15);
            prop_assert!(a.alpha_q > 0.0);
        }

        #[test]
        fn pool_at_alpha_one_is_threshold(
            f in proptest::collection::vec(0.01f64..1.0, 1..10),
            u in proptest::collection::vec(0.0f64..0.99, 10), t in 1u32..30, rho in 1usize..10_000
        ) {
            let s: f64 = f.iter().sum();
            let f: Vec<f64> = f.iter().map(|x| x / s).collect();
            let u = &u[..f.len()];
            let ub: f64 = f.iter().zip(u).map(|(a, b)| a * b).sum();
            let a = predict_mse_pool(&f, u, ub, t, rho, 1.0, Regime::Exact).unwrap();
            let b = predict_mse_threshold(&f, u, ub, t, rho, Regime::Exact).unwrap();
            for (x, y) in a.mse_profile.iter().zip(&b.mse_profile) {
                let (x, y) = (x.value().unwrap(), y.value().unwrap());
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * y.abs());
            }
        }

        #[test]
        fn autocorr_identity(f in proptest::collection::vec(0.001f64..1.0, 1..60), t in 1u32..50) {
            let s: f64 = f.iter().sum();
            let f: Vec<f64> = f.iter().map(|x| x / s).collect();
            let (rx, inv) = input_autocorr_inverse(&f, t).unwrap();
            let n = f.len();
            prop_assert!((rx * inv - DMatrix::identity(n, n)).amax() <= 1e-10);
        }
    }
}
