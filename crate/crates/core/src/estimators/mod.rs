//! Disclosure-attack estimators of the sender-profile matrix.
//!
//! All least-squares variants regress the per-round receiver counts `V`
//! (`rho x n_receivers`) on a per-round sender matrix `A` (`rho x n_senders`):
//! the observed inputs `U` for a threshold mix, or the expected pool
//! departures `Û` for a pool mix. Because the stacked system `I ⊗ A` is block
//! diagonal, every receiver column shares the same Gram matrix `AᵀA`, which
//! is factored once.

mod clsda;
mod gram;
mod rls;
mod sda;
mod simplex;

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixsim::Trace;
use crate::observe::expected_departures;

pub use clsda::{clsda, clsda_with_history, largest_eigenvalue};
pub use gram::GramFactor;
pub use rls::{rls, RlsState};
pub use sda::{sda, sda_estimate, single_message_rounds};
pub use simplex::{project_simplex, project_simplex_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lsda,
    Clsda,
    Rls,
    Sda,
    Zclip,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lsda,
        Method::Clsda,
        Method::Rls,
        Method::Sda,
        Method::Zclip,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lsda => "lsda",
            Method::Clsda => "clsda",
            Method::Rls => "rls",
            Method::Sda => "sda",
            Method::Zclip => "zclip",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Estimated transition probabilities, sender-major: `p_hat[(i, j)]`
/// estimates the probability that sender `i` writes to receiver `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimate {
    pub p_hat: DMatrix<f64>,
    pub method: Method,
    pub iterations: usize,
    /// `||V - A P̂||²_F` in squared message counts. For `zclip` this is the
    /// residual of the estimate before clipping.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Uniform,
    UnconstrainedProjected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Step size as a multiple of `1/λ_max(AᵀA)`; must lie in (0, 2).
    pub step_scale: f64,
    pub max_iter: usize,
    /// Stop once `||P_new - P_old||_F / ||P_old||_F` drops below this.
    pub tol: f64,
    pub init: Init,
    /// Add `1e-10 * trace/N` to the Gram diagonal instead of failing on
    /// rank deficiency.
    pub ridge: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step_scale: 1.0,
            max_iter: 5000,
            tol: 1e-9,
            init: Init::Uniform,
            ridge: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale < 2.0) {
            return Err(Error::invalid(format!(
                "step_scale {} not in (0, 2)",
                self.step_scale
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

/// The regression problem `V ≈ A P` extracted from a trace.
#[derive(Debug, Clone)]
pub struct Regression {
    /// `U` or `Û`, rounds x senders.
    pub a: DMatrix<f64>,
    /// `Y`, rounds x receivers.
    pub v: DMatrix<f64>,
}

impl Regression {
    pub fn from_trace(trace: &Trace) -> Result<Self> {
        if trace.rounds() == 0 {
            return Err(Error::EmptyTrace("no rounds".into()));
        }
        Ok(Regression {
            a: expected_departures(trace)?.u_hat,
            v: trace.y.to_matrix(),
        })
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.a)
    }

    pub fn cross(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.v)
    }

    pub fn residual(&self, p: &DMatrix<f64>) -> f64 {
        (&self.v - &self.a * p).norm_squared()
    }
}

pub(crate) fn factor(gram: &DMatrix<f64>, ridge: bool) -> Result<GramFactor> {
    if ridge {
        GramFactor::new_ridge(gram)
    } else {
        GramFactor::new(gram)
    }
}

/// Unconstrained least-squares disclosure attack.
pub fn lsda(trace: &Trace) -> Result<ProfileEstimate> {
    lsda_with(trace, &SolverOptions::default())
}

/// As [`lsda`]; only `opts.ridge` is consulted.
pub fn lsda_with(trace: &Trace, opts: &SolverOptions) -> Result<ProfileEstimate> {
    let reg = Regression::from_trace(trace)?;
    let (p_hat, _) = solve_unconstrained(&reg, opts.ridge)?;
    let residual = reg.residual(&p_hat);
    Ok(ProfileEstimate {
        p_hat,
        method: Method::Lsda,
        iterations: 0,
        residual,
        converged: true,
    })
}

pub(crate) fn solve_unconstrained(
    reg: &Regression,
    ridge: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gram = reg.gram();
    let f = factor(&gram, ridge)?;
    Ok((f.solve(&reg.cross()), gram))
}

/// Clip negative probabilities to zero and renormalize each sender row;
/// a row with nothing left becomes uniform.
pub fn zero_clip(est: &ProfileEstimate) -> ProfileEstimate {
    let mut p = est.p_hat.clone();
    let nr = p.ncols();
    for mut row in p.row_iter_mut() {
        row.iter_mut().for_each(|x| *x = x.max(0.0));
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / nr as f64);
        }
    }
    ProfileEstimate {
        p_hat: p,
        method: Method::Zclip,
        ..est.clone()
    }
}

impl ProfileEstimate {
    /// Text dump: one header line, then one line of `n_receivers` values per
    /// sender, each with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "estimate method={} n_senders={} n_receivers={} iterations={} residual={:.16e} converged={}",
            self.method,
            self.p_hat.nrows(),
            self.p_hat.ncols(),
            self.iterations,
            self.residual,
            self.converged
        )
        .unwrap();
        for row in self.p_hat.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty estimate file".into(),
        })?;
        let perr = |line: usize, message: String| Error::Parse {
            line: line as u64 + 1,
            message,
        };
        let mut tok = header.split_whitespace();
        if tok.next() != Some("estimate") {
            return Err(perr(0, "header must start with 'estimate'".into()));
        }
        let mut method = None;
        let (mut ns, mut nr, mut iterations, mut residual, mut converged) =
            (None, None, 0usize, 0.0f64, false);
        for kv in tok {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(0, format!("expected key=value, got '{kv}'")))?;
            let bad = || perr(0, format!("bad value for '{k}'"));
            match k {
                "method" => method = Some(v.parse::<Method>()?),
                "n_senders" => ns = Some(v.parse::<usize>().map_err(|_| bad())?),
                "n_receivers" => nr = Some(v.parse::<usize>().map_err(|_| bad())?),
                "iterations" => iterations = v.parse().map_err(|_| bad())?,
                "residual" => residual = v.parse().map_err(|_| bad())?,
                "converged" => converged = v.parse().map_err(|_| bad())?,
                _ => {}
            }
        }
        let (ns, nr) = ns
            .zip(nr)
            .ok_or_else(|| perr(0, "header missing dimensions".into()))?;
        let mut values = Vec::with_capacity(ns * nr);
        for (ln, line) in lines {
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| perr(ln, e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != nr {
                return Err(perr(
                    ln,
                    format!("expected {nr} values, found {}", row.len()),
                ));
            }
            values.extend(row);
        }
        if values.len() != ns * nr {
            return Err(Error::DimensionMismatch {
                expected: format!("{ns} rows"),
                found: format!("{}", values.len() / nr.max(1)),
            });
        }
        Ok(ProfileEstimate {
            p_hat: DMatrix::from_row_slice(ns, nr, &values),
            method: method.ok_or_else(|| perr(0, "header missing method".into()))?,
            iterations,
            residual,
            converged,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixsim::{simulate_trace, Counts, MixConfig};
    use crate::population::{gen_population, FreqDist, ProfileDist};

    pub(crate) fn trace_from(u: &[Vec<u32>], y: &[Vec<u32>], t: u32) -> Trace {
        Trace {
            u: Counts::from_rows(u).unwrap(),
            y: Counts::from_rows(y).unwrap(),
            config: MixConfig::threshold(t),
            seed: None,
            ground_truth: None,
        }
    }

    #[test]
    fn lsda_hand_solved() {
        let tr = trace_from(&[vec![1, 0], vec![0, 1]], &[vec![0, 1], vec![1, 0]], 1);
        let e = lsda(&tr).unwrap();
        assert!(
            (e.p_hat.clone() - DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.])).amax() < 1e-15
        );
        assert!(e.residual < 1e-24);

        let tr = trace_from(&[vec![2, 0], vec![1, 1]], &[vec![2, 0], vec![1, 1]], 2);
        let e = lsda(&tr).unwrap();
        assert!((e.p_hat - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn lsda_exact_fit() {
        // Y = U P with integer-valued products
        let u = DMatrix::from_row_slice(4, 3, &[2., 0., 2., 0., 4., 0., 2., 0., 0., 4., 0., 0.]);
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.25, 0.25, 0.5, 0.0, 0.5, 0.5]);
        let y = &u * &p;
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<u32>> {
            m.row_iter()
                .map(|r| r.iter().map(|v| *v as u32).collect())
                .collect()
        };
        let tr = trace_from(&rows(&u), &rows(&y), 4);
        let e = lsda(&tr).unwrap();
        assert!((e.p_hat - p).amax() < 1e-13);
    }

    #[test]
    fn lsda_singular() {
        let tr = trace_from(&[vec![1, 0], vec![2, 0]], &[vec![1], vec![2]], 1);
        match lsda(&tr) {
            Err(Error::SingularSystem {
                dimension: 1,
                size: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
        let ridge = SolverOptions {
            ridge: true,
            ..Default::default()
        };
        assert!(lsda_with(&tr, &ridge).is_ok());
    }

    #[test]
    fn normal_equation_optimality() {
        let pop = gen_population(12, 4, ProfileDist::Zipf, FreqDist::Zipf, 2).unwrap();
        for (seed, cfg) in [(1, MixConfig::threshold(6)), (2, MixConfig::pool(6, 0.4))] {
            let tr = simulate_trace(&pop, &cfg, 600, seed).unwrap();
            let e = lsda(&tr).unwrap();
            let reg = Regression::from_trace(&tr).unwrap();
            let grad = reg.a.tr_mul(&(&reg.v - &reg.a * &e.p_hat));
            let scale = reg.cross().amax();
            assert!(grad.amax() <= 1e-8 * scale.max(1.0), "{}", grad.amax());
        }
    }

    #[test]
    fn zero_clip_examples() {
        let est = |rows: &[f64], n: usize| ProfileEstimate {
            p_hat: DMatrix::from_row_slice(rows.len() / n, n, rows),
            method: Method::Lsda,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
        let z = zero_clip(&est(&[0.9, -0.1, 0.2], 3));
        assert!((z.p_hat[(0, 0)] - 9.0 / 11.0).abs() < 1e-15);
        assert_eq!(z.p_hat[(0, 1)], 0.0);
        assert!((z.p_hat[(0, 2)] - 2.0 / 11.0).abs() < 1e-15);
        assert_eq!(z.method, Method::Zclip);

        let feasible = est(&[0.25, 0.75], 2);
        assert_eq!(zero_clip(&feasible).p_hat, feasible.p_hat);

        let z = zero_clip(&est(&[-0.3, -0.7], 2));
        assert_eq!(z.p_hat.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn estimate_text_round_trip() {
        let e = ProfileEstimate {
            p_hat: DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 1.0 / 3.0, 0.0, 1e-17, 0.7]),
            method: Method::Clsda,
            iterations: 17,
            residual: 12.5,
            converged: false,
        };
        assert_eq!(ProfileEstimate::from_text(&e.to_text()).unwrap(), e);
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("pmda".parse::<Method>().is_err());
    }
}
