//! Parameter sweeps with repetitions: generate, simulate, attack, score.
//!
//! Cell `(sweep index s, repetition k)` draws everything from the child seed
//! `derive_seed(master_seed, [s, k])`, so results do not depend on how many
//! threads run the cells or in which order they finish.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    clsda, lsda, rls, sda, single_message_rounds, zero_clip, Method, ProfileEstimate, SolverOptions,
};
use crate::metrics::{mean_std, mse_profile, mse_profiles};
use crate::mixsim::{simulate_trace_with, MixConfig, MixKind, SimOptions, Trace};
use crate::population::{gen_population, FreqDist, ProfileDist, UserPopulation};
use crate::seed::derive_seed;
use crate::theory::{predict_for_population, Regime};

/// Scenario parameters shared by every sweep cell. Defaults are the
/// baseline: 100 users with 25 Zipf-ranked contacts, uniform frequencies,
/// threshold 10, 10 000 rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseParams {
    pub n_users: usize,
    pub n_friends: usize,
    pub profile_dist: ProfileDist,
    pub freq_dist: FreqDist,
    pub kind: MixKind,
    pub t: u32,
    pub alpha: f64,
    /// Initial pool occupancy; its senders follow the sending frequencies.
    pub m: u32,
    pub rho: usize,
}

impl Default for BaseParams {
    fn default() -> Self {
        BaseParams {
            n_users: 100,
            n_friends: 25,
            profile_dist: ProfileDist::Zipf,
            freq_dist: FreqDist::Uniform,
            kind: MixKind::Threshold,
            t: 10,
            alpha: 1.0,
            m: 0,
            rho: 10_000,
        }
    }
}

impl BaseParams {
    pub fn mix_config(&self, pop: &UserPopulation) -> MixConfig {
        match self.kind {
            MixKind::Threshold => MixConfig::threshold(self.t),
            MixKind::BinomialPool => MixConfig::pool(self.t, self.alpha)
                .with_initial_pool(self.m, pop.frequencies().iter().copied().collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Rho,
    #[serde(alias = "n_users")]
    N,
    NFriends,
    T,
    Alpha,
    FreqDist,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Rho => "rho",
            SweepParam::N => "N",
            SweepParam::NFriends => "n_friends",
            SweepParam::T => "t",
            SweepParam::Alpha => "alpha",
            SweepParam::FreqDist => "freq_dist",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(u64),
    Float(f64),
    Text(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v}"),
            SweepValue::Text(v) => f.write_str(v),
        }
    }
}

impl SweepValue {
    fn as_count(&self) -> Result<u64> {
        match self {
            SweepValue::Int(v) => Ok(*v),
            _ => Err(Error::invalid(format!("expected an integer, got '{self}'"))),
        }
    }

    fn as_real(&self) -> Result<f64> {
        match self {
            SweepValue::Int(v) => Ok(*v as f64),
            SweepValue::Float(v) => Ok(*v),
            _ => Err(Error::invalid(format!("expected a number, got '{self}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<SweepValue>,
}

impl Sweep {
    /// Base parameters with the `idx`-th sweep value substituted.
    pub fn apply(&self, base: &BaseParams, idx: usize) -> Result<BaseParams> {
        let v = &self.values[idx];
        let mut p = base.clone();
        match self.param {
            SweepParam::Rho => p.rho = v.as_count()? as usize,
            SweepParam::N => p.n_users = v.as_count()? as usize,
            SweepParam::NFriends => p.n_friends = v.as_count()? as usize,
            SweepParam::T => {
                p.t = u32::try_from(v.as_count()?).map_err(|_| Error::invalid("t too large"))?
            }
            SweepParam::Alpha => {
                p.alpha = v.as_real()?;
                p.kind = MixKind::BinomialPool;
            }
            SweepParam::FreqDist => match v {
                SweepValue::Text(s) => p.freq_dist = s.parse()?,
                _ => {
                    return Err(Error::invalid(format!(
                        "freq_dist value '{v}' is not a name"
                    )))
                }
            },
        }
        Ok(p)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: BaseParams,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub include_theory: bool,
    /// Keep per-sender error vectors in the report rows.
    #[serde(default)]
    pub per_profile: bool,
    /// Measure wall time per attack; when false `wall_ms` is reported as 0.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods requested"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::invalid("sweep has no values"));
        }
        for idx in 0..self.sweep.values.len() {
            let p = self.sweep.apply(&self.base, idx)?;
            if p.rho == 0 || p.t == 0 || p.n_users == 0 {
                return Err(Error::invalid(format!(
                    "sweep value {} gives a zero rho, t or N",
                    self.sweep.values[idx]
                )));
            }
            if p.kind == MixKind::BinomialPool && !(p.alpha > 0.0 && p.alpha <= 1.0) {
                return Err(Error::invalid(format!("alpha {} not in (0, 1]", p.alpha)));
            }
            if p.n_friends == 0 || p.n_friends > p.n_users {
                return Err(Error::invalid(format!(
                    "n_friends {} invalid for N = {}",
                    p.n_friends, p.n_users
                )));
            }
        }
        self.solver.validate()
    }

    /// Read a spec from TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ExperimentSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep_param: String,
    pub sweep_value: String,
    pub method: Method,
    pub mse_p_mean: Option<f64>,
    pub mse_p_std: Option<f64>,
    pub mse_p_theory_exact: Option<f64>,
    pub mse_p_theory_rough: Option<f64>,
    /// Mean wall time per attack, milliseconds.
    pub wall_ms: f64,
    /// `ok`, or the first error message with the number of failed runs.
    pub status: String,
    /// Runs that produced an estimate.
    pub n_ok: usize,
    /// Per-sender error averaged over successful runs. For `sda` only the
    /// target (user 0) is estimated, so this holds a single value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_profile: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub spec: ExperimentSpec,
    pub tool_version: String,
    /// Child seeds, `seeds[s][k]` for sweep index `s` and repetition `k`.
    pub seeds: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMeta,
    pub rows: Vec<ReportRow>,
}

struct MethodOutcome {
    result: std::result::Result<(Vec<f64>, f64), String>,
    wall_ms: f64,
}

struct CellOutcome {
    per_method: Vec<MethodOutcome>,
    theory: Option<(Option<f64>, Option<f64>)>,
}

fn run_method(
    method: Method,
    trace: &Trace,
    pop: &UserPopulation,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, f64)> {
    let score = |e: &ProfileEstimate| -> Result<(Vec<f64>, f64)> {
        let profiles = mse_profiles(pop, e)?;
        let mse_p = profiles.iter().sum::<f64>() / (pop.n_senders() * pop.n_receivers()) as f64;
        Ok((profiles, mse_p))
    };
    match method {
        Method::Lsda => score(&lsda(trace)?),
        Method::Clsda => score(&clsda(trace, solver)?),
        Method::Rls => score(&rls(trace)?),
        Method::Zclip => score(&zero_clip(&lsda(trace)?)),
        Method::Sda => {
            let rounds = single_message_rounds(trace, 0);
            if rounds.is_empty() {
                return Err(Error::EmptyTrace(
                    "user 0 never sent exactly one message".into(),
                ));
            }
            let restricted = trace.select_rounds(&rounds);
            let p = sda(&restricted, trace.config.t, pop.n_receivers())?;
            let est = ProfileEstimate {
                p_hat: nalgebra::DMatrix::from_fn(pop.n_senders(), pop.n_receivers(), |i, j| {
                    if i == 0 {
                        p[j]
                    } else {
                        pop.profiles()[(i, j)]
                    }
                }),
                method: Method::Sda,
                iterations: 0,
                residual: f64::NAN,
                converged: true,
            };
            let e0 = mse_profile(pop, &est, 0)?;
            Ok((vec![e0], e0 / pop.n_receivers() as f64))
        }
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    params: &BaseParams,
    seed: u64,
    with_theory: bool,
) -> CellOutcome {
    let n_methods = spec.methods.len();
    let fail_all = |msg: String| CellOutcome {
        per_method: (0..n_methods)
            .map(|_| MethodOutcome {
                result: Err(msg.clone()),
                wall_ms: 0.0,
            })
            .collect(),
        theory: None,
    };
    let pop = match gen_population(
        params.n_users,
        params.n_friends,
        params.profile_dist,
        params.freq_dist,
        seed,
    ) {
        Ok(p) => p,
        Err(e) => return fail_all(e.to_string()),
    };
    let config = params.mix_config(&pop);
    let trace = match simulate_trace_with(
        &pop,
        &config,
        params.rho,
        seed,
        SimOptions {
            record_ground_truth: false,
        },
    ) {
        Ok(t) => t,
        Err(e) => return fail_all(e.to_string()),
    };
    let per_method = spec
        .methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let result = run_method(m, &trace, &pop, &spec.solver).map_err(|e| e.to_string());
            let wall_ms = if spec.record_timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            MethodOutcome { result, wall_ms }
        })
        .collect();
    let theory = with_theory.then(|| {
        let exact = predict_for_population(&pop, &config, params.rho, Regime::Exact)
            .ok()
            .and_then(|p| p.mse_transition);
        let rough = predict_for_population(&pop, &config, params.rho, Regime::RoughApprox)
            .ok()
            .and_then(|p| p.mse_transition);
        (exact, rough)
    });
    CellOutcome { per_method, theory }
}

/// Run every (sweep value, repetition) cell and aggregate one row per
/// (sweep value, method). Estimator failures are recorded in the row's
/// status instead of aborting the sweep.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let n_values = spec.sweep.values.len();
    let reps = spec.repetitions;
    let params: Vec<BaseParams> = (0..n_values)
        .map(|s| spec.sweep.apply(&spec.base, s))
        .collect::<Result<_>>()?;
    let seeds: Vec<Vec<u64>> = (0..n_values)
        .map(|s| {
            (0..reps)
                .map(|k| derive_seed(spec.master_seed, &[s as u64, k as u64]))
                .collect()
        })
        .collect();

    let cells: Vec<CellOutcome> = (0..n_values * reps)
        .into_par_iter()
        .map(|c| {
            let (s, k) = (c / reps, c % reps);
            run_cell(spec, &params[s], seeds[s][k], spec.include_theory && k == 0)
        })
        .collect();

    let mut rows = Vec::with_capacity(n_values * spec.methods.len());
    for s in 0..n_values {
        let group = &cells[s * reps..(s + 1) * reps];
        let theory = group[0].theory.unwrap_or((None, None));
        for (mi, &method) in spec.methods.iter().enumerate() {
            let outcomes: Vec<&MethodOutcome> = group.iter().map(|c| &c.per_method[mi]).collect();
            let ok: Vec<&(Vec<f64>, f64)> = outcomes
                .iter()
                .filter_map(|o| o.result.as_ref().ok())
                .collect();
            let failures: Vec<&String> = outcomes
                .iter()
                .filter_map(|o| o.result.as_ref().err())
                .collect();
            let mse_p: Vec<f64> = ok.iter().map(|(_, m)| *m).collect();
            let (mean, std) = if ok.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&mse_p);
                (Some(m), Some(s))
            };
            let mse_profile = (spec.per_profile && !ok.is_empty()).then(|| {
                let len = ok[0].0.len();
                (0..len)
                    .map(|i| ok.iter().map(|(p, _)| p[i]).sum::<f64>() / ok.len() as f64)
                    .collect()
            });
            let status = match failures.first() {
                None => "ok".to_string(),
                Some(msg) => format!("error: {msg} ({}/{} runs failed)", failures.len(), reps),
            };
            let (theory_exact, theory_rough) = if method == Method::Sda {
                (None, None)
            } else {
                theory
            };
            rows.push(ReportRow {
                sweep_param: spec.sweep.param.to_string(),
                sweep_value: spec.sweep.values[s].to_string(),
                method,
                mse_p_mean: mean,
                mse_p_std: std,
                mse_p_theory_exact: theory_exact,
                mse_p_theory_rough: theory_rough,
                wall_ms: outcomes.iter().map(|o| o.wall_ms).sum::<f64>() / reps as f64,
                status,
                n_ok: ok.len(),
                mse_profile,
            });
        }
    }

    Ok(ExperimentReport {
        metadata: ReportMeta {
            spec: spec.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
        },
        rows,
    })
}

pub const CSV_HEADER: [&str; 9] = [
    "sweep_param",
    "sweep_value",
    "method",
    "mse_p_mean",
    "mse_p_std",
    "mse_p_theory_exact",
    "mse_p_theory_rough",
    "wall_ms",
    "status",
];

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.16e}"))
}

impl ExperimentReport {
    /// Long-format CSV, one row per (sweep value, method); floats carry 17
    /// significant digits and missing values are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.sweep_param.clone(),
                r.sweep_value.clone(),
                r.method.to_string(),
                num(r.mse_p_mean),
                num(r.mse_p_std),
                num(r.mse_p_theory_exact),
                num(r.mse_p_theory_rough),
                format!("{:.6}", r.wall_ms),
                r.status.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            base: BaseParams {
                n_users: 8,
                n_friends: 3,
                t: 4,
                rho: 200,
                ..Default::default()
            },
            sweep: Sweep {
                param: SweepParam::Rho,
                values: vec![SweepValue::Int(200)],
            },
            methods: vec![Method::Lsda],
            repetitions: 1,
            master_seed: 3,
            include_theory: false,
            per_profile: false,
            record_timing: false,
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn minimal_sweep_has_one_row() {
        let r = run_experiment(&small_spec()).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].status, "ok");
        assert!(r.rows[0].mse_p_mean.unwrap() > 0.0);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let mut spec = small_spec();
        // fewer rounds than users: singular Gram matrix
        spec.sweep.values = vec![SweepValue::Int(3), SweepValue::Int(200)];
        spec.methods = vec![Method::Lsda, Method::Sda];
        spec.repetitions = 2;
        let r = run_experiment(&spec).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows[0].status.starts_with("error: singular system"));
        assert_eq!(r.rows[0].mse_p_mean, None);
        assert_eq!(r.rows[2].status, "ok");
    }

    #[test]
    fn alpha_sweep_switches_to_pool() {
        let mut spec = small_spec();
        spec.sweep = Sweep {
            param: SweepParam::Alpha,
            values: vec![SweepValue::Float(0.5), SweepValue::Int(1)],
        };
        let p = spec.sweep.apply(&spec.base, 0).unwrap();
        assert_eq!(p.kind, MixKind::BinomialPool);
        assert_eq!(spec.sweep.apply(&spec.base, 1).unwrap().alpha, 1.0);
        assert!(run_experiment(&spec).is_ok());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec();
        spec.repetitions = 0;
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.sweep = Sweep {
            param: SweepParam::FreqDist,
            values: vec![SweepValue::Text("pareto".into())],
        };
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.sweep = Sweep {
            param: SweepParam::NFriends,
            values: vec![SweepValue::Int(9)],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toml_spec_parses() {
        let text = r#"
            methods = ["lsda", "clsda"]
            repetitions = 3
            master_seed = 11
            include_theory = true

            [base]
            n_users = 20
            n_friends = 5

            [sweep]
            param = "freq_dist"
            values = ["uniform", "zipf"]
        "#;
        let spec: ExperimentSpec = toml::from_str(text).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.base.t, 10);
        assert!(spec.record_timing);
        assert_eq!(spec.sweep.values[1], SweepValue::Text("zipf".into()));
    }
}
