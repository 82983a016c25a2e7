//! Constrained attack: projected gradient descent with every sender row kept
//! on the probability simplex.

use nalgebra::DMatrix;

use super::simplex::project_simplex_in_place;
use super::{factor, Init, Method, ProfileEstimate, Regression, SolverOptions};
use crate::error::{Error, Result};
use crate::mixsim::Trace;

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 10_000;

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from the all-ones vector.
pub fn largest_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = m * &v;
        let next = w.norm();
        if next == 0.0 || !next.is_finite() {
            return Err(Error::SingularSystem {
                dimension: 0,
                size: n,
            });
        }
        v = w / next;
        if (next - lambda).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

fn project_rows(p: &mut DMatrix<f64>) {
    // nalgebra is column-major, so copy each row out and back.
    let mut buf = vec![0.0; p.ncols()];
    for i in 0..p.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = p[(i, j)];
        }
        project_simplex_in_place(&mut buf);
        for (j, b) in buf.iter().enumerate() {
            p[(i, j)] = *b;
        }
    }
}

/// Constrained least-squares disclosure attack.
pub fn clsda(trace: &Trace, opts: &SolverOptions) -> Result<ProfileEstimate> {
    clsda_with_history(trace, opts).map(|(e, _)| e)
}

/// As [`clsda`], also returning the objective `||V - A P||²` before the first
/// iteration and after each one.
pub fn clsda_with_history(
    trace: &Trace,
    opts: &SolverOptions,
) -> Result<(ProfileEstimate, Vec<f64>)> {
    opts.validate()?;
    let reg = Regression::from_trace(trace)?;
    let gram = reg.gram();
    let cross = reg.cross();
    let v_sq = reg.v.norm_squared();
    let (ns, nr) = (reg.a.ncols(), reg.v.ncols());

    // Rank check up front so the constrained and unconstrained attacks fail
    // on the same inputs.
    let f = factor(&gram, opts.ridge)?;

    let mut p = match opts.init {
        Init::Uniform => DMatrix::from_element(ns, nr, 1.0 / nr as f64),
        Init::UnconstrainedProjected => {
            let mut p = f.solve(&cross);
            project_rows(&mut p);
            p
        }
    };

    let objective = |p: &DMatrix<f64>, gp: &DMatrix<f64>| v_sq - 2.0 * p.dot(&cross) + p.dot(gp);
    // Objective values are differences of O(||V||²) terms; allow for the
    // rounding in that expansion when checking monotonicity.
    let slack = 1e-10 * (v_sq + 2.0 * cross.abs().sum());

    let mut gp = &gram * &p;
    let mut obj = objective(&p, &gp);
    let mut history = vec![obj.max(0.0)];
    let mut iterations = 0;
    let mut converged = false;

    if opts.max_iter > 0 {
        let lambda_max = largest_eigenvalue(&gram)?;
        let mu = opts.step_scale / lambda_max;
        for k in 1..=opts.max_iter {
            let mut next = &p - (&gp - &cross) * mu;
            project_rows(&mut next);
            let change = (&next - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
            let next_gp = &gram * &next;
            let next_obj = objective(&next, &next_gp);
            assert!(
                next_obj <= obj + slack,
                "projected gradient objective increased: {obj} -> {next_obj}"
            );
            p = next;
            gp = next_gp;
            obj = next_obj;
            history.push(obj.max(0.0));
            iterations = k;
            if change < opts.tol {
                converged = true;
                break;
            }
        }
    }

    Ok((
        ProfileEstimate {
            p_hat: p,
            method: Method::Clsda,
            iterations,
            residual: obj.max(0.0),
            converged,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::lsda;
    use crate::estimators::tests::trace_from;
    use crate::mixsim::{simulate_trace, MixConfig};
    use crate::population::{gen_population, FreqDist, ProfileDist};

    #[test]
    fn power_iteration_matches_eigen() {
        let m = DMatrix::from_row_slice(3, 3, &[4., 1., 0.5, 1., 3., 0.2, 0.5, 0.2, 2.]);
        let lam = largest_eigenvalue(&m).unwrap();
        let exact = m.symmetric_eigenvalues().max();
        assert!((lam - exact).abs() <= 1e-7 * exact);
    }

    #[test]
    fn feasible_optimum_is_reached() {
        let tr = trace_from(&[vec![1, 0], vec![0, 1]], &[vec![0, 1], vec![1, 0]], 1);
        let e = clsda(&tr, &SolverOptions::default()).unwrap();
        assert!(e.converged);
        let target = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]);
        assert!((e.p_hat - target).amax() < 1e-8);
    }

    #[test]
    fn zero_iterations_returns_uniform() {
        let tr = trace_from(
            &[vec![1, 0], vec![0, 1]],
            &[vec![0, 1, 0], vec![1, 0, 0]],
            1,
        );
        let opts = SolverOptions {
            max_iter: 0,
            ..Default::default()
        };
        let e = clsda(&tr, &opts).unwrap();
        assert_eq!(e.iterations, 0);
        assert!(e.p_hat.iter().all(|p| *p == 1.0 / 3.0));
    }

    #[test]
    fn rows_on_simplex_and_monotone() {
        let pop = gen_population(15, 4, ProfileDist::Zipf, FreqDist::Uniform, 8).unwrap();
        for (cfg, init) in [
            (MixConfig::threshold(5), Init::Uniform),
            (MixConfig::pool(5, 0.5), Init::UnconstrainedProjected),
        ] {
            let tr = simulate_trace(&pop, &cfg, 300, 4).unwrap();
            let opts = SolverOptions {
                init,
                step_scale: 1.5,
                ..Default::default()
            };
            let (e, hist) = clsda_with_history(&tr, &opts).unwrap();
            for row in e.p_hat.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|p| *p >= 0.0));
            }
            assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-6 * hist[0]));
            let l = lsda(&tr).unwrap();
            assert!(e.residual >= l.residual - 1e-6 * l.residual);
        }
    }

    #[test]
    fn bad_step_scale_rejected() {
        let tr = trace_from(&[vec![1]], &[vec![1]], 1);
        let opts = SolverOptions {
            step_scale: 2.0,
            ..Default::default()
        };
        assert!(matches!(clsda(&tr, &opts), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn non_convergence_flagged() {
        let pop = gen_population(10, 3, ProfileDist::Zipf, FreqDist::Uniform, 1).unwrap();
        let tr = simulate_trace(&pop, &MixConfig::threshold(4), 200, 2).unwrap();
        let opts = SolverOptions {
            max_iter: 2,
            ..Default::default()
        };
        let e = clsda(&tr, &opts).unwrap();
        assert!(!e.converged);
        assert_eq!(e.iterations, 2);
    }
}
