//! Dense convex quadratic programming by a primal-dual interior point method.
//!
//! Solves
//!
//! ```text
//! minimize   1/2 x'Qx + c'x
//! subject to Aeq x  = beq
//!            Ain x <= bin
//! ```
//!
//! with `Q` symmetric positive semidefinite, via Mehrotra-style
//! predictor-corrector path following on the perturbed KKT system. The
//! stationarity convention is `Qx + c + Aeq'nu + Ain'lambda = 0` with
//! `lambda >= 0`. Problems here are small and dense (a few hundred variables
//! at most), so each iteration factors one augmented KKT matrix with LU and
//! reuses the factorization for the corrector solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tikhonov shift applied to the (1,1) block of the KKT factorization only,
/// so semidefinite `Q` (e.g. a kinetic Hessian with free DC terms) cannot
/// break the factorization. Residuals are always measured against the raw
/// data.
const FACTOR_SHIFT: f64 = 1e-10;

/// Dual regularization on the equality block of the augmented system; keeps
/// LU alive on rank-deficient but consistent equality rows.
const DUAL_SHIFT: f64 = 1e-12;

/// Fraction-to-boundary parameter; the step is equalized across the primal
/// and dual variables.
const BOUNDARY_FRACTION: f64 = 0.995;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Validates symmetry of `Q` (within 1e-10) and dimension consistency.
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n {
            return Err(Error::Dimension("Q must be square".into()));
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::Domain(format!("Q is not symmetric (max skew {asym:.2e})")));
        }
        if c.len() != n
            || a_eq.ncols() != n && a_eq.nrows() > 0
            || a_in.ncols() != n && a_in.nrows() > 0
            || a_eq.nrows() != b_eq.len()
            || a_in.nrows() != b_in.len()
        {
            return Err(Error::Dimension("inconsistent QP dimensions".into()));
        }
        Ok(QpProblem { q, c, a_eq, b_eq, a_in, b_in })
    }

    pub fn num_vars(&self) -> usize {
        self.q.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.q * x)[(0, 0)] + self.c.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// KKT residuals of the returned iterate, all measured against the raw
/// problem data.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `||Qx + c + Aeq'nu + Ain'lambda||_inf`
    pub stationarity: f64,
    /// `||Aeq x - beq||_inf`
    pub primal_eq: f64,
    /// `max_i (Ain x - bin)_i^+`
    pub primal_ineq: f64,
    /// `max_i |lambda_i (Ain x - bin)_i|`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
    /// Merit value (max of barrier parameter and residual norms) after each
    /// accepted iterate; decreases monotonically.
    pub merit_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { tol: 1e-8, max_iter: 100 }
    }
}

struct Iterate {
    x: DVector<f64>,
    nu: DVector<f64>,
    lambda: DVector<f64>,
    slack: DVector<f64>,
}

fn residuals(problem: &QpProblem, it: &Iterate) -> KktResiduals {
    let mut stat = &problem.q * &it.x + &problem.c;
    if problem.a_eq.nrows() > 0 {
        stat += problem.a_eq.transpose() * &it.nu;
    }
    if problem.a_in.nrows() > 0 {
        stat += problem.a_in.transpose() * &it.lambda;
    }
    let primal_eq = if problem.a_eq.nrows() > 0 {
        (&problem.a_eq * &it.x - &problem.b_eq).amax()
    } else {
        0.0
    };
    let (primal_ineq, complementarity) = if problem.a_in.nrows() > 0 {
        let gap = &problem.a_in * &it.x - &problem.b_in;
        let viol = gap.iter().fold(0.0f64, |acc, &g| acc.max(g));
        let comp = gap
            .iter()
            .zip(it.lambda.iter())
            .fold(0.0f64, |acc, (&g, &l)| acc.max((g * l).abs()));
        (viol, comp)
    } else {
        (0.0, 0.0)
    };
    KktResiduals {
        stationarity: stat.amax(),
        primal_eq,
        primal_ineq,
        complementarity,
    }
}

/// Infinity-norm residuals of the interior iterate, used for the merit.
fn interior_residual_norms(problem: &QpProblem, it: &Iterate) -> (f64, f64, f64) {
    let mut stat = &problem.q * &it.x + &problem.c;
    if problem.a_eq.nrows() > 0 {
        stat += problem.a_eq.transpose() * &it.nu;
    }
    if problem.a_in.nrows() > 0 {
        stat += problem.a_in.transpose() * &it.lambda;
    }
    let r_eq = if problem.a_eq.nrows() > 0 {
        (&problem.a_eq * &it.x - &problem.b_eq).amax()
    } else {
        0.0
    };
    let r_in = if problem.a_in.nrows() > 0 {
        (&problem.a_in * &it.x + &it.slack - &problem.b_in).amax()
    } else {
        0.0
    };
    (stat.amax(), r_eq, r_in)
}

fn merit(problem: &QpProblem, it: &Iterate) -> f64 {
    let (stat, r_eq, r_in) = interior_residual_norms(problem, it);
    let mu = if it.slack.is_empty() {
        0.0
    } else {
        it.slack.dot(&it.lambda) / it.slack.len() as f64
    };
    mu.max(stat).max(r_eq).max(r_in)
}

/// Solves an equality-constrained (or unconstrained) QP with one KKT solve.
fn solve_equality_qp(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let n = problem.num_vars();
    let p = problem.a_eq.nrows();
    let dim = n + p;
    let mut kkt = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = problem.q[(i, j)];
        }
        kkt[(i, i)] += FACTOR_SHIFT;
    }
    for r in 0..p {
        for j in 0..n {
            kkt[(n + r, j)] = problem.a_eq[(r, j)];
            kkt[(j, n + r)] = problem.a_eq[(r, j)];
        }
        kkt[(n + r, n + r)] = -DUAL_SHIFT;
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -problem.c[i];
    }
    for r in 0..p {
        rhs[n + r] = problem.b_eq[r];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular KKT system in equality QP".into()))?;
    let it = Iterate {
        x: sol.rows(0, n).into_owned(),
        nu: sol.rows(n, p).into_owned(),
        lambda: DVector::zeros(0),
        slack: DVector::zeros(0),
    };
    let res = residuals(problem, &it);
    let status = if res.max() <= opts.tol {
        QpStatus::Optimal
    } else if p > 0 && res.primal_eq > opts.tol.max(1e-6) * (1.0 + problem.b_eq.amax()) {
        QpStatus::Infeasible
    } else {
        QpStatus::MaxIter
    };
    Ok(QpSolution {
        x: it.x,
        eq_duals: it.nu,
        ineq_duals: DVector::zeros(0),
        status,
        kkt_residuals: res,
        iterations: 1,
        merit_trace: vec![res.max()],
    })
}

/// Solve a convex QP. See the module docs for the conventions.
///
/// A strictly feasible interior point for the inequalities must exist (it is
/// constructed by shifting slacks off the boundary, so boundary starts are
/// fine). Inconsistent equality rows yield `QpStatus::Infeasible`; numerical
/// breakdown yields `QpStatus::MaxIter` with the best iterate found.
pub fn solve_qp(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    let n = problem.num_vars();
    let p = problem.a_eq.nrows();
    let m = problem.a_in.nrows();

    if m == 0 {
        return solve_equality_qp(problem, opts);
    }

    // Phase 1: least-norm point on the equalities, slacks shifted interior.
    let x0 = if p > 0 {
        let gram = &problem.a_eq * problem.a_eq.transpose()
            + DMatrix::<f64>::identity(p, p) * FACTOR_SHIFT;
        let w = gram
            .lu()
            .solve(&problem.b_eq)
            .ok_or_else(|| Error::Numerical("singular equality Gram matrix".into()))?;
        let x0 = problem.a_eq.transpose() * w;
        let gap = (&problem.a_eq * &x0 - &problem.b_eq).amax();
        if gap > 1e-6 * (1.0 + problem.b_eq.amax()) {
            // Rank-deficient with inconsistent right-hand side.
            let it = Iterate {
                x: x0,
                nu: DVector::zeros(p),
                lambda: DVector::zeros(m),
                slack: DVector::zeros(m),
            };
            let res = residuals(problem, &it);
            return Ok(QpSolution {
                x: it.x,
                eq_duals: it.nu,
                ineq_duals: it.lambda,
                status: QpStatus::Infeasible,
                kkt_residuals: res,
                iterations: 0,
                merit_trace: Vec::new(),
            });
        }
        x0
    } else {
        DVector::zeros(n)
    };
    let slack0 = {
        let gap = &problem.b_in - &problem.a_in * &x0;
        gap.map(|g| g.max(1.0))
    };
    let mut it = Iterate {
        x: x0,
        nu: DVector::zeros(p),
        lambda: DVector::from_element(m, 1.0),
        slack: slack0,
    };

    let mut best: Option<(f64, Iterate, KktResiduals)> = None;
    let mut merit_trace = Vec::new();
    let mut iterations = 0;

    // Iterate past the reporting tolerance so the returned point is the
    // optimum to near working precision; this is what makes the minimizer
    // invariant under positive rescaling of the objective.
    let target = (opts.tol * 1e-2).max(1e-13);

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let res = residuals(problem, &it);
        let comp_target = target * (1.0 + problem.b_in.amax());
        if res.stationarity <= target
            && res.primal_eq <= target
            && res.primal_ineq <= target
            && res.complementarity <= comp_target
        {
            break;
        }
        if best.as_ref().map_or(true, |(r, _, _)| res.max() < *r) {
            best = Some((
                res.max(),
                Iterate {
                    x: it.x.clone(),
                    nu: it.nu.clone(),
                    lambda: it.lambda.clone(),
                    slack: it.slack.clone(),
                },
                res,
            ));
        }

        // Residual vectors for the Newton system.
        let mut r_d = &problem.q * &it.x + &problem.c;
        if p > 0 {
            r_d += problem.a_eq.transpose() * &it.nu;
        }
        r_d += problem.a_in.transpose() * &it.lambda;
        let r_pe = if p > 0 {
            &problem.a_eq * &it.x - &problem.b_eq
        } else {
            DVector::zeros(0)
        };
        let r_pi = &problem.a_in * &it.x + &it.slack - &problem.b_in;
        let mu = it.slack.dot(&it.lambda) / m as f64;

        // Augmented matrix, shared by predictor and corrector.
        let dim = n + p;
        let mut aug = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = problem.q[(i, j)];
            }
            aug[(i, i)] += FACTOR_SHIFT;
        }
        // Q + Ain' D Ain with D = diag(lambda/s).
        for row in 0..m {
            let d = it.lambda[row] / it.slack[row];
            for i in 0..n {
                let ai = problem.a_in[(row, i)];
                if ai == 0.0 {
                    continue;
                }
                for j in 0..n {
                    aug[(i, j)] += d * ai * problem.a_in[(row, j)];
                }
            }
        }
        for r in 0..p {
            for j in 0..n {
                aug[(n + r, j)] = problem.a_eq[(r, j)];
                aug[(j, n + r)] = problem.a_eq[(r, j)];
            }
            aug[(n + r, n + r)] = -DUAL_SHIFT;
        }
        let lu = aug.lu();

        let solve_direction = |r_comp: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // rhs1 = -r_d - Ain' * ((lambda .* r_pi - r_comp) ./ s)
            let mut u = DVector::zeros(m);
            for i in 0..m {
                u[i] = (it.lambda[i] * r_pi[i] - r_comp[i]) / it.slack[i];
            }
            let mut rhs = DVector::zeros(dim);
            let top = -&r_d - problem.a_in.transpose() * u;
            for i in 0..n {
                rhs[i] = top[i];
            }
            for r in 0..p {
                rhs[n + r] = -r_pe[r];
            }
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dx = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, p).into_owned();
            let ain_dx = &problem.a_in * &dx;
            let mut dlambda = DVector::zeros(m);
            let mut dslack = DVector::zeros(m);
            for i in 0..m {
                dlambda[i] =
                    (it.lambda[i] * ain_dx[i] + it.lambda[i] * r_pi[i] - r_comp[i]) / it.slack[i];
                dslack[i] = -r_pi[i] - ain_dx[i];
            }
            Some((dx, dnu, dlambda, dslack))
        };

        // Predictor (affine) direction: r_comp = s .* lambda.
        let r_comp_aff = it.slack.component_mul(&it.lambda);
        let Some((dx_aff, _, dl_aff, ds_aff)) = solve_direction(&r_comp_aff) else {
            break;
        };
        let step_to_boundary = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
            let mut alpha = 1.0f64;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    alpha = alpha.min(-v[i] / dv[i]);
                }
            }
            alpha
        };
        let alpha_aff_p = step_to_boundary(&it.slack, &ds_aff).min(1.0);
        let alpha_aff_d = step_to_boundary(&it.lambda, &dl_aff).min(1.0);
        let mut mu_aff = 0.0;
        for i in 0..m {
            mu_aff += (it.slack[i] + alpha_aff_p * ds_aff[i])
                * (it.lambda[i] + alpha_aff_d * dl_aff[i]);
        }
        mu_aff /= m as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let _ = dx_aff;

        // Corrector: r_comp = s.*lambda - sigma*mu + ds_aff.*dl_aff.
        let mut r_comp = DVector::zeros(m);
        for i in 0..m {
            r_comp[i] = it.slack[i] * it.lambda[i] - sigma * mu + ds_aff[i] * dl_aff[i];
        }
        let Some((dx, dnu, dlambda, dslack)) = solve_direction(&r_comp) else {
            break;
        };

        let alpha_max = BOUNDARY_FRACTION
            * step_to_boundary(&it.slack, &dslack).min(step_to_boundary(&it.lambda, &dlambda));
        let mut alpha = alpha_max.min(1.0);

        // The merit (max of mu and residual norms) must decrease along
        // accepted iterates; back off the step until it does.
        let merit_old = merit(problem, &it);
        let trial = |alpha: f64| -> Iterate {
            Iterate {
                x: &it.x + &dx * alpha,
                nu: &it.nu + &dnu * alpha,
                lambda: &it.lambda + &dlambda * alpha,
                slack: &it.slack + &dslack * alpha,
            }
        };
        let mut accepted = trial(alpha);
        let mut backoffs = 0;
        while merit(problem, &accepted) >= merit_old && merit_old > 1e-14 && backoffs < 40 {
            alpha *= 0.5;
            accepted = trial(alpha);
            backoffs += 1;
        }
        if backoffs == 40 {
            // No productive step available; stop with the best iterate.
            break;
        }
        it = accepted;
        merit_trace.push(merit(problem, &it));
    }

    // Report the better of the final and the best-seen iterate, with the
    // status judged against the requested tolerance.
    let res = residuals(problem, &it);
    let (best_it, best_res) = match best {
        Some((r, b_it, b_res)) if r < res.max() => (b_it, b_res),
        _ => (it, res),
    };
    let comp_tol = opts.tol * (1.0 + problem.b_in.amax());
    let status = if best_res.stationarity <= opts.tol
        && best_res.primal_eq <= opts.tol
        && best_res.primal_ineq <= opts.tol
        && best_res.complementarity <= comp_tol
    {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIter
    };
    Ok(QpSolution {
        x: best_it.x,
        eq_duals: best_it.nu,
        ineq_duals: best_it.lambda,
        status,
        kkt_residuals: best_res,
        iterations,
        merit_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textbook_single_inequality() {
        // min 1/2 x^2 s.t. x >= 1 (written -x <= -1): x = 1, dual = 1.
        let problem = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
        )
        .unwrap();
        let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.ineq_duals[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn textbook_projection_onto_line() {
        // min 1/2 ||x||^2 s.t. x1 + x2 = 2: x = (1,1), eq dual = -1 under
        // Qx + c + Aeq'nu = 0.
        let problem = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-8);
        assert_relative_eq!(sol.eq_duals[0], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn mixed_constraints_small_case() {
        // min 1/2||x||^2 - x1 s.t. x1 + x2 = 1, x1 <= 0.3.
        // Eliminating: x2 = 1 - x1, f = x1^2 - x1*1 ... solve by hand:
        // unconstrained-on-line optimum x1 = 1, clipped to 0.3 -> x = (0.3, 0.7).
        let problem = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 0.3),
        )
        .unwrap();
        let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x, DVector::from_vec(vec![0.3, 0.7]), epsilon = 1e-7);
    }

    #[test]
    fn inconsistent_equalities_are_flagged_infeasible() {
        // Duplicate row with conflicting right-hand sides.
        let problem = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);

        // Same with inequalities present: caught in phase 1.
        let problem2 = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 5.0),
        )
        .unwrap();
        let sol2 = solve_qp(&problem2, &QpOptions::default()).unwrap();
        assert_eq!(sol2.status, QpStatus::Infeasible);
    }

    #[test]
    fn asymmetric_q_is_rejected() {
        let mut q = DMatrix::identity(2, 2);
        q[(0, 1)] = 1e-6;
        assert!(QpProblem::new(
            q,
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .is_err());
    }

    pub(super) fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=10);
        let p = rng.random_range(0..=2.min(n - 1));
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &r * r.transpose() + DMatrix::identity(n, n) * 0.3;
        let q = (&q + q.transpose()) * 0.5;
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x_feas = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a_eq = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let b_eq = &a_eq * &x_feas;
        let a_in = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let slack = DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
        let b_in = &a_in * &x_feas + slack;
        QpProblem::new(q, c, a_eq, b_eq, a_in, b_in).unwrap()
    }

    /// Exhaustive active-set enumeration: solve the KKT system of every
    /// subset of active inequality constraints and keep the best feasible
    /// point with nonnegative multipliers.
    pub(super) fn active_set_oracle(problem: &QpProblem) -> Option<f64> {
        let n = problem.num_vars();
        let p = problem.a_eq.nrows();
        let m = problem.a_in.nrows();
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = active.len();
            if p + k > n {
                continue;
            }
            let dim = n + p + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = problem.q[(i, j)];
                }
                rhs[i] = -problem.c[i];
            }
            for r in 0..p {
                for j in 0..n {
                    kkt[(n + r, j)] = problem.a_eq[(r, j)];
                    kkt[(j, n + r)] = problem.a_eq[(r, j)];
                }
                rhs[n + r] = problem.b_eq[r];
            }
            for (s, &row) in active.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + p + s, j)] = problem.a_in[(row, j)];
                    kkt[(j, n + p + s)] = problem.a_in[(row, j)];
                }
                rhs[n + p + s] = problem.b_in[row];
            }
            let Some(sol) = kkt.clone().lu().solve(&rhs) else {
                continue;
            };
            if (&kkt * &sol - &rhs).amax() > 1e-8 * (1.0 + rhs.amax()) {
                continue; // singular system solved to garbage
            }
            let x = sol.rows(0, n).into_owned();
            let lam = sol.rows(n + p, k);
            if lam.iter().any(|&l| l < -1e-8) {
                continue;
            }
            if m > 0 {
                let gap = &problem.a_in * &x - &problem.b_in;
                if gap.iter().any(|&g| g > 1e-8) {
                    continue;
                }
            }
            let obj = problem.objective(&x);
            if best.map_or(true, |b| obj < b) {
                best = Some(obj);
            }
        }
        best
    }

    #[test]
    fn random_problems_match_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..60 {
            let problem = random_problem(&mut rng);
            let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial} not optimal");
            let oracle = active_set_oracle(&problem).expect("oracle found optimum");
            let got = problem.objective(&sol.x);
            assert!(
                (got - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
                "trial {trial}: objective {got} vs oracle {oracle}"
            );
            assert!(sol.kkt_residuals.max() <= 1e-8 * (1.0 + problem.b_in.amax()));
            assert!(sol.ineq_duals.iter().all(|&l| l >= -1e-10));
        }
    }

    #[test]
    fn merit_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..20 {
            let problem = random_problem(&mut rng);
            let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
            for pair in sol.merit_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15, "merit increased: {pair:?}");
            }
        }
    }

    #[test]
    fn minimizer_is_invariant_under_objective_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..20 {
            let problem = random_problem(&mut rng);
            let scaled = QpProblem::new(
                &problem.q * 37.5,
                &problem.c * 37.5,
                problem.a_eq.clone(),
                problem.b_eq.clone(),
                problem.a_in.clone(),
                problem.b_in.clone(),
            )
            .unwrap();
            let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
            let sol_scaled = solve_qp(&scaled, &QpOptions::default()).unwrap();
            assert!(
                (&sol.x - &sol_scaled.x).amax() < 1e-8,
                "minimizer moved under scaling"
            );
        }
    }

    #[test]
    fn complementarity_invariant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let problem = random_problem(&mut rng);
            let sol = solve_qp(&problem, &QpOptions::default()).unwrap();
            let gap = &problem.a_in * &sol.x - &problem.b_in;
            for i in 0..gap.len() {
                assert!(
                    (sol.ineq_duals[i] * gap[i]).abs() <= 1e-8 * (1.0 + problem.b_in.amax())
                );
            }
        }
    }
}
