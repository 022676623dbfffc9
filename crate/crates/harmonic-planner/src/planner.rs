//! The adaptive interior-point trajectory optimizer.
//!
//! Each iteration evaluates the collision potential over the waypoint stack,
//! smooths the residual vector and its Jacobian with bias-corrected
//! exponential moving averages, assembles a damped Gauss-Newton model of the
//! Hamiltonian in the step `da`, and solves it as a QP subject to exact
//! start/goal equalities and discrete joint-limit inequalities. The loop
//! stops when the step norm drops under `step_tol` or the iteration budget
//! runs out; a fine-grid audit against the raw signed-distance field then
//! decides feasibility of the result.

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage, RawStorageMut};

use crate::error::{Error, Result};
use crate::field::CollisionFieldModel;
use crate::objective::{ArcWeight, CollisionField, FieldSource, Objective};
use crate::qp::{solve_qp, QpOptions, QpProblem, QpStatus};
use crate::robot::RobotModel;
use crate::scene::{collision_cost, CostParams, Scene};
use crate::trajectory::{
    basis_block, fit_waypoints_constrained, init_min_kinetic, kinetic_energy, kinetic_hessian,
    AmplitudeMatrix, BasisMatrix, SampleGrid,
};

#[derive(Debug, Clone, Copy)]
pub struct AipParams {
    /// EMA decay of the potential residual vector, in (0, 1].
    pub alpha: f64,
    /// EMA decay of the potential Jacobian, in (0, 1].
    pub beta: f64,
    /// Isotropic damping strength (the infinity norm of the damping matrix).
    pub lambda: f64,
    /// Smoothness/safety balance factor.
    pub rho: f64,
    /// Terminate once the step norm ||da|| drops to this.
    pub step_tol: f64,
    pub max_iter: usize,
    /// Collision buffer width (labeling, costs, and the feasibility audit).
    pub epsilon: f64,
    pub field_source: FieldSource,
    pub weight: ArcWeight,
    /// Tolerance handed to the QP subproblems; tighter than the endpoint
    /// invariant so equality drift stays below it.
    pub qp_tol: f64,
}

impl Default for AipParams {
    fn default() -> Self {
        AipParams {
            alpha: 0.90,
            beta: 0.90,
            lambda: 1e-2,
            rho: 0.1,
            step_tol: 1e-3,
            max_iter: 100,
            epsilon: 0.05,
            field_source: FieldSource::RawSdf,
            weight: ArcWeight::Velocity,
            qp_tol: 1e-9,
        }
    }
}

impl AipParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Domain("EMA decays must lie in (0, 1]".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Domain("damping lambda must be positive".into()));
        }
        if self.rho < 0.0 {
            return Err(Error::Domain("rho must be nonnegative".into()));
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::Domain("step_tol must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlanProblem<'a> {
    pub robot: &'a RobotModel,
    pub scene: &'a Scene,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub grid: SampleGrid,
    pub harmonics: usize,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct IterRecord {
    /// Hamiltonian at the iterate the step was computed from.
    pub hamiltonian: f64,
    pub step_norm: f64,
    /// Worst obstacle penetration over the discrete waypoints after the step
    /// (true signed distance, not the buffered cost).
    pub max_penetration: f64,
    pub qp_status: QpStatus,
    /// `max(||C_0 a - theta_0||, ||C_{T/2} a - theta_g||)` after the step.
    pub endpoint_error: f64,
    /// Worst componentwise joint-limit excess over the waypoints after the step.
    pub limit_excess: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub amplitudes: AmplitudeMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Verdict of the fine-grid audit: zero buffered collision cost and
    /// joint limits satisfied at ten-fold oversampled (non-integer) times.
    pub feasible: bool,
    pub final_hamiltonian: f64,
    pub trace: Vec<IterRecord>,
}

/// `hist <- (1 - decay) * hist + decay * sample`, elementwise.
pub fn ema_update<R, C, S1, S2>(
    hist: &mut Matrix<f64, R, C, S1>,
    sample: &Matrix<f64, R, C, S2>,
    decay: f64,
) where
    R: Dim,
    C: Dim,
    S1: RawStorageMut<f64, R, C>,
    S2: RawStorage<f64, R, C>,
{
    assert_eq!(hist.shape(), sample.shape(), "EMA shapes must match");
    // h + decay*(s - h) rather than (1-decay)*h + decay*s: algebraically the
    // same, but an exact fixed point when the sample equals the history.
    for j in 0..hist.ncols() {
        for i in 0..hist.nrows() {
            hist[(i, j)] += decay * (sample[(i, j)] - hist[(i, j)]);
        }
    }
}

/// The debiasing factor `1 / (1 - (1-decay)^iteration)`; the accumulators
/// start at zero, so early averages are biased low by exactly this factor.
pub fn bias_correction_factor(decay: f64, iteration: usize) -> Result<f64> {
    if iteration == 0 {
        return Err(Error::Domain("bias correction needs iteration >= 1".into()));
    }
    Ok(1.0 / (1.0 - (1.0 - decay).powi(iteration as i32)))
}

pub fn bias_correct_vec(hist: &DVector<f64>, decay: f64, iteration: usize) -> Result<DVector<f64>> {
    Ok(hist * bias_correction_factor(decay, iteration)?)
}

pub fn bias_correct_mat(hist: &DMatrix<f64>, decay: f64, iteration: usize) -> Result<DMatrix<f64>> {
    Ok(hist * bias_correction_factor(decay, iteration)?)
}

/// Constraint matrices shared by every subproblem of one plan.
pub struct PlanBasis {
    pub kinetic: DMatrix<f64>,
    /// Stacked waypoint basis, `(T/2+1)M x M(N+1)`.
    pub stacked: DMatrix<f64>,
    /// Start/goal rows `[C_0; C_{T/2}]`.
    pub equality: DMatrix<f64>,
    /// `[stacked; -stacked]` for the limit inequalities.
    pub inequality: DMatrix<f64>,
    /// Repeated per-sample limits matching the stacked layout.
    pub limit_high: DVector<f64>,
    pub limit_low: DVector<f64>,
}

impl PlanBasis {
    pub fn build(robot: &RobotModel, grid: &SampleGrid, harmonics: usize) -> PlanBasis {
        let m = robot.dof();
        let stacked = BasisMatrix::build(grid, m, harmonics).matrix().clone();
        let dim = m * (harmonics + 1);
        let samples = grid.num_samples();

        let mut equality = DMatrix::zeros(2 * m, dim);
        equality
            .rows_mut(0, m)
            .copy_from(&basis_block(grid, m, harmonics, 0).expect("t=0 valid"));
        equality
            .rows_mut(m, m)
            .copy_from(&basis_block(grid, m, harmonics, grid.half()).expect("t=T/2 valid"));

        let mut inequality = DMatrix::zeros(2 * samples * m, dim);
        inequality.rows_mut(0, samples * m).copy_from(&stacked);
        inequality.rows_mut(samples * m, samples * m).copy_from(&(-&stacked));

        let mut limit_high = DVector::zeros(samples * m);
        let mut limit_low = DVector::zeros(samples * m);
        for t in 0..samples {
            for j in 0..m {
                limit_high[t * m + j] = robot.theta_max()[j];
                limit_low[t * m + j] = robot.theta_min()[j];
            }
        }
        PlanBasis {
            kinetic: kinetic_hessian(m, harmonics),
            stacked,
            equality,
            inequality,
            limit_high,
            limit_low,
        }
    }
}

/// Assembles the damped Gauss-Newton subproblem in the step `da`:
///
/// ```text
/// min  da' (rho K + F'F + lambda I) da + 2 (rho a'K + f'F) da
/// s.t. C_0 da = theta_0 - C_0 a,   C_{T/2} da = theta_g - C_{T/2} a,
///      C da <= limits_high - C a,  -C da <= C a - limits_low.
/// ```
pub fn build_model(
    basis: &PlanBasis,
    a_flat: &DVector<f64>,
    f_hat: &DVector<f64>,
    jac_hat: &DMatrix<f64>,
    params: &AipParams,
    start: &DVector<f64>,
    goal: &DVector<f64>,
) -> Result<QpProblem> {
    let dim = a_flat.len();
    let mut q = &basis.kinetic * params.rho + jac_hat.transpose() * jac_hat;
    for i in 0..dim {
        q[(i, i)] += params.lambda;
    }
    // Doubling through the symmetrization maps da'(rho K + F'F + lambda I)da
    // onto the solver's 1/2 x'Qx convention; the linear term is doubled to match.
    let q = &q + q.transpose();
    let c = (&basis.kinetic * a_flat * params.rho + jac_hat.transpose() * f_hat) * 2.0;

    let m = basis.equality.nrows() / 2;
    let mut b_eq = DVector::zeros(2 * m);
    let head = &basis.equality * a_flat;
    for j in 0..m {
        b_eq[j] = start[j] - head[j];
        b_eq[m + j] = goal[j] - head[m + j];
    }

    let waypoints = &basis.stacked * a_flat;
    let rows = waypoints.len();
    let mut b_in = DVector::zeros(2 * rows);
    for i in 0..rows {
        b_in[i] = basis.limit_high[i] - waypoints[i];
        b_in[rows + i] = waypoints[i] - basis.limit_low[i];
    }

    QpProblem::new(q, c, basis.equality.clone(), b_eq, basis.inequality.clone(), b_in)
}

/// Fine-grid audit of a finished trajectory: ten-fold oversampling of the
/// half period, requiring exactly zero buffered collision cost (clearance of
/// at least epsilon) and joint limits within 1e-8 everywhere.
pub struct AuditReport {
    pub feasible: bool,
    /// Worst clearance margin `d - epsilon` seen (negative = violation).
    pub min_margin: f64,
    pub max_limit_excess: f64,
}

pub fn audit_feasibility(
    problem: &PlanProblem,
    a: &AmplitudeMatrix,
    epsilon: f64,
) -> AuditReport {
    let params = CostParams { epsilon };
    let mut min_margin = f64::INFINITY;
    let mut max_excess: f64 = 0.0;
    let steps = problem.grid.half() * 10;
    for i in 0..=steps {
        let t = i as f64 / 10.0;
        let theta = a.evaluate(&problem.grid, t);
        for j in 0..problem.robot.dof() {
            let excess = (theta[j] - problem.robot.theta_max()[j])
                .max(problem.robot.theta_min()[j] - theta[j])
                .max(0.0);
            max_excess = max_excess.max(excess);
        }
        for ball in problem.robot.forward_kinematics(&theta) {
            let (d, _) = problem.scene.signed_distance(&ball.center, ball.radius);
            min_margin = min_margin.min(d - epsilon);
            let _ = collision_cost(d, &params);
        }
    }
    AuditReport {
        feasible: min_margin >= 0.0 && max_excess <= 1e-8,
        min_margin,
        max_limit_excess: max_excess,
    }
}

fn waypoint_metrics(
    problem: &PlanProblem,
    basis: &PlanBasis,
    a_flat: &DVector<f64>,
) -> (f64, f64, f64) {
    let m = problem.robot.dof();
    let head = &basis.equality * a_flat;
    let mut start_err = 0.0;
    let mut goal_err = 0.0;
    for j in 0..m {
        start_err += (head[j] - problem.start[j]).powi(2);
        goal_err += (head[m + j] - problem.goal[j]).powi(2);
    }
    let endpoint_error = start_err.sqrt().max(goal_err.sqrt());

    let waypoints = &basis.stacked * a_flat;
    let samples = problem.grid.num_samples();
    let mut excess: f64 = 0.0;
    let mut penetration: f64 = 0.0;
    for t in 0..samples {
        let theta = DVector::from_fn(m, |j, _| waypoints[t * m + j]);
        for j in 0..m {
            excess = excess
                .max(theta[j] - problem.robot.theta_max()[j])
                .max(problem.robot.theta_min()[j] - theta[j]);
        }
        for ball in problem.robot.forward_kinematics(&theta) {
            let (d, _) = problem.scene.signed_distance(&ball.center, ball.radius);
            if d < 0.0 {
                penetration = penetration.max(-d);
            }
        }
    }
    (endpoint_error, excess.max(0.0), penetration)
}

/// Runs the adaptive interior-point loop.
///
/// `model` must be provided when `params.field_source` is the learned field.
/// The call is deterministic: no randomness enters the loop.
pub fn optimize(
    problem: &PlanProblem,
    params: &AipParams,
    model: Option<&CollisionFieldModel>,
) -> Result<PlanResult> {
    params.validate()?;
    let robot = problem.robot;
    let m = robot.dof();
    if problem.start.len() != m || problem.goal.len() != m {
        return Err(Error::Dimension("start/goal length must match the robot".into()));
    }
    let strictly_inside = |theta: &DVector<f64>| {
        (0..m).all(|j| robot.theta_min()[j] < theta[j] && theta[j] < robot.theta_max()[j])
    };
    if !strictly_inside(&problem.start) || !strictly_inside(&problem.goal) {
        return Err(Error::Domain(
            "start and goal must lie strictly inside the joint limits".into(),
        ));
    }

    let field = match params.field_source {
        FieldSource::RawSdf => CollisionField::Raw {
            scene: problem.scene,
            params: CostParams::new(params.epsilon)?,
        },
        FieldSource::LearnedSvm => {
            let model = model.ok_or_else(|| {
                Error::Domain("learned field source requires a trained model".into())
            })?;
            CollisionField::Learned { model }
        }
    };
    let mut objective = Objective::new(robot, field, problem.grid);
    objective.weight = params.weight;

    let basis = PlanBasis::build(robot, &problem.grid, problem.harmonics);
    let mut a = init_min_kinetic(&problem.start, &problem.goal, problem.harmonics, &problem.grid)?;

    // The minimum-kinetic init ignores the inequalities; clip any offending
    // waypoints into the limits and refit with the endpoints pinned.
    {
        let waypoints = a.discretize(&problem.grid);
        let mut clipped = waypoints.clone();
        let mut any = false;
        for t in 0..clipped.nrows() {
            for j in 0..m {
                let v = clipped[(t, j)].clamp(robot.theta_min()[j], robot.theta_max()[j]);
                if v != clipped[(t, j)] {
                    clipped[(t, j)] = v;
                    any = true;
                }
            }
        }
        if any {
            a = fit_waypoints_constrained(
                &clipped,
                &problem.start,
                &problem.goal,
                problem.harmonics,
                &problem.grid,
            )?;
        }
    }

    let dim = m * (problem.harmonics + 1);
    let samples = problem.grid.num_samples();
    let mut f_hist = DVector::zeros(samples);
    let mut jac_hist = DMatrix::zeros(samples, dim);
    let mut trace = Vec::new();
    let mut converged = false;
    let qp_opts = QpOptions { tol: params.qp_tol, max_iter: 100 };

    let mut iterations = 0;
    for iter in 1..=params.max_iter {
        iterations = iter;
        let pot = objective.potential_functional(&a);
        let hamiltonian = params.rho * kinetic_energy(&a) + pot.value;

        ema_update(&mut f_hist, &pot.residuals, params.alpha);
        ema_update(&mut jac_hist, &pot.jacobian, params.beta);
        let f_hat = bias_correct_vec(&f_hist, params.alpha, iter)?;
        let jac_hat = bias_correct_mat(&jac_hist, params.beta, iter)?;

        let mut a_flat = a.flatten();
        let qp = build_model(&basis, &a_flat, &f_hat, &jac_hat, params, &problem.start, &problem.goal)?;
        let sol = solve_qp(&qp, &qp_opts)?;
        if sol.status == QpStatus::Infeasible {
            return Err(Error::Numerical(format!(
                "QP subproblem infeasible at iteration {iter} (endpoint drift {:.2e})",
                sol.kkt_residuals.primal_eq
            )));
        }
        // Whatever the convergence status, the step is only usable if it
        // keeps the endpoint and limit invariants; those come from the
        // primal residuals.
        if sol.kkt_residuals.primal_eq > 1e-8 || sol.kkt_residuals.primal_ineq > 1e-8 {
            return Err(Error::Numerical(format!(
                "QP subproblem too inaccurate at iteration {iter}: eq {:.2e}, ineq {:.2e}",
                sol.kkt_residuals.primal_eq, sol.kkt_residuals.primal_ineq
            )));
        }

        let step_norm = sol.x.norm();
        a_flat += &sol.x;
        a = AmplitudeMatrix::from_flat(m, problem.harmonics, &a_flat)?;

        let (endpoint_error, limit_excess, max_penetration) =
            waypoint_metrics(problem, &basis, &a_flat);
        trace.push(IterRecord {
            hamiltonian,
            step_norm,
            max_penetration,
            qp_status: sol.status,
            endpoint_error,
            limit_excess,
        });

        if step_norm <= params.step_tol {
            converged = true;
            break;
        }
    }

    let audit = audit_feasibility(problem, &a, params.epsilon);
    let final_hamiltonian = params.rho * kinetic_energy(&a) + objective.potential(&a).value;
    Ok(PlanResult {
        amplitudes: a,
        converged,
        iterations,
        feasible: audit.feasible,
        final_hamiltonian,
        trace,
    })
}
