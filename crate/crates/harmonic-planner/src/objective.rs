//! Trajectory objective: collision potential over the waypoint stack, its
//! gradient in amplitude space, and the balanced Hamiltonian.
//!
//! Per sample `t`, the penalty is the worst ball's buffered collision cost
//! weighted by that ball's workspace speed (the arc-length convention: fast
//! motion through the buffer costs more than a slow graze),
//!
//! ```text
//! f_p(t) = max_i  c(x_i(theta_t)) * ||xdot_i(t)||,
//! ```
//!
//! and the potential energy of the trajectory is `sum_t f_p(t)^2`. The
//! gradient returned here is the exact derivative of `f_p` with respect to
//! the amplitudes (at the maximizing ball), including the configuration
//! dependence of the ball Jacobian; it matches central finite differences to
//! truncation error, which is what the Gauss-Newton model downstream assumes.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::field::CollisionFieldModel;
use crate::robot::RobotModel;
use crate::scene::{collision_cost, CostParams, Scene};
use crate::trajectory::{cos_row, dcos_row, ddcos_row, AmplitudeMatrix, SampleGrid};

/// Where collision costs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    /// Buffered hinge on the scene's exact signed distance.
    RawSdf,
    /// Trained SVM field (requires a model).
    LearnedSvm,
}

/// A collision cost with gradient, evaluated at ball centers.
pub enum CollisionField<'a> {
    Raw { scene: &'a Scene, params: CostParams },
    /// The learned field ignores the query radius: ball radii were already
    /// folded into the labels at training time.
    Learned { model: &'a CollisionFieldModel },
}

impl CollisionField<'_> {
    /// Cost and its gradient with respect to the ball center.
    pub fn cost_and_gradient(&self, center: &Vector3<f64>, radius: f64) -> (f64, Vector3<f64>) {
        match self {
            CollisionField::Raw { scene, params } => {
                let (d, grad_d) = scene.signed_distance(center, radius);
                let (c, dc_dd) = collision_cost(d, params);
                (c, grad_d * dc_dd)
            }
            CollisionField::Learned { model } => (model.value(center), model.gradient(center)),
        }
    }
}

/// How the collision cost is weighted inside `f_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArcWeight {
    /// Ball speed `||xdot||` (default).
    #[default]
    Velocity,
    /// Ball position norm `||x||`, kept for comparison experiments.
    Position,
}

/// Floor on the arc weight. Endpoint samples are exactly at rest under the
/// cosine basis, so the weight is floored there and the weight-derivative
/// term is suppressed.
pub const DEFAULT_ETA: f64 = 1e-6;

/// One sample's penalty value and exact amplitude-space gradient.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Index of the maximizing ball, `None` when every ball costs zero.
    pub argmax_ball: Option<usize>,
}

/// Stacked potential evaluation over the half-period grid.
#[derive(Debug, Clone)]
pub struct PotentialEval {
    /// `f`: per-sample penalties, length `T/2 + 1`.
    pub residuals: DVector<f64>,
    /// `F`: per-sample gradients, shape `(T/2+1) x M(N+1)`.
    pub jacobian: DMatrix<f64>,
    pub argmax_balls: Vec<Option<usize>>,
    /// `sum_t f_t^2`.
    pub value: f64,
}

pub struct Objective<'a> {
    pub robot: &'a RobotModel,
    pub field: CollisionField<'a>,
    pub grid: SampleGrid,
    pub weight: ArcWeight,
    pub eta: f64,
}

impl<'a> Objective<'a> {
    pub fn new(robot: &'a RobotModel, field: CollisionField<'a>, grid: SampleGrid) -> Self {
        Objective { robot, field, grid, weight: ArcWeight::Velocity, eta: DEFAULT_ETA }
    }

    fn amplitude_dim(&self, a: &AmplitudeMatrix) -> usize {
        a.joints() * (a.harmonics() + 1)
    }

    /// Configuration and phase-velocity at integer sample `t`.
    fn theta_and_velocity(
        &self,
        a: &AmplitudeMatrix,
        t: usize,
    ) -> (DVector<f64>, DVector<f64>, Vec<f64>, Vec<f64>) {
        let n = a.harmonics();
        let row = cos_row(&self.grid, n, t as f64);
        let drow = dcos_row(&self.grid, n, t as f64);
        let m = a.joints();
        let theta = DVector::from_fn(m, |j, _| (0..=n).map(|k| a.get(j, k) * row[k]).sum());
        let vel = DVector::from_fn(m, |j, _| (0..=n).map(|k| a.get(j, k) * drow[k]).sum());
        (theta, vel, row, drow)
    }

    /// Cost-weight product of one ball at one sample.
    fn ball_value(&self, kin: &crate::robot::BallKinematics) -> (f64, f64, f64) {
        let (c, _) = self.field.cost_and_gradient(&kin.state.center, kin.state.radius);
        let raw = match self.weight {
            ArcWeight::Velocity => kin.velocity.norm(),
            ArcWeight::Position => kin.state.center.norm(),
        };
        let weight = raw.max(self.eta);
        (c * weight, c, raw)
    }

    /// The per-sample penalty `f_p` (max over balls, ties to lowest index).
    pub fn fp(&self, a: &AmplitudeMatrix, t: usize) -> f64 {
        self.sample_eval(a, t).value
    }

    /// `f_p` restricted to one ball; the hook for frozen-argmax finite
    /// differencing in tests.
    pub fn fp_for_ball(&self, a: &AmplitudeMatrix, t: usize, ball: usize) -> f64 {
        assert!(t <= self.grid.half(), "sample index out of range");
        let (theta, vel, _, _) = self.theta_and_velocity(a, t);
        let kin = &self.robot.ball_kinematics(&theta, &vel)[ball];
        self.ball_value(kin).0
    }

    /// Penalty and exact gradient at sample `t`.
    ///
    /// With the maximizing ball frozen, `f_p = c(x) * w`, and
    ///
    /// ```text
    /// d f_p / d a[m][n] = w * (J' grad_c)[m] * cos_row[n]
    ///                   + c * (J' vhat)[m] * dcos_row[n]        (velocity weight)
    ///                   + c * (L' vhat)[m] * cos_row[n]
    /// ```
    ///
    /// where `L = d(J v)/d theta` carries the configuration dependence of the
    /// Jacobian and `vhat` the unit ball velocity. The two weight terms are
    /// suppressed when the speed sits on the floor `eta`.
    pub fn sample_eval(&self, a: &AmplitudeMatrix, t: usize) -> SampleEval {
        assert!(t <= self.grid.half(), "sample index out of range");
        let dim = self.amplitude_dim(a);
        let (theta, vel, row, drow) = self.theta_and_velocity(a, t);
        let kins = self.robot.ball_kinematics(&theta, &vel);

        let mut best: Option<(usize, f64)> = None;
        for (i, kin) in kins.iter().enumerate() {
            let (value, _, _) = self.ball_value(kin);
            if best.map_or(true, |(_, v)| value > v) {
                best = Some((i, value));
            }
        }
        let (ball_idx, value) = best.expect("robot has at least one ball");
        if value == 0.0 {
            return SampleEval { value: 0.0, gradient: DVector::zeros(dim), argmax_ball: None };
        }

        let kin = &kins[ball_idx];
        let (c, grad_c) = self.field.cost_and_gradient(&kin.state.center, kin.state.radius);
        let cols = a.harmonics() + 1;
        let m = a.joints();
        let mut gradient = DVector::zeros(dim);

        match self.weight {
            ArcWeight::Velocity => {
                let speed = kin.velocity.norm();
                let w = speed.max(self.eta);
                let jt_gc = kin.state.jacobian.transpose() * grad_c;
                if speed > self.eta {
                    let vhat = kin.velocity / speed;
                    let jt_vhat = kin.state.jacobian.transpose() * vhat;
                    let lt_vhat = kin.velocity_jacobian.transpose() * vhat;
                    for j in 0..m {
                        for n in 0..cols {
                            gradient[j * cols + n] = w * jt_gc[j] * row[n]
                                + c * (jt_vhat[j] * drow[n] + lt_vhat[j] * row[n]);
                        }
                    }
                } else {
                    for j in 0..m {
                        for n in 0..cols {
                            gradient[j * cols + n] = w * jt_gc[j] * row[n];
                        }
                    }
                }
            }
            ArcWeight::Position => {
                let dist = kin.state.center.norm();
                let w = dist.max(self.eta);
                let jt_gc = kin.state.jacobian.transpose() * grad_c;
                if dist > self.eta {
                    let xhat = kin.state.center / dist;
                    let jt_xhat = kin.state.jacobian.transpose() * xhat;
                    for j in 0..m {
                        for n in 0..cols {
                            gradient[j * cols + n] =
                                (w * jt_gc[j] + c * jt_xhat[j]) * row[n];
                        }
                    }
                } else {
                    for j in 0..m {
                        for n in 0..cols {
                            gradient[j * cols + n] = w * jt_gc[j] * row[n];
                        }
                    }
                }
            }
        }
        SampleEval { value, gradient, argmax_ball: Some(ball_idx) }
    }

    /// Potential energy `sum_t f_p(t)^2` with the stacked residuals and
    /// exact per-sample gradients.
    pub fn potential(&self, a: &AmplitudeMatrix) -> PotentialEval {
        self.potential_with(a, |t| self.sample_eval(a, t))
    }

    /// Like [`Objective::potential`], but the Jacobian rows are the
    /// path-space functional gradients (see
    /// [`Objective::functional_gradient`], without the sample-count
    /// normalization — a constant row scale only retunes the damping). This
    /// is what the optimizer's Gauss-Newton model consumes: the projected
    /// rows contain no along-velocity component, so the model cannot "pay
    /// down" collision cost by slowing the trajectory inside an obstacle —
    /// only by moving the path out.
    pub fn potential_functional(&self, a: &AmplitudeMatrix) -> PotentialEval {
        self.potential_with(a, |t| {
            let (value, gradient, argmax_ball) = self.functional_row(a, t);
            SampleEval { value, gradient, argmax_ball }
        })
    }

    fn potential_with(
        &self,
        a: &AmplitudeMatrix,
        eval_at: impl Fn(usize) -> SampleEval,
    ) -> PotentialEval {
        let samples = self.grid.num_samples();
        let dim = self.amplitude_dim(a);
        let mut residuals = DVector::zeros(samples);
        let mut jacobian = DMatrix::zeros(samples, dim);
        let mut argmax_balls = Vec::with_capacity(samples);
        let mut value = 0.0;
        for t in 0..samples {
            let eval = eval_at(t);
            residuals[t] = eval.value;
            jacobian.row_mut(t).copy_from(&eval.gradient.transpose());
            argmax_balls.push(eval.argmax_ball);
            value += eval.value * eval.value;
        }
        PotentialEval { residuals, jacobian, argmax_balls, value }
    }

    /// The balanced objective `rho * kinetic + potential`.
    pub fn hamiltonian(&self, a: &AmplitudeMatrix, rho: f64) -> f64 {
        rho * crate::trajectory::kinetic_energy(a) + self.potential(a).value
    }

    /// Path-space (variational) gradient of the arc-length obstacle
    /// functional at sample `t`, in the projected-curvature form
    ///
    /// ```text
    /// (1/(T/2+1)) C_t' J' ||xdot|| [ (I - vhat vhat') grad_c - c kappa ],
    /// kappa = ||xdot||^-2 (I - vhat vhat') xddot,
    /// ```
    ///
    /// with the curvature term suppressed below the speed floor. This is the
    /// gradient of the continuous-time functional, not of the per-sample
    /// penalty, so it is not what finite differences of `fp` produce —
    /// [`Objective::sample_eval`] holds that exact gradient.
    pub fn functional_gradient(&self, a: &AmplitudeMatrix, t: usize) -> DVector<f64> {
        let (_, row, _) = self.functional_row(a, t);
        row / self.grid.num_samples() as f64
    }

    /// Unnormalized functional row: `fp`, `||xdot|| C_t' J' bracket`, argmax.
    fn functional_row(&self, a: &AmplitudeMatrix, t: usize) -> (f64, DVector<f64>, Option<usize>) {
        let dim = self.amplitude_dim(a);
        let value = self.fp(a, t);
        let Some((ball_idx, bracket, speed)) = self.workspace_bracket(a, t) else {
            return (value, DVector::zeros(dim), None);
        };
        let (theta, vel, row, _) = self.theta_and_velocity(a, t);
        let kins = self.robot.ball_kinematics(&theta, &vel);
        let kin = &kins[ball_idx];
        let jt_b = kin.state.jacobian.transpose() * bracket;
        let cols = a.harmonics() + 1;
        let mut gradient = DVector::zeros(dim);
        for j in 0..a.joints() {
            for n in 0..cols {
                gradient[j * cols + n] = speed * jt_b[j] * row[n];
            }
        }
        (value, gradient, Some(ball_idx))
    }

    /// The workspace-space bracket `[(I - vhat vhat') grad_c - c kappa]` of
    /// the maximizing ball, with its speed. `None` when the sample costs
    /// nothing.
    pub fn workspace_bracket(
        &self,
        a: &AmplitudeMatrix,
        t: usize,
    ) -> Option<(usize, Vector3<f64>, f64)> {
        assert!(t <= self.grid.half(), "sample index out of range");
        let (theta, vel, _, _) = self.theta_and_velocity(a, t);
        let kins = self.robot.ball_kinematics(&theta, &vel);
        let mut best: Option<(usize, f64)> = None;
        for (i, kin) in kins.iter().enumerate() {
            let (value, _, _) = self.ball_value(kin);
            if best.map_or(true, |(_, v)| value > v) {
                best = Some((i, value));
            }
        }
        let (ball_idx, value) = best?;
        if value == 0.0 {
            return None;
        }
        let kin = &kins[ball_idx];
        let (c, grad_c) = self.field.cost_and_gradient(&kin.state.center, kin.state.radius);
        let speed = kin.velocity.norm();

        // Acceleration via the second phase-derivative of the basis row.
        let n = a.harmonics();
        let ddrow = ddcos_row(&self.grid, n, t as f64);
        let acc_joint =
            DVector::from_fn(a.joints(), |j, _| (0..=n).map(|k| a.get(j, k) * ddrow[k]).sum());
        let acc: Vector3<f64> = &kin.state.jacobian * acc_joint;

        let bracket = if speed > self.eta {
            let vhat = kin.velocity / speed;
            let project = |v: &Vector3<f64>| v - vhat * vhat.dot(v);
            let kappa = project(&acc) / (speed * speed);
            project(&grad_c) - kappa * c
        } else {
            grad_c
        };
        Some((ball_idx, bracket, speed.max(self.eta)))
    }
}
