//! Serial-chain robot model with collision-check balls.
//!
//! A robot is a chain of revolute joints, each a unit rotation axis plus a
//! fixed translation from its parent frame, with spherical collision-check
//! balls (CCBs) attached to links. Only ball centers, radii, and their
//! Jacobians are ever needed by the planner, so no meshes or inertias appear
//! here.

use std::path::Path;

use nalgebra::{DVector, Matrix3xX, Rotation3, Unit, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

/// One revolute joint: rotation about `axis` after a fixed `offset` from the
/// parent frame.
#[derive(Debug, Clone)]
pub struct RevoluteJoint {
    pub axis: Unit<Vector3<f64>>,
    pub offset: Vector3<f64>,
}

/// A collision-check ball rigidly attached to the frame of joint `parent`.
#[derive(Debug, Clone)]
pub struct Ccb {
    pub parent: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    joints: Vec<RevoluteJoint>,
    theta_min: DVector<f64>,
    theta_max: DVector<f64>,
    ccbs: Vec<Ccb>,
}

/// Pose and differential data of one ball at a given configuration.
#[derive(Debug, Clone)]
pub struct BallState {
    pub center: Vector3<f64>,
    pub radius: f64,
    /// `d center / d theta`, 3 x M. Columns of joints downstream of the
    /// ball's parent are zero.
    pub jacobian: Matrix3xX<f64>,
}

/// `BallState` extended with velocity data for a given joint velocity `v`:
/// the ball velocity `J v` and the matrix `d(J v)/d theta`, which the exact
/// gradient of velocity-weighted collision costs needs.
#[derive(Debug, Clone)]
pub struct BallKinematics {
    pub state: BallState,
    pub velocity: Vector3<f64>,
    pub velocity_jacobian: Matrix3xX<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    version: u32,
    joints: Vec<JointEntry>,
    limits: LimitsEntry,
    ccbs: Vec<CcbEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    axis: [f64; 3],
    offset: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsEntry {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CcbEntry {
    parent: usize,
    offset: [f64; 3],
    radius: f64,
}

impl RobotModel {
    pub fn new(
        joints: Vec<RevoluteJoint>,
        theta_min: DVector<f64>,
        theta_max: DVector<f64>,
        ccbs: Vec<Ccb>,
    ) -> Result<Self> {
        let m = joints.len();
        if m == 0 {
            return Err(Error::Domain("robot needs at least one joint".into()));
        }
        if theta_min.len() != m || theta_max.len() != m {
            return Err(Error::Dimension(format!(
                "limits have lengths {}/{}, expected {m}",
                theta_min.len(),
                theta_max.len()
            )));
        }
        for j in 0..m {
            if !(theta_min[j] < theta_max[j]) {
                return Err(Error::Domain(format!(
                    "joint {j}: limit min {} must be below max {}",
                    theta_min[j], theta_max[j]
                )));
            }
        }
        if ccbs.is_empty() {
            return Err(Error::Domain("robot needs at least one collision-check ball".into()));
        }
        for (i, ball) in ccbs.iter().enumerate() {
            if ball.parent >= m {
                return Err(Error::Domain(format!(
                    "ball {i} references joint {} of a {m}-joint chain",
                    ball.parent
                )));
            }
            if !(ball.radius > 0.0) {
                return Err(Error::Domain(format!("ball {i} has non-positive radius")));
            }
        }
        Ok(RobotModel { joints, theta_min, theta_max, ccbs })
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: RobotFile = serde_json::from_str(text)
            .map_err(|e| Error::format(origin, e.to_string()))?;
        if file.version != 1 {
            return Err(Error::format(
                origin,
                format!("unsupported robot file version {}", file.version),
            ));
        }
        let joints = file
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let axis = Vector3::from(j.axis);
                if axis.norm() < 1e-9 {
                    return Err(Error::format(origin, format!("joint {i} has a zero axis")));
                }
                Ok(RevoluteJoint {
                    axis: Unit::new_normalize(axis),
                    offset: Vector3::from(j.offset),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ccbs = file
            .ccbs
            .iter()
            .map(|b| Ccb {
                parent: b.parent,
                offset: Vector3::from(b.offset),
                radius: b.radius,
            })
            .collect();
        RobotModel::new(
            joints,
            DVector::from_vec(file.limits.min),
            DVector::from_vec(file.limits.max),
            ccbs,
        )
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    /// Number of joints `M`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn num_balls(&self) -> usize {
        self.ccbs.len()
    }

    pub fn ccbs(&self) -> &[Ccb] {
        &self.ccbs
    }

    pub fn theta_min(&self) -> &DVector<f64> {
        &self.theta_min
    }

    pub fn theta_max(&self) -> &DVector<f64> {
        &self.theta_max
    }

    /// True iff `theta_min <= theta <= theta_max` componentwise (inclusive).
    pub fn within_limits(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dof()
            && (0..self.dof())
                .all(|j| self.theta_min[j] <= theta[j] && theta[j] <= self.theta_max[j])
    }

    /// World axis directions and joint origins at a configuration, plus the
    /// running frame after each joint.
    fn chain_frames(&self, theta: &DVector<f64>) -> Vec<FrameData> {
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        let mut frames = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            pos += rot * joint.offset;
            let axis_world = Unit::new_unchecked(rot * joint.axis.into_inner());
            rot *= Rotation3::from_axis_angle(&joint.axis, theta[j]);
            frames.push(FrameData { axis_world, origin: pos, rotation: rot });
        }
        frames
    }

    /// Ball centers with Jacobians. Joint limits are deliberately not
    /// enforced here; the optimizer owns them.
    pub fn forward_kinematics(&self, theta: &DVector<f64>) -> Vec<BallState> {
        let frames = self.chain_frames(theta);
        let m = self.dof();
        self.ccbs
            .iter()
            .map(|ball| {
                let frame = &frames[ball.parent];
                let center = frame.origin + frame.rotation * ball.offset;
                let mut jacobian = Matrix3xX::zeros(m);
                for k in 0..=ball.parent {
                    let col = frames[k].axis_world.cross(&(center - frames[k].origin));
                    jacobian.set_column(k, &col);
                }
                BallState { center, radius: ball.radius, jacobian }
            })
            .collect()
    }

    /// Ball states extended with velocity `J v` and `d(J v)/d theta` for a
    /// joint velocity `v`.
    ///
    /// For a revolute chain, with `J_j = w_j x (x - p_j)` the j-th Jacobian
    /// column (world axis `w_j`, joint origin `p_j`):
    ///
    /// ```text
    /// d J_j / d theta_k = w_k x J_j   (k <= j)
    ///                   = w_j x J_k   (k > j)
    /// ```
    ///
    /// so column k of `d(J v)/d theta` is
    /// `w_k x (sum_{j>=k} v_j J_j) + (sum_{j<k} v_j w_j) x J_k`.
    pub fn ball_kinematics(&self, theta: &DVector<f64>, v: &DVector<f64>) -> Vec<BallKinematics> {
        let frames = self.chain_frames(theta);
        let m = self.dof();
        self.ccbs
            .iter()
            .map(|ball| {
                let frame = &frames[ball.parent];
                let center = frame.origin + frame.rotation * ball.offset;
                let mut jacobian = Matrix3xX::zeros(m);
                for k in 0..=ball.parent {
                    let col = frames[k].axis_world.cross(&(center - frames[k].origin));
                    jacobian.set_column(k, &col);
                }
                let velocity: Vector3<f64> = (0..=ball.parent)
                    .map(|j| jacobian.column(j) * v[j])
                    .sum();

                // Suffix sums of v_j * J_j and prefix sums of v_j * w_j.
                let mut vel_jac = Matrix3xX::zeros(m);
                let mut tail = velocity; // sum_{j>=k} v_j J_j, starting at k=0
                let mut head = Vector3::zeros(); // sum_{j<k} v_j w_j
                for k in 0..=ball.parent {
                    let jk: Vector3<f64> = jacobian.column(k).into();
                    let wk = frames[k].axis_world.into_inner();
                    let col = wk.cross(&tail) + head.cross(&jk);
                    vel_jac.set_column(k, &col);
                    tail -= jk * v[k];
                    head += wk * v[k];
                }
                BallKinematics {
                    state: BallState { center, radius: ball.radius, jacobian },
                    velocity,
                    velocity_jacobian: vel_jac,
                }
            })
            .collect()
    }
}

struct FrameData {
    axis_world: Unit<Vector3<f64>>,
    origin: Vector3<f64>,
    rotation: Rotation3<f64>,
}
