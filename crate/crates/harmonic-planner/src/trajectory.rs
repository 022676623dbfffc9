//! Cosine-series trajectory representation.
//!
//! A joint trajectory is written as a truncated cosine series per joint,
//!
//! ```text
//! theta_m(t) = sum_{n=0..N} a[m][n] * cos(2*pi*n*t / T),
//! ```
//!
//! sampled on the half period `t = 0 ..= T/2`. Keeping only cosines makes the
//! motion symmetric about `t = T/2`, so the periodic extension has no endpoint
//! jump and both endpoints are exactly at rest. The amplitudes `a` are the
//! optimization variable everywhere else in this crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform sample grid over the half period.
///
/// Holds the full period `T` (even, at least 2); samples live at the integer
/// indices `0 ..= T/2`. The normalized phase of a (possibly fractional) sample
/// index is `2*pi*t/T`, so the half period always maps onto `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleGrid {
    period: usize,
}

impl SampleGrid {
    pub fn new(period: usize) -> Result<Self> {
        if period < 2 || period % 2 != 0 {
            return Err(Error::Domain(format!(
                "sample period must be even and >= 2, got {period}"
            )));
        }
        Ok(SampleGrid { period })
    }

    /// Full period `T`.
    pub fn period(&self) -> usize {
        self.period
    }

    /// Last sample index, `T/2`.
    pub fn half(&self) -> usize {
        self.period / 2
    }

    /// Number of samples on the half period, `T/2 + 1`.
    pub fn num_samples(&self) -> usize {
        self.period / 2 + 1
    }

    /// Normalized phase `2*pi*t/T` of a (fractional) sample index.
    pub fn phase(&self, t: f64) -> f64 {
        2.0 * std::f64::consts::PI * t / self.period as f64
    }

    /// `cos(2*pi*n*t/T)`.
    fn harmonic_cos(&self, t: f64, n: usize) -> f64 {
        let u = 2.0 * n as f64 * t / self.period as f64;
        if u.fract() == 0.0 {
            // cos(pi*k) for integer k; exact so endpoint identities hold bitwise.
            if (u as i64) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            (std::f64::consts::PI * u).cos()
        }
    }

    /// `sin(2*pi*n*t/T)`, exactly zero whenever the argument is a multiple of pi.
    ///
    /// The exactness matters: it makes `velocity` vanish identically at `t = 0`
    /// and `t = T/2`, which downstream code relies on (endpoints at rest).
    fn harmonic_sin(&self, t: f64, n: usize) -> f64 {
        let u = 2.0 * n as f64 * t / self.period as f64;
        if u.fract() == 0.0 {
            0.0
        } else {
            (std::f64::consts::PI * u).sin()
        }
    }
}

/// The `M x (N+1)` cosine amplitudes of an `M`-joint trajectory.
///
/// Row `m` holds joint `m`'s amplitudes for harmonic orders `0 ..= N` (order 0
/// is the DC term). The flattened view used by the optimizer orders entries
/// joint-major: `[a[0][0..=N], a[1][0..=N], ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMatrix {
    data: DMatrix<f64>,
}

impl AmplitudeMatrix {
    /// Wraps an `M x (N+1)` matrix. All entries must be finite.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::Dimension(
                "amplitude matrix needs at least one joint and the DC column".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("amplitude matrix contains a non-finite entry".into()));
        }
        Ok(AmplitudeMatrix { data })
    }

    pub fn zeros(joints: usize, harmonics: usize) -> Self {
        AmplitudeMatrix { data: DMatrix::zeros(joints, harmonics + 1) }
    }

    /// DC-only amplitudes: the constant trajectory `theta(t) = q`.
    pub fn constant(q: &DVector<f64>, harmonics: usize) -> Self {
        let mut data = DMatrix::zeros(q.len(), harmonics + 1);
        data.column_mut(0).copy_from(q);
        AmplitudeMatrix { data }
    }

    /// Number of joints `M`.
    pub fn joints(&self) -> usize {
        self.data.nrows()
    }

    /// Highest harmonic order `N`.
    pub fn harmonics(&self) -> usize {
        self.data.ncols() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn get(&self, joint: usize, order: usize) -> f64 {
        self.data[(joint, order)]
    }

    pub fn set(&mut self, joint: usize, order: usize, value: f64) {
        self.data[(joint, order)] = value;
    }

    /// Flattened joint-major amplitude vector of length `M*(N+1)`.
    pub fn flatten(&self) -> DVector<f64> {
        let (m, cols) = self.data.shape();
        let mut v = DVector::zeros(m * cols);
        for joint in 0..m {
            for order in 0..cols {
                v[joint * cols + order] = self.data[(joint, order)];
            }
        }
        v
    }

    /// Rebuilds the matrix from a flattened joint-major vector.
    pub fn from_flat(joints: usize, harmonics: usize, flat: &DVector<f64>) -> Result<Self> {
        let cols = harmonics + 1;
        if flat.len() != joints * cols {
            return Err(Error::Dimension(format!(
                "flat amplitude vector has length {}, expected {}",
                flat.len(),
                joints * cols
            )));
        }
        let mut data = DMatrix::zeros(joints, cols);
        for joint in 0..joints {
            for order in 0..cols {
                data[(joint, order)] = flat[joint * cols + order];
            }
        }
        AmplitudeMatrix::new(data)
    }

    /// Adds a flattened step `delta` in place (the optimizer update `a + da`).
    pub fn add_flat(&mut self, delta: &DVector<f64>) -> Result<()> {
        let (m, cols) = self.data.shape();
        if delta.len() != m * cols {
            return Err(Error::Dimension(format!(
                "step has length {}, expected {}",
                delta.len(),
                m * cols
            )));
        }
        for joint in 0..m {
            for order in 0..cols {
                self.data[(joint, order)] += delta[joint * cols + order];
            }
        }
        Ok(())
    }

    /// Joint configuration `theta(t)`; `t` may be fractional for fine audits.
    pub fn evaluate(&self, grid: &SampleGrid, t: f64) -> DVector<f64> {
        let (m, cols) = self.data.shape();
        let row: Vec<f64> = (0..cols).map(|n| grid.harmonic_cos(t, n)).collect();
        DVector::from_fn(m, |joint, _| {
            (0..cols).map(|n| self.data[(joint, n)] * row[n]).sum()
        })
    }

    /// Joint velocity `d theta / d t` at (fractional) sample index `t`.
    ///
    /// Exactly zero at `t = 0` and `t = T/2` for every amplitude matrix.
    pub fn velocity(&self, grid: &SampleGrid, t: f64) -> DVector<f64> {
        let (m, cols) = self.data.shape();
        let scale = 2.0 * std::f64::consts::PI / grid.period() as f64;
        let row: Vec<f64> = (0..cols)
            .map(|n| -(n as f64) * scale * grid.harmonic_sin(t, n))
            .collect();
        DVector::from_fn(m, |joint, _| {
            (1..cols).map(|n| self.data[(joint, n)] * row[n]).sum()
        })
    }

    /// Waypoint stack: row `t` is `theta(t)` for integer `t = 0 ..= T/2`.
    pub fn discretize(&self, grid: &SampleGrid) -> DMatrix<f64> {
        let m = self.joints();
        let mut out = DMatrix::zeros(grid.num_samples(), m);
        for t in 0..grid.num_samples() {
            let theta = self.evaluate(grid, t as f64);
            out.row_mut(t).copy_from(&theta.transpose());
        }
        out
    }
}

/// Cosine row `(1, cos(n*phase), ...)` at sample `t`, length `N+1`.
pub(crate) fn cos_row(grid: &SampleGrid, harmonics: usize, t: f64) -> Vec<f64> {
    (0..=harmonics).map(|n| grid.harmonic_cos(t, n)).collect()
}

/// Phase derivative of the cosine row: entries `-n*sin(n*phase)`.
///
/// This is `d/d tau` with `tau = 2*pi*t/T`, i.e. velocities measured on the
/// normalized period `2*pi` that the kinetic-energy constant assumes.
pub(crate) fn dcos_row(grid: &SampleGrid, harmonics: usize, t: f64) -> Vec<f64> {
    (0..=harmonics)
        .map(|n| -(n as f64) * grid.harmonic_sin(t, n))
        .collect()
}

/// Second phase derivative of the cosine row: entries `-n^2*cos(n*phase)`.
pub(crate) fn ddcos_row(grid: &SampleGrid, harmonics: usize, t: f64) -> Vec<f64> {
    (0..=harmonics)
        .map(|n| -((n * n) as f64) * grid.harmonic_cos(t, n))
        .collect()
}

/// The `M x M(N+1)` block-diagonal basis matrix `C_t` mapping flattened
/// amplitudes to the configuration at integer sample `t`.
pub fn basis_block(
    grid: &SampleGrid,
    joints: usize,
    harmonics: usize,
    t: usize,
) -> Result<DMatrix<f64>> {
    if t > grid.half() {
        return Err(Error::Domain(format!(
            "sample index {t} outside 0..={}",
            grid.half()
        )));
    }
    let cols = harmonics + 1;
    let row = cos_row(grid, harmonics, t as f64);
    let mut block = DMatrix::zeros(joints, joints * cols);
    for joint in 0..joints {
        for n in 0..cols {
            block[(joint, joint * cols + n)] = row[n];
        }
    }
    Ok(block)
}

/// The stacked basis matrix of all half-period samples: `C_t` blocks for
/// `t = 0 ..= T/2` on top of each other, shape `M(T/2+1) x M(N+1)`.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    stacked: DMatrix<f64>,
    joints: usize,
}

impl BasisMatrix {
    pub fn build(grid: &SampleGrid, joints: usize, harmonics: usize) -> Self {
        let cols = joints * (harmonics + 1);
        let mut stacked = DMatrix::zeros(grid.num_samples() * joints, cols);
        for t in 0..grid.num_samples() {
            let block = basis_block(grid, joints, harmonics, t).expect("t in range");
            stacked.rows_mut(t * joints, joints).copy_from(&block);
        }
        BasisMatrix { stacked, joints }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// The `C_t` block for one sample.
    pub fn block(&self, t: usize) -> DMatrix<f64> {
        self.stacked.rows(t * self.joints, self.joints).into_owned()
    }
}

/// Kinetic energy `(pi/4) * sum_m sum_{n>=1} n^2 a[m][n]^2` over the half
/// period, with time normalized so the full period is `2*pi`.
pub fn kinetic_energy(a: &AmplitudeMatrix) -> f64 {
    let quarter_pi = std::f64::consts::PI / 4.0;
    let mut total = 0.0;
    for joint in 0..a.joints() {
        for n in 1..=a.harmonics() {
            let amp = a.get(joint, n);
            total += (n * n) as f64 * amp * amp;
        }
    }
    quarter_pi * total
}

/// The constant kinetic Hessian `K`: block diagonal per joint with
/// `(pi/4) * diag(0, 1, 4, ..., N^2)`, so that `a' K a = kinetic_energy(a)`.
///
/// `K` is positive semidefinite, not definite: the DC column of every joint
/// costs nothing.
pub fn kinetic_hessian(joints: usize, harmonics: usize) -> DMatrix<f64> {
    let cols = harmonics + 1;
    let quarter_pi = std::f64::consts::PI / 4.0;
    let mut k = DMatrix::zeros(joints * cols, joints * cols);
    for joint in 0..joints {
        for n in 0..cols {
            let idx = joint * cols + n;
            k[(idx, idx)] = quarter_pi * (n * n) as f64;
        }
    }
    k
}

/// Regularization added to the DC diagonal of `K` when it appears inside a
/// linear system, lifting the zero eigenvalues without moving the minimizer
/// beyond working precision.
const DC_REGULARIZATION: f64 = 1e-10;

/// Minimum-kinetic-energy amplitudes hitting `theta0` at `t = 0` and
/// `theta_goal` at `t = T/2`.
///
/// Solves, independently per joint, the equality-constrained QP
/// `min a' K a  s.t.  C_0 a = theta0, C_{T/2} a = theta_goal` through its KKT
/// system, with the DC block regularized (`K` is only semidefinite).
pub fn init_min_kinetic(
    theta0: &DVector<f64>,
    theta_goal: &DVector<f64>,
    harmonics: usize,
    grid: &SampleGrid,
) -> Result<AmplitudeMatrix> {
    if theta0.len() != theta_goal.len() {
        return Err(Error::Dimension(format!(
            "start has {} joints, goal has {}",
            theta0.len(),
            theta_goal.len()
        )));
    }
    if harmonics == 0 && theta0 != theta_goal {
        return Err(Error::Domain(
            "harmonics = 0 can only represent constant trajectories".into(),
        ));
    }
    let joints = theta0.len();
    let cols = harmonics + 1;
    let quarter_pi = std::f64::consts::PI / 4.0;

    let row0 = cos_row(grid, harmonics, 0.0);
    let row_h = cos_row(grid, harmonics, grid.half() as f64);

    let mut a = AmplitudeMatrix::zeros(joints, harmonics);
    // Per joint: KKT system of size (N+1) + 2 in (amplitudes, two multipliers).
    for joint in 0..joints {
        let dim = cols + 2;
        let mut kkt = DMatrix::zeros(dim, dim);
        for n in 0..cols {
            let mut h = 2.0 * quarter_pi * (n * n) as f64;
            if n == 0 {
                h += 2.0 * DC_REGULARIZATION;
            }
            kkt[(n, n)] = h;
            kkt[(n, cols)] = row0[n];
            kkt[(n, cols + 1)] = row_h[n];
            kkt[(cols, n)] = row0[n];
            kkt[(cols + 1, n)] = row_h[n];
        }
        let mut rhs = DVector::zeros(dim);
        rhs[cols] = theta0[joint];
        rhs[cols + 1] = theta_goal[joint];

        let solution = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular KKT system in min-kinetic init".into()))?;
        for n in 0..cols {
            a.set(joint, n, solution[n]);
        }
    }

    // The KKT route must reproduce the endpoints essentially exactly.
    let at0 = a.evaluate(grid, 0.0);
    let ath = a.evaluate(grid, grid.half() as f64);
    if (&at0 - theta0).amax() > 1e-10 || (&ath - theta_goal).amax() > 1e-10 {
        return Err(Error::Numerical(
            "min-kinetic init failed to satisfy endpoint constraints".into(),
        ));
    }
    Ok(a)
}

/// Least-squares fit of amplitudes to a waypoint stack with the endpoints
/// pinned exactly: `min ||C a - waypoints||^2 s.t. C_0 a = theta0, C_{T/2} a =
/// theta_goal`. Used to repair an initialization whose interior waypoints were
/// clipped into the joint limits.
pub fn fit_waypoints_constrained(
    waypoints: &DMatrix<f64>,
    theta0: &DVector<f64>,
    theta_goal: &DVector<f64>,
    harmonics: usize,
    grid: &SampleGrid,
) -> Result<AmplitudeMatrix> {
    let joints = theta0.len();
    let samples = grid.num_samples();
    if waypoints.nrows() != samples || waypoints.ncols() != joints {
        return Err(Error::Dimension(format!(
            "waypoint stack is {}x{}, expected {}x{}",
            waypoints.nrows(),
            waypoints.ncols(),
            samples,
            joints
        )));
    }
    let cols = harmonics + 1;
    // Per-joint Vandermonde of cosine rows.
    let mut vander = DMatrix::zeros(samples, cols);
    for t in 0..samples {
        let row = cos_row(grid, harmonics, t as f64);
        for n in 0..cols {
            vander[(t, n)] = row[n];
        }
    }
    let gram = vander.transpose() * &vander;
    let row0 = cos_row(grid, harmonics, 0.0);
    let row_h = cos_row(grid, harmonics, grid.half() as f64);

    let mut a = AmplitudeMatrix::zeros(joints, harmonics);
    for joint in 0..joints {
        let dim = cols + 2;
        let mut kkt = DMatrix::zeros(dim, dim);
        for i in 0..cols {
            for j in 0..cols {
                kkt[(i, j)] = 2.0 * gram[(i, j)];
            }
            kkt[(i, i)] += 1e-12;
            kkt[(i, cols)] = row0[i];
            kkt[(i, cols + 1)] = row_h[i];
            kkt[(cols, i)] = row0[i];
            kkt[(cols + 1, i)] = row_h[i];
        }
        let target = vander.transpose() * waypoints.column(joint);
        let mut rhs = DVector::zeros(dim);
        for i in 0..cols {
            rhs[i] = 2.0 * target[i];
        }
        rhs[cols] = theta0[joint];
        rhs[cols + 1] = theta_goal[joint];
        let solution = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular system in constrained waypoint fit".into()))?;
        for n in 0..cols {
            a.set(joint, n, solution[n]);
        }
    }
    Ok(a)
}
