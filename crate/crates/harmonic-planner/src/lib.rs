//! Motion planning for serial manipulators by adjusting the cosine harmonics
//! of each joint's trajectory.
//!
//! The trajectory of every joint is a short cosine series over half a period,
//! so the motion is time-continuous, symmetric, and at rest at both endpoints
//! by construction. Planning minimizes a balance of trajectory smoothness and
//! obstacle clearance over the harmonic amplitudes, subject to exact start and
//! goal conditions and joint limits, with a damped Gauss-Newton model solved
//! by a primal-dual interior-point QP at each iteration. Clearance can come
//! from analytic signed distance fields directly, or from a smooth collision
//! field learned offline with a Gaussian-kernel SVM, which keeps the optimizer
//! out of the local traps that raw distance fields create.
//!
//! See the guide under `book/` for a narrative walk-through; its code blocks
//! compile and run as doctests of this crate.

pub mod error;
pub mod field;
pub mod objective;
pub mod planner;
pub mod qp;
pub mod robot;
pub mod scene;
pub mod trajectory;

pub use error::{Error, Result};
