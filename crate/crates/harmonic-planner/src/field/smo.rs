//! Sequential minimal optimization for the soft-margin Gaussian-kernel SVM.
//!
//! Platt-style SMO with a full error cache: the outer loop alternates sweeps
//! over all points and over the non-bound set, the second index is chosen to
//! maximize |E1 - E2| with seeded random fallbacks, and every accepted pair
//! update refreshes the cache in O(n) kernel evaluations. Kernels are
//! evaluated on the fly; no kernel matrix is stored, so training sets of a
//! few 10^4 points stay comfortably in memory.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{gauss_kernel, CollisionFieldModel, LabeledPoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SmoParams {
    /// Gaussian kernel width; `None` picks the nearest-neighbor heuristic.
    pub sigma: Option<f64>,
    /// Labeling buffer width of the dataset; only the kernel-width heuristic
    /// consults it (as a floor on sigma).
    pub epsilon: f64,
    /// Soft-margin box constant. Large values approach the hard margin.
    pub c_box: f64,
    /// KKT tolerance of the trained model.
    pub tol: f64,
    /// Cap on full sweeps over the training set.
    pub max_passes: usize,
    /// Seed for the tie-breaking random scans.
    pub seed: u64,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams { sigma: None, epsilon: 0.05, c_box: 10.0, tol: 1e-3, max_passes: 100, seed: 0 }
    }
}

/// Training byproducts that the model itself does not keep.
#[derive(Debug, Clone)]
pub struct SmoDiagnostics {
    /// Final multiplier of every training point (including zeros).
    pub alphas: Vec<f64>,
    /// Dual objective `sum(alpha) - 1/2 sum alpha_i alpha_j y_i y_j K_ij`.
    pub dual_objective: f64,
    /// Largest KKT violation of the stored model over the training set.
    pub kkt_max_violation: f64,
    pub converged: bool,
    pub full_sweeps: usize,
}

struct Trainer<'a> {
    points: &'a [LabeledPoint],
    sigma: f64,
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    errors: Vec<f64>,
    bias: f64,
    rng: ChaCha8Rng,
}

/// Multipliers below this are treated as zero when extracting the model.
const ALPHA_CUTOFF: f64 = 1e-8;

impl<'a> Trainer<'a> {
    fn new(points: &'a [LabeledPoint], sigma: f64, c: f64, tol: f64, seed: u64) -> Self {
        let n = points.len();
        Trainer {
            points,
            sigma,
            c,
            tol,
            alpha: vec![0.0; n],
            // f = 0 everywhere at alpha = 0, b = 0, so E_i = -y_i.
            errors: points.iter().map(|p| -p.label).collect(),
            bias: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn kernel(&self, i: usize, j: usize) -> f64 {
        gauss_kernel(&self.points[i].position, &self.points[j].position, self.sigma)
    }

    fn non_bound(&self, i: usize) -> bool {
        self.alpha[i] > ALPHA_CUTOFF && self.alpha[i] < self.c - ALPHA_CUTOFF
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (y1, y2) = (self.points[i1].label, self.points[i2].label);
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let (low, high) = if (y1 - y2).abs() > 0.5 {
            ((a2 - a1).max(0.0), (self.c + a2 - a1).min(self.c))
        } else {
            ((a1 + a2 - self.c).max(0.0), (a1 + a2).min(self.c))
        };
        if high - low < 1e-12 {
            return false;
        }
        let k11 = self.kernel(i1, i1);
        let k12 = self.kernel(i1, i2);
        let k22 = self.kernel(i2, i2);
        let eta = k11 + k22 - 2.0 * k12;
        let mut a2_new = if eta > 1e-12 {
            (a2 + y2 * (e1 - e2) / eta).clamp(low, high)
        } else {
            // Degenerate curvature: evaluate the dual objective at both ends.
            let f1 = y1 * (e1 + self.bias) - a1 * k11 - s * a2 * k12;
            let f2 = y2 * (e2 + self.bias) - s * a1 * k12 - a2 * k22;
            let l1 = a1 + s * (a2 - low);
            let h1 = a1 + s * (a2 - high);
            let obj_low = l1 * f1 + low * f2 + 0.5 * l1 * l1 * k11 + 0.5 * low * low * k22
                + s * low * l1 * k12;
            let obj_high = h1 * f1 + high * f2 + 0.5 * h1 * h1 * k11 + 0.5 * high * high * k22
                + s * high * h1 * k12;
            if obj_low < obj_high - 1e-12 {
                low
            } else if obj_high < obj_low - 1e-12 {
                high
            } else {
                return false;
            }
        };
        if (a2_new - a2).abs() < 1e-12 * (a2_new + a2 + 1e-12) {
            return false;
        }
        if a2_new < ALPHA_CUTOFF {
            a2_new = 0.0;
        } else if a2_new > self.c - ALPHA_CUTOFF {
            a2_new = self.c;
        }
        let a1_new = a1 + s * (a2 - a2_new);
        let a1_new = a1_new.clamp(0.0, self.c);

        let d1 = y1 * (a1_new - a1);
        let d2 = y2 * (a2_new - a2);
        // Choose the bias that zeroes the error of a non-bound member.
        let b1 = self.bias - e1 - d1 * k11 - d2 * k12;
        let b2 = self.bias - e2 - d1 * k12 - d2 * k22;
        let new_bias = if a1_new > ALPHA_CUTOFF && a1_new < self.c - ALPHA_CUTOFF {
            b1
        } else if a2_new > ALPHA_CUTOFF && a2_new < self.c - ALPHA_CUTOFF {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = new_bias - self.bias;

        self.alpha[i1] = a1_new;
        self.alpha[i2] = a2_new;
        self.bias = new_bias;
        for k in 0..self.points.len() {
            self.errors[k] += d1 * self.kernel(i1, k) + d2 * self.kernel(i2, k) + db;
        }
        // The cache drifts by rounding; pin the updated pair exactly.
        self.errors[i1] = self.decision_of(i1) - y1;
        self.errors[i2] = self.decision_of(i2) - y2;
        true
    }

    fn decision_of(&self, i: usize) -> f64 {
        let mut f = self.bias;
        for j in 0..self.points.len() {
            if self.alpha[j] > 0.0 {
                f += self.alpha[j] * self.points[j].label * self.kernel(i, j);
            }
        }
        f
    }

    fn examine(&mut self, i2: usize) -> bool {
        let y2 = self.points[i2].label;
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates = (r2 < -self.tol && self.alpha[i2] < self.c - ALPHA_CUTOFF)
            || (r2 > self.tol && self.alpha[i2] > ALPHA_CUTOFF);
        if !violates {
            return false;
        }
        let n = self.points.len();
        // Heuristic 1: maximize |E1 - E2| over the non-bound set.
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if self.non_bound(i) {
                let gap = (self.errors[i] - e2).abs();
                if best.map_or(true, |(g, _)| gap > g) {
                    best = Some((gap, i));
                }
            }
        }
        if let Some((_, i1)) = best {
            if self.take_step(i1, i2) {
                return true;
            }
        }
        // Heuristic 2: scan the non-bound set from a random start.
        let start = self.rng.random_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.non_bound(i1) && self.take_step(i1, i2) {
                return true;
            }
        }
        // Heuristic 3: scan everything from a random start.
        let start = self.rng.random_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }
}

/// Trains the collision field and returns the model together with training
/// diagnostics (per-point multipliers, dual objective, KKT audit).
pub fn train_smo_detailed(
    dataset: &[LabeledPoint],
    params: &SmoParams,
) -> Result<(CollisionFieldModel, SmoDiagnostics)> {
    let positives = dataset.iter().filter(|p| p.label > 0.0).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::DegenerateData(
            "training set must contain both collided and safe points".into(),
        ));
    }
    if dataset.iter().any(|p| p.label != 1.0 && p.label != -1.0) {
        return Err(Error::Domain("labels must be +1 or -1".into()));
    }
    let sigma = match params.sigma {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Domain(format!("sigma must be positive, got {s}"))),
        None => super::default_sigma(dataset, params.epsilon),
    };
    if !(params.c_box > 0.0) {
        return Err(Error::Domain("c_box must be positive".into()));
    }

    // Train against a tighter tolerance than requested so the bias recompute
    // below cannot push violations past the contract.
    let mut trainer = Trainer::new(dataset, sigma, params.c_box, params.tol * 0.5, params.seed);

    let n = dataset.len();
    let mut examine_all = true;
    let mut sweeps = 0;
    let mut converged = false;
    loop {
        let mut changed = 0usize;
        if examine_all {
            sweeps += 1;
            for i in 0..n {
                if trainer.examine(i) {
                    changed += 1;
                }
            }
        } else {
            for i in 0..n {
                if trainer.non_bound(i) && trainer.examine(i) {
                    changed += 1;
                }
            }
        }
        if examine_all {
            if changed == 0 {
                converged = true;
                break;
            }
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
        if sweeps >= params.max_passes {
            break;
        }
    }

    // Extract support vectors.
    let mut svs = Vec::new();
    let mut alphas = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        if trainer.alpha[i] > ALPHA_CUTOFF {
            svs.push(dataset[i].position);
            alphas.push(trainer.alpha[i]);
            labels.push(dataset[i].label);
        }
    }
    if svs.is_empty() {
        return Err(Error::Numerical("training produced no support vectors".into()));
    }

    // Bias: mean over on-margin support vectors (falls back to the loop bias
    // when every multiplier sits at a bound).
    let kernel_sum = |x: &Vector3<f64>| -> f64 {
        (0..svs.len())
            .map(|j| alphas[j] * labels[j] * gauss_kernel(x, &svs[j], sigma))
            .sum::<f64>()
    };
    let mut margin_bias = 0.0;
    let mut margin_count = 0usize;
    for i in 0..n {
        if trainer.alpha[i] > ALPHA_CUTOFF && trainer.alpha[i] < params.c_box - ALPHA_CUTOFF {
            margin_bias += dataset[i].label - kernel_sum(&dataset[i].position);
            margin_count += 1;
        }
    }
    let bias = if margin_count > 0 { margin_bias / margin_count as f64 } else { trainer.bias };

    let model =
        CollisionFieldModel::new(svs, alphas.clone(), labels.clone(), bias, sigma, converged)?;

    // KKT audit of the stored model over the full training set.
    let mut kkt_max = 0.0f64;
    for i in 0..n {
        let margin = dataset[i].label * model.decision(&dataset[i].position);
        let a = trainer.alpha[i];
        let violation = if a <= ALPHA_CUTOFF {
            (1.0 - margin).max(0.0)
        } else if a >= params.c_box - ALPHA_CUTOFF {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        kkt_max = kkt_max.max(violation);
    }

    // Dual objective over the support set (zero multipliers contribute nothing).
    let mut dual = alphas.iter().sum::<f64>();
    for i in 0..model.num_support_vectors() {
        for j in 0..model.num_support_vectors() {
            dual -= 0.5
                * alphas[i]
                * alphas[j]
                * labels[i]
                * labels[j]
                * gauss_kernel(&model.support_vectors()[i], &model.support_vectors()[j], sigma);
        }
    }

    let diagnostics = SmoDiagnostics {
        alphas: trainer.alpha,
        dual_objective: dual,
        kkt_max_violation: kkt_max,
        converged,
        full_sweeps: sweeps,
    };
    Ok((model, diagnostics))
}

/// Trains the collision field. See [`train_smo_detailed`] for diagnostics.
pub fn train_smo(dataset: &[LabeledPoint], params: &SmoParams) -> Result<CollisionFieldModel> {
    train_smo_detailed(dataset, params).map(|(model, _)| model)
}
