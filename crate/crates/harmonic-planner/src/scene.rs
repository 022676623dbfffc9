//! Analytic signed-distance environment and the buffered collision cost.
//!
//! Scenes are compositions of primitive obstacles (spheres, axis-aligned
//! boxes, capsules) with exact signed distance functions, so gradients are
//! available in closed form everywhere finite-difference test suites need
//! them. Ball radii are folded into the query, reducing collision-check balls
//! to points.

use std::path::Path;

use nalgebra::Vector3;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Obstacle {
    Sphere { center: Vector3<f64>, radius: f64 },
    /// Axis-aligned box given by opposite corners.
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Capsule { p0: Vector3<f64>, p1: Vector3<f64>, radius: f64 },
}

/// Fallback direction where an SDF gradient is undefined (e.g. the exact
/// center of a sphere).
fn degenerate_gradient() -> Vector3<f64> {
    Vector3::x()
}

impl Obstacle {
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Obstacle::Sphere { center, radius } => (p - center).norm() - radius,
            Obstacle::Box { min, max } => {
                let center = (min + max) * 0.5;
                let half = (max - min) * 0.5;
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0));
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside.norm() + inside
            }
            Obstacle::Capsule { p0, p1, radius } => {
                (p - closest_on_segment(p, p0, p1)).norm() - radius
            }
        }
    }

    pub fn sdf_gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Obstacle::Sphere { center, .. } => {
                let d = p - center;
                let n = d.norm();
                if n < 1e-12 {
                    degenerate_gradient()
                } else {
                    d / n
                }
            }
            Obstacle::Box { min, max } => {
                let center = (min + max) * 0.5;
                let half = (max - min) * 0.5;
                let rel = p - center;
                let q = rel.abs() - half;
                let outside = q.map(|v| v.max(0.0));
                let n = outside.norm();
                if n > 0.0 {
                    // Outside: gradient points away from the nearest
                    // face/edge/corner, restoring the sign per axis.
                    Vector3::new(
                        outside.x * rel.x.signum(),
                        outside.y * rel.y.signum(),
                        outside.z * rel.z.signum(),
                    ) / n
                } else {
                    // Inside: toward the closest face.
                    let (mut axis, mut best) = (0, q.x);
                    if q.y > best {
                        axis = 1;
                        best = q.y;
                    }
                    if q.z > best {
                        axis = 2;
                    }
                    let mut g = Vector3::zeros();
                    g[axis] = if rel[axis] >= 0.0 { 1.0 } else { -1.0 };
                    g
                }
            }
            Obstacle::Capsule { p0, p1, .. } => {
                let d = p - closest_on_segment(p, p0, p1);
                let n = d.norm();
                if n < 1e-12 {
                    degenerate_gradient()
                } else {
                    d / n
                }
            }
        }
    }
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-18 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

#[derive(Debug, Clone, Default)]
pub struct Scene {
    obstacles: Vec<Obstacle>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    obstacles: Vec<ObstacleEntry>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum ObstacleEntry {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    Capsule { p0: [f64; 3], p1: [f64; 3], radius: f64 },
}

impl Scene {
    pub fn new(obstacles: Vec<Obstacle>) -> Result<Self> {
        for (i, obstacle) in obstacles.iter().enumerate() {
            let finite = match obstacle {
                Obstacle::Sphere { center, radius } => {
                    center.iter().all(|v| v.is_finite()) && radius.is_finite() && *radius > 0.0
                }
                Obstacle::Box { min, max } => {
                    if !(min.x < max.x && min.y < max.y && min.z < max.z) {
                        return Err(Error::Domain(format!(
                            "obstacle {i}: box min must be strictly below max componentwise"
                        )));
                    }
                    min.iter().chain(max.iter()).all(|v| v.is_finite())
                }
                Obstacle::Capsule { p0, p1, radius } => {
                    p0.iter().chain(p1.iter()).all(|v| v.is_finite())
                        && radius.is_finite()
                        && *radius > 0.0
                }
            };
            if !finite {
                return Err(Error::Domain(format!("obstacle {i} has non-finite or degenerate parameters")));
            }
        }
        Ok(Scene { obstacles })
    }

    pub fn empty() -> Self {
        Scene { obstacles: Vec::new() }
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: SceneFile =
            serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        if file.version != 1 {
            return Err(Error::format(
                origin,
                format!("unsupported scene file version {}", file.version),
            ));
        }
        let obstacles = file
            .obstacles
            .into_iter()
            .map(|o| match o {
                ObstacleEntry::Sphere { center, radius } => {
                    Obstacle::Sphere { center: Vector3::from(center), radius }
                }
                ObstacleEntry::Box { min, max } => {
                    Obstacle::Box { min: Vector3::from(min), max: Vector3::from(max) }
                }
                ObstacleEntry::Capsule { p0, p1, radius } => Obstacle::Capsule {
                    p0: Vector3::from(p0),
                    p1: Vector3::from(p1),
                    radius,
                },
            })
            .collect();
        Scene::new(obstacles)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    /// Signed distance from a ball of radius `ball_radius` centered at `point`
    /// to the nearest obstacle surface, with the gradient of the minimizing
    /// primitive's SDF. Ties go to the lowest obstacle index. An empty scene
    /// is infinitely far away with a zero gradient.
    pub fn signed_distance(&self, point: &Vector3<f64>, ball_radius: f64) -> (f64, Vector3<f64>) {
        let mut best = f64::INFINITY;
        let mut best_idx = None;
        for (i, obstacle) in self.obstacles.iter().enumerate() {
            let d = obstacle.sdf(point);
            if d < best {
                best = d;
                best_idx = Some(i);
            }
        }
        match best_idx {
            None => (f64::INFINITY, Vector3::zeros()),
            Some(i) => (best - ball_radius, self.obstacles[i].sdf_gradient(point)),
        }
    }
}

/// Parameters of the buffered collision cost.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    /// Buffer width in meters; must be positive.
    pub epsilon: f64,
}

impl CostParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(CostParams { epsilon })
    }
}

/// The hinge collision cost and its derivative in `d`:
/// zero beyond the buffer, `epsilon - d` (slope -1) at `d <= epsilon`.
pub fn collision_cost(d: f64, params: &CostParams) -> (f64, f64) {
    if d > params.epsilon {
        (0.0, 0.0)
    } else {
        (params.epsilon - d, -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere() -> Scene {
        Scene::new(vec![Obstacle::Sphere { center: Vector3::zeros(), radius: 1.0 }]).unwrap()
    }

    #[test]
    fn sphere_distance_and_gradient() {
        let scene = unit_sphere();
        let (d, g) = scene.signed_distance(&Vector3::new(2.0, 0.0, 0.0), 0.0);
        assert_relative_eq!(d, 1.0, epsilon = 1e-14);
        assert_relative_eq!(g, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-14);
    }

    #[test]
    fn deep_interior_uses_degenerate_gradient_convention() {
        let scene = unit_sphere();
        let (d, g) = scene.signed_distance(&Vector3::zeros(), 0.0);
        assert_relative_eq!(d, -1.0, epsilon = 1e-14);
        assert_eq!(g, Vector3::x());
    }

    #[test]
    fn ball_radius_shifts_distance() {
        let scene = unit_sphere();
        let (d, _) = scene.signed_distance(&Vector3::new(2.0, 0.0, 0.0), 0.25);
        assert_relative_eq!(d, 0.75, epsilon = 1e-14);
    }

    #[test]
    fn empty_scene_is_infinitely_clear() {
        let scene = Scene::empty();
        let (d, g) = scene.signed_distance(&Vector3::new(0.3, 0.4, 0.5), 0.1);
        assert_eq!(d, f64::INFINITY);
        assert_eq!(g, Vector3::zeros());
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // Two identical spheres: the first one's gradient convention wins.
        let scene = Scene::new(vec![
            Obstacle::Sphere { center: Vector3::new(-1.0, 0.0, 0.0), radius: 0.5 },
            Obstacle::Sphere { center: Vector3::new(1.0, 0.0, 0.0), radius: 0.5 },
        ])
        .unwrap();
        let (_, g) = scene.signed_distance(&Vector3::zeros(), 0.0);
        // Equidistant: gradient must be sphere 0's (pointing +x away from it).
        assert_relative_eq!(g, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-14);
    }

    /// Independent box-surface oracle: the closest surface point of an
    /// axis-aligned box is the closest point over its six face rectangles
    /// (each an elementary clamp), signed by a componentwise inside test.
    fn box_surface_oracle(min: &Vector3<f64>, max: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            for &(face, _other) in &[(min[axis], max[axis]), (max[axis], min[axis])] {
                let mut q = *p;
                q[axis] = face;
                for other in 0..3 {
                    if other != axis {
                        q[other] = q[other].clamp(min[other], max[other]);
                    }
                }
                best = best.min((p - q).norm());
            }
        }
        let inside = (0..3).all(|i| min[i] < p[i] && p[i] < max[i]);
        if inside {
            -best
        } else {
            best
        }
    }

    #[test]
    fn box_sdf_matches_surface_oracle() {
        let min = Vector3::new(-0.4, -0.2, -0.7);
        let max = Vector3::new(0.5, 0.9, 0.1);
        let obstacle = Obstacle::Box { min, max };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let p = Vector3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let expected = box_surface_oracle(&min, &max, &p);
            assert!(
                (obstacle.sdf(&p) - expected).abs() < 1e-3,
                "box sdf {} vs oracle {} at {p:?}",
                obstacle.sdf(&p),
                expected
            );
        }
    }

    #[test]
    fn capsule_sdf_basics() {
        let obstacle = Obstacle::Capsule {
            p0: Vector3::new(0.0, 0.0, 0.0),
            p1: Vector3::new(1.0, 0.0, 0.0),
            radius: 0.2,
        };
        // Beside the cylinder part.
        assert_relative_eq!(obstacle.sdf(&Vector3::new(0.5, 0.5, 0.0)), 0.3, epsilon = 1e-12);
        // Beyond the cap.
        assert_relative_eq!(obstacle.sdf(&Vector3::new(1.5, 0.0, 0.0)), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn gradients_are_unit_norm_away_from_ties() {
        let scene = Scene::new(vec![
            Obstacle::Sphere { center: Vector3::new(0.8, 0.1, -0.2), radius: 0.3 },
            Obstacle::Box { min: Vector3::new(-1.0, -1.0, -1.0), max: Vector3::new(-0.2, 0.0, 0.5) },
            Obstacle::Capsule {
                p0: Vector3::new(0.0, 0.8, 0.0),
                p1: Vector3::new(0.5, 1.2, 0.3),
                radius: 0.15,
            },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 500 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            // Skip near-ties between obstacles and degenerate interior points.
            let mut distances: Vec<f64> =
                scene.obstacles().iter().map(|o| o.sdf(&p)).collect();
            distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if distances[1] - distances[0] < 1e-6 {
                continue;
            }
            let (_, g) = scene.signed_distance(&p, 0.0);
            assert_relative_eq!(g.norm(), 1.0, epsilon = 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let scene = Scene::new(vec![
            Obstacle::Box { min: Vector3::new(-0.5, -0.5, -0.5), max: Vector3::new(0.5, 0.5, 0.5) },
            Obstacle::Capsule {
                p0: Vector3::new(1.0, 0.0, 0.0),
                p1: Vector3::new(1.5, 0.5, 0.0),
                radius: 0.2,
            },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = 1e-7;
        let mut checked = 0;
        while checked < 300 {
            let p = Vector3::new(
                rng.random_range(-1.5..2.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            );
            let (d, g) = scene.signed_distance(&p, 0.0);
            // Stay away from kinks: obstacle ties, surface, box face/edge
            // switches, capsule axis.
            let d0 = scene.obstacles()[0].sdf(&p);
            let d1 = scene.obstacles()[1].sdf(&p);
            if (d0 - d1).abs() < 1e-3 || d.abs() < 1e-3 {
                continue;
            }
            let mut fd = Vector3::zeros();
            let mut kinked = false;
            for axis in 0..3 {
                let mut pp = p;
                pp[axis] += h;
                let mut pm = p;
                pm[axis] -= h;
                let (dp, _) = scene.signed_distance(&pp, 0.0);
                let (dm, _) = scene.signed_distance(&pm, 0.0);
                if !dp.is_finite() || !dm.is_finite() {
                    kinked = true;
                    break;
                }
                fd[axis] = (dp - dm) / (2.0 * h);
            }
            if kinked || fd.norm() < 0.5 {
                continue;
            }
            assert_relative_eq!(g, fd, epsilon = 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn cost_branches_match_hinge() {
        let params = CostParams::new(0.1).unwrap();
        assert_eq!(collision_cost(0.2, &params), (0.0, 0.0));
        // Boundary belongs to the closed (linear) branch.
        assert_eq!(collision_cost(0.1, &params), (0.0, -1.0));
        let (c, dc) = collision_cost(-0.2, &params);
        assert_relative_eq!(c, 0.3, epsilon = 1e-15);
        assert_eq!(dc, -1.0);
    }

    #[test]
    fn cost_is_nonnegative_and_lipschitz() {
        let params = CostParams::new(0.07).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let d1 = rng.random_range(-1.0..1.0);
            let d2 = rng.random_range(-1.0..1.0);
            let (c1, _) = collision_cost(d1, &params);
            let (c2, _) = collision_cost(d2, &params);
            assert!(c1 >= 0.0);
            assert!((c1 - c2).abs() <= (d1 - d2).abs() + 1e-15);
        }
    }

    #[test]
    fn scene_json_parsing_and_validation() {
        let text = r#"{
            "version": 1,
            "obstacles": [
                {"type": "sphere", "center": [0, 0, 0.5], "radius": 0.2},
                {"type": "box", "min": [-1, -1, 0], "max": [1, 1, 0.1]},
                {"type": "capsule", "p0": [0,0,0], "p1": [0,0,1], "radius": 0.05}
            ]
        }"#;
        let scene = Scene::from_json_str(text, Path::new("inline")).unwrap();
        assert_eq!(scene.obstacles().len(), 3);

        let bad = text.replace("\"radius\": 0.2", "\"radius\": 0.2, \"color\": \"red\"");
        assert!(Scene::from_json_str(&bad, Path::new("inline")).is_err());

        let inverted = text.replace("\"min\": [-1, -1, 0], \"max\": [1, 1, 0.1]",
                                    "\"min\": [1, -1, 0], \"max\": [-1, 1, 0.1]");
        assert!(Scene::from_json_str(&inverted, Path::new("inline")).is_err());
    }
}
