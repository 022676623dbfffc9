// Scratch probe for the disc avoidance task (to be removed).
use harmonic_planner::planner::{audit_feasibility, optimize, AipParams, PlanProblem};
use harmonic_planner::robot::{Ccb, RevoluteJoint, RobotModel};
use harmonic_planner::scene::{Obstacle, Scene};
use harmonic_planner::trajectory::SampleGrid;
use nalgebra::{DVector, Unit, Vector3};

fn main() {
    let z = Unit::new_normalize(Vector3::z());
    let robot = RobotModel::new(
        vec![
            RevoluteJoint { axis: z, offset: Vector3::zeros() },
            RevoluteJoint { axis: z, offset: Vector3::new(0.5, 0.0, 0.0) },
        ],
        DVector::from_vec(vec![-3.0, -3.0]),
        DVector::from_vec(vec![3.0, 3.0]),
        vec![
            Ccb { parent: 0, offset: Vector3::new(0.25, 0.0, 0.0), radius: 0.05 },
            Ccb { parent: 0, offset: Vector3::new(0.5, 0.0, 0.0), radius: 0.05 },
            Ccb { parent: 1, offset: Vector3::new(0.25, 0.0, 0.0), radius: 0.05 },
            Ccb { parent: 1, offset: Vector3::new(0.5, 0.0, 0.0), radius: 0.05 },
        ],
    )
    .unwrap();
    let scene = Scene::new(vec![Obstacle::Sphere {
        center: Vector3::new(0.60, 0.22, 0.0),
        radius: 0.10,
    }])
    .unwrap();
    let problem = PlanProblem {
        robot: &robot,
        scene: &scene,
        start: DVector::from_vec(vec![-0.6, 0.9]),
        goal: DVector::from_vec(vec![1.1, -0.7]),
        grid: SampleGrid::new(32).unwrap(),
        harmonics: 5,
    };
    let mut params = AipParams::default();
    if let Ok(v) = std::env::var("RHO") {
        params.rho = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("EPS") {
        params.epsilon = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("STEPTOL") {
        params.step_tol = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("LAMBDA") {
        params.lambda = v.parse().unwrap();
    }
    {
        use harmonic_planner::objective::{CollisionField, Objective};
        use harmonic_planner::scene::CostParams;
        use harmonic_planner::trajectory::init_min_kinetic;
        let field = CollisionField::Raw {
            scene: &scene,
            params: CostParams::new(params.epsilon).unwrap(),
        };
        let objective = Objective::new(&robot, field, problem.grid);
        let a = init_min_kinetic(&problem.start, &problem.goal, 5, &problem.grid).unwrap();
        let exact = objective.potential(&a);
        let func = objective.potential_functional(&a);
        println!("residuals: {:?}", exact.residuals.as_slice());
        println!("|F_exact| = {:.5}  |F_func| = {:.5}", exact.jacobian.norm(), func.jacobian.norm());
        for t in 0..=problem.grid.half() {
            if let Some((ball, bracket, s)) = objective.workspace_bracket(&a, t) {
                println!(
                    "t={t:2} ball={ball} s={s:.4} bracket=({:.3},{:.3},{:.3})",
                    bracket.x, bracket.y, bracket.z
                );
            }
        }
    }
    let result = optimize(&problem, &params, None).unwrap();
    println!(
        "converged={} iters={} feasible={} H={:.4}",
        result.converged, result.iterations, result.feasible, result.final_hamiltonian
    );
    for (i, rec) in result.trace.iter().enumerate() {
        if i < 30 || i % 10 == 0 {
            println!(
                "it {:3}  H={:.5}  |da|={:.5}  pen={:.4}  qp={:?}",
                i + 1,
                rec.hamiltonian,
                rec.step_norm,
                rec.max_penetration,
                rec.qp_status
            );
        }
    }
    let audit = audit_feasibility(&problem, &result.amplitudes, params.epsilon);
    println!("audit margin {:.4} limit excess {:.2e}", audit.min_margin, audit.max_limit_excess);

    // Learned-field mode on the same task.
    use harmonic_planner::field::{generate_dataset, train_smo, DatasetParams, SmoParams};
    use harmonic_planner::objective::FieldSource;
    let t0 = std::time::Instant::now();
    let data = generate_dataset(
        &robot,
        &scene,
        &DatasetParams { n_samples: 1500, epsilon: params.epsilon, seed: 7 },
    )
    .unwrap();
    let n_pos = data.iter().filter(|p| p.label > 0.0).count();
    let smo = SmoParams {
        epsilon: params.epsilon,
        sigma: std::env::var("SIGMA").ok().map(|v| v.parse().unwrap()),
        c_box: std::env::var("CBOX").ok().map(|v| v.parse().unwrap()).unwrap_or(10.0),
        ..Default::default()
    };
    let model = train_smo(&data, &smo).unwrap();
    println!(
        "trained: {} pts ({} collided) -> {} SVs, sigma {:.3}, bias {:.3}, converged {} in {:.2}s",
        data.len(),
        n_pos,
        model.num_support_vectors(),
        model.sigma(),
        model.bias(),
        model.converged(),
        t0.elapsed().as_secs_f64()
    );
    let svm_params = AipParams { field_source: FieldSource::LearnedSvm, ..params };
    let t0 = std::time::Instant::now();
    let result = optimize(&problem, &svm_params, Some(&model)).unwrap();
    println!(
        "svm mode: converged={} iters={} feasible={} H={:.4} in {:.2}s",
        result.converged,
        result.iterations,
        result.feasible,
        result.final_hamiltonian,
        t0.elapsed().as_secs_f64()
    );
    for (i, rec) in result.trace.iter().enumerate() {
        if i < 12 || i % 10 == 0 {
            println!(
                "it {:3}  H={:.5}  |da|={:.5}  pen={:.4}",
                i + 1,
                rec.hamiltonian,
                rec.step_norm,
                rec.max_penetration,
            );
        }
    }
    let audit = audit_feasibility(&problem, &result.amplitudes, params.epsilon);
    println!("svm audit margin {:.4} limit excess {:.2e}", audit.min_margin, audit.max_limit_excess);
}
