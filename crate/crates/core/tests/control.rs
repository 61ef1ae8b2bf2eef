use proptest::prelude::*;

use slicesim::control::*;
use slicesim::cutmesh::*;
use slicesim::dynamics::*;
use slicesim::geometry::shapes::*;
use slicesim::geometry::*;

/// Cucumber cylinder with the knife just above it and friction active.
fn scene(duration: f64) -> (Simulator, SimParams<f64>) {
    let mat = MaterialParams::CUCUMBER;
    let mesh = cylinder(
        &CylinderSpec {
            radius: 0.02,
            length: 0.06,
            rings: 2,
            layers: 5,
        },
        mat.density,
    )
    .unwrap();
    let ground = GroundParams {
        height: -1e-3,
        ..Default::default()
    };
    let cm = apply_boundary_conditions(cut(&mesh, &CutPlane::vertical_x(0.0)), ground.height, ground.radius);
    let knife = KnifeSdf {
        position: [0.0, 0.0, 0.0],
        ..Default::default()
    };
    let cfg = SimConfig {
        dt: 5e-5,
        duration,
        gravity: [0.0; 3],
        ground,
        ..Default::default()
    };
    let sim = Simulator::new(cm, mat, knife, cfg).unwrap();
    let n = sim.n_springs();
    let mut p = SimParams::defaults(n);
    p.initial_y = 0.0403317;
    p.sdf_kf = vec![100.0; n];
    (sim, p)
}

#[test]
fn rbf_weight_examples() {
    let key = [0.0, 0.5, 1.0];
    let s = 0.2;
    let w = rbf_weights(0.5, &key, s);
    assert_eq!(w[1], 1.0);
    assert!((w[0] - (-0.25f64 / (2.0 * s * s)).exp()).abs() < 1e-15);
    assert_eq!(w[0], w[2]);
    let w = rbf_weights(0.7, &key, s);
    assert!((w[1] - (-0.5f64).exp()).abs() < 1e-15);
}

#[test]
fn rbf_time_derivative_matches_differences() {
    let key = [0.0, 0.125, 0.25, 0.375, 0.5];
    let s = 0.03f64.sqrt();
    for t in [0.0, 0.07, 0.2, 0.49] {
        let h = 1e-6;
        let wp = rbf_weights(t + h, &key, s);
        let wm = rbf_weights(t - h, &key, s);
        for (k, d) in rbf_weights_dt(t, &key, s).iter().enumerate() {
            let fd = (wp[k] - wm[k]) / (2.0 * h);
            assert!((fd - d).abs() < 1e-8, "t {t} k {k}: {fd} vs {d}");
        }
    }
}

#[test]
fn knife_velocity_examples() {
    let (z, y) = knife_velocity(0.2, &[1.0, 0.0], &[2.0, 9.0], &[3.0, 9.0], &[-1.0, 9.0]);
    assert!((z - 2.0 * 0.6f64.cos()).abs() < 1e-15);
    assert_eq!(y, -1.0);
    let (z, y) = knife_velocity(0.0, &[0.5, 0.5], &[1.0, 3.0], &[7.0, 7.0], &[-0.1, -0.3]);
    assert_eq!(z, 2.0);
    assert!((y + 0.2).abs() < 1e-15);
}

#[test]
fn soft_min_bounds_the_minimum() {
    let x = [0.3, 0.1, 0.2, 0.1];
    let tau = 0.01;
    let s = soft_min(&x, tau);
    assert!(s <= 0.1);
    assert!(s >= 0.1 - tau * (x.len() as f64).ln() - 1e-15);
    assert_eq!(soft_min(&[0.25], tau), 0.25);
}

#[test]
fn initial_trajectory_lands_on_target() {
    let dt = 5e-5;
    let t = TrajectoryParams::initial(5, 0.5, dt, 0.045, 0.002).unwrap();
    assert_eq!(t.a, vec![1e-3; 5]);
    assert_eq!(t.b, vec![5.0; 5]);
    assert!(t.c.iter().all(|&c| c == t.c[0] && c < 0.0));
    assert_eq!(t.keyframes(), vec![0.0, 0.125, 0.25, 0.375, 0.5]);
    let path = knife_path(&t, &t.a, &t.b, &t.c, 0.0, 0.045, 10_000, dt);
    assert!((path.y.last().unwrap() - 0.002).abs() < 1e-12);
    let u = t.to_vector(0.2);
    assert_eq!(u.len(), 16);
    assert_eq!(u[15], 0.2);
    assert_eq!(t.with_vector(&u), t);
}

#[test]
fn trajectory_validation() {
    let mut t = TrajectoryParams::initial(3, 0.5, 1e-3, 0.04, 0.0).unwrap();
    t.b.pop();
    assert!(t.validate().is_err());
    let mut t = TrajectoryParams::initial(3, 0.5, 1e-3, 0.04, 0.0).unwrap();
    t.sigma = 0.0;
    assert!(t.validate().is_err());
    assert!(TrajectoryParams::initial(0, 0.5, 1e-3, 0.04, 0.0).is_err());
}

#[test]
fn constraint_values() {
    let t = TrajectoryParams {
        a: vec![0.0],
        b: vec![0.0],
        c: vec![0.0],
        sigma: 1.0,
        duration: 1.0,
        blade_length: 0.2,
        h_end: 0.01,
    };
    let path = KnifePath {
        velocities: vec![(0.0, 0.0); 3],
        z: vec![0.0, 0.05, -0.02],
        y: vec![0.03, 0.02, 0.015],
    };
    let [end, blade] = constraints(&t, &path, 0.1, 1e-4);
    assert!((end - 0.005).abs() < 1e-15);
    // Margins 0.1, 0.05, 0.08: the soft minimum sits at 0.05.
    assert!((blade - (0.05 - 0.01)).abs() < 1e-9);
}

#[test]
fn problem_rejects_mismatched_duration() {
    let (sim, p) = scene(0.01);
    let t = TrajectoryParams::initial(5, 0.02, 5e-5, p.initial_y, 0.0).unwrap();
    assert!(matches!(TrajectoryProblem::new(&sim, p, t), Err(ControlError::Usage(_))));
}

struct Quadratic;

impl ConstrainedProblem for Quadratic {
    fn n_constraints(&self) -> usize {
        1
    }

    // min x² subject to x = 1.
    fn eval(&mut self, u: &[f64], lambda: &[f64], damping: f64) -> Result<MdmmEval, ControlError> {
        let g = u[0] - 1.0;
        Ok(MdmmEval {
            loss: u[0] * u[0],
            constraints: vec![g],
            grad: vec![2.0 * u[0] + lambda[0] + damping * g],
        })
    }
}

struct Slack;

impl ConstrainedProblem for Slack {
    fn n_constraints(&self) -> usize {
        1
    }

    // min x subject to x ≥ 0, written as x − s² = 0.
    fn eval(&mut self, u: &[f64], lambda: &[f64], damping: f64) -> Result<MdmmEval, ControlError> {
        let g = u[0] - u[1] * u[1];
        let w = lambda[0] + damping * g;
        Ok(MdmmEval {
            loss: u[0],
            constraints: vec![g],
            grad: vec![1.0 + w, -2.0 * u[1] * w],
        })
    }
}

#[test]
fn mdmm_finds_equality_constrained_minimum() {
    let cfg = MdmmConfig {
        iters: 2000,
        lr: 0.05,
        lr_lambda: 0.05,
        damping: 1.0,
        ..Default::default()
    };
    let run = mdmm_optimize(&mut Quadratic, &[3.0], &cfg).unwrap();
    assert!((run.u[0] - 1.0).abs() < 1e-6, "{:?}", run.u);
    assert!((run.lambda[0] + 2.0).abs() < 1e-5, "{:?}", run.lambda);
    assert_eq!(run.history.len(), 2000);
}

#[test]
fn mdmm_handles_inequality_through_slack() {
    let cfg = MdmmConfig {
        iters: 5000,
        lr: 0.02,
        lr_lambda: 0.02,
        damping: 1.0,
        ..Default::default()
    };
    let run = mdmm_optimize(&mut Slack, &[1.0, 1.0], &cfg).unwrap();
    assert!(run.u[0].abs() < 1e-2, "{:?}", run.u);
    assert!((run.lambda[0] + 1.0).abs() < 1e-2, "{:?}", run.lambda);
}

#[test]
fn mdmm_with_moment_scaling_also_converges() {
    let cfg = MdmmConfig {
        iters: 3000,
        lr: 0.01,
        lr_lambda: 0.05,
        damping: 1.0,
        moment_scaling: true,
        ..Default::default()
    };
    let run = mdmm_optimize(&mut Quadratic, &[3.0], &cfg).unwrap();
    assert!((run.u[0] - 1.0).abs() < 1e-3, "{:?}", run.u);
}

#[test]
fn relative_steps_scale_with_the_start() {
    // Plain descent: the first step is lr·|u0|·grad.
    let cfg = MdmmConfig {
        iters: 1,
        lr: 0.01,
        relative_steps: true,
        ..Default::default()
    };
    let run = mdmm_optimize(&mut Quadratic, &[3.0], &cfg).unwrap();
    let grad = 2.0 * 3.0 + cfg.damping * 2.0;
    assert!((run.u[0] - (3.0 - 0.01 * 3.0 * grad)).abs() < 1e-12);
}

#[test]
fn best_iterate_is_the_lowest_feasible_loss() {
    let cfg = MdmmConfig {
        iters: 2000,
        lr: 0.05,
        lr_lambda: 0.05,
        damping: 1.0,
        feasibility_tol: 1e-3,
        ..Default::default()
    };
    let run = mdmm_optimize(&mut Quadratic, &[3.0], &cfg).unwrap();
    let (it, u) = run.best.clone().unwrap();
    let rec = &run.history[it - 1];
    assert!(rec.constraints[0].abs() <= 1e-3);
    assert!(run
        .history
        .iter()
        .filter(|h| h.constraints[0].abs() <= 1e-3)
        .all(|h| h.loss >= rec.loss));
    assert_eq!(run.best_u(), &u[..]);

    // Never feasible: fall back to the final iterate.
    let run = mdmm_optimize(&mut Quadratic, &[3.0], &MdmmConfig { iters: 3, ..cfg }).unwrap();
    assert!(run.best.is_none());
    assert_eq!(run.best_u(), &run.u[..]);
}

#[test]
fn mdmm_reports_non_finite_values() {
    struct Bad;
    impl ConstrainedProblem for Bad {
        fn n_constraints(&self) -> usize {
            0
        }
        fn eval(&mut self, _: &[f64], _: &[f64], _: f64) -> Result<MdmmEval, ControlError> {
            Ok(MdmmEval {
                loss: 0.0,
                constraints: vec![],
                grad: vec![f64::INFINITY],
            })
        }
    }
    assert!(matches!(
        mdmm_optimize(&mut Bad, &[0.0], &MdmmConfig::default()),
        Err(ControlError::NonFinite { iteration: 1, .. })
    ));
}

#[test]
fn trajectory_gradients_match_finite_differences() {
    let dur = 0.04;
    let (sim, p) = scene(dur);
    let mut t = TrajectoryParams::initial(3, dur, 5e-5, p.initial_y, 0.036).unwrap();
    t.a = vec![0.05, 0.1, 0.02];
    t.b = vec![20.0, 25.0, 30.0];
    let mut prob = TrajectoryProblem::new(&sim, p, t.clone()).unwrap();
    let u = t.to_vector(0.2);
    let e = prob.eval(&u, &[0.0, 0.0], 0.0).unwrap();
    let base = prob.evaluate(&u).unwrap();
    assert!(base.mean_force > 0.0, "the knife must reach the object");
    assert!((e.loss - base.loss).abs() <= 1e-12 * base.loss.abs());
    for k in 0..9 {
        let h = 1e-6 * u[k].abs().max(1e-3);
        let mut up = u.clone();
        let mut um = u.clone();
        up[k] += h;
        um[k] -= h;
        let fd = (prob.evaluate(&up).unwrap().loss - prob.evaluate(&um).unwrap().loss) / (2.0 * h);
        let scale = e.grad[k].abs().max(1e-6);
        assert!((fd - e.grad[k]).abs() <= 1e-3 * scale, "entry {k}: fd {fd} ad {}", e.grad[k]);
    }
}

#[test]
fn end_constraint_gradient_is_the_integrated_weight() {
    let dur = 0.01;
    let (sim, p) = scene(dur);
    let t = TrajectoryParams::initial(3, dur, 5e-5, p.initial_y, 0.039).unwrap();
    let mut prob = TrajectoryProblem::new(&sim, p, t.clone()).unwrap();
    let u = t.to_vector(0.2);
    let with = prob.eval(&u, &[1.0, 0.0], 0.0).unwrap();
    let without = prob.eval(&u, &[0.0, 0.0], 0.0).unwrap();
    let key = t.keyframes();
    for i in 0..3 {
        let expect: f64 = (0..200).map(|s| rbf_weights(s as f64 * 5e-5, &key, t.sigma)[i] * 5e-5).sum();
        let got = with.grad[6 + i] - without.grad[6 + i];
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn outcome_csv_and_vertical_only_mode() {
    let dur = 0.01;
    let (sim, p) = scene(dur);
    let t = TrajectoryParams::initial(3, dur, 5e-5, p.initial_y, 0.039).unwrap();
    let mut prob = TrajectoryProblem::new(&sim, p, t.clone()).unwrap();
    let o = prob.evaluate(&t.to_vector(0.2)).unwrap();
    let csv = o.trajectory_csv(5e-5);
    assert_eq!(csv.lines().next().unwrap(), "time_s,zdot,ydot,z,y");
    assert_eq!(csv.lines().count(), 201);
    prob.vertical_only = true;
    let e = prob.eval(&t.to_vector(0.2), &[0.0, 0.0], 1.0).unwrap();
    assert!(e.grad[..3].iter().all(|&g| g == 0.0));
    assert_eq!(prob.evaluate(&t.to_vector(0.2)).unwrap().max_abs_z(), 0.0);
}

proptest! {
    #[test]
    fn soft_min_is_a_lower_bound(xs in prop::collection::vec(-1.0..1.0f64, 1..20), tau in 1e-4..1.0f64) {
        let m = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let s = soft_min(&xs, tau);
        prop_assert!(s <= m + 1e-15);
        prop_assert!(s >= m - tau * (xs.len() as f64).ln() - 1e-12);
    }

    #[test]
    fn rbf_weights_lie_in_unit_interval(t in -1.0..2.0f64, sigma in 0.01..1.0f64) {
        for w in rbf_weights(t, &[0.0, 0.25, 0.5, 0.75, 1.0], sigma) {
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }
}
