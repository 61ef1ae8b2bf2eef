use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicesim::autodiff::{det3, dot, inv3, AdError, BlockOp, Kernel, Op, Real, Tape, Var};

fn central_fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn square_value_and_gradient() {
    let tape = Tape::new();
    let x = tape.input(3.0).unwrap();
    let y = tape.record(Op::Mul, &[x, x]).unwrap();
    assert_eq!(y.value(), 9.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(&x), 6.0);
}

#[test]
fn backward_on_constant_is_zero() {
    let tape = Tape::new();
    let x = tape.input(2.0).unwrap();
    let c = Var::constant(4.0) * 2.0;
    let g = tape.backward(c).unwrap();
    assert_eq!(g.wrt(&x), 0.0);
    assert_eq!(g.inputs(), &[0.0]);
}

#[test]
fn product_rule() {
    let tape = Tape::new();
    let a = tape.input(2.0).unwrap();
    let b = tape.input(5.0).unwrap();
    let y = a * b;
    let g = tape.backward(y).unwrap();
    assert_eq!(g.inputs(), &[5.0, 2.0]);
}

#[test]
fn sum_of_hundred_inputs() {
    let tape = Tape::new();
    let xs: Vec<Var> = (0..100).map(|i| tape.input(i as f64).unwrap()).collect();
    let mut y = Var::constant(0.0);
    for x in &xs {
        y += *x;
    }
    let g = tape.backward(y).unwrap();
    assert!(g.inputs().iter().all(|&d| d == 1.0));
}

fn composite<S: Real>(x: &[S], ops: &[(usize, usize)]) -> S {
    let mut v = x[0];
    for &(kind, k) in ops {
        v = match kind {
            0 => v * x[k],
            1 => (v + 2.0).ln(),
            _ => (v * 0.3).exp(),
        };
    }
    v
}

#[test]
fn random_composite_matches_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
        let ops: Vec<(usize, usize)> = (0..10)
            .map(|_| (rng.random_range(0..3), rng.random_range(0..4)))
            .collect();
        let tape = Tape::new();
        let xs: Vec<Var> = x.iter().map(|&v| tape.input(v).unwrap()).collect();
        let y = composite(&xs, &ops);
        assert_eq!(y.value(), composite(&x, &ops));
        let g = tape.backward(y).unwrap();
        for k in 0..4 {
            let fd = central_fd(
                |t| {
                    let mut xp = x.clone();
                    xp[k] = t;
                    composite(&xp, &ops)
                },
                x[k],
                1e-6,
            );
            let rel = (g.inputs()[k] - fd).abs() / (g.inputs()[k].abs() + 1e-8);
            assert!(rel < 1e-6, "k={k} tape={} fd={fd} rel={rel}", g.inputs()[k]);
        }
    }
}

/// Damped spring-mass, semi-implicit Euler; returns final position.
fn spring_mass<S: Real>(k: S, steps: usize) -> S {
    let (m, c, dt) = (0.1, 0.05, 1e-3);
    let mut x = S::cst(0.02);
    let mut v = S::cst(0.0);
    for _ in 0..steps {
        let f = -(k * x) - v * c;
        v += f * (dt / m);
        x += v * dt;
    }
    x
}

#[test]
fn spring_mass_rollout_gradient() {
    let k0 = 40.0;
    let tape = Tape::new();
    let k = tape.input(k0).unwrap();
    let y = spring_mass(k, 1000);
    assert_eq!(y.value(), spring_mass(k0, 1000));
    let g = tape.backward(y).unwrap().inputs()[0];
    let fd = central_fd(|t| spring_mass(t, 1000), k0, 1e-5);
    assert!((g - fd).abs() / g.abs() < 1e-4, "tape {g} fd {fd}");
}

#[test]
fn reset_then_rerecord_is_identical() {
    let tape = Tape::new();
    let k = tape.input(25.0).unwrap();
    let g1 = tape.backward(spring_mass(k, 200)).unwrap().inputs().to_vec();
    let n1 = tape.node_count();
    tape.checkpoint_reset();
    let g2 = tape.backward(spring_mass(k, 200)).unwrap().inputs().to_vec();
    assert_eq!(g1, g2);
    assert_eq!(n1, tape.node_count());
}

#[test]
fn stale_handle_after_reset_is_usage_error() {
    let tape = Tape::new();
    let k = tape.input(25.0).unwrap();
    let half = spring_mass(k, 50);
    tape.checkpoint_reset();
    let y = half * half;
    assert!(matches!(tape.backward(y), Err(AdError::Usage(_))));
    assert!(matches!(tape.backward(half), Err(AdError::Usage(_))));
    // A fresh recording after another reset works again.
    tape.checkpoint_reset();
    assert!(tape.backward(spring_mass(k, 5)).is_ok());
}

#[test]
fn memory_after_reset_is_bounded() {
    let tape = Tape::new();
    let before = tape.memory_bytes();
    let xs: Vec<Var> = (0..8).map(|i| tape.input(1.0 + i as f64).unwrap()).collect();
    let mut y = xs[0];
    while tape.node_count() < 10_000 {
        for x in &xs {
            y = y * 0.5 + *x;
        }
    }
    assert!(tape.memory_bytes() > 100_000);
    tape.checkpoint_reset();
    assert_eq!(tape.node_count(), xs.len());
    assert_eq!(tape.edge_count(), 0);
    assert!(tape.memory_bytes() <= before + xs.len() * 12);
}

#[test]
fn inputs_must_lead() {
    let tape = Tape::new();
    let a = tape.input(1.0).unwrap();
    let _ = a * a;
    assert!(matches!(tape.input(2.0), Err(AdError::Usage(_))));
}

#[test]
fn domain_errors() {
    let tape = Tape::new();
    let x = tape.input(-1.0).unwrap();
    let z = tape.input(0.0).unwrap();
    assert_eq!(
        tape.record(Op::Ln, &[x]).unwrap_err(),
        AdError::Domain { op: "ln", value: -1.0 }
    );
    assert!(matches!(tape.record(Op::Sqrt, &[z]), Err(AdError::Domain { op: "sqrt", .. })));
    assert!(matches!(tape.record(Op::Div, &[x, z]), Err(AdError::Domain { op: "div", .. })));
    assert!(matches!(tape.record(Op::Add, &[x]), Err(AdError::Usage(_))));
}

#[test]
fn foreign_tape_is_usage_error() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.input(1.0).unwrap();
    let b = t2.input(2.0).unwrap();
    assert!(matches!(t1.record(Op::Mul, &[a, b]), Err(AdError::Usage(_))));
    assert!(matches!(t2.backward(a * 2.0), Err(AdError::Usage(_))));
}

#[test]
fn abs_and_minmax_tie_breaking() {
    let tape = Tape::new();
    let a = tape.input(0.0).unwrap();
    let b = tape.input(0.0).unwrap();
    let g = tape.backward(tape.record(Op::Abs, &[a]).unwrap() + a).unwrap();
    assert_eq!(g.wrt(&a), 1.0);
    tape.checkpoint_reset();
    let g = tape.backward(a.max(b)).unwrap();
    assert_eq!(g.inputs(), &[1.0, 0.0]);
    tape.checkpoint_reset();
    let g = tape.backward(b.min(a)).unwrap();
    assert_eq!(g.inputs(), &[0.0, 1.0]);
}

#[test]
fn smooth_clamp_shape() {
    let eps = 1e-3;
    for &z in &[-1.0, -1e-4, 0.0, 1e-4, 5e-4, 9.99e-4, 1e-3, 2.0] {
        let g = <f64 as Real>::smooth_clamp(z, eps);
        assert!(g >= 0.0 && g <= f64::max(z, 0.0));
    }
    assert_eq!(<f64 as Real>::smooth_clamp(0.5, eps), 0.5);
    let tape = Tape::new();
    let x = tape.input(eps * 0.5).unwrap();
    let d = tape.backward(x.smooth_clamp(eps)).unwrap().inputs()[0];
    let fd = central_fd(|t| <f64 as Real>::smooth_clamp(t, eps), eps * 0.5, 1e-9);
    assert!((d - fd).abs() < 1e-6);
}

#[test]
fn fused_helpers_match_finite_difference() {
    let m0 = [[1.2, 0.3, -0.4], [0.1, 0.9, 0.2], [-0.3, 0.5, 1.4]];
    let tape = Tape::new();
    let m: Vec<Var> = m0.iter().flatten().map(|&v| tape.input(v).unwrap()).collect();
    let mv = [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]];
    let flat = |f: &dyn Fn(&[[f64; 3]; 3]) -> f64, k: usize| {
        central_fd(
            |t| {
                let mut mm = m0;
                mm[k / 3][k % 3] = t;
                f(&mm)
            },
            m0[k / 3][k % 3],
            1e-6,
        )
    };
    let g = tape.backward(det3(&mv)).unwrap();
    for k in 0..9 {
        let fd = flat(&|mm| det3(mm), k);
        assert!((g.inputs()[k] - fd).abs() < 1e-8);
    }
    let inv = inv3(&mv).unwrap();
    for (i, j) in [(0, 0), (1, 2), (2, 1)] {
        let g = tape.backward(inv[i][j]).unwrap();
        for k in 0..9 {
            let fd = flat(&|mm| inv3(mm).unwrap()[i][j], k);
            assert!((g.inputs()[k] - fd).abs() < 1e-7);
        }
    }
    let d = dot(&m[..3], &m[3..6]);
    let g = tape.backward(d).unwrap();
    assert_eq!(&g.inputs()[..6], &[0.1, 0.9, 0.2, 1.2, 0.3, -0.4]);
}

struct Rotor;

impl Kernel for Rotor {
    fn eval<S: Real>(&self, x: &[S]) -> Vec<S> {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        vec![r * x[2].cos(), r * x[2].sin(), (r * x[2]).tanh()]
    }
}

#[test]
fn kernel_matches_direct_recording() {
    let x0 = [0.3, -0.7, 1.1];
    let tape = Tape::new();
    let x: Vec<Var> = x0.iter().map(|&v| tape.input(v).unwrap()).collect();
    let direct = Rotor.eval(&x);
    let fused = Var::kernel(&Rotor, &x);
    let plain = <f64 as Real>::kernel(&Rotor, &x0);
    for k in 0..3 {
        assert_eq!(direct[k].value(), fused[k].value());
        assert_eq!(plain[k], fused[k].value());
        let gd = tape.backward(direct[k]).unwrap().inputs().to_vec();
        let gf = tape.backward(fused[k]).unwrap().inputs().to_vec();
        for (a, b) in gd.iter().zip(&gf) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    // Constant inputs produce constant outputs and no edges.
    let edges = tape.edge_count();
    let c = Var::kernel(&Rotor, &[Var::constant(1.0), x[1], Var::constant(0.5)]);
    assert_eq!(tape.edge_count(), edges + 3);
    assert!(c.iter().all(|v| !v.is_constant()));
}

/// y = A·x with a fixed matrix.
struct MatVec(Vec<Vec<f64>>);

impl BlockOp for MatVec {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
    fn vjp(&self, _x: &[f64], out_adj: &[f64], in_adj: &mut [f64]) {
        for (row, w) in self.0.iter().zip(out_adj) {
            for (g, a) in in_adj.iter_mut().zip(row) {
                *g += w * a;
            }
        }
    }
}

#[test]
fn block_backward() {
    let op = Arc::new(MatVec(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
    let tape = Tape::new();
    let x = [tape.input(1.0).unwrap(), tape.input(-1.0).unwrap()];
    let y = Var::block(&op, &x);
    assert_eq!(y.iter().map(|v| v.value()).collect::<Vec<_>>(), vec![-1.0, -1.0, -1.0]);
    let s = y[0] * 1.0 + y[1] * 10.0 + y[2] * 100.0;
    let g = tape.backward(s).unwrap();
    assert_eq!(g.inputs(), &[531.0, 642.0]);
    // Gradient through a block recorded after other nodes.
    let z = x[0] * x[1];
    let y2 = Var::block(&op, &[z, x[1]]);
    let g = tape.backward(y2[2]).unwrap();
    assert_eq!(g.inputs(), &[5.0 * -1.0, 5.0 * 1.0 + 6.0]);
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let tape = Tape::new();
    let k = tape.input(30.0).unwrap();
    let a = spring_mass(k, 300);
    let b = spring_mass(k * 1.5, 200);
    let gs = tape.backward(a + b).unwrap().inputs()[0];
    let ga = tape.backward(a).unwrap().inputs()[0];
    let gb = tape.backward(b).unwrap().inputs()[0];
    assert!((gs - (ga + gb)).abs() <= 1e-12 * gs.abs().max(1e-300));
}

#[test]
fn recording_is_deterministic() {
    let run = || {
        let tape = Tape::new();
        let k = tape.input(33.0).unwrap();
        let y = spring_mass(k, 400);
        (y.value().to_bits(), tape.backward(y).unwrap().inputs()[0].to_bits(), tape.edge_count())
    };
    assert_eq!(run(), run());
}

fn check_unary(op: Op, x: f64, f: fn(f64) -> f64) -> Result<(), TestCaseError> {
    let tape = Tape::new();
    let v = tape.input(x).unwrap();
    let y = tape.record(op, &[v]).unwrap();
    prop_assert_eq!(y.value(), f(x));
    let g = tape.backward(y).unwrap().inputs()[0];
    let h = 1e-6 * x.abs().max(1.0);
    let fd = central_fd(f, x, h);
    prop_assert!((g - fd).abs() / (g.abs() + 1e-8) < 1e-5, "{:?} x={} g={} fd={}", op, x, g, fd);
    Ok(())
}

proptest! {
    #[test]
    fn unary_ops_match_fd(x in 0.05f64..4.0, s in -3.0f64..3.0) {
        check_unary(Op::Sqrt, x, f64::sqrt)?;
        check_unary(Op::Ln, x, f64::ln)?;
        check_unary(Op::Exp, s, f64::exp)?;
        check_unary(Op::Sin, s, f64::sin)?;
        check_unary(Op::Cos, s, f64::cos)?;
        check_unary(Op::Tanh, s * 0.5, f64::tanh)?;
        check_unary(Op::Neg, s, |t| -t)?;
        check_unary(Op::Powf(2.5), x, |t| t.powf(2.5))?;
        if s.abs() > 1e-3 {
            check_unary(Op::Abs, s, f64::abs)?;
        }
    }

    #[test]
    fn binary_ops_match_fd(a in 0.1f64..3.0, b in 0.1f64..3.0) {
        let ops: [(Op, fn(f64, f64) -> f64); 5] = [
            (Op::Add, |x, y| x + y),
            (Op::Sub, |x, y| x - y),
            (Op::Mul, |x, y| x * y),
            (Op::Div, |x, y| x / y),
            (Op::Pow, f64::powf),
        ];
        for (op, f) in ops {
            let tape = Tape::new();
            let va = tape.input(a).unwrap();
            let vb = tape.input(b).unwrap();
            let y = tape.record(op, &[va, vb]).unwrap();
            prop_assert_eq!(y.value(), f(a, b));
            let g = tape.backward(y).unwrap().inputs().to_vec();
            let fa = central_fd(|t| f(t, b), a, 1e-6);
            let fb = central_fd(|t| f(a, t), b, 1e-6);
            prop_assert!((g[0] - fa).abs() / (g[0].abs() + 1e-8) < 1e-5);
            prop_assert!((g[1] - fb).abs() / (g[1].abs() + 1e-8) < 1e-5);
        }
    }

    #[test]
    fn var_arithmetic_matches_f64(a in -5.0f64..5.0, b in 0.5f64..5.0) {
        let tape = Tape::new();
        let va = tape.input(a).unwrap();
        let vb = tape.input(b).unwrap();
        let y = ((va * vb - 1.5) / vb + va.sin() * 2.0).tanh() + (vb.ln() - va).abs() + vb.sqrt().max(va);
        let z = ((a * b - 1.5) / b + a.sin() * 2.0).tanh() + (b.ln() - a).abs() + Real::max(b.sqrt(), a);
        prop_assert_eq!(y.value().to_bits(), z.to_bits());
    }
}
