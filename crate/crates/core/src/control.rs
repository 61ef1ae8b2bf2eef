//! Knife trajectory optimization.
//!
//! The knife velocity is blended from `k` keyframes with Gaussian radial
//! basis weights: lateral speed ż = (a·w) cos((b·w) t) and vertical speed
//! ẏ = c·w. The mean knife force is minimized subject to reaching a target
//! end height and keeping the object within the blade, using the modified
//! differential method of multipliers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::dynamics::{ForceProfile, SimError, SimParams, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, ControlError> {
    Err(ControlError::Usage(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Lateral amplitudes (m/s) per keyframe.
    pub a: Vec<f64>,
    /// Lateral frequencies (rad/s) per keyframe.
    pub b: Vec<f64>,
    /// Vertical velocities (m/s) per keyframe.
    pub c: Vec<f64>,
    /// RBF width (s).
    pub sigma: f64,
    /// Duration (s).
    pub duration: f64,
    pub blade_length: f64,
    /// Target knife height at the end.
    pub h_end: f64,
}

impl TrajectoryParams {
    /// Standard starting point: small lateral amplitude, 5 rad/s, and a
    /// constant vertical coefficient that lands at `h_end` from `start_y`.
    pub fn initial(k: usize, duration: f64, dt: f64, start_y: f64, h_end: f64) -> Result<TrajectoryParams, ControlError> {
        let mut p = TrajectoryParams {
            a: vec![1e-3; k],
            b: vec![5.0; k],
            c: vec![0.0; k],
            sigma: 0.03f64.sqrt(),
            duration,
            blade_length: 0.15,
            h_end,
        };
        p.validate()?;
        let steps = (duration / dt).round() as usize;
        let key = p.keyframes();
        let s: f64 = (0..steps)
            .map(|i| rbf_weights(i as f64 * dt, &key, p.sigma).iter().sum::<f64>())
            .sum::<f64>()
            * dt;
        p.c = vec![(h_end - start_y) / s; k];
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let k = self.a.len();
        if k == 0 || self.b.len() != k || self.c.len() != k {
            return usage("a, b and c need the same nonzero number of keyframes");
        }
        if !(self.sigma > 0.0) {
            return usage(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.duration > 0.0) {
            return usage("duration must be positive");
        }
        if !(self.blade_length > 0.0) {
            return usage("blade_length must be positive");
        }
        Ok(())
    }

    /// Equidistant keyframe times on [0, T].
    pub fn keyframes(&self) -> Vec<f64> {
        let k = self.k();
        if k == 1 {
            return vec![0.0];
        }
        (0..k).map(|i| self.duration * i as f64 / (k - 1) as f64).collect()
    }

    /// Optimization vector: a, b, c followed by one slack variable.
    pub fn to_vector(&self, slack: f64) -> Vec<f64> {
        let mut u = Vec::with_capacity(3 * self.k() + 1);
        u.extend(&self.a);
        u.extend(&self.b);
        u.extend(&self.c);
        u.push(slack);
        u
    }

    pub fn with_vector(&self, u: &[f64]) -> TrajectoryParams {
        let k = self.k();
        TrajectoryParams {
            a: u[..k].to_vec(),
            b: u[k..2 * k].to_vec(),
            c: u[2 * k..3 * k].to_vec(),
            ..self.clone()
        }
    }
}

/// Unnormalized Gaussian weights exp(−(t − tᵢ)²/(2σ²)) of each keyframe.
pub fn rbf_weights(t: f64, keyframes: &[f64], sigma: f64) -> Vec<f64> {
    let s2 = 2.0 * sigma * sigma;
    keyframes.iter().map(|&ti| (-(t - ti) * (t - ti) / s2).exp()).collect()
}

/// Time derivative of [`rbf_weights`].
pub fn rbf_weights_dt(t: f64, keyframes: &[f64], sigma: f64) -> Vec<f64> {
    let w = rbf_weights(t, keyframes, sigma);
    keyframes
        .iter()
        .zip(w)
        .map(|(&ti, wi)| -(t - ti) / (sigma * sigma) * wi)
        .collect()
}

/// Lateral and vertical knife speed (ż, ẏ) for weights `w` at time `t`.
pub fn knife_velocity<S: Real>(t: f64, w: &[f64], a: &[S], b: &[S], c: &[S]) -> (S, S) {
    let dotw = |v: &[S]| S::lincomb(0.0, &v.iter().copied().zip(w.iter().copied()).collect::<Vec<_>>());
    let z = dotw(a) * (dotw(b) * t).cos();
    let y = dotw(c);
    (z, y)
}

/// Knife path generated by a trajectory, integrated like the simulator does.
#[derive(Debug, Clone)]
pub struct KnifePath<S> {
    /// Per-step (ż, ẏ).
    pub velocities: Vec<(S, S)>,
    /// z and y after each step.
    pub z: Vec<S>,
    pub y: Vec<S>,
}

pub fn knife_path<S: Real>(
    traj: &TrajectoryParams,
    a: &[S],
    b: &[S],
    c: &[S],
    z0: f64,
    y0: S,
    steps: usize,
    dt: f64,
) -> KnifePath<S> {
    let key = traj.keyframes();
    let mut path = KnifePath {
        velocities: Vec::with_capacity(steps),
        z: Vec::with_capacity(steps),
        y: Vec::with_capacity(steps),
    };
    let (mut z, mut y) = (S::cst(z0), y0);
    for i in 0..steps {
        let t = i as f64 * dt;
        let w = rbf_weights(t, &key, traj.sigma);
        let (vz, vy) = knife_velocity(t, &w, a, b, c);
        z = S::lincomb(0.0, &[(z, 1.0), (vz, dt)]);
        y = S::lincomb(0.0, &[(y, 1.0), (vy, dt)]);
        path.velocities.push((vz, vy));
        path.z.push(z);
        path.y.push(y);
    }
    path
}

/// Smooth lower bound of min(x): −τ·ln Σ exp(−xᵢ/τ).
pub fn soft_min<S: Real>(x: &[S], tau: f64) -> S {
    let m = x.iter().fold(f64::INFINITY, |m, v| m.min(v.val()));
    let sum = x.iter().fold(S::cst(0.0), |acc, v| acc + ((*v - m) * (-1.0 / tau)).exp());
    S::cst(m) - sum.ln() * tau
}

/// Constraint values: end height g_end = y(T) − h_end and blade coverage
/// g_blade = softmin(½l − |z(t)|) − γ².
pub fn constraints<S: Real>(traj: &TrajectoryParams, path: &KnifePath<S>, slack: S, tau: f64) -> [S; 2] {
    let end = *path.y.last().expect("nonempty path") - traj.h_end;
    let margin: Vec<S> = path.z.iter().map(|z| S::cst(0.5 * traj.blade_length) - z.abs()).collect();
    let blade = soft_min(&margin, tau) - slack * slack;
    [end, blade]
}

/// Everything one trajectory evaluation produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// (1/T)·Σ (‖f‖ + ẏ)·Δt over recorded samples.
    pub loss: f64,
    pub mean_force: f64,
    pub profile: ForceProfile<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub zdot: Vec<f64>,
    pub ydot: Vec<f64>,
    pub constraints: [f64; 2],
}

impl Outcome {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0f64, |m, z| m.max(z.abs()))
    }

    /// CSV with columns t, ż, ẏ, z, y (state after each step).
    pub fn trajectory_csv(&self, dt: f64) -> String {
        let mut s = String::from("time_s,zdot,ydot,z,y\n");
        for i in 0..self.z.len() {
            s += &format!(
                "{:?},{:?},{:?},{:?},{:?}\n",
                i as f64 * dt,
                self.zdot[i],
                self.ydot[i],
                self.z[i],
                self.y[i]
            );
        }
        s
    }
}

/// Result of one augmented-Lagrangian evaluation.
#[derive(Debug, Clone)]
pub struct MdmmEval {
    pub loss: f64,
    pub constraints: Vec<f64>,
    /// Gradient of L + Σ (λₖ + c·gₖ)·gₖ with the bracket held constant,
    /// i.e. ∂L/∂u + Σ λₖ ∂gₖ/∂u + c Σ gₖ ∂gₖ/∂u.
    pub grad: Vec<f64>,
}

/// Objective with equality constraints g(u) = 0.
pub trait ConstrainedProblem {
    fn n_constraints(&self) -> usize;
    fn eval(&mut self, u: &[f64], lambda: &[f64], damping: f64) -> Result<MdmmEval, ControlError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdmmConfig {
    pub iters: usize,
    /// Step size for the parameters (and slack variables).
    pub lr: f64,
    /// Step size for the multipliers.
    pub lr_lambda: f64,
    /// Weight of the quadratic attractor term.
    pub damping: f64,
    /// Scale the descent direction by Adam moments.
    pub moment_scaling: bool,
    /// Multiply each parameter's step by the magnitude of its starting value,
    /// so parameters of very different scales move by similar fractions.
    pub relative_steps: bool,
    /// Iterates whose constraint values all lie within this bound count as
    /// feasible when picking the best iterate.
    pub feasibility_tol: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for MdmmConfig {
    fn default() -> Self {
        MdmmConfig {
            iters: 100,
            lr: 0.01,
            lr_lambda: 0.01,
            damping: 1.0,
            moment_scaling: false,
            relative_steps: false,
            feasibility_tol: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MdmmRecord {
    pub iteration: usize,
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MdmmRun {
    /// Final iterate.
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub history: Vec<MdmmRecord>,
    /// Lowest-loss feasible iterate seen, with its iteration number.
    pub best: Option<(usize, Vec<f64>)>,
}

impl MdmmRun {
    /// Best feasible iterate, or the final one when none was feasible.
    pub fn best_u(&self) -> &[f64] {
        self.best.as_ref().map_or(&self.u, |(_, u)| u)
    }
}

/// Descent on u and ascent on λ:
/// u′ = u − η(∂L/∂u + λ·∂g/∂u + c·g·∂g/∂u), λ′ = λ + η_λ·g.
pub fn mdmm_optimize<P: ConstrainedProblem + ?Sized>(
    problem: &mut P,
    u0: &[f64],
    cfg: &MdmmConfig,
) -> Result<MdmmRun, ControlError> {
    let mut u = u0.to_vec();
    let mut lambda = vec![0.0; problem.n_constraints()];
    let mut m = vec![0.0; u.len()];
    let mut v = vec![0.0; u.len()];
    let mut history = Vec::with_capacity(cfg.iters);
    let scale: Vec<f64> = u0
        .iter()
        .map(|x| if cfg.relative_steps && x.abs() > 0.0 { x.abs() } else { 1.0 })
        .collect();
    let mut best = None;
    let mut best_loss = f64::INFINITY;
    for it in 1..=cfg.iters {
        let e = problem.eval(&u, &lambda, cfg.damping)?;
        if !e.loss.is_finite() || e.constraints.iter().any(|g| !g.is_finite()) {
            return Err(ControlError::NonFinite {
                iteration: it,
                what: "loss or constraint".into(),
            });
        }
        if let Some(k) = e.grad.iter().position(|g| !g.is_finite()) {
            return Err(ControlError::NonFinite {
                iteration: it,
                what: format!("gradient entry {k}"),
            });
        }
        log::debug!("mdmm iteration {it}: loss {:e} constraints {:?}", e.loss, e.constraints);
        if e.constraints.iter().all(|g| g.abs() <= cfg.feasibility_tol) && e.loss < best_loss {
            best_loss = e.loss;
            best = Some((it, u.clone()));
        }
        history.push(MdmmRecord {
            iteration: it,
            loss: e.loss,
            constraints: e.constraints.clone(),
            lambda: lambda.clone(),
        });
        if cfg.moment_scaling {
            let c1 = 1.0 - cfg.beta1.powi(it as i32);
            let c2 = 1.0 - cfg.beta2.powi(it as i32);
            for k in 0..u.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * e.grad[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * e.grad[k] * e.grad[k];
                u[k] -= cfg.lr * scale[k] * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
            }
        } else {
            for k in 0..u.len() {
                u[k] -= cfg.lr * scale[k] * e.grad[k];
            }
        }
        for (l, g) in lambda.iter_mut().zip(&e.constraints) {
            *l += cfg.lr_lambda * g;
        }
    }
    Ok(MdmmRun { u, lambda, history, best })
}

/// Trajectory optimization on a cutting scene.
pub struct TrajectoryProblem<'s> {
    sim: &'s Simulator,
    params: SimParams<f64>,
    /// Fixed settings (σ, T, blade length, h_end); a, b, c come from u.
    pub traj: TrajectoryParams,
    /// Temperature of the blade-coverage soft minimum (m).
    pub tau: f64,
    /// Hold the lateral amplitudes at zero (vertical-only tuning).
    pub vertical_only: bool,
    tape: Tape,
}

impl<'s> TrajectoryProblem<'s> {
    pub fn new(sim: &'s Simulator, params: SimParams<f64>, traj: TrajectoryParams) -> Result<TrajectoryProblem<'s>, ControlError> {
        traj.validate()?;
        let steps = sim.steps() as f64 * sim.config.dt;
        if (steps - traj.duration).abs() > 1e-9 * traj.duration {
            return usage(format!(
                "trajectory lasts {} s but the simulation runs {} s",
                traj.duration, steps
            ));
        }
        Ok(TrajectoryProblem {
            sim,
            params,
            traj,
            tau: 1e-3,
            vertical_only: false,
            tape: Tape::new(),
        })
    }

    fn run<S: Real>(&self, u: &[S], y0: S, p: &SimParams<S>) -> Result<(S, [S; 2], ForceProfile<S>, KnifePath<S>), ControlError> {
        let k = self.traj.k();
        let zero = vec![S::cst(0.0); k];
        let a = if self.vertical_only { &zero[..] } else { &u[..k] };
        let (b, c, slack) = (&u[k..2 * k], &u[2 * k..3 * k], u[3 * k]);
        let dt = self.sim.config.dt;
        let steps = self.sim.steps();
        let path = knife_path(&self.traj, a, b, c, self.sim.knife.position[2], y0, steps, dt);
        let vel: Vec<[S; 3]> = path.velocities.iter().map(|&(vz, vy)| [S::cst(0.0), vy, vz]).collect();
        let r = self.sim.rollout_with(p, &vel, None)?;
        let stride = self.sim.config.stride;
        let w = dt * stride as f64 / self.traj.duration;
        let mut terms: Vec<(S, f64)> = Vec::with_capacity(2 * r.profile.len());
        for (j, f) in r.profile.forces.iter().enumerate() {
            terms.push((*f, w));
            terms.push((path.velocities[j * stride].1, w));
        }
        let loss = S::lincomb(0.0, &terms);
        let g = constraints(&self.traj, &path, slack, self.tau);
        Ok((loss, g, r.profile, path))
    }

    /// Untaped evaluation with full outputs.
    pub fn evaluate(&self, u: &[f64]) -> Result<Outcome, ControlError> {
        let (loss, g, profile, path) = self.run(u, self.params.initial_y, &self.params)?;
        let mean_force = if profile.is_empty() {
            0.0
        } else {
            profile.forces.iter().sum::<f64>() / profile.len() as f64
        };
        Ok(Outcome {
            loss,
            mean_force,
            profile,
            z: path.z,
            y: path.y,
            zdot: path.velocities.iter().map(|v| v.0).collect(),
            ydot: path.velocities.iter().map(|v| v.1).collect(),
            constraints: g,
        })
    }
}

impl ConstrainedProblem for TrajectoryProblem<'_> {
    fn n_constraints(&self) -> usize {
        2
    }

    fn eval(&mut self, u: &[f64], lambda: &[f64], damping: f64) -> Result<MdmmEval, ControlError> {
        let tape = &self.tape;
        tape.clear();
        let us: Vec<Var> = u
            .iter()
            .map(|&v| tape.input(v))
            .collect::<Result<_, _>>()
            .map_err(|e| ControlError::Usage(e.to_string()))?;
        let p = SimParams::lift(&self.params);
        let (loss, g, _, _) = self.run(&us, p.initial_y, &p)?;
        let mut terms = vec![(loss, 1.0)];
        for (gk, lk) in g.iter().zip(lambda) {
            terms.push((*gk, lk + damping * gk.val()));
        }
        let lagrangian = Var::lincomb(0.0, &terms);
        let grads = tape.backward(lagrangian).map_err(|e| ControlError::Usage(e.to_string()))?;
        let mut grad = grads.inputs().to_vec();
        if self.vertical_only {
            grad[..self.traj.k()].iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(MdmmEval {
            loss: loss.val(),
            constraints: g.iter().map(|x| x.val()).collect(),
            grad,
        })
    }
}
