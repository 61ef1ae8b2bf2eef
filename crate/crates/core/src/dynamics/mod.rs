//! Explicit cutting simulation: Neo-Hookean FEM, knife and ground penalty
//! contact with friction, cutting springs with damage, semi-implicit Euler.
//!
//! Everything is generic over [`Real`], so one code path serves plain `f64`
//! rollouts and taped rollouts that can be differentiated end to end.

mod contact;
mod elastic;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use contact::{ground_force, knife_force_at, GroundParams};
pub use elastic::{ElasticBlock, MaterialParams};

use crate::autodiff::Real;
use crate::cutmesh::{CutMesh, VirtualNode};
use crate::geometry::{frank_wolfe_closest, lift, KnifeSdf, Vec3};
use contact::KnifeContact;

/// Reference step for the damage decrement, so weakening per unit time
/// does not depend on the step size.
pub const DAMAGE_DT_REF: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("step {step}: non-finite {quantity}")]
    NonFinite { step: usize, quantity: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {msg}")]
    Io { path: String, msg: String },
}

/// How the damaged stiffness is kept nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageClamp {
    /// C¹ cubic clamp with width `damage_eps`; never exceeds max(k, 0).
    Smooth,
    /// max(k, 0).
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub gravity: Vec3,
    /// Record the knife force every `stride` steps.
    pub stride: usize,
    /// Strain-rate damping coefficient.
    pub damping: f64,
    pub ground: GroundParams,
    /// Sections farther than this from the knife's bounding box are skipped.
    pub sdf_radius: f64,
    pub fw_iters: usize,
    pub damage_clamp: DamageClamp,
    pub damage_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-5,
            duration: 1.0,
            gravity: [0.0, -9.81, 0.0],
            stride: 1,
            damping: 0.0,
            ground: GroundParams::default(),
            sdf_radius: 0.5e-3,
            fw_iters: 20,
            damage_clamp: DamageClamp::Smooth,
            damage_eps: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be nonnegative, got {}", self.duration));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(self.damage_eps > 0.0) {
            return bad("damage_eps must be positive".into());
        }
        self.steps().map(|_| ())
    }

    /// Number of steps; the duration must be an integer multiple of dt.
    pub fn steps(&self) -> Result<usize, SimError> {
        let n = (self.duration / self.dt).round();
        if (n * self.dt - self.duration).abs() > 1e-9 * self.duration.max(self.dt) {
            return Err(SimError::Config(format!(
                "duration {} is not a multiple of dt {}",
                self.duration, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Per-spring contact and spring parameters plus the initial knife height.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams<S> {
    pub sdf_ke: Vec<S>,
    pub sdf_kd: Vec<S>,
    pub sdf_kf: Vec<S>,
    pub sdf_mu: Vec<S>,
    pub cut_spring_ke: Vec<S>,
    pub cut_spring_kd: Vec<S>,
    pub cut_spring_softness: Vec<S>,
    pub initial_y: S,
}

impl SimParams<f64> {
    /// Default values replicated over `n` springs.
    pub fn defaults(n: usize) -> Self {
        SimParams {
            sdf_ke: vec![1000.0; n],
            sdf_kd: vec![1.0; n],
            sdf_kf: vec![0.01; n],
            sdf_mu: vec![0.5; n],
            cut_spring_ke: vec![500.0; n],
            cut_spring_kd: vec![0.1; n],
            cut_spring_softness: vec![500.0; n],
            initial_y: 0.08,
        }
    }
}

impl<S: Real> SimParams<S> {
    pub fn lift(p: &SimParams<f64>) -> Self {
        let l = |v: &Vec<f64>| v.iter().map(|&x| S::cst(x)).collect();
        SimParams {
            sdf_ke: l(&p.sdf_ke),
            sdf_kd: l(&p.sdf_kd),
            sdf_kf: l(&p.sdf_kf),
            sdf_mu: l(&p.sdf_mu),
            cut_spring_ke: l(&p.cut_spring_ke),
            cut_spring_kd: l(&p.cut_spring_kd),
            cut_spring_softness: l(&p.cut_spring_softness),
            initial_y: S::cst(p.initial_y),
        }
    }

    pub fn values(&self) -> SimParams<f64> {
        let v = |x: &Vec<S>| x.iter().map(|s| s.val()).collect();
        SimParams {
            sdf_ke: v(&self.sdf_ke),
            sdf_kd: v(&self.sdf_kd),
            sdf_kf: v(&self.sdf_kf),
            sdf_mu: v(&self.sdf_mu),
            cut_spring_ke: v(&self.cut_spring_ke),
            cut_spring_kd: v(&self.cut_spring_kd),
            cut_spring_softness: v(&self.cut_spring_softness),
            initial_y: self.initial_y.val(),
        }
    }

    fn check(&self, n: usize) -> Result<(), SimError> {
        let lens = [
            ("sdf_ke", self.sdf_ke.len()),
            ("sdf_kd", self.sdf_kd.len()),
            ("sdf_kf", self.sdf_kf.len()),
            ("sdf_mu", self.sdf_mu.len()),
            ("cut_spring_ke", self.cut_spring_ke.len()),
            ("cut_spring_kd", self.cut_spring_kd.len()),
            ("cut_spring_softness", self.cut_spring_softness.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(SimError::Config(format!("{name} has {len} entries for {n} springs")));
            }
        }
        Ok(())
    }
}

/// Knife force norms over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceProfile<S> {
    pub times: Vec<f64>,
    pub forces: Vec<S>,
}

impl<S: Real> ForceProfile<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn values(&self) -> ForceProfile<f64> {
        ForceProfile {
            times: self.times.clone(),
            forces: self.forces.iter().map(|f| f.val()).collect(),
        }
    }
}

impl ForceProfile<f64> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,force_N\n");
        for (t, f) in self.times.iter().zip(&self.forces) {
            let _ = writeln!(s, "{t:?},{f:?}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_csv()).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Reads a two-column CSV; a non-numeric first line is taken as header.
    pub fn read_csv(path: &Path) -> Result<ForceProfile<f64>, SimError> {
        let err = |msg: String| SimError::Io {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut p = ForceProfile {
            times: Vec::new(),
            forces: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (cols.len() == 2)
                .then(|| Some((cols[0].parse::<f64>().ok()?, cols[1].parse::<f64>().ok()?)))
                .flatten();
            match parsed {
                Some((t, f)) => {
                    p.times.push(t);
                    p.forces.push(f);
                }
                None if n == 0 => {}
                None => return Err(err(format!("line {}: expected time,force", n + 1))),
            }
        }
        Ok(p)
    }
}

/// Prescribed knife motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KnifeMotion {
    Constant { velocity: Vec3 },
    /// Piecewise-linear velocity through (time, velocity) knots, held
    /// constant outside them.
    Schedule { times: Vec<f64>, velocities: Vec<Vec3> },
}

impl Default for KnifeMotion {
    fn default() -> Self {
        KnifeMotion::Constant {
            velocity: [0.0, -0.05, 0.0],
        }
    }
}

impl KnifeMotion {
    pub fn velocity_at(&self, t: f64) -> Vec3 {
        match self {
            KnifeMotion::Constant { velocity } => *velocity,
            KnifeMotion::Schedule { times, velocities } => {
                let k = times.partition_point(|&x| x <= t);
                if k == 0 {
                    return velocities[0];
                }
                if k == times.len() {
                    return velocities[k - 1];
                }
                let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                [0, 1, 2].map(|c| velocities[k - 1][c] + w * (velocities[k][c] - velocities[k - 1][c]))
            }
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let KnifeMotion::Schedule { times, velocities } = self {
            if times.is_empty() || times.len() != velocities.len() {
                return Err(SimError::Config("schedule needs matching nonempty times and velocities".into()));
            }
            if times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(SimError::Config("schedule times must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    /// Velocity at the start of each of `n` steps.
    pub fn per_step(&self, n: usize, dt: f64) -> Vec<Vec3> {
        (0..n).map(|i| self.velocity_at(i as f64 * dt)).collect()
    }

    /// Reads a `time_s,vx,vy,vz` CSV schedule (header optional).
    pub fn read_csv(path: &Path) -> Result<KnifeMotion, SimError> {
        let err = |msg: String| SimError::Io {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let (mut times, mut velocities) = (Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let nums: Option<Vec<f64>> = line.split(',').map(|c| c.trim().parse().ok()).collect();
            match nums {
                Some(v) if v.len() == 4 => {
                    times.push(v[0]);
                    velocities.push([v[1], v[2], v[3]]);
                }
                None if n == 0 => {}
                _ => return Err(err(format!("line {}: expected time,vx,vy,vz", n + 1))),
            }
        }
        let m = KnifeMotion::Schedule { times, velocities };
        m.validate()?;
        Ok(m)
    }
}

/// Dynamic state of a rollout.
#[derive(Debug, Clone)]
pub struct State<S> {
    pub x: Vec<[S; 3]>,
    pub v: Vec<[S; 3]>,
    pub knife: [S; 3],
    /// Current (damaged) spring stiffnesses.
    pub stiffness: Vec<S>,
    pub step: usize,
}

impl<S: Real> State<S> {
    pub fn positions(&self) -> Vec<Vec3> {
        self.x.iter().map(|p| p.map(|c| c.val())).collect()
    }

    pub fn stiffness_values(&self) -> Vec<f64> {
        self.stiffness.iter().map(|k| k.val()).collect()
    }
}

/// What one step produced.
#[derive(Debug, Clone)]
pub struct StepInfo<S> {
    /// Time at which the forces were evaluated.
    pub time: f64,
    /// Reaction force on the knife.
    pub knife_force: [S; 3],
    /// ‖knife_force‖, exactly zero without contact.
    pub force_norm: S,
    /// Number of contacting sections.
    pub contacts: usize,
    /// Springs that received knife force this step, in increasing order.
    pub contacted_springs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Rollout<S> {
    pub profile: ForceProfile<S>,
    pub state: State<S>,
    /// (time, positions) every `snapshot_every` steps when requested.
    pub snapshots: Vec<(f64, Vec<Vec3>)>,
    /// Total contacting sections over all steps.
    pub contacts: usize,
}

/// A cut mesh prepared for simulation.
pub struct Simulator {
    pub cm: CutMesh,
    pub config: SimConfig,
    pub material: MaterialParams,
    /// Knife geometry; its x and z position are the initial ones, the
    /// height comes from `SimParams::initial_y`.
    pub knife: KnifeSdf,
    elastic: Arc<ElasticBlock>,
    inv_mass: Vec<f64>,
}

fn knife_box(k: &KnifeSdf, pos: Vec3, pad: f64) -> (Vec3, Vec3) {
    let h = [0.5 * k.spine_dim.max(k.edge_dim), k.height(), 0.5 * k.depth];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let local = [
            if corner & 1 == 0 { -h[0] } else { h[0] },
            if corner & 2 == 0 { 0.0 } else { h[1] },
            if corner & 4 == 0 { -h[2] } else { h[2] },
        ];
        for r in 0..3 {
            let w = pos[r] + (0..3).map(|c| k.rotation[r][c] * local[c]).sum::<f64>();
            lo[r] = lo[r].min(w - pad);
            hi[r] = hi[r].max(w + pad);
        }
    }
    (lo, hi)
}

fn node_terms(node: &VirtualNode, sign: f64) -> [(usize, f64); 2] {
    [(node.i, sign * (1.0 - node.u)), (node.j, sign * node.u)]
}

impl Simulator {
    pub fn new(cm: CutMesh, material: MaterialParams, knife: KnifeSdf, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        material.validate().map_err(SimError::Config)?;
        knife.validate().map_err(SimError::Config)?;
        let elastic = Arc::new(ElasticBlock::new(&cm, &material, config.damping));
        let inv_mass = cm.mesh.masses.iter().map(|m| 1.0 / m).collect();
        Ok(Simulator {
            cm,
            config,
            material,
            knife,
            elastic,
            inv_mass,
        })
    }

    pub fn n_springs(&self) -> usize {
        self.cm.springs.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.cm.mesh.vertices.len()
    }

    pub fn elastic(&self) -> &ElasticBlock {
        &self.elastic
    }

    pub fn steps(&self) -> usize {
        self.config.steps().expect("validated at construction")
    }

    /// Timestamps of the recorded profile samples.
    pub fn record_times(&self) -> Vec<f64> {
        (0..self.steps())
            .step_by(self.config.stride)
            .map(|i| i as f64 * self.config.dt)
            .collect()
    }

    /// Rest state with the knife at (x₀, initial_y, z₀).
    pub fn initial_state<S: Real>(&self, p: &SimParams<S>) -> State<S> {
        let k = self.knife.position;
        State {
            x: self.cm.mesh.vertices.iter().map(|&v| lift(v)).collect(),
            v: vec![[S::cst(0.0); 3]; self.n_vertices()],
            knife: [S::cst(k[0]), p.initial_y, S::cst(k[2])],
            stiffness: p.cut_spring_ke.clone(),
            step: 0,
        }
    }

    /// Elastic (plus damping) forces at the given state, flattened.
    pub fn elastic_forces<S: Real>(&self, x: &[[S; 3]], v: &[[S; 3]]) -> Vec<S> {
        let mut inputs: Vec<S> = x.iter().flatten().copied().collect();
        if self.elastic.has_damping() {
            inputs.extend(v.iter().flatten().copied());
        }
        S::block(&self.elastic, &inputs)
    }

    /// Advances `st` by one step with knife velocity `kvel`.
    pub fn step<S: Real>(&self, st: &mut State<S>, p: &SimParams<S>, kvel: [S; 3]) -> Result<StepInfo<S>, SimError> {
        let cfg = &self.config;
        let dt = cfg.dt;
        let n = self.n_vertices();
        let time = st.step as f64 * dt;
        // (flat coordinate, force, coefficient) contributions besides elasticity.
        let mut terms: Vec<(usize, S, f64)> = Vec::new();

        for i in 0..n {
            if self.cm.fixed[i] {
                continue;
            }
            if let Some(f) = ground_force(&cfg.ground, st.x[i], st.v[i]) {
                for c in 0..3 {
                    terms.push((3 * i + c, f[c], 1.0));
                }
            }
        }

        let elastic = self.elastic_forces(&st.x, &st.v);

        let pos_val = st.knife.map(|c| c.val());
        let (lo, hi) = knife_box(&self.knife, pos_val, cfg.sdf_radius);
        let knife_now = KnifeSdf {
            position: pos_val,
            ..self.knife
        };
        let mut spring_force: Vec<Vec<(S, f64)>> = vec![Vec::new(); self.n_springs()];
        let mut total: [Vec<(S, f64)>; 3] = Default::default();
        let mut contacts = 0;
        for sec in &self.cm.sections {
            let xa = st.x[sec.a].map(|c| c.val());
            let xb = st.x[sec.b].map(|c| c.val());
            let at = |s: f64| [0, 1, 2].map(|c| (1.0 - s) * xa[c] + s * xb[c]);
            let (p1, p2) = (at(sec.s0), at(sec.s1));
            if (0..3).any(|c| p1[c].max(p2[c]) < lo[c] || p1[c].min(p2[c]) > hi[c]) {
                continue;
            }
            let hit = frank_wolfe_closest(&knife_now, p1, p2, cfg.fw_iters);
            if hit.distance >= 0.0 {
                continue;
            }
            let s = sec.s0 + hit.u * (sec.s1 - sec.s0);
            let k = sec.spring;
            let mut inputs = Vec::with_capacity(22);
            for v in [st.x[sec.a], st.x[sec.b], st.v[sec.a], st.v[sec.b], st.knife, kvel] {
                inputs.extend(v);
            }
            inputs.extend([p.sdf_ke[k], p.sdf_kd[k], p.sdf_kf[k], p.sdf_mu[k]]);
            let out = S::kernel(
                &KnifeContact {
                    knife: &self.knife,
                    s,
                },
                &inputs,
            );
            if out[3].val() <= 0.0 {
                continue;
            }
            contacts += 1;
            for c in 0..3 {
                terms.push((3 * sec.a + c, out[c], 1.0 - s));
                terms.push((3 * sec.b + c, out[c], s));
                total[c].push((out[c], -1.0));
            }
            spring_force[k].push((out[3], 1.0));
        }

        // Damage: only springs touched by the knife this step weaken.
        let ratio = dt / DAMAGE_DT_REF;
        for (k, f) in spring_force.iter().enumerate() {
            if f.is_empty() {
                continue;
            }
            let fk = S::lincomb(0.0, f);
            let z = st.stiffness[k] - p.cut_spring_softness[k] * fk * ratio;
            st.stiffness[k] = match cfg.damage_clamp {
                DamageClamp::Smooth => z.smooth_clamp(cfg.damage_eps),
                DamageClamp::Hard => z.max(S::cst(0.0)),
            };
        }

        for (k, spring) in self.cm.springs.iter().enumerate() {
            let idx = [node_terms(&spring.above, 1.0), node_terms(&spring.below, -1.0)];
            let ke = st.stiffness[k];
            let kd = p.cut_spring_kd[k];
            for c in 0..3 {
                let gap = |q: &Vec<[S; 3]>| {
                    let t: Vec<(S, f64)> = idx.iter().flatten().map(|&(v, w)| (q[v][c], w)).collect();
                    S::lincomb(0.0, &t)
                };
                let f = -(ke * gap(&st.x)) - kd * gap(&st.v);
                for &(v, w) in idx.iter().flatten() {
                    terms.push((3 * v + c, f, w));
                }
            }
        }

        terms.sort_by_key(|t| t.0);
        let mut next = 0;
        let mut lin: Vec<(S, f64)> = Vec::new();
        for i in 0..n {
            let fixed = self.cm.fixed[i];
            let h = dt * self.inv_mass[i];
            for c in 0..3 {
                let coord = 3 * i + c;
                lin.clear();
                lin.push((st.v[i][c], 1.0));
                lin.push((elastic[coord], h));
                while next < terms.len() && terms[next].0 == coord {
                    lin.push((terms[next].1, terms[next].2 * h));
                    next += 1;
                }
                if fixed {
                    st.v[i][c] = S::cst(0.0);
                    continue;
                }
                let v = S::lincomb(dt * cfg.gravity[c], &lin);
                if !v.val().is_finite() {
                    return Err(SimError::NonFinite {
                        step: st.step,
                        quantity: format!("velocity of vertex {i}"),
                    });
                }
                st.v[i][c] = v;
                st.x[i][c] = S::lincomb(0.0, &[(st.x[i][c], 1.0), (v, dt)]);
            }
        }

        let knife_force = [0, 1, 2].map(|c| S::lincomb(0.0, &total[c]));
        let force_norm = if contacts == 0 {
            S::cst(0.0)
        } else {
            (knife_force[0] * knife_force[0] + knife_force[1] * knife_force[1] + knife_force[2] * knife_force[2])
                .sqrt()
        };
        if !force_norm.val().is_finite() {
            return Err(SimError::NonFinite {
                step: st.step,
                quantity: "knife force".into(),
            });
        }
        for c in 0..3 {
            st.knife[c] = S::lincomb(0.0, &[(st.knife[c], 1.0), (kvel[c], dt)]);
        }
        st.step += 1;
        let contacted_springs = (0..spring_force.len()).filter(|&k| !spring_force[k].is_empty()).collect();
        Ok(StepInfo {
            time,
            knife_force,
            force_norm,
            contacts,
            contacted_springs,
        })
    }

    /// Runs the configured duration with one knife velocity per step.
    pub fn rollout_with<S: Real>(
        &self,
        p: &SimParams<S>,
        velocities: &[[S; 3]],
        snapshot_every: Option<usize>,
    ) -> Result<Rollout<S>, SimError> {
        p.check(self.n_springs())?;
        let n = self.steps();
        if velocities.len() != n {
            return Err(SimError::Config(format!(
                "{} knife velocities for {n} steps",
                velocities.len()
            )));
        }
        let mut st = self.initial_state(p);
        let mut profile = ForceProfile {
            times: Vec::with_capacity(n / self.config.stride + 1),
            forces: Vec::with_capacity(n / self.config.stride + 1),
        };
        let mut snapshots = Vec::new();
        let mut contacts = 0;
        for (i, &kv) in velocities.iter().enumerate() {
            if let Some(every) = snapshot_every {
                if i % every == 0 {
                    snapshots.push((i as f64 * self.config.dt, st.positions()));
                }
            }
            let info = self.step(&mut st, p, kv)?;
            contacts += info.contacts;
            if i % self.config.stride == 0 {
                profile.times.push(info.time);
                profile.forces.push(info.force_norm);
            }
        }
        Ok(Rollout {
            profile,
            state: st,
            snapshots,
            contacts,
        })
    }

    /// Runs the configured duration under a prescribed knife motion.
    pub fn rollout<S: Real>(&self, p: &SimParams<S>, motion: &KnifeMotion) -> Result<Rollout<S>, SimError> {
        motion.validate()?;
        let vel: Vec<[S; 3]> = motion
            .per_step(self.steps(), self.config.dt)
            .into_iter()
            .map(lift)
            .collect();
        self.rollout_with(p, &vel, None)
    }
}

/// Writes positions in `.node` format.
pub fn write_snapshot(path: &Path, positions: &[Vec3]) -> Result<(), SimError> {
    let mut s = format!("{} 3 0 0\n", positions.len());
    for (i, v) in positions.iter().enumerate() {
        let _ = writeln!(s, "{i} {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    std::fs::write(path, s).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
