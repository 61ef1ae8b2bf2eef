//! Scene assembly and the experiment kinds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use slicesim::control::{mdmm_optimize, TrajectoryParams, TrajectoryProblem};
use slicesim::cutmesh::{apply_boundary_conditions, cut, CutMesh};
use slicesim::dynamics::{write_snapshot, ForceProfile, KnifeMotion, SimParams, Simulator};
use slicesim::geometry::{load_mesh, TetMesh};
use slicesim::geometry::shapes::{cylinder, prism, sphere};
use slicesim::geometry::CutPlane;
use slicesim::inference::{
    adam_fit, loss, sgld_sample, CuttingProblem, LossNorm, ParamName, ParamSet, SgldConfig,
};
use slicesim::transport::{
    average_baseline, average_param_set, solve_emd, transport_param_set, transport_params, SpringCloud,
};

use crate::config::*;

/// A simulator ready to run, with its base parameters and knife motion.
pub struct Scene {
    pub sim: Simulator,
    pub params: SimParams<f64>,
    pub motion: KnifeMotion,
}

pub fn build_mesh(src: &MeshSource, density: f64, base: &Path) -> Result<TetMesh> {
    Ok(match src {
        MeshSource::Cylinder(s) => cylinder(s, density)?,
        MeshSource::Sphere(s) => sphere(s, density)?,
        MeshSource::Prism(s) => prism(s, density)?,
        MeshSource::Files { node, ele } => load_mesh(&resolve(base, node), &resolve(base, ele), density)?,
    })
}

fn cut_mesh(scene: &SceneConfig, mesh: &TetMesh) -> CutMesh {
    let plane = CutPlane::new(scene.cut_plane.point, scene.cut_plane.normal);
    let cm = cut(mesh, &plane);
    if scene.fix_bottom {
        apply_boundary_conditions(cm, scene.sim.ground.height, scene.sim.ground.radius)
    } else {
        cm
    }
}

fn scene_on(scene: &SceneConfig, mesh: &MeshSource, base: &Path) -> Result<Scene> {
    let material = scene.material.params();
    let tm = build_mesh(mesh, material.density, base)?;
    let cm = cut_mesh(scene, &tm);
    let sim = Simulator::new(cm, material, scene.knife, scene.sim.clone())?;
    let mut params = SimParams::defaults(sim.n_springs());
    scene.params.apply(&mut params);
    let motion = match &scene.motion {
        MotionConfig::Constant { velocity } => KnifeMotion::Constant { velocity: *velocity },
        MotionConfig::Schedule { times, velocities } => KnifeMotion::Schedule {
            times: times.clone(),
            velocities: velocities.clone(),
        },
        MotionConfig::Csv { path } => KnifeMotion::read_csv(&resolve(base, path))?,
    };
    motion.validate()?;
    Ok(Scene { sim, params, motion })
}

pub fn build_scene(scene: &SceneConfig, base: &Path) -> Result<Scene> {
    scene_on(scene, &scene.mesh, base)
}

/// Collects the files an experiment writes.
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Artifacts> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

/// Runs the configured experiment and returns its summary.
pub fn run(cfg: &ExperimentConfig, base: &Path, out: &mut Artifacts) -> Result<Value> {
    let scene = build_scene(&cfg.scene, base)?;
    match &cfg.experiment {
        Experiment::Rollout(s) => rollout(&scene, s, out),
        Experiment::Adam(s) => adam(&scene, s, cfg.seed, base, out),
        Experiment::Sgld(s) => sgld(&scene, s, cfg.seed, base, out),
        Experiment::Transport(s) => transport(&scene, cfg, s, base, out),
        Experiment::Trajopt(s) => trajopt(&scene, s, out),
    }
}

fn profile_summary(p: &ForceProfile<f64>) -> Value {
    let mean = if p.is_empty() {
        0.0
    } else {
        p.forces.iter().sum::<f64>() / p.len() as f64
    };
    json!({
        "samples": p.len(),
        "mean_force": mean,
        "max_force": p.forces.iter().cloned().fold(0.0, f64::max),
    })
}

fn rollout(scene: &Scene, s: &RolloutSettings, out: &mut Artifacts) -> Result<Value> {
    let vel: Vec<[f64; 3]> = scene.motion.per_step(scene.sim.steps(), scene.sim.config.dt);
    let r = scene.sim.rollout_with(&scene.params, &vel, s.snapshot_every)?;
    out.write("force.csv", &r.profile.to_csv())?;
    let mut springs = String::from("spring,initial_stiffness,final_stiffness\n");
    for (i, (k0, k)) in scene.params.cut_spring_ke.iter().zip(r.state.stiffness_values()).enumerate() {
        writeln!(springs, "{i},{k0:?},{k:?}")?;
    }
    out.write("springs.csv", &springs)?;
    for (t, pos) in &r.snapshots {
        let name = format!("snapshots/t_{:010.6}.node", t);
        let path = out.dir.join(&name);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        write_snapshot(&path, pos)?;
        out.files.push(name);
    }
    let summary = profile_summary(&r.profile);
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Reference force profile; synthetic references are also written out.
fn reference(scene: &Scene, src: &ReferenceSource, base: &Path, out: &mut Artifacts) -> Result<ForceProfile<f64>> {
    match src {
        ReferenceSource::Csv { path } => Ok(ForceProfile::read_csv(&resolve(base, path))?),
        ReferenceSource::Synthetic { truth } => {
            let p = ground_truth(scene, truth)?;
            out.write("reference.csv", &p.to_csv())?;
            Ok(p)
        }
    }
}

/// Rollout of the scene with `truth` applied on top of its parameters.
pub fn ground_truth(scene: &Scene, truth: &ParamOverrides) -> Result<ForceProfile<f64>> {
    let mut p = scene.params.clone();
    truth.apply(&mut p);
    Ok(scene.sim.rollout(&p, &scene.motion)?.profile)
}

/// Parameter set with configured starts; missing starts are drawn from `rng`.
fn param_set(
    n_springs: usize,
    est: &std::collections::BTreeMap<ParamName, EstimateConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<ParamSet> {
    let mut set = ParamSet::new(n_springs);
    for (&name, e) in est {
        let (lo, hi) = (e.bounds[0], e.bounds[1]);
        set.add(name, e.mode, (lo, hi), e.init.unwrap_or(0.5 * (lo + hi)))?;
        if e.init.is_none() {
            let count = set.entry(name).expect("just added").x.len();
            let draws: Vec<f64> = (0..count).map(|_| lo + (hi - lo) * rng.random_range(1e-6..1.0 - 1e-6)).collect();
            set.set_values(name, &draws)?;
        }
    }
    Ok(set)
}

fn fit_csv(times: &[f64], reference: &[f64], fitted: &[f64]) -> Result<String> {
    let mut s = String::from("time_s,reference_N,fitted_N\n");
    for ((t, r), f) in times.iter().zip(reference).zip(fitted) {
        writeln!(s, "{t:?},{r:?},{f:?}")?;
    }
    Ok(s)
}

fn problem<'s>(
    scene: &'s Scene,
    set: ParamSet,
    reference: &ForceProfile<f64>,
    norm: LossNorm,
    scale: f64,
) -> Result<CuttingProblem<'s>> {
    let mut prob = CuttingProblem::new(&scene.sim, scene.params.clone(), set, &scene.motion, reference)?;
    prob.norm = norm;
    prob.likelihood_scale = scale;
    Ok(prob)
}

fn adam(scene: &Scene, s: &AdamSettings, seed: u64, base: &Path, out: &mut Artifacts) -> Result<Value> {
    let reference = reference(scene, &s.reference, base, out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = String::from("restart,iteration,loss\n");
    let mut runs = Vec::new();
    for r in 0..s.restarts {
        let set = param_set(scene.sim.n_springs(), &s.estimate, &mut rng)?;
        let x0 = set.flat();
        let mut prob = problem(scene, set.clone(), &reference, s.norm, s.likelihood_scale)?;
        let run = adam_fit(&mut prob, &x0, &s.adam)?;
        for (i, l) in run.history.iter().enumerate() {
            writeln!(history, "{r},{i},{l:?}")?;
        }
        writeln!(history, "{r},{},{:?}", run.history.len(), run.final_loss)?;
        let fitted = set.with_flat(&run.x)?;
        out.write_json(&format!("params_{r}.json"), &serde_json::to_value(fitted.records())?)?;
        let profile = prob.profile_at(&run.x)?;
        out.write(&format!("fit_{r}.csv"), &fit_csv(&profile.times, prob.reference(), &profile.forces)?)?;
        let initial = run.history.first().copied().unwrap_or(run.final_loss);
        runs.push(json!({
            "initial_loss": initial,
            "final_loss": run.final_loss,
            "loss_ratio": run.final_loss / initial,
            "initial": set.records(),
            "fitted": fitted.records(),
        }));
    }
    out.write("loss_history.csv", &history)?;
    let summary = json!({ "restarts": runs });
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn sgld(scene: &Scene, s: &SgldSettings, seed: u64, base: &Path, out: &mut Artifacts) -> Result<Value> {
    let reference = reference(scene, &s.reference, base, out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = param_set(scene.sim.n_springs(), &s.estimate, &mut rng)?;
    let x0 = set.flat();
    let mut prob = problem(scene, set.clone(), &reference, s.norm, s.likelihood_scale)?;
    let cfg = SgldConfig { seed, ..s.sgld };
    let samples = sgld_sample(&mut prob, &x0, &cfg)?;
    out.write("samples.csv", &samples.to_csv(&set))?;
    let mut energy = String::from("iteration,energy\n");
    for (i, e) in samples.history.iter().enumerate() {
        writeln!(energy, "{i},{e:?}")?;
    }
    out.write("energy_history.csv", &energy)?;
    let mean = samples.constrained_mean(&set);
    let mut posterior = set.clone();
    let mut k = 0;
    for name in set.names() {
        let n = set.entry(name).expect("listed name").x.len();
        posterior.set_values(name, &mean[k..k + n])?;
        k += n;
    }
    out.write_json("posterior_mean.json", &serde_json::to_value(posterior.records())?)?;
    let summary = json!({
        "burn_in": samples.burn_in,
        "draws": samples.draws.len(),
        "initial": set.records(),
        "posterior_mean": posterior.records(),
    });
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Linear field over the spring coordinates along `axis`, scaled so the
/// source springs span [low, high].
struct Field {
    axis: usize,
    lo: f64,
    hi: f64,
    low: f64,
    high: f64,
}

impl Field {
    fn new(coords: &[[f64; 2]], axis: PlaneAxis, low: f64, high: f64) -> Field {
        let axis = match axis {
            PlaneAxis::Horizontal => 0,
            PlaneAxis::Vertical => 1,
        };
        let lo = coords.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
        let hi = coords.iter().map(|c| c[axis]).fold(f64::NEG_INFINITY, f64::max);
        Field { axis, lo, hi, low, high }
    }

    fn at(&self, c: &[f64; 2]) -> f64 {
        let s = if self.hi > self.lo {
            ((c[self.axis] - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.low + s * (self.high - self.low)
    }
}

fn transport(scene: &Scene, cfg: &ExperimentConfig, s: &TransportSettings, base: &Path, out: &mut Artifacts) -> Result<Value> {
    let target = scene_on(&cfg.scene, &s.target_mesh, base)?;
    let src_cloud = SpringCloud::from_mesh(&scene.sim.cm)?;
    let tgt_cloud = SpringCloud::from_mesh(&target.sim.cm)?;
    let plan = solve_emd(&src_cloud, &tgt_cloud)?;
    out.write("plan.csv", &plan.to_csv())?;
    let mut summary = json!({
        "source_springs": src_cloud.len(),
        "target_springs": tgt_cloud.len(),
        "emd_objective": plan.objective,
    });
    match &s.source {
        SourceField::ParamSet { path } => {
            let text = fs::read_to_string(resolve(base, path))?;
            let set = ParamSet::from_json(&text, src_cloud.len())?;
            let moved = transport_param_set(&plan, &set)?;
            let avg = average_param_set(&set, tgt_cloud.len())?;
            out.write_json("transported.json", &serde_json::to_value(moved.records())?)?;
            out.write_json("averaged.json", &serde_json::to_value(avg.records())?)?;
            if s.evaluate {
                bail!("evaluate needs a gradient source with a known target ground truth");
            }
        }
        SourceField::Gradient {
            param,
            low,
            high,
            axis,
            bounds,
        } => {
            let Some(_) = param.per_spring(&mut target.params.clone()) else {
                bail!("{} is not a per-spring parameter", param.as_str());
            };
            let field = Field::new(&src_cloud.points, *axis, *low, *high);
            let src_vals: Vec<f64> = src_cloud.points.iter().map(|c| field.at(c)).collect();
            let truth: Vec<f64> = tgt_cloud.points.iter().map(|c| field.at(c)).collect();
            let ot = transport_params(&plan, &src_vals)?;
            let avg = average_baseline(&src_vals, tgt_cloud.len())?;
            let as_set = |vals: &[f64]| -> Result<Value> {
                let mut set = ParamSet::new(vals.len());
                set.add(*param, slicesim::inference::Mode::PerSpring, (bounds[0], bounds[1]), vals[0])?;
                set.set_values(*param, vals)?;
                Ok(serde_json::to_value(set.records())?)
            };
            out.write_json("source.json", &as_set(&src_vals)?)?;
            out.write_json("transported.json", &as_set(&ot)?)?;
            out.write_json("averaged.json", &as_set(&avg)?)?;
            if s.evaluate {
                let eval = evaluate_transfer(&target, *param, &truth, &ot, &avg)?;
                out.write("target_forces.csv", &eval.csv)?;
                summary["nmae_ot"] = json!(eval.nmae_ot);
                summary["nmae_avg"] = json!(eval.nmae_avg);
            }
        }
    }
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

pub struct TransferScore {
    pub nmae_ot: f64,
    pub nmae_avg: f64,
    pub csv: String,
}

/// Rolls out the target with ground-truth, transported and averaged values of `param`.
pub fn evaluate_transfer(target: &Scene, param: ParamName, truth: &[f64], ot: &[f64], avg: &[f64]) -> Result<TransferScore> {
    let roll = |vals: &[f64]| -> Result<ForceProfile<f64>> {
        let mut p = target.params.clone();
        param
            .per_spring(&mut p)
            .expect("per-spring parameter")
            .copy_from_slice(vals);
        Ok(target.sim.rollout(&p, &target.motion)?.profile)
    };
    let (t, o, a) = (roll(truth)?, roll(ot)?, roll(avg)?);
    let nmae_ot = slicesim::inference::nmae(&o.forces, &t.forces)?;
    let nmae_avg = slicesim::inference::nmae(&a.forces, &t.forces)?;
    let mut csv = String::from("time_s,truth_N,transported_N,averaged_N\n");
    for i in 0..t.len() {
        writeln!(csv, "{:?},{:?},{:?},{:?}", t.times[i], t.forces[i], o.forces[i], a.forces[i])?;
    }
    Ok(TransferScore { nmae_ot, nmae_avg, csv })
}

/// Outcome of a trajectory optimization against its vertical baseline.
pub struct TrajoptResult {
    pub baseline_mean_force: f64,
    pub optimized_mean_force: f64,
    pub max_abs_z: f64,
    pub end_error: f64,
    pub summary: Value,
}

pub fn optimize_trajectory(scene: &Scene, s: &TrajoptSettings, out: Option<&mut Artifacts>) -> Result<TrajoptResult> {
    let dt = scene.sim.config.dt;
    let duration = scene.sim.steps() as f64 * dt;
    let mut traj = TrajectoryParams::initial(s.keyframes, duration, dt, scene.params.initial_y, s.h_end)?;
    traj.blade_length = s.blade_length;
    traj.a = vec![s.init_amplitude; s.keyframes];
    traj.b = vec![s.init_frequency; s.keyframes];
    traj.validate()?;
    let mut prob = TrajectoryProblem::new(&scene.sim, scene.params.clone(), traj.clone())?;
    prob.tau = s.tau;
    prob.vertical_only = s.vertical_only;

    let mut vertical = traj.clone();
    vertical.a = vec![0.0; traj.k()];
    let before = prob.evaluate(&vertical.to_vector(0.0))?;
    // Start the slack where the blade constraint holds with equality.
    let probe = prob.evaluate(&traj.to_vector(0.0))?;
    let slack = probe.constraints[1].max(0.0).sqrt();
    let run = mdmm_optimize(&mut prob, &traj.to_vector(slack), &s.mdmm)?;
    let after = prob.evaluate(run.best_u())?;

    let reduction = |a: f64, b: f64| if a > 0.0 { 100.0 * (1.0 - b / a) } else { 0.0 };
    let max_before = before.profile.forces.iter().cloned().fold(0.0, f64::max);
    let max_after = after.profile.forces.iter().cloned().fold(0.0, f64::max);
    let end_error = after.y.last().copied().unwrap_or(scene.params.initial_y) - s.h_end;
    let optimized = traj.with_vector(run.best_u());
    let summary = json!({
        "baseline_mean_force": before.mean_force,
        "optimized_mean_force": after.mean_force,
        "mean_force_reduction_pct": reduction(before.mean_force, after.mean_force),
        "baseline_max_force": max_before,
        "optimized_max_force": max_after,
        "max_force_reduction_pct": reduction(max_before, max_after),
        "baseline_loss": before.loss,
        "optimized_loss": after.loss,
        "max_abs_z": after.max_abs_z(),
        "blade_half_length": 0.5 * s.blade_length,
        "end_error": end_error,
        "constraints": after.constraints,
        "multipliers": run.lambda,
        "slack": run.best_u().last(),
        "best_iteration": run.best.as_ref().map(|b| b.0),
    });
    if let Some(out) = out {
        let mut hist = String::from("iteration,loss,g_end,g_blade,lambda_end,lambda_blade\n");
        for h in &run.history {
            writeln!(
                hist,
                "{},{:?},{:?},{:?},{:?},{:?}",
                h.iteration, h.loss, h.constraints[0], h.constraints[1], h.lambda[0], h.lambda[1]
            )?;
        }
        out.write("mdmm_history.csv", &hist)?;
        out.write("trajectory_before.csv", &before.trajectory_csv(dt))?;
        out.write("trajectory_after.csv", &after.trajectory_csv(dt))?;
        out.write("forces_before.csv", &before.profile.to_csv())?;
        out.write("forces_after.csv", &after.profile.to_csv())?;
        out.write_json("trajectory.json", &serde_json::to_value(&optimized)?)?;
        out.write_json("summary.json", &summary)?;
    }
    Ok(TrajoptResult {
        baseline_mean_force: before.mean_force,
        optimized_mean_force: after.mean_force,
        max_abs_z: after.max_abs_z(),
        end_error,
        summary,
    })
}

fn trajopt(scene: &Scene, s: &TrajoptSettings, out: &mut Artifacts) -> Result<Value> {
    Ok(optimize_trajectory(scene, s, Some(out))?.summary)
}

/// L1 distance between a profile and its reference; exposed for reporting.
pub fn l1(sim: &[f64], reference: &[f64]) -> Result<f64> {
    Ok(loss(sim, reference, LossNorm::L1)?)
}
