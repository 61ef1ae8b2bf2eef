//! Parameter estimation against a reference force profile.
//!
//! Parameters are optimized in an unconstrained space and mapped into their
//! bounds through a sigmoid. [`adam_fit`] gives point estimates and
//! [`sgld_sample`] draws from the posterior with an Adam-style preconditioner.
//! Both take any [`Objective`]; [`CuttingProblem`] is the simulator-backed one.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Var};
use crate::dynamics::{ForceProfile, KnifeMotion, SimError, SimParams, Simulator};
use crate::geometry::lift;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, InferenceError> {
    Err(InferenceError::Usage(msg.into()))
}

/// Simulator parameters that can be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    SdfKe,
    SdfKd,
    SdfKf,
    SdfMu,
    CutSpringKe,
    CutSpringKd,
    CutSpringSoftness,
    InitialY,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::SdfKe,
        ParamName::SdfKd,
        ParamName::SdfKf,
        ParamName::SdfMu,
        ParamName::CutSpringKe,
        ParamName::CutSpringKd,
        ParamName::CutSpringSoftness,
        ParamName::InitialY,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamName::SdfKe => "sdf_ke",
            ParamName::SdfKd => "sdf_kd",
            ParamName::SdfKf => "sdf_kf",
            ParamName::SdfMu => "sdf_mu",
            ParamName::CutSpringKe => "cut_spring_ke",
            ParamName::CutSpringKd => "cut_spring_kd",
            ParamName::CutSpringSoftness => "cut_spring_softness",
            ParamName::InitialY => "initial_y",
        }
    }

    /// Mutable per-spring slot, or `None` for scene-wide parameters.
    pub fn per_spring<'a, S>(&self, p: &'a mut SimParams<S>) -> Option<&'a mut Vec<S>> {
        match self {
            ParamName::SdfKe => Some(&mut p.sdf_ke),
            ParamName::SdfKd => Some(&mut p.sdf_kd),
            ParamName::SdfKf => Some(&mut p.sdf_kf),
            ParamName::SdfMu => Some(&mut p.sdf_mu),
            ParamName::CutSpringKe => Some(&mut p.cut_spring_ke),
            ParamName::CutSpringKd => Some(&mut p.cut_spring_kd),
            ParamName::CutSpringSoftness => Some(&mut p.cut_spring_softness),
            ParamName::InitialY => None,
        }
    }

    /// Current value(s) of this parameter in `p`.
    pub fn read(&self, p: &SimParams<f64>) -> Vec<f64> {
        let mut q = p.clone();
        match self.per_spring(&mut q) {
            Some(v) => v.clone(),
            None => vec![p.initial_y],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One scalar replicated to every cutting spring.
    Shared,
    /// One value per cutting spring.
    PerSpring,
}

/// One estimated parameter: its mode, bounds and unconstrained values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub mode: Mode,
    pub lower: f64,
    pub upper: f64,
    pub x: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl ParamEntry {
    fn map<S: Real>(&self, x: S) -> S {
        x.sigmoid() * (self.upper - self.lower) + self.lower
    }

    fn unmap(&self, value: f64) -> Result<f64, InferenceError> {
        if !(value > self.lower && value < self.upper) {
            return usage(format!(
                "value {value} is not strictly inside ({}, {})",
                self.lower, self.upper
            ));
        }
        Ok(logit((value - self.lower) / (self.upper - self.lower)))
    }

    /// Constrained values.
    pub fn values(&self) -> Vec<f64> {
        self.x.iter().map(|&x| self.map(x)).collect()
    }
}

/// The estimated subset of simulator parameters, in a fixed name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<ParamName, ParamEntry>,
    n_springs: usize,
}

/// Serialized form of one entry: constrained values keyed by parameter name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRecord {
    pub mode: Mode,
    pub bounds: [f64; 2],
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn new(n_springs: usize) -> ParamSet {
        ParamSet {
            entries: BTreeMap::new(),
            n_springs,
        }
    }

    pub fn n_springs(&self) -> usize {
        self.n_springs
    }

    /// Adds a parameter with every value initialized to `init`.
    pub fn add(&mut self, name: ParamName, mode: Mode, bounds: (f64, f64), init: f64) -> Result<(), InferenceError> {
        let (lower, upper) = bounds;
        if !(lower < upper && lower.is_finite() && upper.is_finite()) {
            return usage(format!("{}: bounds must satisfy lower < upper", name.as_str()));
        }
        if name == ParamName::InitialY && mode == Mode::PerSpring {
            return usage("initial_y is a single scalar and cannot be per-spring");
        }
        let count = match mode {
            Mode::Shared => 1,
            Mode::PerSpring => self.n_springs,
        };
        let mut e = ParamEntry {
            mode,
            lower,
            upper,
            x: Vec::new(),
        };
        let x = e.unmap(init).map_err(|err| InferenceError::Usage(format!("{}: {err}", name.as_str())))?;
        e.x = vec![x; count];
        self.entries.insert(name, e);
        Ok(())
    }

    /// Replaces the constrained values of an existing entry.
    pub fn set_values(&mut self, name: ParamName, values: &[f64]) -> Result<(), InferenceError> {
        let e = match self.entries.get_mut(&name) {
            Some(e) => e,
            None => return usage(format!("{} is not in the set", name.as_str())),
        };
        if values.len() != e.x.len() {
            return usage(format!("{}: expected {} values", name.as_str(), e.x.len()));
        }
        e.x = values.iter().map(|&v| e.unmap(v)).collect::<Result<Vec<_>, _>>()?;
        Ok(())
    }

    pub fn entry(&self, name: ParamName) -> Option<&ParamEntry> {
        self.entries.get(&name)
    }

    pub fn names(&self) -> Vec<ParamName> {
        self.entries.keys().copied().collect()
    }

    /// Number of unconstrained scalars.
    pub fn len(&self) -> usize {
        self.entries.values().map(|e| e.x.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unconstrained values, entries in name order.
    pub fn flat(&self) -> Vec<f64> {
        self.entries.values().flat_map(|e| e.x.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, x: &[f64]) -> Result<(), InferenceError> {
        if x.len() != self.len() {
            return usage(format!("expected {} values, got {}", self.len(), x.len()));
        }
        let mut k = 0;
        for e in self.entries.values_mut() {
            let n = e.x.len();
            e.x.copy_from_slice(&x[k..k + n]);
            k += n;
        }
        Ok(())
    }

    /// Copy with the given unconstrained values.
    pub fn with_flat(&self, x: &[f64]) -> Result<ParamSet, InferenceError> {
        let mut s = self.clone();
        s.set_flat(x)?;
        Ok(s)
    }

    /// Constrained values for a flat unconstrained vector, in the same layout.
    pub fn constrained(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut k = 0;
        for e in self.entries.values() {
            for &xi in &x[k..k + e.x.len()] {
                out.push(e.map(xi));
            }
            k += e.x.len();
        }
        out
    }

    /// Writes the constrained parameters, computed from `xs`, into `base`.
    pub fn apply<S: Real>(&self, xs: &[S], base: &SimParams<S>) -> SimParams<S> {
        let mut p = base.clone();
        let mut k = 0;
        for (name, e) in &self.entries {
            let vals: Vec<S> = xs[k..k + e.x.len()].iter().map(|&x| e.map(x)).collect();
            k += e.x.len();
            match name.per_spring(&mut p) {
                Some(slot) => match e.mode {
                    Mode::Shared => slot.iter_mut().for_each(|s| *s = vals[0]),
                    Mode::PerSpring => slot.copy_from_slice(&vals),
                },
                None => p.initial_y = vals[0],
            }
        }
        p
    }

    /// Simulator parameters at the current values.
    pub fn to_sim_params(&self, base: &SimParams<f64>) -> SimParams<f64> {
        self.apply(&self.flat(), base)
    }

    /// Draws every value uniformly within its bounds.
    pub fn randomize<R: rand::Rng>(&mut self, rng: &mut R) {
        for e in self.entries.values_mut() {
            for x in e.x.iter_mut() {
                let u: f64 = rng.random_range(1e-6..1.0 - 1e-6);
                *x = logit(u);
            }
        }
    }

    pub fn records(&self) -> BTreeMap<String, EntryRecord> {
        self.entries
            .iter()
            .map(|(n, e)| {
                (
                    n.as_str().to_string(),
                    EntryRecord {
                        mode: e.mode,
                        bounds: [e.lower, e.upper],
                        values: e.values(),
                    },
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records()).expect("records serialize")
    }

    /// Rebuilds a set from its JSON form.
    pub fn from_json(text: &str, n_springs: usize) -> Result<ParamSet, InferenceError> {
        let records: BTreeMap<ParamName, EntryRecord> =
            serde_json::from_str(text).map_err(|e| InferenceError::Usage(e.to_string()))?;
        let mut set = ParamSet::new(n_springs);
        for (name, r) in records {
            let expected = match r.mode {
                Mode::Shared => 1,
                Mode::PerSpring => n_springs,
            };
            if r.values.len() != expected {
                return usage(format!("{}: expected {expected} values", name.as_str()));
            }
            set.add(name, r.mode, (r.bounds[0], r.bounds[1]), r.values[0])?;
            let e = set.entries.get_mut(&name).expect("just added");
            let xs = r.values.iter().map(|&v| e.unmap(v)).collect::<Result<Vec<_>, _>>()?;
            e.x = xs;
        }
        Ok(set)
    }
}

/// Profile distance used as the negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
    Cosine,
    LogSumExp,
}

/// Distance between a simulated profile and a reference of the same length.
pub fn loss<S: Real>(sim: &[S], reference: &[f64], norm: LossNorm) -> Result<S, InferenceError> {
    if sim.is_empty() || reference.is_empty() {
        return usage("loss of an empty profile");
    }
    if sim.len() != reference.len() {
        return usage(format!("profile lengths differ: {} vs {}", sim.len(), reference.len()));
    }
    let n = sim.len() as f64;
    let zero = S::cst(0.0);
    Ok(match norm {
        LossNorm::L1 => sim.iter().zip(reference).fold(zero, |acc, (s, r)| acc + (*s - *r).abs()) / n,
        LossNorm::L2 => {
            sim.iter().zip(reference).fold(zero, |acc, (s, r)| {
                let d = *s - *r;
                acc + d * d
            }) / n
        }
        LossNorm::Cosine => {
            let ab = sim.iter().zip(reference).fold(zero, |acc, (s, r)| acc + *s * *r);
            let aa = sim.iter().fold(zero, |acc, s| acc + *s * *s);
            let bb: f64 = reference.iter().map(|r| r * r).sum();
            if aa.val() == 0.0 || bb == 0.0 {
                S::cst(1.0)
            } else {
                S::cst(1.0) - ab / (aa.sqrt() * bb.sqrt())
            }
        }
        LossNorm::LogSumExp => {
            // Shifted by the largest term for stability.
            let d: Vec<S> = sim.iter().zip(reference).map(|(s, r)| (*s - *r).abs()).collect();
            let m = d.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.val()));
            d.iter().fold(zero, |acc, x| acc + (*x - m).exp()).ln() + m
        }
    })
}

pub fn log_likelihood<S: Real>(sim: &[S], reference: &[f64], norm: LossNorm) -> Result<S, InferenceError> {
    Ok(-loss(sim, reference, norm)?)
}

/// Linear interpolation of `profile` at `times`, held constant past the ends.
pub fn resample(profile: &ForceProfile<f64>, times: &[f64]) -> Result<Vec<f64>, InferenceError> {
    if profile.is_empty() {
        return usage("cannot resample an empty profile");
    }
    let (t, f) = (&profile.times, &profile.forces);
    Ok(times
        .iter()
        .map(|&x| {
            let k = t.partition_point(|&s| s <= x);
            if k == 0 {
                f[0]
            } else if k == t.len() {
                f[k - 1]
            } else {
                let w = (x - t[k - 1]) / (t[k] - t[k - 1]);
                f[k - 1] + w * (f[k] - f[k - 1])
            }
        })
        .collect())
}

/// Mean absolute error divided by the mean reference force.
pub fn nmae(sim: &[f64], reference: &[f64]) -> Result<f64, InferenceError> {
    if sim.len() != reference.len() || sim.is_empty() {
        return usage("nmae needs equal, nonempty profiles");
    }
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    if !(mean > 0.0) {
        return usage("nmae needs a reference with positive mean");
    }
    let mae = sim.iter().zip(reference).map(|(a, b)| (a - b).abs()).sum::<f64>() / sim.len() as f64;
    Ok(mae / mean)
}

/// A differentiable scalar function of unconstrained parameters.
pub trait Objective {
    /// Value and gradient at `x`.
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), InferenceError>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), InferenceError>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.05,
            iters: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected moment estimates shared by Adam and SGLD.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    t: i32,
}

impl Moments {
    pub fn new(n: usize, beta1: f64, beta2: f64) -> Moments {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1,
            beta2,
            t: 0,
        }
    }

    /// Folds in a gradient and returns (m̂, v̂).
    pub fn update(&mut self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut mh = Vec::with_capacity(g.len());
        let mut vh = Vec::with_capacity(g.len());
        for (k, &gk) in g.iter().enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gk;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gk * gk;
            mh.push(self.m[k] / c1);
            vh.push(self.v[k] / c2);
        }
        (mh, vh)
    }
}

fn checked_eval<O: Objective + ?Sized>(
    obj: &mut O,
    x: &[f64],
    iteration: usize,
) -> Result<(f64, Vec<f64>), InferenceError> {
    let (f, g) = obj.eval(x)?;
    if g.len() != x.len() {
        return usage(format!("objective returned {} gradient entries for {} parameters", g.len(), x.len()));
    }
    if !f.is_finite() {
        return Err(InferenceError::NonFinite {
            iteration,
            what: "loss".into(),
        });
    }
    if let Some(k) = g.iter().position(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite {
            iteration,
            what: format!("gradient entry {k}"),
        });
    }
    Ok((f, g))
}

#[derive(Debug, Clone)]
pub struct AdamRun {
    /// Final unconstrained parameters.
    pub x: Vec<f64>,
    /// Loss at each iterate before its update, starting with the initial point.
    pub history: Vec<f64>,
    /// Parameters after each update.
    pub iterates: Vec<Vec<f64>>,
    /// Loss at the final parameters.
    pub final_loss: f64,
}

/// Adam descent on an objective.
pub fn adam_fit<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], cfg: &AdamConfig) -> Result<AdamRun, InferenceError> {
    let mut x = x0.to_vec();
    let mut mom = Moments::new(x.len(), cfg.beta1, cfg.beta2);
    let mut history = Vec::with_capacity(cfg.iters);
    let mut iterates = Vec::with_capacity(cfg.iters);
    for i in 1..=cfg.iters {
        let (f, g) = checked_eval(obj, &x, i)?;
        log::debug!("adam iteration {i}: loss {f:e}");
        history.push(f);
        let (mh, vh) = mom.update(&g);
        for k in 0..x.len() {
            x[k] -= cfg.lr * mh[k] / (vh[k].sqrt() + cfg.eps);
        }
        iterates.push(x.clone());
    }
    let (final_loss, _) = checked_eval(obj, &x, cfg.iters + 1)?;
    Ok(AdamRun {
        x,
        history,
        iterates,
        final_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldConfig {
    pub lr: f64,
    pub burn_in: usize,
    pub draws: usize,
    pub beta1: f64,
    /// Decay of the squared-gradient average behind the preconditioner.
    pub beta2: f64,
    pub eps: f64,
    /// Multiplies the injected noise; zero turns the chain into Adam.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            lr: 0.05,
            burn_in: 90,
            draws: 200,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    /// Post-burn-in draws in unconstrained space.
    pub draws: Vec<Vec<f64>>,
    pub burn_in: usize,
    /// Energy at each iterate before its update.
    pub history: Vec<f64>,
    /// Every iterate, burn-in included.
    pub iterates: Vec<Vec<f64>>,
}

impl PosteriorSamples {
    /// Mean of the draws in unconstrained space.
    pub fn mean(&self) -> Vec<f64> {
        mean_of(&self.draws)
    }

    /// Mean of the draws after mapping each into its bounds.
    pub fn constrained_mean(&self, set: &ParamSet) -> Vec<f64> {
        let mapped: Vec<Vec<f64>> = self.draws.iter().map(|d| set.constrained(d)).collect();
        mean_of(&mapped)
    }

    /// Draws as CSV rows of constrained values, one column per scalar.
    pub fn to_csv(&self, set: &ParamSet) -> String {
        let mut header: Vec<String> = Vec::new();
        for name in set.names() {
            let e = set.entry(name).expect("listed name");
            if e.x.len() == 1 {
                header.push(name.as_str().to_string());
            } else {
                header.extend((0..e.x.len()).map(|k| format!("{}_{k}", name.as_str())));
            }
        }
        let mut s = header.join(",") + "\n";
        for d in &self.draws {
            let row: Vec<String> = set.constrained(d).iter().map(|v| format!("{v:?}")).collect();
            s += &row.join(",");
            s.push('\n');
        }
        s
    }
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut m = vec![0.0; first.len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter().map(|v| v / rows.len() as f64).collect()
}

/// Preconditioned Langevin sampling: Adam steps plus noise N(0, α·A) with
/// A = diag(1 / (√v̂ + ε)).
pub fn sgld_sample<O: Objective + ?Sized>(
    obj: &mut O,
    x0: &[f64],
    cfg: &SgldConfig,
) -> Result<PosteriorSamples, InferenceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.to_vec();
    let mut mom = Moments::new(x.len(), cfg.beta1, cfg.beta2);
    let total = cfg.burn_in + cfg.draws;
    let mut history = Vec::with_capacity(total);
    let mut iterates = Vec::with_capacity(total);
    let mut draws = Vec::with_capacity(cfg.draws);
    for i in 1..=total {
        let (f, g) = checked_eval(obj, &x, i)?;
        log::debug!("sgld iteration {i}: energy {f:e}");
        history.push(f);
        let (mh, vh) = mom.update(&g);
        for k in 0..x.len() {
            let denom = vh[k].sqrt() + cfg.eps;
            let a = 1.0 / denom;
            let z: f64 = StandardNormal.sample(&mut rng);
            // α·m̂·A written as a division so the noiseless chain is Adam bit for bit.
            x[k] = x[k] - cfg.lr * mh[k] / denom + cfg.noise_scale * (cfg.lr * a).sqrt() * z;
        }
        iterates.push(x.clone());
        if i > cfg.burn_in {
            draws.push(x.clone());
        }
    }
    Ok(PosteriorSamples {
        draws,
        burn_in: cfg.burn_in,
        history,
        iterates,
    })
}

/// Loss of a simulated rollout against a reference, differentiated through
/// the tape. The tape is cleared and reused across evaluations.
pub struct CuttingProblem<'s> {
    sim: &'s Simulator,
    base: SimParams<f64>,
    params: ParamSet,
    velocities: Vec<[f64; 3]>,
    reference: Vec<f64>,
    pub norm: LossNorm,
    /// Multiplies the loss to form the energy; larger values sharpen the
    /// posterior without changing the Adam trajectory.
    pub likelihood_scale: f64,
    tape: Tape,
    pub evaluations: usize,
}

impl<'s> CuttingProblem<'s> {
    pub fn new(
        sim: &'s Simulator,
        base: SimParams<f64>,
        params: ParamSet,
        motion: &KnifeMotion,
        reference: &ForceProfile<f64>,
    ) -> Result<CuttingProblem<'s>, InferenceError> {
        motion.validate()?;
        if params.n_springs() != sim.n_springs() {
            return usage(format!(
                "parameter set built for {} springs, mesh has {}",
                params.n_springs(),
                sim.n_springs()
            ));
        }
        let times = sim.record_times();
        if times.is_empty() {
            return usage("the rollout records no samples");
        }
        let reference = resample(reference, &times)?;
        Ok(CuttingProblem {
            sim,
            base,
            velocities: motion.per_step(sim.steps(), sim.config.dt),
            params,
            reference,
            norm: LossNorm::L1,
            likelihood_scale: 1.0,
            tape: Tape::new(),
            evaluations: 0,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Untaped rollout profile at unconstrained `x`.
    pub fn profile_at(&self, x: &[f64]) -> Result<ForceProfile<f64>, InferenceError> {
        let p = self.params.apply(x, &self.base);
        let vel: Vec<[f64; 3]> = self.velocities.clone();
        Ok(self.sim.rollout_with(&p, &vel, None)?.profile)
    }

    /// Plain loss at unconstrained `x`, without the likelihood scale.
    pub fn loss_at(&self, x: &[f64]) -> Result<f64, InferenceError> {
        loss(&self.profile_at(x)?.forces, &self.reference, self.norm)
    }
}

impl Objective for CuttingProblem<'_> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), InferenceError> {
        self.evaluations += 1;
        let tape = &self.tape;
        tape.clear();
        let xs: Vec<Var> = x
            .iter()
            .map(|&v| tape.input(v))
            .collect::<Result<_, _>>()
            .map_err(|e| InferenceError::Usage(e.to_string()))?;
        let p = self.params.apply(&xs, &SimParams::lift(&self.base));
        let vel: Vec<[Var; 3]> = self.velocities.iter().map(|&v| lift(v)).collect();
        let r = self.sim.rollout_with(&p, &vel, None)?;
        let l = loss(&r.profile.forces, &self.reference, self.norm)? * self.likelihood_scale;
        let g = tape.backward(l).map_err(|e| InferenceError::Usage(e.to_string()))?;
        Ok((l.val(), g.inputs().to_vec()))
    }
}
