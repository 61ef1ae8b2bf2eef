//! Optimal transport of per-spring parameters between cut meshes.
//!
//! Springs are points on the cut plane. The earth mover's problem with
//! squared Euclidean ground cost is solved exactly as a min-cost flow with
//! successive shortest paths; target parameters are then the flow-weighted
//! means of the source parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::cutmesh::CutMesh;
use crate::inference::{InferenceError, Mode, ParamName, ParamSet};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Params(#[from] InferenceError),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, TransportError> {
    Err(TransportError::Usage(msg.into()))
}

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Weighted 2D points with per-point parameter vectors attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringCloud {
    pub points: Vec<[f64; 2]>,
    /// Per-point mass, summing to one.
    pub weights: Vec<f64>,
    pub params: BTreeMap<ParamName, Vec<f64>>,
}

impl SpringCloud {
    pub fn uniform(points: Vec<[f64; 2]>) -> Result<SpringCloud, TransportError> {
        let n = points.len();
        SpringCloud::weighted(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Cloud with explicit weights; weights not summing to one are normalized.
    pub fn weighted(points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<SpringCloud, TransportError> {
        if points.is_empty() {
            return usage("cloud has no points");
        }
        if weights.len() != points.len() {
            return usage(format!("{} weights for {} points", weights.len(), points.len()));
        }
        if let Some(p) = points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return usage(format!("non-finite point {p:?}"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return usage("weights must be positive and finite");
        }
        let total: f64 = weights.iter().sum();
        let weights = if (total - 1.0).abs() > 1e-12 {
            log::warn!("cloud weights sum to {total}; normalizing");
            weights.iter().map(|w| w / total).collect()
        } else {
            weights
        };
        Ok(SpringCloud {
            points,
            weights,
            params: BTreeMap::new(),
        })
    }

    /// Uniform cloud of the springs of a cut mesh, in plane coordinates.
    pub fn from_mesh(mesh: &CutMesh) -> Result<SpringCloud, TransportError> {
        SpringCloud::uniform(mesh.spring_coordinates())
    }

    /// Attaches one value per point for `name`.
    pub fn with_param(mut self, name: ParamName, values: Vec<f64>) -> Result<SpringCloud, TransportError> {
        if values.len() != self.len() {
            return usage(format!("{}: {} values for {} points", name.as_str(), values.len(), self.len()));
        }
        self.params.insert(name, values);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, d: [f64; 2]) -> SpringCloud {
        let mut c = self.clone();
        for p in c.points.iter_mut() {
            p[0] += d[0];
            p[1] += d[1];
        }
        c
    }
}

/// Flow between a source and a target cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `flow[i][j]` is the mass moved from source i to target j.
    pub flow: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    /// Flow-weighted mean cost.
    pub objective: f64,
}

impl TransportPlan {
    pub fn n_source(&self) -> usize {
        self.flow.len()
    }

    pub fn n_target(&self) -> usize {
        self.flow.first().map_or(0, Vec::len)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.flow.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n_target()).map(|j| self.flow.iter().map(|r| r[j]).sum()).collect()
    }

    /// Objective of an arbitrary flow under this plan's cost matrix.
    pub fn objective_of(&self, flow: &[Vec<f64>]) -> f64 {
        plan_objective(flow, &self.cost)
    }

    /// Nonzero entries as `i,j,flow` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,flow\n");
        for (i, row) in self.flow.iter().enumerate() {
            for (j, &f) in row.iter().enumerate() {
                if f > 0.0 {
                    writeln!(out, "{i},{j},{f:e}").expect("write to string");
                }
            }
        }
        out
    }
}

fn plan_objective(flow: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut z = 0.0;
    for (fr, cr) in flow.iter().zip(cost) {
        for (f, c) in fr.iter().zip(cr) {
            num += f * c;
            z += f;
        }
    }
    num / z
}

/// Squared Euclidean distances between every source and target point.
pub fn cost_matrix(source: &SpringCloud, target: &SpringCloud) -> Vec<Vec<f64>> {
    source
        .points
        .iter()
        .map(|p| {
            target
                .points
                .iter()
                .map(|q| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    dx * dx + dy * dy
                })
                .collect()
        })
        .collect()
}

/// Exact earth mover's plan between two clouds.
///
/// Node layout for the flow network: super source, sources, targets, super
/// sink. Each round runs a dense Dijkstra on reduced costs and pushes the
/// bottleneck mass along the shortest path.
pub fn solve_emd(source: &SpringCloud, target: &SpringCloud) -> Result<TransportPlan, TransportError> {
    if source.is_empty() || target.is_empty() {
        return usage("both clouds must be nonempty");
    }
    let n = source.len();
    let m = target.len();
    let cost = cost_matrix(source, target);
    let mut flow = vec![vec![0.0; m]; n];
    let mut supply = source.weights.clone();
    let mut demand = target.weights.clone();

    let s = 0;
    let src = |i: usize| 1 + i;
    let tgt = |j: usize| 1 + n + j;
    let t = 1 + n + m;
    let nodes = n + m + 2;
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    while supply.iter().any(|&a| a > MASS_EPS) {
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        dist[s] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < best {
                    best = d;
                    u = k;
                }
            }
            if u == usize::MAX || u == t {
                break;
            }
            done[u] = true;
            let mut relax = |v: usize, c: f64| {
                let nd = best + (c + pot[u] - pot[v]).max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == s {
                for i in 0..n {
                    if supply[i] > MASS_EPS {
                        relax(src(i), 0.0);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    relax(tgt(j), cost[i][j]);
                }
            } else {
                let j = u - 1 - n;
                for i in 0..n {
                    if flow[i][j] > 0.0 {
                        relax(src(i), -cost[i][j]);
                    }
                }
                if demand[j] > MASS_EPS {
                    relax(t, 0.0);
                }
            }
        }
        if !dist[t].is_finite() {
            break;
        }
        let dt = dist[t];
        for (p, d) in pot.iter_mut().zip(&dist) {
            *p += d.min(dt);
        }

        let mut path = vec![t];
        while *path.last().expect("nonempty") != s {
            path.push(prev[*path.last().expect("nonempty")]);
        }
        path.reverse();
        let first = path[1] - 1;
        let last = path[path.len() - 2] - 1 - n;
        let mut push = supply[first].min(demand[last]);
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] > n {
                push = push.min(flow[w[1] - 1][w[0] - 1 - n]);
            }
        }
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] <= n {
                flow[w[0] - 1][w[1] - 1 - n] += push;
            } else {
                let f = &mut flow[w[1] - 1][w[0] - 1 - n];
                *f -= push;
                if *f <= MASS_EPS {
                    *f = 0.0;
                }
            }
        }
        supply[first] -= push;
        demand[last] -= push;
    }

    let objective = plan_objective(&flow, &cost);
    Ok(TransportPlan { flow, cost, objective })
}

/// Target values as column-normalized flow-weighted means of `values`.
pub fn transport_params(plan: &TransportPlan, values: &[f64]) -> Result<Vec<f64>, TransportError> {
    if values.len() != plan.n_source() {
        return usage(format!("{} values for a plan with {} sources", values.len(), plan.n_source()));
    }
    plan.column_sums()
        .iter()
        .enumerate()
        .map(|(j, &mass)| {
            if mass <= 0.0 {
                return usage(format!("target {j} receives no mass"));
            }
            let num: f64 = plan.flow.iter().zip(values).map(|(r, v)| r[j] * v).sum();
            Ok(num / mass)
        })
        .collect()
}

/// Mean of `values` replicated to `n_target` springs.
pub fn average_baseline(values: &[f64], n_target: usize) -> Result<Vec<f64>, TransportError> {
    if values.is_empty() {
        return usage("no source values");
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(vec![mean; n_target])
}

/// Transports every parameter attached to the source cloud.
pub fn transport_cloud(plan: &TransportPlan, source: &SpringCloud) -> Result<BTreeMap<ParamName, Vec<f64>>, TransportError> {
    source
        .params
        .iter()
        .map(|(&name, v)| Ok((name, transport_params(plan, v)?)))
        .collect()
}

/// Parameter set for the target mesh: per-spring entries are transported,
/// shared entries are copied.
pub fn transport_param_set(plan: &TransportPlan, source: &ParamSet) -> Result<ParamSet, TransportError> {
    map_param_set(source, plan.n_target(), |v| transport_params(plan, v))
}

/// Parameter set for the target mesh with per-spring entries replaced by their mean.
pub fn average_param_set(source: &ParamSet, n_target: usize) -> Result<ParamSet, TransportError> {
    map_param_set(source, n_target, |v| average_baseline(v, n_target))
}

fn map_param_set(
    source: &ParamSet,
    n_target: usize,
    f: impl Fn(&[f64]) -> Result<Vec<f64>, TransportError>,
) -> Result<ParamSet, TransportError> {
    let mut out = ParamSet::new(n_target);
    for name in source.names() {
        let e = source.entry(name).expect("listed name");
        let values = e.values();
        out.add(name, e.mode, (e.lower, e.upper), values[0])?;
        let mapped = match e.mode {
            Mode::Shared => values,
            Mode::PerSpring => f(&values)?,
        };
        out.set_values(name, &mapped)?;
    }
    Ok(out)
}
