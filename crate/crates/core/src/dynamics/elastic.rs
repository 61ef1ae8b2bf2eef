use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::BlockOp;
use crate::cutmesh::CutMesh;

type M3 = [[f64; 3]; 3];

/// Isotropic material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Young's modulus in Pa.
    pub young: f64,
    pub poisson: f64,
    /// Density in kg/m³.
    pub density: f64,
}

impl MaterialParams {
    pub const APPLE: MaterialParams = MaterialParams {
        young: 3.0e6,
        poisson: 0.17,
        density: 787.0,
    };
    pub const POTATO: MaterialParams = MaterialParams {
        young: 2.0e6,
        poisson: 0.45,
        density: 630.0,
    };
    pub const CUCUMBER: MaterialParams = MaterialParams {
        young: 2.5e6,
        poisson: 0.37,
        density: 950.0,
    };
    pub const BANANA: MaterialParams = MaterialParams {
        young: 0.003048e6,
        poisson: 0.28,
        density: 1350.0,
    };

    pub fn by_name(name: &str) -> Option<MaterialParams> {
        match name {
            "apple" => Some(Self::APPLE),
            "potato" => Some(Self::POTATO),
            "cucumber" => Some(Self::CUCUMBER),
            "banana" => Some(Self::BANANA),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.young > 0.0 && self.young.is_finite()) {
            return Err(format!("young must be positive, got {}", self.young));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(format!("poisson must lie in (0, 0.5), got {}", self.poisson));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(format!("density must be positive, got {}", self.density));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn lambda(&self) -> f64 {
        self.young * self.poisson / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))
    }

    /// The constant that makes the undeformed state force-free.
    pub fn alpha(&self) -> f64 {
        1.0 + 0.75 * self.mu() / self.lambda()
    }
}

#[derive(Debug, Clone, Copy)]
struct Element {
    v: [usize; 4],
    dm_inv: M3,
    /// Material fraction times rest volume.
    weight: f64,
}

/// Neo-Hookean forces plus strain-rate damping over a whole mesh, as one
/// taped block. Inputs are the 3n positions, followed by the 3n velocities
/// when damping is enabled; outputs are the 3n nodal forces.
#[derive(Debug)]
pub struct ElasticBlock {
    elements: Vec<Element>,
    n: usize,
    mu: f64,
    lambda: f64,
    alpha: f64,
    damping: f64,
    inverted: AtomicUsize,
}

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// a · bᵀ
fn mat_mul_t(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[j][0] + a[i][1] * b[j][1] + a[i][2] * b[j][2];
        }
    }
    c
}

fn col(m: &M3, k: usize) -> [f64; 3] {
    [m[0][k], m[1][k], m[2][k]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn ddot(a: &M3, b: &M3) -> f64 {
    (0..3).map(|i| (0..3).map(|j| a[i][j] * b[i][j]).sum::<f64>()).sum()
}

/// Cofactor matrix ∂det/∂F, built column-wise from cross products.
fn cofactor(f: &M3) -> M3 {
    let (f1, f2, f3) = (col(f, 0), col(f, 1), col(f, 2));
    from_cols(cross(f2, f3), cross(f3, f1), cross(f1, f2))
}

fn from_cols(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> M3 {
    [[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]]
}

fn invert(m: &M3) -> Option<M3> {
    let c = cofactor(&{
        // cofactor() treats its argument column-wise; transpose to get rows.
        let mut t = *m;
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = m[j][i];
            }
        }
        t
    });
    let det = m[0][0] * c[0][0] + m[0][1] * c[1][0] + m[0][2] * c[2][0];
    if det.abs() < 1e-300 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = c[i][j] / det;
        }
    }
    Some(inv)
}

/// Shape matrix with columns x₁ − x₀, x₂ − x₀, x₃ − x₀ read from a flat array.
fn shape(flat: &[f64], v: &[usize; 4]) -> M3 {
    let p = |k: usize, r: usize| flat[3 * v[k] + r];
    let mut d = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            d[r][c] = p(c + 1, r) - p(0, r);
        }
    }
    d
}

/// Adds −weight · H · D_m⁻ᵀ to the element's four vertices.
fn scatter(out: &mut [f64], e: &Element, h: &M3, scale: f64) {
    let g = mat_mul_t(h, &e.dm_inv);
    for c in 0..3 {
        for r in 0..3 {
            let f = -scale * e.weight * g[r][c];
            out[3 * e.v[c + 1] + r] += f;
            out[3 * e.v[0] + r] -= f;
        }
    }
}

impl ElasticBlock {
    /// Precomputes rest-shape inverses. Tets with zero material weight are dropped.
    pub fn new(cm: &CutMesh, mat: &MaterialParams, damping: f64) -> ElasticBlock {
        let rest: Vec<f64> = cm.mesh.vertices.iter().flatten().copied().collect();
        let elements = cm
            .mesh
            .tets
            .iter()
            .zip(&cm.material_fraction)
            .enumerate()
            .filter(|(_, (_, &w))| w > 0.0)
            .map(|(t, (v, &w))| {
                let dm = shape(&rest, v);
                Element {
                    v: *v,
                    dm_inv: invert(&dm).expect("mesh tets are validated non-degenerate"),
                    weight: w * cm.mesh.volume(t),
                }
            })
            .collect();
        ElasticBlock {
            elements,
            n: cm.mesh.vertices.len(),
            mu: mat.mu(),
            lambda: mat.lambda(),
            alpha: mat.alpha(),
            damping,
            inverted: AtomicUsize::new(0),
        }
    }

    pub fn has_damping(&self) -> bool {
        self.damping > 0.0
    }

    /// Number of element evaluations so far that found J ≤ 0.
    pub fn inverted_count(&self) -> usize {
        self.inverted.load(Ordering::Relaxed)
    }

    fn deformation(&self, e: &Element, x: &[f64]) -> M3 {
        mat_mul(&shape(x, &e.v), &e.dm_inv)
    }

    fn stress(&self, f: &M3) -> (M3, f64) {
        let ic = ddot(f, f);
        let c = cofactor(f);
        let j = ddot(&c, f) / 3.0;
        let a = self.mu * (1.0 - 1.0 / (ic + 1.0));
        let b = self.lambda * (j - self.alpha);
        let mut p = [[0.0; 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                p[r][k] = a * f[r][k] + b * c[r][k];
            }
        }
        (p, j)
    }

    /// Directional derivative of the first Piola stress.
    fn stress_differential(&self, f: &M3, df: &M3) -> M3 {
        let ic = ddot(f, f);
        let c = cofactor(f);
        let j = ddot(&c, f) / 3.0;
        let a = self.mu * (1.0 - 1.0 / (ic + 1.0));
        let da = self.mu * 2.0 * ddot(f, df) / ((ic + 1.0) * (ic + 1.0));
        let b = self.lambda * (j - self.alpha);
        let db = self.lambda * ddot(&c, df);
        let (f1, f2, f3) = (col(f, 0), col(f, 1), col(f, 2));
        let (d1, d2, d3) = (col(df, 0), col(df, 1), col(df, 2));
        let add = |p: [f64; 3], q: [f64; 3]| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
        let dc = from_cols(
            add(cross(d2, f3), cross(f2, d3)),
            add(cross(d3, f1), cross(f3, d1)),
            add(cross(d1, f2), cross(f1, d2)),
        );
        let mut dp = [[0.0; 3]; 3];
        for r in 0..3 {
            for k in 0..3 {
                dp[r][k] = a * df[r][k] + da * f[r][k] + db * c[r][k] + b * dc[r][k];
            }
        }
        dp
    }

    /// Total weighted strain energy at flat positions `x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (mu, lambda, alpha) = (self.mu, self.lambda, self.alpha);
        self.elements
            .iter()
            .map(|e| {
                let f = self.deformation(e, x);
                let ic = ddot(&f, &f);
                let j = ddot(&cofactor(&f), &f) / 3.0;
                let psi = 0.5 * mu * (ic - 3.0) + 0.5 * lambda * (j - alpha) * (j - alpha)
                    - 0.5 * mu * (ic + 1.0).ln();
                e.weight * psi
            })
            .sum()
    }

    /// Elastic plus damping forces on the flat position (and velocity) arrays.
    pub fn forces(&self, x: &[f64], v: Option<&[f64]>) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.n];
        let mut inverted = 0;
        for e in &self.elements {
            let f = self.deformation(e, x);
            let (p, j) = self.stress(&f);
            if j <= 0.0 {
                inverted += 1;
            }
            scatter(&mut out, e, &p, 1.0);
            if let (Some(v), true) = (v, self.has_damping()) {
                let fdot = self.deformation(e, v);
                scatter(&mut out, e, &fdot, self.damping);
            }
        }
        if inverted > 0 {
            self.inverted.fetch_add(inverted, Ordering::Relaxed);
        }
        out
    }
}

impl BlockOp for ElasticBlock {
    fn forward(&self, inputs: &[f64]) -> Vec<f64> {
        let (x, v) = inputs.split_at(3 * self.n);
        self.forces(x, (!v.is_empty()).then_some(v))
    }

    fn vjp(&self, inputs: &[f64], out_adj: &[f64], in_adj: &mut [f64]) {
        // The force Jacobians are symmetric, so the VJP is the directional
        // derivative of the forces along the output adjoint.
        let x = &inputs[..3 * self.n];
        let (gx, gv) = in_adj.split_at_mut(3 * self.n);
        for e in &self.elements {
            let f = self.deformation(e, x);
            let df = self.deformation(e, out_adj);
            let dp = self.stress_differential(&f, &df);
            scatter(gx, e, &dp, 1.0);
            if !gv.is_empty() {
                scatter(gv, e, &df, self.damping);
            }
        }
    }
}
