use serde::{Deserialize, Serialize};

use super::{Sdf, Vec3};
use crate::autodiff::Real;

/// Knife blade: a trapezoidal cross-section extruded along the blade axis.
///
/// In the knife frame the cutting edge lies on the local z axis at y = 0,
/// centred at the origin; the blade is `edge_dim` wide at the edge and
/// `spine_dim` wide at the spine, `spine_height + tip_height` above it.
/// Thickness is along local x. `position` is the world position of the
/// cutting-edge midpoint and `rotation` maps local to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnifeSdf {
    pub edge_dim: f64,
    pub spine_dim: f64,
    pub spine_height: f64,
    pub tip_height: f64,
    pub depth: f64,
    pub position: Vec3,
    pub rotation: [[f64; 3]; 3],
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Default for KnifeSdf {
    fn default() -> Self {
        KnifeSdf {
            edge_dim: 0.08e-3,
            spine_dim: 2e-3,
            spine_height: 40e-3,
            tip_height: 0.04e-3,
            depth: 150e-3,
            position: [0.0, 0.08, 0.0],
            rotation: IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Feature {
    /// Closest to the line of polygon edge k (also used inside).
    Face(usize),
    /// Closest to polygon vertex k.
    Corner(usize),
}

impl KnifeSdf {
    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            ("edge_dim", self.edge_dim),
            ("spine_dim", self.spine_dim),
            ("spine_height", self.spine_height),
            ("tip_height", self.tip_height),
            ("depth", self.depth),
        ];
        for (name, v) in dims {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("knife {name} must be positive, got {v}"));
            }
        }
        if self.edge_dim > self.spine_dim {
            return Err("knife edge_dim must not exceed spine_dim".into());
        }
        Ok(())
    }

    pub fn height(&self) -> f64 {
        self.spine_height + self.tip_height
    }

    /// Cross-section corners, counter-clockwise: edge left, edge right,
    /// spine right, spine left.
    pub fn polygon(&self) -> [[f64; 2]; 4] {
        let (e, s, h) = (0.5 * self.edge_dim, 0.5 * self.spine_dim, self.height());
        [[-e, 0.0], [e, 0.0], [s, h], [-s, h]]
    }

    fn outward_normals(poly: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
        let mut n = [[0.0; 2]; 4];
        for k in 0..4 {
            let a = poly[k];
            let b = poly[(k + 1) % 4];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let l = (dx * dx + dy * dy).sqrt();
            n[k] = [dy / l, -dx / l];
        }
        n
    }

    fn feature(poly: &[[f64; 2]; 4], normals: &[[f64; 2]; 4], q: [f64; 2]) -> Feature {
        let mut inside = true;
        let mut best_face = 0;
        let mut best_s = f64::NEG_INFINITY;
        for k in 0..4 {
            let s = normals[k][0] * (q[0] - poly[k][0]) + normals[k][1] * (q[1] - poly[k][1]);
            if s > 0.0 {
                inside = false;
            }
            if s > best_s {
                best_s = s;
                best_face = k;
            }
        }
        if inside {
            return Feature::Face(best_face);
        }
        let mut best = Feature::Face(0);
        let mut best_d2 = f64::INFINITY;
        for k in 0..4 {
            let a = poly[k];
            let b = poly[(k + 1) % 4];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let t = ((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / (dx * dx + dy * dy);
            let t = t.clamp(0.0, 1.0);
            let (cx, cy) = (a[0] + t * dx - q[0], a[1] + t * dy - q[1]);
            let d2 = cx * cx + cy * cy;
            if d2 < best_d2 {
                best_d2 = d2;
                best = if t <= 0.0 {
                    Feature::Corner(k)
                } else if t >= 1.0 {
                    Feature::Corner((k + 1) % 4)
                } else {
                    Feature::Face(k)
                };
            }
        }
        best
    }

    fn is_identity(&self) -> bool {
        self.rotation == IDENTITY
    }

    /// Signed distance and gradient at world point `p` for a knife whose
    /// edge midpoint sits at `pos`. Differentiable in `S` except on the
    /// measure-zero skeleton, where the first face in the fixed ordering wins.
    pub fn eval_at<S: Real>(&self, p: [S; 3], pos: [S; 3]) -> (S, [S; 3]) {
        let w = [p[0] - pos[0], p[1] - pos[1], p[2] - pos[2]];
        let q = if self.is_identity() {
            w
        } else {
            let r = &self.rotation;
            let mut q = [S::cst(0.0); 3];
            for (i, qi) in q.iter_mut().enumerate() {
                *qi = S::lincomb(0.0, &[(w[0], r[0][i]), (w[1], r[1][i]), (w[2], r[2][i])]);
            }
            q
        };
        let poly = self.polygon();
        let normals = Self::outward_normals(&poly);
        let (d2, g2) = match Self::feature(&poly, &normals, [q[0].val(), q[1].val()]) {
            Feature::Face(k) => {
                let n = normals[k];
                let s = (q[0] - poly[k][0]) * n[0] + (q[1] - poly[k][1]) * n[1];
                (s, [S::cst(n[0]), S::cst(n[1])])
            }
            Feature::Corner(k) => {
                let rx = q[0] - poly[k][0];
                let ry = q[1] - poly[k][1];
                let l = (rx * rx + ry * ry).sqrt();
                (l, [rx / l, ry / l])
            }
        };
        let sz = if q[2].val() >= 0.0 { 1.0 } else { -1.0 };
        let dz = q[2] * sz - 0.5 * self.depth;
        let zero = S::cst(0.0);
        let (d, g) = if d2.val() > 0.0 && dz.val() > 0.0 {
            let d = (d2 * d2 + dz * dz).sqrt();
            (d, [g2[0] * d2 / d, g2[1] * d2 / d, dz * sz / d])
        } else if d2.val() > 0.0 || (dz.val() <= 0.0 && d2.val() >= dz.val()) {
            (d2, [g2[0], g2[1], zero])
        } else {
            (dz, [zero, zero, S::cst(sz)])
        };
        if self.is_identity() {
            (d, g)
        } else {
            let r = &self.rotation;
            let mut gw = [zero; 3];
            for (i, gi) in gw.iter_mut().enumerate() {
                *gi = S::lincomb(0.0, &[(g[0], r[i][0]), (g[1], r[i][1]), (g[2], r[i][2])]);
            }
            (d, gw)
        }
    }

    /// Signed distance at the current pose.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.eval_at(p, self.position).0
    }
}

impl Sdf for KnifeSdf {
    fn eval(&self, p: Vec3) -> (f64, Vec3) {
        self.eval_at(p, self.position)
    }
}
