//! Meshes, signed distance fields and the edge/SDF closest-point query.

mod knife;
mod mesh;
pub mod shapes;

pub use knife::KnifeSdf;
pub use mesh::{load_mesh, save_mesh, tet_volume, MeshError, TetMesh};

use crate::autodiff::Real;

pub type Vec3 = [f64; 3];

#[inline]
pub fn add<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<S: Real>(a: [S; 3], s: S) -> [S; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn scalef<S: Real>(a: [S; 3], s: f64) -> [S; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3<S: Real>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm<S: Real>(a: [S; 3]) -> S {
    dot3(a, a).sqrt()
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Lifts a plain vector to constants of `S`.
#[inline]
pub fn lift<S: Real>(a: Vec3) -> [S; 3] {
    [S::cst(a[0]), S::cst(a[1]), S::cst(a[2])]
}

/// Plain values of a vector of `S`.
#[inline]
pub fn vals<S: Real>(a: [S; 3]) -> Vec3 {
    [a[0].val(), a[1].val(), a[2].val()]
}

/// Planar cutting surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl CutPlane {
    /// Builds a plane, normalizing `normal`. Panics on a zero normal.
    pub fn new(point: Vec3, normal: Vec3) -> Self {
        let n = norm(normal);
        assert!(n > 0.0, "cut plane normal must be nonzero");
        CutPlane {
            point,
            normal: [normal[0] / n, normal[1] / n, normal[2] / n],
        }
    }

    /// The vertical plane x = `x0`.
    pub fn vertical_x(x0: f64) -> Self {
        CutPlane::new([x0, 0.0, 0.0], [1.0, 0.0, 0.0])
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        dot3(sub(p, self.point), self.normal)
    }
}

/// Signed distance to the ground half-space y ≥ `ground_height`, with gradient.
pub fn ground_sdf_eval(p: Vec3, ground_height: f64) -> (f64, Vec3) {
    (p[1] - ground_height, [0.0, 1.0, 0.0])
}

/// A signed distance field with gradient, evaluated in plain arithmetic.
pub trait Sdf {
    fn eval(&self, p: Vec3) -> (f64, Vec3);
}

/// Sphere of radius `radius` around `center`.
#[derive(Debug, Clone, Copy)]
pub struct SphereSdf {
    pub center: Vec3,
    pub radius: f64,
}

impl Sdf for SphereSdf {
    fn eval(&self, p: Vec3) -> (f64, Vec3) {
        let r = sub(p, self.center);
        let n = norm(r);
        let g = if n > 0.0 {
            [r[0] / n, r[1] / n, r[2] / n]
        } else {
            [1.0, 0.0, 0.0]
        };
        (n - self.radius, g)
    }
}

/// Half-space {x : (x − point)·normal ≤ 0}; `normal` must be unit length.
#[derive(Debug, Clone, Copy)]
pub struct HalfSpaceSdf {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Sdf for HalfSpaceSdf {
    fn eval(&self, p: Vec3) -> (f64, Vec3) {
        (dot3(sub(p, self.point), self.normal), self.normal)
    }
}

/// Relative size of g·e below which an edge counts as parallel to the level set.
const FW_FLAT: f64 = 1e-9;

/// Result of [`frank_wolfe_closest`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeContact {
    /// Barycentric coordinate of the closest point, p = (1 − u)p₁ + u p₂.
    pub u: f64,
    pub distance: f64,
    pub normal: Vec3,
}

/// Frank-Wolfe minimization of the SDF along the segment p₁p₂.
///
/// Starts at u = 1/2; each iteration moves towards the vertex of [0, 1]
/// indicated by the sign of the directional derivative with step 2/(2 + i).
pub fn frank_wolfe_closest<F: Sdf + ?Sized>(sdf: &F, p1: Vec3, p2: Vec3, iters: usize) -> EdgeContact {
    let e = sub(p2, p1);
    let point = |u: f64| add(p1, scalef(e, u));
    let mut u = 0.5;
    for i in 0..iters {
        let (_, g) = sdf.eval(point(u));
        let delta = dot3(g, e);
        // Along directions where the distance is flat, the sign of delta is
        // roundoff; stay put so u does not flip under tiny perturbations.
        if delta.abs() <= FW_FLAT * norm(g) * norm(e) {
            continue;
        }
        let s = if delta < 0.0 { 1.0 } else { 0.0 };
        let gamma = 2.0 / (2.0 + i as f64);
        u += gamma * (s - u);
    }
    let (distance, normal) = sdf.eval(point(u));
    EdgeContact { u, distance, normal }
}
