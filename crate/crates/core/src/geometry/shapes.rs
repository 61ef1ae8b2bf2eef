//! Structured tetrahedral meshes for the bundled test bodies.
//!
//! All shapes rest on the ground plane y = 0 and are centred on x = z = 0.
//! Splits into tets follow global vertex order, so neighbouring cells share
//! face diagonals and the meshes are conforming.

use std::f64::consts::PI;

use super::{MeshError, TetMesh, Vec3};

/// Cylinder lying along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderSpec {
    pub radius: f64,
    pub length: f64,
    /// Number of concentric rings in the cross-section (ring k has 6k points).
    pub rings: usize,
    /// Number of slabs along the axis.
    pub layers: usize,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrismSpec {
    pub size: Vec3,
    pub cells: [usize; 3],
}

/// Ball obtained by radially mapping a cube grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub radius: f64,
    /// Cells per cube edge.
    pub cells: usize,
}

/// Triangulated disk of unit radius: points (y, z) and triangles.
fn unit_disk(rings: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let mut pts = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(pts.len());
        let n = 6 * k;
        let r = k as f64 / rings as f64;
        for i in 0..n {
            let a = 2.0 * PI * i as f64 / n as f64;
            pts.push([r * a.cos(), r * a.sin()]);
        }
    }
    let mut tris = Vec::new();
    for i in 0..6 {
        tris.push([0, 1 + i, 1 + (i + 1) % 6]);
    }
    for k in 1..rings {
        let (ni, no) = (6 * k, 6 * (k + 1));
        let (si, so) = (ring_start[k], ring_start[k + 1]);
        let (mut i, mut j) = (0usize, 0usize);
        while i < ni || j < no {
            let ai = (i + 1) as f64 / ni as f64;
            let aj = (j + 1) as f64 / no as f64;
            let inner = si + i % ni;
            let outer = so + j % no;
            if j < no && (i >= ni || aj <= ai) {
                tris.push([inner, outer, so + (j + 1) % no]);
                j += 1;
            } else {
                tris.push([inner, outer, si + (i + 1) % ni]);
                i += 1;
            }
        }
    }
    (pts, tris)
}

fn prism_tets(tri: [usize; 3], offset: usize, tets: &mut Vec<[usize; 4]>) {
    let mut t = tri;
    t.sort_unstable();
    let [a, b, c] = t;
    let (a2, b2, c2) = (a + offset, b + offset, c + offset);
    tets.push([a, b, c, c2]);
    tets.push([a, b, b2, c2]);
    tets.push([a, a2, b2, c2]);
}

pub fn cylinder(spec: &CylinderSpec, density: f64) -> Result<TetMesh, MeshError> {
    assert!(spec.rings >= 1 && spec.layers >= 1, "cylinder needs at least one ring and layer");
    let (disk, tris) = unit_disk(spec.rings);
    let per = disk.len();
    let mut vertices = Vec::with_capacity(per * (spec.layers + 1));
    for l in 0..=spec.layers {
        let x = -0.5 * spec.length + spec.length * l as f64 / spec.layers as f64;
        for p in &disk {
            vertices.push([x, spec.radius * (1.0 + p[0]), spec.radius * p[1]]);
        }
    }
    let mut tets = Vec::new();
    for l in 0..spec.layers {
        for t in &tris {
            prism_tets([t[0] + l * per, t[1] + l * per, t[2] + l * per], per, &mut tets);
        }
    }
    TetMesh::new(vertices, tets, density)
}

/// Kuhn subdivision of a regular grid; `map` places grid point (i, j, k).
fn grid_tets(
    cells: [usize; 3],
    map: impl Fn(usize, usize, usize) -> Vec3,
    density: f64,
) -> Result<TetMesh, MeshError> {
    let [nx, ny, nz] = cells;
    let id = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                vertices.push(map(i, j, k));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    TetMesh::new(vertices, tets, density)
}

pub fn prism(spec: &PrismSpec, density: f64) -> Result<TetMesh, MeshError> {
    let [nx, ny, nz] = spec.cells;
    assert!(nx >= 1 && ny >= 1 && nz >= 1, "prism needs at least one cell per axis");
    let [lx, ly, lz] = spec.size;
    grid_tets(
        spec.cells,
        |i, j, k| {
            [
                lx * (i as f64 / nx as f64 - 0.5),
                ly * j as f64 / ny as f64,
                lz * (k as f64 / nz as f64 - 0.5),
            ]
        },
        density,
    )
}

pub fn sphere(spec: &SphereSpec, density: f64) -> Result<TetMesh, MeshError> {
    let n = spec.cells;
    assert!(n >= 2, "sphere needs at least two cells per axis");
    let r = spec.radius;
    grid_tets(
        [n, n, n],
        |i, j, k| {
            let c = [i, j, k].map(|v| 2.0 * v as f64 / n as f64 - 1.0);
            let inf = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let two = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            let s = if two > 0.0 { r * inf / two } else { 0.0 };
            [c[0] * s, r + c[1] * s, c[2] * s]
        },
        density,
    )
}
