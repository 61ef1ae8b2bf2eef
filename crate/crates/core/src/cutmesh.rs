//! Virtual-node preprocessing of a planar cut.
//!
//! Every tet crossed by the plane is duplicated. The copy on the + side of
//! the plane keeps the original vertices on the + side and uses fresh
//! duplicates for its − side vertices; the − copy mirrors this. Each crossing
//! edge gets a pair of virtual nodes, one per copy, joined by a
//! zero-rest-length cutting spring. A copy only carries elastic material for
//! its own side, realized as a per-tet volume fraction.

use crate::autodiff::Real;
use crate::geometry::{cross, dot3, norm, sub, tet_volume, CutPlane, TetMesh, Vec3};

/// Vertices closer than this to the plane are moved off it.
pub const SNAP_TOLERANCE: f64 = 1e-9;
/// Distance by which such vertices are moved along the plane normal.
pub const SNAP_OFFSET: f64 = 1e-7;
/// Fraction of a contact section trimmed at the virtual node, so the section
/// lies strictly on its own side of the plane.
pub const SECTION_TRIM: f64 = 1e-3;
/// Minimum distance from the plane for a grounded vertex to be fixed.
pub const FIX_PLANE_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Above,
    Below,
}

/// Point on the edge (i, j) of the cut mesh at x̃ = (1 − u)xᵢ + u xⱼ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualNode {
    pub i: usize,
    pub j: usize,
    pub u: f64,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuttingSpring {
    pub above: VirtualNode,
    pub below: VirtualNode,
    /// Original (pre-cut) edge, smaller index first.
    pub edge: (usize, usize),
    /// Position of the virtual nodes at rest.
    pub rest_position: Vec3,
}

/// The material part of a cut edge on one side, used for knife contact:
/// points (1 − s)x_a + s x_b for s in [s0, s1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSection {
    pub a: usize,
    pub b: usize,
    pub s0: f64,
    pub s1: f64,
    pub spring: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutMesh {
    /// Vertices (originals first, then duplicates), tets (originals, with cut
    /// tets replaced by their + copy, then the − copies) and lumped masses.
    pub mesh: TetMesh,
    /// Elastic weight of each tet in `mesh`.
    pub material_fraction: Vec<f64>,
    pub springs: Vec<CuttingSpring>,
    pub sections: Vec<ContactSection>,
    pub fixed: Vec<bool>,
    pub plane: CutPlane,
    pub n_original_vertices: usize,
    /// For each duplicate vertex (index − n_original_vertices), its original.
    pub duplicate_of: Vec<usize>,
    /// Number of vertices moved off the plane before cutting.
    pub perturbed: usize,
}

/// Position and velocity of a virtual node; differentiable in the parents.
pub fn virtual_node_state<S: Real>(node: &VirtualNode, x: &[[S; 3]], v: &[[S; 3]]) -> ([S; 3], [S; 3]) {
    (interpolate(node, x), interpolate(node, v))
}

pub(crate) fn interpolate<S: Real>(node: &VirtualNode, x: &[[S; 3]]) -> [S; 3] {
    let (a, b) = (x[node.i], x[node.j]);
    let w = 1.0 - node.u;
    [0, 1, 2].map(|c| S::lincomb(0.0, &[(a[c], w), (b[c], node.u)]))
}

/// Fraction of a tet's volume on the positive side of an affine function
/// with vertex values `s` (none of them zero).
pub fn positive_volume_fraction(p: [Vec3; 4], s: [f64; 4]) -> f64 {
    let pos: Vec<usize> = (0..4).filter(|&k| s[k] > 0.0).collect();
    let neg: Vec<usize> = (0..4).filter(|&k| s[k] <= 0.0).collect();
    let corner = |apex: usize, others: &[usize]| -> f64 {
        others.iter().map(|&k| s[apex] / (s[apex] - s[k])).product()
    };
    match pos.len() {
        0 => 0.0,
        4 => 1.0,
        1 => corner(pos[0], &neg),
        3 => 1.0 - corner(neg[0], &pos),
        _ => {
            let (a, b, c, d) = (pos[0], pos[1], neg[0], neg[1]);
            let cut = |i: usize, j: usize| {
                let t = s[i] / (s[i] - s[j]);
                [0, 1, 2].map(|k| p[i][k] + t * (p[j][k] - p[i][k]))
            };
            let (ac, ad, bc, bd) = (cut(a, c), cut(a, d), cut(b, c), cut(b, d));
            let (pa, pb) = (p[a], p[b]);
            let wedge = tet_volume(pa, ac, ad, bd).abs()
                + tet_volume(pa, ac, bc, bd).abs()
                + tet_volume(pa, pb, bc, bd).abs();
            wedge / tet_volume(p[0], p[1], p[2], p[3]).abs()
        }
    }
}

/// Duplicates the tets crossed by `plane` and inserts cutting springs.
pub fn cut(mesh: &TetMesh, plane: &CutPlane) -> CutMesh {
    let n = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    let mut perturbed = 0;
    for p in vertices.iter_mut() {
        if plane.signed_distance(*p).abs() < SNAP_TOLERANCE {
            for k in 0..3 {
                p[k] += SNAP_OFFSET * plane.normal[k];
            }
            perturbed += 1;
        }
    }
    if perturbed > 0 {
        log::warn!("{perturbed} vertices lie on the cut plane; moved {SNAP_OFFSET} m along its normal");
    }
    let sd: Vec<f64> = vertices.iter().map(|p| plane.signed_distance(*p)).collect();
    let is_cut = |t: &[usize; 4]| t.iter().any(|&v| sd[v] > 0.0) && t.iter().any(|&v| sd[v] < 0.0);

    let mut needs_dup = vec![false; n];
    for t in mesh.tets.iter().filter(|t| is_cut(t)) {
        for &v in t {
            needs_dup[v] = true;
        }
    }
    let mut dup = vec![usize::MAX; n];
    let mut duplicate_of = Vec::new();
    for v in 0..n {
        if needs_dup[v] {
            dup[v] = n + duplicate_of.len();
            duplicate_of.push(v);
        }
    }
    let mut masses = mesh.masses.clone();
    for &v in &duplicate_of {
        masses[v] *= 0.5;
        vertices.push(vertices[v]);
    }
    for &v in &duplicate_of {
        masses.push(masses[v]);
    }

    let mut tets = Vec::with_capacity(mesh.tets.len() + duplicate_of.len());
    let mut fraction = Vec::with_capacity(tets.capacity());
    let mut below_copies = Vec::new();
    let mut below_fraction = Vec::new();
    for t in &mesh.tets {
        if !is_cut(t) {
            tets.push(*t);
            fraction.push(1.0);
            continue;
        }
        let f = positive_volume_fraction(t.map(|v| vertices[v]), t.map(|v| sd[v]));
        tets.push(t.map(|v| if sd[v] > 0.0 { v } else { dup[v] }));
        fraction.push(f);
        below_copies.push(t.map(|v| if sd[v] < 0.0 { v } else { dup[v] }));
        below_fraction.push(1.0 - f);
    }
    tets.extend(below_copies);
    fraction.extend(below_fraction);

    let mut springs = Vec::new();
    let mut sections = Vec::new();
    for (i, j) in mesh.edges() {
        if !(sd[i] * sd[j] < 0.0) {
            continue;
        }
        let u = sd[i] / (sd[i] - sd[j]);
        let i_above = sd[i] > 0.0;
        let pick = |v: usize, keep: bool| if keep { v } else { dup[v] };
        let above = VirtualNode {
            i: pick(i, i_above),
            j: pick(j, !i_above),
            u,
            side: Side::Above,
        };
        let below = VirtualNode {
            i: pick(i, !i_above),
            j: pick(j, i_above),
            u,
            side: Side::Below,
        };
        let k = springs.len();
        for node in [above, below] {
            // The material end is the original vertex lying on the node's side.
            let i_material = (node.side == Side::Above) == i_above;
            let (s0, s1) = if i_material {
                (0.0, u * (1.0 - SECTION_TRIM))
            } else {
                (u + SECTION_TRIM * (1.0 - u), 1.0)
            };
            sections.push(ContactSection {
                a: node.i,
                b: node.j,
                s0,
                s1,
                spring: k,
                side: node.side,
            });
        }
        let rest_position = interpolate(&above, &vertices);
        springs.push(CuttingSpring {
            above,
            below,
            edge: (i, j),
            rest_position,
        });
    }

    let nv = vertices.len();
    CutMesh {
        mesh: TetMesh {
            vertices,
            tets,
            density: mesh.density,
            masses,
        },
        material_fraction: fraction,
        springs,
        sections,
        fixed: vec![false; nv],
        plane: *plane,
        n_original_vertices: n,
        duplicate_of,
        perturbed,
    }
}

/// Fixes vertices that touch the ground and lie at least 1 cm from the plane.
pub fn apply_boundary_conditions(mut cm: CutMesh, ground_height: f64, ground_radius: f64) -> CutMesh {
    for (v, p) in cm.mesh.vertices.iter().enumerate() {
        let grounded = p[1] - ground_height <= ground_radius;
        let away = cm.plane.signed_distance(*p).abs() >= FIX_PLANE_DISTANCE;
        cm.fixed[v] = grounded && away;
    }
    cm
}

impl CutMesh {
    /// A mesh that is not cut at all (no springs, all material fractions 1).
    pub fn uncut(mesh: &TetMesh, plane: CutPlane) -> CutMesh {
        let nv = mesh.vertices.len();
        CutMesh {
            mesh: mesh.clone(),
            material_fraction: vec![1.0; mesh.tets.len()],
            springs: Vec::new(),
            sections: Vec::new(),
            fixed: vec![false; nv],
            plane,
            n_original_vertices: nv,
            duplicate_of: Vec::new(),
            perturbed: 0,
        }
    }

    /// In-plane axes (horizontal, vertical): vertical is world +y projected
    /// onto the plane, horizontal completes a right-handed frame with the normal.
    pub fn plane_axes(&self) -> (Vec3, Vec3) {
        let n = self.plane.normal;
        let up = [0.0, 1.0, 0.0];
        let k = dot3(up, n);
        let mut vert = sub(up, [n[0] * k, n[1] * k, n[2] * k]);
        let l = norm(vert);
        if l < 1e-12 {
            vert = [1.0, 0.0, 0.0];
        } else {
            vert = [vert[0] / l, vert[1] / l, vert[2] / l];
        }
        (cross(n, vert), vert)
    }

    /// Rest positions of the springs in plane coordinates (horizontal, vertical).
    pub fn spring_coordinates(&self) -> Vec<[f64; 2]> {
        let (h, v) = self.plane_axes();
        self.springs
            .iter()
            .map(|s| {
                let r = sub(s.rest_position, self.plane.point);
                [dot3(r, h), dot3(r, v)]
            })
            .collect()
    }

    /// Σ material fraction × rest volume.
    pub fn material_volume(&self) -> f64 {
        (0..self.mesh.tets.len())
            .map(|t| self.material_fraction[t] * self.mesh.volume(t))
            .sum()
    }
}
