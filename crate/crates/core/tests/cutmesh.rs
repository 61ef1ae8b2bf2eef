use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicesim::autodiff::Tape;
use slicesim::cutmesh::*;
use slicesim::geometry::shapes::{cylinder, prism, sphere, CylinderSpec, PrismSpec, SphereSpec};
use slicesim::geometry::{CutPlane, TetMesh};

fn unit_tet() -> TetMesh {
    TetMesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        vec![[0, 1, 2, 3]],
        1000.0,
    )
    .unwrap()
}

fn small_prism() -> TetMesh {
    prism(
        &PrismSpec {
            size: [0.04, 0.02, 0.03],
            cells: [5, 2, 3],
        },
        1000.0,
    )
    .unwrap()
}

#[test]
fn single_tet_three_cut_edges() {
    let cm = cut(&unit_tet(), &CutPlane::vertical_x(0.3));
    assert_eq!(cm.mesh.tets.len(), 2);
    assert_eq!(cm.springs.len(), 3);
    // Each spring holds one above and one below node.
    let nodes: Vec<_> = cm.springs.iter().flat_map(|s| [s.above, s.below]).collect();
    assert_eq!(nodes.len(), 6);
    assert_eq!(nodes.iter().filter(|n| n.side == Side::Above).count(), 3);
    for s in &cm.springs {
        assert!((s.rest_position[0] - 0.3).abs() < 1e-15);
        assert_eq!(s.above.u, s.below.u);
    }
    // Only vertex 1 is on the + side: fraction is 0.7³.
    assert!((cm.material_fraction[0] - 0.7f64.powi(3)).abs() < 1e-14);
    assert!((cm.material_fraction[0] + cm.material_fraction[1] - 1.0).abs() < 1e-15);
    assert_eq!(cm.mesh.vertices.len(), 8);
    assert!((cm.mesh.total_mass() - unit_tet().total_mass()).abs() < 1e-15);
}

#[test]
fn plane_missing_mesh_is_identity() {
    let m = unit_tet();
    let cm = cut(&m, &CutPlane::new([0.0, 5.0, 0.0], [0.0, 1.0, 0.0]));
    assert_eq!(cm.mesh, m);
    assert!(cm.springs.is_empty());
    assert!(cm.sections.is_empty());
    assert_eq!(cm.material_fraction, vec![1.0]);
}

#[test]
fn edge_interpolation_parameter() {
    let m = TetMesh::new(
        vec![[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        vec![[0, 1, 2, 3]],
        1.0,
    )
    .unwrap();
    let cm = cut(&m, &CutPlane::new([0.0, 0.5, 0.0], [0.0, 1.0, 0.0]));
    let s = cm.springs.iter().find(|s| s.edge == (0, 1)).unwrap();
    assert_eq!(s.above.u, 0.25);
    assert_eq!(s.rest_position, [0.0, 0.5, 0.0]);
}

#[test]
fn virtual_node_interpolation() {
    let x = vec![[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]];
    let v = vec![[1.0, 1.0, 1.0], [3.0, 3.0, 3.0]];
    let node = |u| VirtualNode {
        i: 0,
        j: 1,
        u,
        side: Side::Above,
    };
    assert_eq!(virtual_node_state(&node(0.0), &x, &v), (x[0], v[0]));
    assert_eq!(virtual_node_state(&node(1.0), &x, &v), (x[1], v[1]));
    assert_eq!(virtual_node_state(&node(0.5), &x, &v), ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]));

    // Differentiable in the parents, with weights (1 − u, u).
    let tape = Tape::new();
    let xi: Vec<[_; 3]> = x
        .iter()
        .map(|p| p.map(|c| tape.input(c).unwrap()))
        .collect();
    let vv: Vec<[_; 3]> = v.iter().map(|p| p.map(|c| slicesim::autodiff::Var::constant(c))).collect();
    let (p, _) = virtual_node_state(&node(0.3), &xi, &vv);
    let g = tape.backward(p[1]).unwrap();
    assert!((g.wrt(&xi[0][1]) - 0.7).abs() < 1e-15);
    assert!((g.wrt(&xi[1][1]) - 0.3).abs() < 1e-15);
    assert_eq!(g.wrt(&xi[0][0]), 0.0);
}

#[test]
fn springs_coincide_at_rest() {
    let m = cylinder(
        &CylinderSpec {
            radius: 0.02,
            length: 0.1,
            rings: 2,
            layers: 5,
        },
        1000.0,
    )
    .unwrap();
    let cm = cut(&m, &CutPlane::vertical_x(0.0));
    assert!(!cm.springs.is_empty());
    for s in &cm.springs {
        let (a, _) = virtual_node_state(&s.above, &cm.mesh.vertices, &cm.mesh.vertices);
        let (b, _) = virtual_node_state(&s.below, &cm.mesh.vertices, &cm.mesh.vertices);
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        assert!(d < 1e-12);
        assert!(s.above.u > 0.0 && s.above.u < 1.0);
    }
}

#[test]
fn spring_count_matches_crossing_edges() {
    let m = small_prism();
    let plane = CutPlane::vertical_x(0.0013);
    let cm = cut(&m, &plane);
    let crossing = m
        .edges()
        .into_iter()
        .filter(|&(i, j)| plane.signed_distance(m.vertices[i]) * plane.signed_distance(m.vertices[j]) < 0.0)
        .count();
    assert_eq!(cm.springs.len(), crossing);
    assert_eq!(cm.sections.len(), 2 * crossing);

    let n_cut = m
        .tets
        .iter()
        .filter(|t| {
            let s: Vec<f64> = t.iter().map(|&v| plane.signed_distance(m.vertices[v])).collect();
            s.iter().any(|&x| x > 0.0) && s.iter().any(|&x| x < 0.0)
        })
        .count();
    assert!(n_cut > 0);
    assert_eq!(cm.mesh.tets.len(), m.tets.len() + n_cut);
}

#[test]
fn copies_keep_their_side() {
    let m = small_prism();
    let cm = cut(&m, &CutPlane::vertical_x(0.0013));
    let n = m.tets.len();
    let below_start = n;
    // The k-th cut tet's + copy is at its original index; − copies follow in order.
    let cut_ids: Vec<usize> = (0..n).filter(|&t| cm.material_fraction[t] < 1.0).collect();
    assert_eq!(cut_ids.len(), cm.mesh.tets.len() - n);
    for (k, &t) in cut_ids.iter().enumerate() {
        let above = cm.mesh.tets[t];
        let below = cm.mesh.tets[below_start + k];
        for c in 0..4 {
            let o = m.tets[t][c];
            let x = m.vertices[o][0] - 0.0013;
            if x > 0.0 {
                assert_eq!(above[c], o);
                assert_eq!(cm.duplicate_of[below[c] - cm.n_original_vertices], o);
            } else {
                assert_eq!(below[c], o);
                assert_eq!(cm.duplicate_of[above[c] - cm.n_original_vertices], o);
            }
        }
        // Copies are geometrically identical and positively oriented.
        assert_eq!(cm.mesh.volume(t), cm.mesh.volume(below_start + k));
        assert!(cm.mesh.volume(t) > 0.0);
    }
}

#[test]
fn contact_sections_lie_on_material_side() {
    let m = small_prism();
    let cm = cut(&m, &CutPlane::vertical_x(0.0013));
    let x = &cm.mesh.vertices;
    for sec in &cm.sections {
        let point = |s: f64| [0, 1, 2].map(|c| (1.0 - s) * x[sec.a][c] + s * x[sec.b][c]);
        let sign = if sec.side == Side::Above { 1.0 } else { -1.0 };
        for s in [sec.s0, sec.s1] {
            assert!(sign * cm.plane.signed_distance(point(s)) > 0.0);
        }
        // One endpoint is the original material vertex.
        let end = if sec.s0 == 0.0 { sec.a } else { sec.b };
        assert!(end < cm.n_original_vertices);
        assert!(sec.s0 == 0.0 || sec.s1 == 1.0);
    }
}

#[test]
fn mass_and_volume_conserved() {
    let meshes = [
        small_prism(),
        cylinder(
            &CylinderSpec {
                radius: 0.02,
                length: 0.1,
                rings: 3,
                layers: 7,
            },
            1000.0,
        )
        .unwrap(),
        sphere(
            &SphereSpec {
                radius: 0.04,
                cells: 5,
            },
            787.0,
        )
        .unwrap(),
    ];
    for m in &meshes {
        for x0 in [0.0, 0.0037, -0.011] {
            let cm = cut(m, &CutPlane::vertical_x(x0));
            let rel = (cm.material_volume() - m.total_volume()).abs() / m.total_volume();
            assert!(rel < 1e-9, "volume error {rel}");
            let rel = (cm.mesh.total_mass() - m.total_mass()).abs() / m.total_mass();
            assert!(rel < 1e-12);
            let n = m.tets.len();
            let k = cm.mesh.tets.len() - n;
            let cut_ids: Vec<usize> = (0..n).filter(|&t| cm.material_fraction[t] < 1.0).collect();
            for (j, &t) in cut_ids.iter().enumerate().take(k) {
                let s = cm.material_fraction[t] + cm.material_fraction[n + j];
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn on_plane_vertices_are_perturbed() {
    // Even cell count puts a vertex layer exactly on x = 0.
    let m = prism(
        &PrismSpec {
            size: [0.02, 0.01, 0.01],
            cells: [2, 1, 1],
        },
        1000.0,
    )
    .unwrap();
    let cm = cut(&m, &CutPlane::vertical_x(0.0));
    assert_eq!(cm.perturbed, 4);
    assert!(!cm.springs.is_empty());
    for s in &cm.springs {
        assert!(s.above.u > 0.0 && s.above.u < 1.0);
    }
    let rel = (cm.material_volume() - m.total_volume()).abs() / m.total_volume();
    assert!(rel < 1e-9);
}

/// Monte Carlo oracle: uniform samples in the tet via sorted uniforms.
fn mc_fraction(p: [[f64; 3]; 4], normal: [f64; 3], offset: f64, rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let mut hits = 0usize;
    for _ in 0..n {
        let mut r = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w = [r[0], r[1] - r[0], r[2] - r[1], 1.0 - r[2]];
        let q = [0, 1, 2].map(|c| (0..4).map(|k| w[k] * p[k][c]).sum::<f64>());
        if q[0] * normal[0] + q[1] * normal[1] + q[2] * normal[2] - offset > 0.0 {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

#[test]
fn volume_fraction_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = [0usize; 3];
    while checked.iter().any(|&c| c < 3) {
        let p: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let nrm: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let off = rng.random_range(-0.3..0.3);
        let s = p.map(|q| q[0] * nrm[0] + q[1] * nrm[1] + q[2] * nrm[2] - off);
        let npos = s.iter().filter(|&&x| x > 0.0).count();
        if !(1..=3).contains(&npos) || checked[npos - 1] >= 3 {
            continue;
        }
        let v = slicesim::geometry::tet_volume(p[0], p[1], p[2], p[3]).abs();
        if v < 0.02 {
            continue;
        }
        checked[npos - 1] += 1;
        let exact = positive_volume_fraction(p, s);
        let mc = mc_fraction(p, nrm, off, &mut rng, 400_000);
        // 4σ of a Bernoulli mean with 4e5 samples is at most 3.2e-3.
        assert!((exact - mc).abs() < 3.2e-3, "{npos} positive: exact {exact}, mc {mc}");
    }
}

#[test]
fn boundary_condition_examples() {
    let m = TetMesh::new(
        vec![[0.02, 0.0, 0.0], [0.002, 0.0, 0.0], [0.02, 0.05, 0.0], [0.02, 0.0, 0.01]],
        vec![[0, 1, 2, 3]],
        1000.0,
    )
    .unwrap();
    let cm = CutMesh::uncut(&m, CutPlane::vertical_x(0.0));
    let cm = apply_boundary_conditions(cm, 0.0, 1e-3);
    assert_eq!(cm.fixed, vec![true, false, false, true]);
}

#[test]
fn plane_axes_for_vertical_cut() {
    let cm = CutMesh::uncut(&unit_tet(), CutPlane::vertical_x(0.0));
    let (h, v) = cm.plane_axes();
    assert_eq!(v, [0.0, 1.0, 0.0]);
    assert_eq!(h, [0.0, 0.0, 1.0]);
}

fn spring_set(cm: &CutMesh) -> BTreeSet<(usize, usize, u64)> {
    cm.springs
        .iter()
        .map(|s| (s.edge.0, s.edge.1, s.above.u.to_bits()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cut_is_independent_of_tet_order(seed in any::<u64>(), x0 in -0.015f64..0.015) {
        let m = small_prism();
        let mut tets = m.tets.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..tets.len()).rev() {
            let j = rng.random_range(0..=i);
            tets.swap(i, j);
        }
        let shuffled = TetMesh::new(m.vertices.clone(), tets, m.density).unwrap();
        let plane = CutPlane::vertical_x(x0);
        let a = cut(&m, &plane);
        let b = cut(&shuffled, &plane);
        prop_assert_eq!(spring_set(&a), spring_set(&b));
        prop_assert_eq!(&a.duplicate_of, &b.duplicate_of);
        prop_assert_eq!(a.mesh.tets.len(), b.mesh.tets.len());
        prop_assert!((a.material_volume() - b.material_volume()).abs() < 1e-15);
        // Deterministic on repeat.
        prop_assert_eq!(cut(&m, &plane), a);
    }

    #[test]
    fn oblique_cuts_conserve_volume(nx in -1.0f64..1.0, ny in -1.0f64..1.0, nz in -1.0f64..1.0, off in -0.01f64..0.01) {
        prop_assume!(nx * nx + ny * ny + nz * nz > 0.01);
        let m = small_prism();
        let plane = CutPlane::new([0.0, 0.01 + off, 0.0], [nx, ny, nz]);
        let cm = cut(&m, &plane);
        let rel = (cm.material_volume() - m.total_volume()).abs() / m.total_volume();
        prop_assert!(rel < 1e-9);
        for s in &cm.springs {
            let (a, _) = virtual_node_state(&s.above, &cm.mesh.vertices, &cm.mesh.vertices);
            let (b, _) = virtual_node_state(&s.below, &cm.mesh.vertices, &cm.mesh.vertices);
            prop_assert!((0..3).all(|c| (a[c] - b[c]).abs() < 1e-12));
        }
    }
}
