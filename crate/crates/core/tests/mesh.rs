use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mmfrac::mesh::{side, BoundaryTag, CrossGrid, MeshError, Rect, TriMesh};
use mmfrac::Point;

fn plate(m: usize) -> (CrossGrid, TriMesh) {
    let grid = CrossGrid::new(m, Rect::new(-1.0, 1.0, -0.5, 0.5));
    (grid, TriMesh::structured(grid))
}

/// Interior vertices displaced by up to a fifth of the cell size: still a valid mesh.
fn jiggled(mesh: &TriMesh, h: f64, seed: u64) -> TriMesh {
    let mut rng = StdRng::seed_from_u64(seed);
    let v = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if mesh.tag(j).is_boundary() {
                *p
            } else {
                p + Point::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)) * h
            }
        })
        .collect();
    mesh.with_vertices(v).unwrap()
}

#[test]
fn structured_mesh_tiles_the_rectangle() {
    for m in [1, 2, 7] {
        let (grid, mesh) = plate(m);
        assert_eq!(mesh.num_elements(), 4 * m * m);
        assert_eq!(mesh.num_vertices(), grid.num_vertices());
        mesh.validate().unwrap();
        assert!((mesh.total_area() - 2.0).abs() <= 1e-14);
        let mass: f64 = mesh.lumped_mass().iter().sum();
        assert!((mass - 2.0).abs() <= 1e-14);
        // every interior edge is shared by exactly two elements
        assert_eq!(mesh.boundary_edges().len(), 4 * m);
        // all initial triangles are congruent
        let a0 = mesh.signed_area(0);
        assert!((0..mesh.num_elements()).all(|k| (mesh.signed_area(k) - a0).abs() <= 1e-15));
    }
}

#[test]
fn boundary_tags_follow_the_sides() {
    let (grid, mesh) = plate(4);
    let r = grid.rect;
    for j in 0..mesh.num_vertices() {
        let p = mesh.vertex(j);
        let on = [p.y == r.y0, p.x == r.x1, p.y == r.y1, p.x == r.x0];
        for s in [side::BOTTOM, side::RIGHT, side::TOP, side::LEFT] {
            assert_eq!(mesh.tag(j).on_segment(s), on[s], "vertex {j} side {s}");
        }
        let count = on.iter().filter(|&&b| b).count();
        assert_eq!(matches!(mesh.tag(j), BoundaryTag::Corner(_)), count == 2);
    }
    assert_eq!(mesh.segment_vertices(side::TOP).len(), 5);
}

#[test]
fn patches_and_neighbours_agree_with_elements() {
    let (_, mesh) = plate(3);
    for j in 0..mesh.num_vertices() {
        let brute: Vec<usize> = (0..mesh.num_elements()).filter(|&k| mesh.element(k).contains(&j)).collect();
        let mut patch = mesh.patch(j).to_vec();
        patch.sort_unstable();
        assert_eq!(patch, brute);
        let mut nb: Vec<usize> = brute.iter().flat_map(|&k| mesh.element(k)).filter(|&i| i != j).collect();
        nb.sort_unstable();
        nb.dedup();
        assert_eq!(mesh.neighbors(j), nb.as_slice());
    }
}

#[test]
fn located_points_lie_in_their_element() {
    let (grid, mesh) = plate(6);
    let mesh = jiggled(&mesh, grid.cell_size(), 3);
    let mut rng = StdRng::seed_from_u64(8);
    let mut hint = None;
    for _ in 0..500 {
        let p = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let loc = mesh.locate_point(&p, hint).unwrap();
        hint = Some(loc.element);
        assert!(!loc.extrapolated);
        let [a, b, c] = mesh.element_vertices(loc.element);
        let q = a * loc.bary[0] + b * loc.bary[1] + c * loc.bary[2];
        assert!((q - p).norm() <= 1e-14);
        // brute force: some element contains p
        let containing = (0..mesh.num_elements()).filter(|&k| mesh.barycentric(k, &p).iter().all(|&x| x >= -1e-12)).count();
        assert!(containing >= 1);
    }
}

#[test]
fn far_points_are_clamped_onto_the_boundary() {
    let (_, mesh) = plate(4);
    let loc = mesh.locate_point(&Point::new(1.5, 0.0), None).unwrap();
    assert!(loc.extrapolated);
    assert!((loc.outside_distance - 0.5).abs() <= 1e-12);
}

#[test]
fn interpolation_between_meshes_is_exact_for_affine_fields() {
    let (grid, mesh) = plate(5);
    let moved = jiggled(&mesh, grid.cell_size(), 12);
    assert!(moved.shares_connectivity(&mesh));
    let f = |p: &Point| [3.0 * p.x - 2.0 * p.y + 0.5, -p.x + 0.25];
    let values: Vec<f64> = mesh.vertices().iter().flat_map(f).collect();
    let out = mesh.interpolate_linear(&values, 2, moved.vertices()).unwrap();
    for (j, p) in moved.vertices().iter().enumerate() {
        let [a, b] = f(p);
        assert!((out[2 * j] - a).abs() <= 1e-13 && (out[2 * j + 1] - b).abs() <= 1e-13);
    }
    assert!(matches!(mesh.interpolate_linear(&values, 1, moved.vertices()), Err(MeshError::SizeMismatch { .. })));
}

#[test]
fn inverted_elements_are_rejected() {
    let (grid, mesh) = plate(2);
    let mut v = mesh.vertices().to_vec();
    // push the first cell centre through its cell's right edge
    let c = grid.center_vertex(0, 0);
    v[c].x += 0.8;
    let bad = mesh.with_vertices(v).unwrap();
    assert!(matches!(bad.validate(), Err(MeshError::DegenerateElement { .. })));
}
