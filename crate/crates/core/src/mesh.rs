//! Triangular meshes with fixed connectivity.
//!
//! A [`TriMesh`] is a set of vertex positions over a shared, reference-counted [`Topology`]. The
//! physical, computational and reference meshes of one simulation are three `TriMesh` values over
//! the same topology, so connectivity equality is a pointer comparison.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Matrix2;
use thiserror::Error;

use crate::Point;

/// Barycentric containment tolerance.
pub const TOL_BC: f64 = 1e-10;
/// Queries outside the mesh by less than this distance (mm) are treated as roundoff.
pub const CLAMP_DISTANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh has no elements")]
    Empty,
    #[error("element {element} is degenerate or inverted (signed area {area:e})")]
    DegenerateElement { element: usize, area: f64 },
    #[error("field has {found} values, mesh expects {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("meshes do not share connectivity")]
    ConnectivityMismatch,
}

/// Classification of a vertex with respect to the straight boundary segments of the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    /// Vertex on the interior of boundary segment `id`.
    Edge(usize),
    /// Vertex shared by two boundary segments.
    Corner([usize; 2]),
}

impl BoundaryTag {
    pub fn on_segment(self, segment: usize) -> bool {
        match self {
            BoundaryTag::Interior => false,
            BoundaryTag::Edge(s) => s == segment,
            BoundaryTag::Corner([a, b]) => a == segment || b == segment,
        }
    }

    pub fn is_boundary(self) -> bool {
        self != BoundaryTag::Interior
    }
}

/// A straight piece of the domain boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
}

impl Segment {
    pub fn new(start: Point, end: Point) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn tangent(&self) -> Point {
        (self.end - self.start) / self.length()
    }

    /// Unit normal pointing to the right of the direction of travel (outward for a
    /// counterclockwise boundary).
    pub fn outward_normal(&self) -> Point {
        let t = self.tangent();
        Point::new(t.y, -t.x)
    }

    /// Orthogonal projection onto the segment, clamped to its end points.
    pub fn project(&self, p: &Point) -> Point {
        let d = self.end - self.start;
        let s = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        self.start + d * s
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` (mm).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        p.x >= self.x0 - tol && p.x <= self.x1 + tol && p.y >= self.y0 - tol && p.y <= self.y1 + tol
    }

    /// Boundary segments in counterclockwise order: bottom, right, top, left.
    pub fn segments(&self) -> Vec<Segment> {
        let (a, b, c, d) = (
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        );
        vec![Segment::new(a, b), Segment::new(b, c), Segment::new(c, d), Segment::new(d, a)]
    }
}

/// Segment ids of [`Rect::segments`].
pub mod side {
    pub const BOTTOM: usize = 0;
    pub const RIGHT: usize = 1;
    pub const TOP: usize = 2;
    pub const LEFT: usize = 3;
}

/// A boundary edge of the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub element: usize,
    pub segment: usize,
}

/// Connectivity shared by all meshes of one simulation.
#[derive(Debug, PartialEq)]
pub struct Topology {
    elements: Vec<[usize; 3]>,
    tags: Vec<BoundaryTag>,
    segments: Vec<Segment>,
    /// Incident elements per vertex.
    patches: Vec<Vec<usize>>,
    /// Vertices sharing an element with each vertex (sorted, excluding the vertex itself).
    neighbors: Vec<Vec<usize>>,
    /// Neighbouring element across the edge opposite each local vertex.
    adjacent: Vec<[Option<usize>; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
}

impl Topology {
    pub fn new(
        num_vertices: usize,
        elements: Vec<[usize; 3]>,
        tags: Vec<BoundaryTag>,
        segments: Vec<Segment>,
    ) -> Self {
        assert_eq!(tags.len(), num_vertices, "one boundary tag per vertex");
        let mut patches = vec![Vec::new(); num_vertices];
        let mut neighbors = vec![Vec::new(); num_vertices];
        for (k, tri) in elements.iter().enumerate() {
            for i in 0..3 {
                patches[tri[i]].push(k);
                neighbors[tri[i]].push(tri[(i + 1) % 3]);
                neighbors[tri[i]].push(tri[(i + 2) % 3]);
            }
        }
        for n in neighbors.iter_mut() {
            n.sort_unstable();
            n.dedup();
        }

        let mut edge_owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        let mut adjacent = vec![[None; 3]; elements.len()];
        for (k, tri) in elements.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some((other, j)) = edge_owner.remove(&key) {
                    adjacent[k][i] = Some(other);
                    adjacent[other][j] = Some(k);
                } else {
                    edge_owner.insert(key, (k, i));
                }
            }
        }
        let mut boundary_edges: Vec<BoundaryEdge> = edge_owner
            .into_iter()
            .filter_map(|((a, b), (k, i))| {
                let tri = elements[k];
                // keep the element's orientation so the edge runs counterclockwise
                let (a, b) = if tri[(i + 1) % 3] == a { (a, b) } else { (b, a) };
                (0..segments.len())
                    .find(|&s| tags[a].on_segment(s) && tags[b].on_segment(s))
                    .map(|segment| BoundaryEdge { vertices: [a, b], element: k, segment })
            })
            .collect();
        boundary_edges.sort_by_key(|e| (e.segment, e.vertices));

        Self { elements, tags, segments, patches, neighbors, adjacent, boundary_edges }
    }
}

/// Result of [`TriMesh::locate_point`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub element: usize,
    /// Barycentric coordinates, clamped to `[0, 1]` when the point is outside, summing to 1.
    pub bary: [f64; 3],
    /// No element contains the point; `bary` was clamped.
    pub extrapolated: bool,
    /// Distance from the query to the reconstructed (clamped) point; zero when contained.
    pub outside_distance: f64,
}

/// Edge matrix `[x1 - x0, x2 - x0]` of a triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeMatrix(pub Matrix2<f64>);

impl EdgeMatrix {
    pub fn from_vertices(x0: &Point, x1: &Point, x2: &Point) -> Self {
        let (a, b) = (x1 - x0, x2 - x0);
        Self(Matrix2::new(a.x, b.x, a.y, b.y))
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    }

    pub fn columns(&self) -> [Point; 2] {
        [self.0.column(0).into(), self.0.column(1).into()]
    }

    pub fn inverse(&self) -> Option<Matrix2<f64>> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
    }
}

/// Vertex positions over a shared [`Topology`].
#[derive(Clone, Debug)]
pub struct TriMesh {
    topo: Arc<Topology>,
    vertices: Vec<Point>,
}

impl TriMesh {
    pub fn new(topo: Arc<Topology>, vertices: Vec<Point>) -> Result<Self, MeshError> {
        if vertices.len() != topo.tags.len() {
            return Err(MeshError::SizeMismatch { expected: topo.tags.len(), found: vertices.len() });
        }
        Ok(Self { topo, vertices })
    }

    /// Uniform mesh of `m x m` rectangles, each split into four triangles by both diagonals.
    pub fn structured(grid: CrossGrid) -> Self {
        let CrossGrid { m, rect } = grid;
        assert!(m >= 1, "at least one cell per direction");
        let n_grid = (m + 1) * (m + 1);
        let mut vertices = Vec::with_capacity(n_grid + m * m);
        let mut tags = Vec::with_capacity(n_grid + m * m);
        let (hx, hy) = ((rect.x1 - rect.x0) / m as f64, (rect.y1 - rect.y0) / m as f64);
        for j in 0..=m {
            for i in 0..=m {
                vertices.push(Point::new(rect.x0 + i as f64 * hx, rect.y0 + j as f64 * hy));
                let on_side = [j == 0, i == m, j == m, i == 0];
                let sides: Vec<usize> = (0..4).filter(|&s| on_side[s]).collect();
                tags.push(match sides.as_slice() {
                    [] => BoundaryTag::Interior,
                    [s] => BoundaryTag::Edge(*s),
                    [a, b] => BoundaryTag::Corner([*a, *b]),
                    _ => unreachable!(),
                });
            }
        }
        for j in 0..m {
            for i in 0..m {
                vertices.push(Point::new(
                    rect.x0 + (i as f64 + 0.5) * hx,
                    rect.y0 + (j as f64 + 0.5) * hy,
                ));
                tags.push(BoundaryTag::Interior);
            }
        }
        let mut elements = Vec::with_capacity(4 * m * m);
        for j in 0..m {
            for i in 0..m {
                let v00 = grid.grid_vertex(i, j);
                let v10 = grid.grid_vertex(i + 1, j);
                let v11 = grid.grid_vertex(i + 1, j + 1);
                let v01 = grid.grid_vertex(i, j + 1);
                let c = grid.center_vertex(i, j);
                elements.extend_from_slice(&[[v00, v10, c], [v10, v11, c], [v11, v01, c], [v01, v00, c]]);
            }
        }
        let topo = Topology::new(vertices.len(), elements, tags, rect.segments());
        Self { topo: Arc::new(topo), vertices }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    /// Same topology with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Self, MeshError> {
        Self::new(self.topo.clone(), vertices)
    }

    pub fn shares_connectivity(&self, other: &TriMesh) -> bool {
        Arc::ptr_eq(&self.topo, &other.topo) || self.topo == other.topo
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.topo.elements.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, j: usize) -> &Point {
        &self.vertices[j]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.topo.elements
    }

    pub fn element(&self, k: usize) -> [usize; 3] {
        self.topo.elements[k]
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.topo.tags
    }

    pub fn tag(&self, j: usize) -> BoundaryTag {
        self.topo.tags[j]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.topo.segments
    }

    /// Elements incident to vertex `j`.
    pub fn patch(&self, j: usize) -> &[usize] {
        &self.topo.patches[j]
    }

    /// Vertices sharing an element with `j`.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.topo.neighbors[j]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.topo.boundary_edges
    }

    /// Vertices lying on boundary segment `segment` (including its corners).
    pub fn segment_vertices(&self, segment: usize) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&j| self.tag(j).on_segment(segment)).collect()
    }

    pub fn element_vertices(&self, k: usize) -> [Point; 3] {
        let [a, b, c] = self.topo.elements[k];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn edge_matrix(&self, k: usize) -> EdgeMatrix {
        let [x0, x1, x2] = self.element_vertices(k);
        EdgeMatrix::from_vertices(&x0, &x1, &x2)
    }

    pub fn signed_area(&self, k: usize) -> f64 {
        0.5 * self.edge_matrix(k).det()
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.element_vertices(k);
        (a + b + c) / 3.0
    }

    /// Longest edge of element `k`.
    pub fn element_diameter(&self, k: usize) -> f64 {
        let [a, b, c] = self.element_vertices(k);
        (b - a).norm().max((c - b).norm()).max((a - c).norm())
    }

    pub fn min_area(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.signed_area(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|k| self.signed_area(k)).sum()
    }

    /// Errors on the first element with non-positive signed area.
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.num_elements() == 0 {
            return Err(MeshError::Empty);
        }
        for k in 0..self.num_elements() {
            let area = self.signed_area(k);
            if area <= 0.0 || !area.is_finite() {
                return Err(MeshError::DegenerateElement { element: k, area });
            }
        }
        Ok(())
    }

    /// Row-lumped P1 mass: `|omega_j| / 3` summed over the patch.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.num_vertices()];
        for k in 0..self.num_elements() {
            let a = self.signed_area(k) / 3.0;
            for v in self.element(k) {
                mass[v] += a;
            }
        }
        mass
    }

    pub fn check_nodal(&self, values: &[f64], components: usize) -> Result<(), MeshError> {
        let expected = self.num_vertices() * components;
        if values.len() != expected {
            return Err(MeshError::SizeMismatch { expected, found: values.len() });
        }
        Ok(())
    }

    /// Raw (unclamped) barycentric coordinates of `p` with respect to element `k`.
    pub fn barycentric(&self, k: usize, p: &Point) -> [f64; 3] {
        let [x0, x1, x2] = self.element_vertices(k);
        let (a, b, r) = (x1 - x0, x2 - x0, p - x0);
        let det = a.x * b.y - a.y * b.x;
        let l1 = (r.x * b.y - r.y * b.x) / det;
        let l2 = (a.x * r.y - a.y * r.x) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Finds the element containing `p`.
    ///
    /// Walks from `hint` towards the point and falls back to a full scan. Points outside every
    /// element are answered with the element whose most negative barycentric coordinate is
    /// largest, clamped and flagged as extrapolated.
    pub fn locate_point(&self, p: &Point, hint: Option<usize>) -> Result<Location, MeshError> {
        let n = self.num_elements();
        if n == 0 {
            return Err(MeshError::Empty);
        }
        let mut k = hint.filter(|&k| k < n).unwrap_or(0);
        for _ in 0..n.min(4096) {
            let bary = self.barycentric(k, p);
            let (imin, bmin) = argmin3(&bary);
            if bmin >= -TOL_BC {
                return Ok(self.finish_location(k, bary, p));
            }
            match self.topo.adjacent[k][imin] {
                Some(next) => k = next,
                None => break,
            }
        }
        let (mut best, mut best_min) = (0, f64::NEG_INFINITY);
        for k in 0..n {
            let bmin = argmin3(&self.barycentric(k, p)).1;
            if bmin > best_min {
                best = k;
                best_min = bmin;
                if bmin >= 0.0 {
                    break;
                }
            }
        }
        Ok(self.finish_location(best, self.barycentric(best, p), p))
    }

    fn finish_location(&self, element: usize, raw: [f64; 3], p: &Point) -> Location {
        if raw.iter().all(|&b| b >= 0.0) {
            return Location { element, bary: raw, extrapolated: false, outside_distance: 0.0 };
        }
        let mut bary = raw.map(|b| b.max(0.0));
        let sum: f64 = bary.iter().sum();
        bary.iter_mut().for_each(|b| *b /= sum);
        let [x0, x1, x2] = self.element_vertices(element);
        let q = x0 * bary[0] + x1 * bary[1] + x2 * bary[2];
        let outside_distance = (q - p).norm();
        // a point on an interior edge can test slightly outside both neighbours
        let contained = raw.iter().all(|&b| b >= -TOL_BC) && self.inside_domain_hint(element, &raw);
        Location { element, bary, extrapolated: !contained, outside_distance }
    }

    /// True when every negative barycentric coordinate faces an interior edge.
    fn inside_domain_hint(&self, element: usize, raw: &[f64; 3]) -> bool {
        (0..3).all(|i| raw[i] >= 0.0 || self.topo.adjacent[element][i].is_some())
    }

    /// P1 interpolation of a nodal field with `components` values per vertex at `targets`.
    pub fn interpolate_linear(
        &self,
        values: &[f64],
        components: usize,
        targets: &[Point],
    ) -> Result<Vec<f64>, MeshError> {
        self.check_nodal(values, components)?;
        let mut out = Vec::with_capacity(targets.len() * components);
        let mut hint = None;
        let mut worst = 0.0f64;
        for p in targets {
            let loc = self.locate_point(p, hint)?;
            hint = Some(loc.element);
            worst = worst.max(loc.outside_distance);
            let tri = self.element(loc.element);
            for c in 0..components {
                out.push((0..3).map(|i| loc.bary[i] * values[tri[i] * components + c]).sum());
            }
        }
        if worst > CLAMP_DISTANCE {
            log::warn!("interpolation extrapolated up to {worst:.3e} mm outside the source mesh");
        }
        Ok(out)
    }
}

fn argmin3(b: &[f64; 3]) -> (usize, f64) {
    let mut i = 0;
    for j in 1..3 {
        if b[j] < b[i] {
            i = j;
        }
    }
    (i, b[i])
}

/// Index layout of the four-triangles-per-cell structured mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossGrid {
    pub m: usize,
    pub rect: Rect,
}

impl CrossGrid {
    pub fn new(m: usize, rect: Rect) -> Self {
        Self { m, rect }
    }

    pub fn grid_vertex(&self, i: usize, j: usize) -> usize {
        j * (self.m + 1) + i
    }

    pub fn center_vertex(&self, i: usize, j: usize) -> usize {
        (self.m + 1) * (self.m + 1) + j * self.m + i
    }

    pub fn num_vertices(&self) -> usize {
        (self.m + 1) * (self.m + 1) + self.m * self.m
    }

    /// Cell width in x, the longest edge (diameter) of every initial triangle when cells are square.
    pub fn cell_size(&self) -> f64 {
        ((self.rect.x1 - self.rect.x0) / self.m as f64).max((self.rect.y1 - self.rect.y0) / self.m as f64)
    }

    /// Vertex permutation of the reflection about the horizontal midline.
    pub fn mirror_y(&self) -> Vec<usize> {
        let m = self.m;
        let mut map = vec![0; self.num_vertices()];
        for j in 0..=m {
            for i in 0..=m {
                map[self.grid_vertex(i, j)] = self.grid_vertex(i, m - j);
            }
        }
        for j in 0..m {
            for i in 0..m {
                map[self.center_vertex(i, j)] = self.center_vertex(i, m - 1 - j);
            }
        }
        map
    }
}
