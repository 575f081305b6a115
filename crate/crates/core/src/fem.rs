//! P1 finite elements: phase-field system, displacement residual, Dirichlet handling and the
//! edge load vector.
//!
//! Displacement dofs are interleaved per vertex: `u[2j]` is the x component of vertex `j` and
//! `u[2j + 1]` the y component.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use log::{debug, warn};
use thiserror::Error;

use crate::elasticity::{self, MaterialModel, SymTensor2};
use crate::mesh::TriMesh;
use crate::{Execution, Point};

/// Systems above this size are solved with preconditioned CG instead of sparse LU.
pub const DIRECT_SOLVER_LIMIT: usize = 200_000;
/// Relative residual required from [`solve_linear`].
pub const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("element {element} is degenerate (signed area {area:e})")]
    DegenerateElement { element: usize, area: f64 },
    #[error("expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("dof {dof} receives conflicting Dirichlet values {first} and {second}")]
    ConflictingDirichlet { dof: usize, first: f64, second: f64 },
    #[error("boundary segment {0} selects no edges")]
    EmptySelection(usize),
    #[error("linear solve failed: relative residual {residual:e}")]
    SolveFailed { residual: f64 },
}

/// Compressed sparse row matrix with a fixed pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix from per-row column lists (sorted and deduplicated here).
    pub fn from_rows(mut rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < n));
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let values = vec![0.0; cols.len()];
        Self { n, row_ptr, cols, values }
    }

    /// Vertex-adjacency pattern with `block` dofs per vertex.
    pub fn mesh_pattern(mesh: &TriMesh, block: usize) -> Self {
        let mut rows = Vec::with_capacity(mesh.num_vertices() * block);
        for j in 0..mesh.num_vertices() {
            let mut verts = mesh.neighbors(j).to_vec();
            verts.push(j);
            verts.sort_unstable();
            for _ in 0..block {
                rows.push(verts.iter().flat_map(|&v| (0..block).map(move |c| block * v + c)).collect());
            }
        }
        Self::from_rows(rows)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::from_rows((0..n).map(|i| vec![i]).collect());
        a.values.fill(1.0);
        a
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.values[r])
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.cols[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|p| start + p)
    }

    /// Entry `(i, j)`, zero outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds to an entry of the pattern. Panics outside it.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.position(i, j).unwrap_or_else(|| panic!("({i}, {j}) outside the sparsity pattern"));
        self.values[p] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let p = self.position(i, j).unwrap_or_else(|| panic!("({i}, {j}) outside the sparsity pattern"));
        self.values[p] = v;
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, a)| a * x[j]).sum()
            })
            .collect()
    }

    /// Largest `|a_ij - a_ji|` over the pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Dense row-major copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, row) in dense.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        dense
    }

    fn to_faer(&self) -> Option<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = (0..self.n)
            .flat_map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(move |(&j, &a)| Triplet::new(i, j, a))
            })
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets).ok()
    }
}

/// Dirichlet data resolved to dofs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraints {
    /// Constrained dofs in increasing order with their prescribed values.
    pub dofs: Vec<(usize, f64)>,
    mask: Vec<bool>,
}

impl Constraints {
    pub fn new(num_dofs: usize, prescribed: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, FemError> {
        let mut map = BTreeMap::new();
        for (dof, value) in prescribed {
            if let Some(&first) = map.get(&dof) {
                if first != value {
                    return Err(FemError::ConflictingDirichlet { dof, first, second: value });
                }
            }
            map.insert(dof, value);
        }
        let mut mask = vec![false; num_dofs];
        for &dof in map.keys() {
            mask[dof] = true;
        }
        Ok(Self { dofs: map.into_iter().collect(), mask })
    }

    pub fn none(num_dofs: usize) -> Self {
        Self { dofs: Vec::new(), mask: vec![false; num_dofs] }
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.mask[dof]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Overwrites the constrained entries of `x` with their prescribed values.
    pub fn impose(&self, x: &mut [f64]) {
        for &(dof, v) in &self.dofs {
            x[dof] = v;
        }
    }

    /// Zeroes the constrained entries of a residual.
    pub fn zero(&self, r: &mut [f64]) {
        for &(dof, _) in &self.dofs {
            r[dof] = 0.0;
        }
    }
}

/// Displacement component addressed by a Dirichlet rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    X,
    Y,
}

/// `u_component = scale * U` on every vertex of a boundary segment.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirichletRule {
    pub segment: usize,
    pub component: Component,
    pub scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundaryConditions {
    pub dirichlet: Vec<DirichletRule>,
    /// Constant surface traction (kN/mm) per boundary segment; segments not listed are free.
    #[serde(default)]
    pub traction: Vec<(usize, [f64; 2])>,
    /// Body force per unit volume.
    #[serde(default)]
    pub body_force: [f64; 2],
}

impl BoundaryConditions {
    /// Bottom clamped, top edge displaced by `U` in `component`, other component held at zero.
    pub fn clamped_bottom_pulled_top(pull: Component) -> Self {
        use crate::mesh::side::{BOTTOM, TOP};
        let other = match pull {
            Component::X => Component::Y,
            Component::Y => Component::X,
        };
        Self {
            dirichlet: vec![
                DirichletRule { segment: BOTTOM, component: Component::X, scale: 0.0 },
                DirichletRule { segment: BOTTOM, component: Component::Y, scale: 0.0 },
                DirichletRule { segment: TOP, component: pull, scale: 1.0 },
                DirichletRule { segment: TOP, component: other, scale: 0.0 },
            ],
            traction: Vec::new(),
            body_force: [0.0; 2],
        }
    }

    /// Resolves the rules at load `U` to displacement dofs.
    pub fn constraints(&self, mesh: &TriMesh, load: f64) -> Result<Constraints, FemError> {
        let prescribed = self.dirichlet.iter().flat_map(|rule| {
            let c = match rule.component {
                Component::X => 0,
                Component::Y => 1,
            };
            mesh.segment_vertices(rule.segment).into_iter().map(move |j| (2 * j + c, rule.scale * load))
        });
        Constraints::new(2 * mesh.num_vertices(), prescribed)
    }

    fn has_loads(&self) -> bool {
        !self.traction.is_empty() || self.body_force != [0.0; 2]
    }
}

/// Area and the constant gradients of the three barycentric basis functions of element `k`.
pub fn p1_gradients(mesh: &TriMesh, k: usize) -> Result<(f64, [Point; 3]), FemError> {
    let e = mesh.edge_matrix(k);
    let area = 0.5 * e.det();
    let inv = match e.inverse() {
        Some(inv) if area > 0.0 => inv,
        _ => return Err(FemError::DegenerateElement { element: k, area }),
    };
    let g1 = Point::new(inv[(0, 0)], inv[(0, 1)]);
    let g2 = Point::new(inv[(1, 0)], inv[(1, 1)]);
    Ok((area, [-g1 - g2, g1, g2]))
}

fn check_len(values: &[f64], expected: usize) -> Result<(), FemError> {
    if values.len() != expected {
        return Err(FemError::SizeMismatch { expected, found: values.len() });
    }
    Ok(())
}

/// Linear system for the phase field `d`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Assembles `int (2 H d + g_c (d - 1) / (2 l)) phi + 2 g_c l grad d . grad phi = 0`.
///
/// The stiffness uses the (exact) centroid rule. The reaction and source terms use the vertex
/// rule, so `H` enters through its nodal values and the reaction matrix is diagonal.
pub fn assemble_phase_field(
    mesh: &TriMesh,
    history: &[f64],
    mat: &MaterialModel,
    exec: Execution,
) -> Result<LinearSystem, FemError> {
    check_len(history, mesh.num_vertices())?;
    let diffusion = 2.0 * mat.g_c * mat.l;
    let source = mat.g_c / (2.0 * mat.l);
    let locals = exec.map(mesh.num_elements(), |k| {
        let (area, g) = p1_gradients(mesh, k)?;
        let tri = mesh.element(k);
        let mut ke = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                ke[a][b] = diffusion * area * g[a].dot(&g[b]);
            }
            ke[a][a] += area / 3.0 * (2.0 * history[tri[a]] + source);
        }
        Ok::<_, FemError>(ke)
    });

    let mut matrix = CsrMatrix::mesh_pattern(mesh, 1);
    let mut rhs = vec![0.0; mesh.num_vertices()];
    for (k, ke) in locals.into_iter().enumerate() {
        let ke = ke?;
        let tri = mesh.element(k);
        let area = mesh.signed_area(k);
        for a in 0..3 {
            for b in 0..3 {
                matrix.add(tri[a], tri[b], ke[a][b]);
            }
            rhs[tri[a]] += area / 3.0 * source;
        }
    }
    Ok(LinearSystem { matrix, rhs })
}

impl LinearSystem {
    /// Symmetric elimination: constrained rows and columns become identity, the known values move
    /// to the right-hand side.
    pub fn apply_dirichlet(&mut self, constraints: &Constraints) {
        let n = self.matrix.dim();
        let mut fixed = vec![None; n];
        for &(dof, v) in &constraints.dofs {
            fixed[dof] = Some(v);
        }
        for i in 0..n {
            let range = self.matrix.row_ptr[i]..self.matrix.row_ptr[i + 1];
            if let Some(v) = fixed[i] {
                for p in range {
                    self.matrix.values[p] = if self.matrix.cols[p] == i { 1.0 } else { 0.0 };
                }
                self.rhs[i] = v;
            } else {
                for p in range {
                    if let Some(v) = fixed[self.matrix.cols[p]] {
                        self.rhs[i] -= self.matrix.values[p] * v;
                        self.matrix.values[p] = 0.0;
                    }
                }
            }
        }
    }

    pub fn solve(&self) -> Result<Vec<f64>, FemError> {
        solve_linear(&self.matrix, &self.rhs)
    }
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let bn = norm(b);
    let rel = if bn > 0.0 { norm(&r) / bn } else { norm(&r) };
    (r, rel)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `a x = b` to relative residual [`SOLVE_TOL`].
///
/// Sparse LU with a few steps of iterative refinement up to [`DIRECT_SOLVER_LIMIT`] unknowns;
/// Jacobi-preconditioned CG above that, or when the factorization fails.
pub fn solve_linear(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, FemError> {
    check_len(b, a.dim())?;
    if a.dim() == 0 {
        return Ok(Vec::new());
    }
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; a.dim()]);
    }
    if a.dim() <= DIRECT_SOLVER_LIMIT {
        match solve_lu(a, b) {
            Ok(x) => return Ok(x),
            Err(e) => warn!("sparse LU failed ({e}); falling back to CG"),
        }
    }
    solve_cg(a, b, 10 * a.dim() + 100)
}

fn solve_lu(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, FemError> {
    // keep the factorization single-threaded so results do not depend on the thread count
    faer::set_global_parallelism(faer::Par::Seq);
    let lu = a
        .to_faer()
        .and_then(|m| m.sp_lu().ok())
        .ok_or(FemError::SolveFailed { residual: f64::INFINITY })?;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let rhs = faer::Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = lu.solve(&rhs);
        (0..rhs.nrows()).map(|i| x[(i, 0)]).collect()
    };
    let mut x = solve(b);
    let (mut r, mut rel) = relative_residual(a, &x, b);
    for _ in 0..3 {
        if rel <= SOLVE_TOL * 1e-2 || !rel.is_finite() {
            break;
        }
        let dx = solve(&r);
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + d).collect();
        let (r2, rel2) = relative_residual(a, &candidate, b);
        if !(rel2 < rel) {
            break;
        }
        (x, r, rel) = (candidate, r2, rel2);
    }
    if rel <= SOLVE_TOL {
        Ok(x)
    } else {
        Err(FemError::SolveFailed { residual: rel })
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn solve_cg(a: &CsrMatrix, b: &[f64], max_iter: usize) -> Result<Vec<f64>, FemError> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let bn = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        if norm(&r) / bn <= SOLVE_TOL * 0.1 {
            debug!("CG converged in {it} iterations");
            break;
        }
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let (_, rel) = relative_residual(a, &x, b);
    if rel <= SOLVE_TOL {
        Ok(x)
    } else {
        Err(FemError::SolveFailed { residual: rel })
    }
}

/// Constant strain of element `k` from nodal displacements.
pub fn element_strain(mesh: &TriMesh, grads: &[Point; 3], k: usize, u: &[f64]) -> SymTensor2 {
    let tri = mesh.element(k);
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for (a, g) in tri.iter().zip(grads) {
        let (ux, uy) = (u[2 * a], u[2 * a + 1]);
        xx += ux * g.x;
        yy += uy * g.y;
        xy += 0.5 * (ux * g.y + uy * g.x);
    }
    SymTensor2::new(xx, yy, xy)
}

fn element_damage(mesh: &TriMesh, k: usize, d: &[f64]) -> f64 {
    let [a, b, c] = mesh.element(k);
    (d[a] + d[b] + d[c]) / 3.0
}

/// Weak-form residual `int sigma(u) : eps(phi) - int t.phi dS - int f.phi`, with the rows of
/// constrained dofs set to zero.
///
/// `sigma` is evaluated once per element at the element mean of `d`.
pub fn displacement_residual(
    mesh: &TriMesh,
    u: &[f64],
    d: &[f64],
    mat: &MaterialModel,
    bc: &BoundaryConditions,
    constraints: &Constraints,
    exec: Execution,
) -> Result<Vec<f64>, FemError> {
    check_len(u, 2 * mesh.num_vertices())?;
    check_len(d, mesh.num_vertices())?;
    let locals = exec.map(mesh.num_elements(), |k| {
        let (area, g) = p1_gradients(mesh, k)?;
        let eps = element_strain(mesh, &g, k, u);
        let sigma = elasticity::stress(&eps, element_damage(mesh, k, d), mat);
        Ok::<_, FemError>(g.map(|g| {
            [area * (sigma.xx * g.x + sigma.xy * g.y), area * (sigma.xy * g.x + sigma.yy * g.y)]
        }))
    });
    let mut r = vec![0.0; u.len()];
    for (k, fe) in locals.into_iter().enumerate() {
        for (&a, f) in mesh.element(k).iter().zip(fe?) {
            r[2 * a] += f[0];
            r[2 * a + 1] += f[1];
        }
    }
    if bc.has_loads() {
        subtract_loads(mesh, bc, &mut r);
    }
    constraints.zero(&mut r);
    Ok(r)
}

fn subtract_loads(mesh: &TriMesh, bc: &BoundaryConditions, r: &mut [f64]) {
    for &(segment, t) in &bc.traction {
        for edge in mesh.boundary_edges().iter().filter(|e| e.segment == segment) {
            let [a, b] = edge.vertices;
            let half = 0.5 * (mesh.vertex(b) - mesh.vertex(a)).norm();
            for v in [a, b] {
                r[2 * v] -= half * t[0];
                r[2 * v + 1] -= half * t[1];
            }
        }
    }
    let f = bc.body_force;
    if f != [0.0; 2] {
        for k in 0..mesh.num_elements() {
            let third = mesh.signed_area(k) / 3.0;
            for v in mesh.element(k) {
                r[2 * v] -= third * f[0];
                r[2 * v + 1] -= third * f[1];
            }
        }
    }
}

/// Discrete stored energy `sum |K| W(eps_K, d_K)`; its gradient in `u` is the unloaded residual.
pub fn elastic_energy(mesh: &TriMesh, u: &[f64], d: &[f64], mat: &MaterialModel) -> Result<f64, FemError> {
    check_len(u, 2 * mesh.num_vertices())?;
    check_len(d, mesh.num_vertices())?;
    let mut total = 0.0;
    for k in 0..mesh.num_elements() {
        let (area, g) = p1_gradients(mesh, k)?;
        let eps = element_strain(mesh, &g, k, u);
        total += area * elasticity::elastic_energy_density(&eps, element_damage(mesh, k, d), mat);
    }
    Ok(total)
}

/// Element tensile energy density recovered at vertices by area-weighted patch averaging.
pub fn nodal_psi_plus(mesh: &TriMesh, u: &[f64], mat: &MaterialModel, exec: Execution) -> Result<Vec<f64>, FemError> {
    check_len(u, 2 * mesh.num_vertices())?;
    let per_element = exec.map(mesh.num_elements(), |k| {
        let (area, g) = p1_gradients(mesh, k)?;
        Ok::<_, FemError>((area, elasticity::psi_plus(&element_strain(mesh, &g, k, u), mat)))
    });
    let per_element: Vec<(f64, f64)> = per_element.into_iter().collect::<Result<_, _>>()?;
    Ok((0..mesh.num_vertices())
        .map(|j| {
            let (mut num, mut den) = (0.0, 0.0);
            for &k in mesh.patch(j) {
                let (area, psi) = per_element[k];
                num += area * psi;
                den += area;
            }
            num / den
        })
        .collect())
}

/// Resultant `int sigma n dl` over boundary segment `segment`, with `sigma` taken on the single
/// layer of elements touching it.
pub fn load_vector(
    mesh: &TriMesh,
    u: &[f64],
    d: &[f64],
    mat: &MaterialModel,
    segment: usize,
) -> Result<Point, FemError> {
    check_len(u, 2 * mesh.num_vertices())?;
    check_len(d, mesh.num_vertices())?;
    let mut edges = mesh.boundary_edges().iter().filter(|e| e.segment == segment).peekable();
    if edges.peek().is_none() {
        return Err(FemError::EmptySelection(segment));
    }
    let mut force = Point::zeros();
    for edge in edges {
        let k = edge.element;
        let (_, g) = p1_gradients(mesh, k)?;
        let sigma = elasticity::stress(&element_strain(mesh, &g, k, u), element_damage(mesh, k, d), mat);
        let [a, b] = edge.vertices;
        let t = mesh.vertex(b) - mesh.vertex(a);
        // counterclockwise boundary: outward normal times length is (t.y, -t.x)
        let n = Point::new(t.y, -t.x);
        force += Point::new(sigma.xx * n.x + sigma.xy * n.y, sigma.xy * n.x + sigma.yy * n.y);
    }
    Ok(force)
}

/// Sets up the elastic tangent pattern used by the displacement Jacobian.
pub fn displacement_pattern(mesh: &TriMesh) -> CsrMatrix {
    CsrMatrix::mesh_pattern(mesh, 2)
}
