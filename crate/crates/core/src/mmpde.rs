//! Metric-based mesh movement.
//!
//! The computational coordinates `xi` follow the gradient flow of Huang's meshing functional
//!
//! ```text
//! I_h = sum_K |K| G(J_K, det J_K, M_K),   J_K = Ê_K E_K^{-1},
//! G   = theta sqrt(det M) tr(J M^{-1} J^T)^p + (1 - 2 theta) 2^p sqrt(det M) (det J / sqrt(det M))^p
//! ```
//!
//! with the physical mesh held fixed. The new physical mesh is the image of the reference
//! computational mesh under the piecewise linear map `xi -> x`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix2};
use thiserror::Error;

use crate::elasticity::SymTensor2;
use crate::mesh::{BoundaryTag, MeshError, TriMesh};
use crate::{Execution, Point};

/// Halvings of the pseudo-time step tolerated before a move is abandoned.
pub const MAX_HALVINGS: usize = 20;
const LS_COND_LIMIT: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum MmpdeError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("least-squares Hessian fit at vertex {vertex} is rank deficient")]
    RankDeficient { vertex: usize },
    #[error("element {element} is degenerate in the {which} mesh")]
    Degenerate { element: usize, which: &'static str },
    #[error("mesh movement failed: element inversion persisted after {MAX_HALVINGS} step halvings")]
    Inversion,
    #[error("invalid mesh parameters: {0}")]
    Params(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmpdeParams {
    pub theta: f64,
    pub p: f64,
    /// Pseudo-time scale; each move integrates over `[0, tau]`.
    pub tau: f64,
    /// Patch-averaging sweeps applied to the vertex metric.
    pub smoothing: usize,
}

impl Default for MmpdeParams {
    fn default() -> Self {
        Self { theta: 1.0 / 3.0, p: 1.5, tau: 1e-2, smoothing: 2 }
    }
}

impl MmpdeParams {
    pub fn validate(&self) -> Result<(), MmpdeError> {
        if !(self.theta > 0.0 && self.theta <= 0.5) {
            return Err(MmpdeError::Params(format!("theta = {} must lie in (0, 1/2]", self.theta)));
        }
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(MmpdeError::Params(format!("p = {} must exceed 1", self.p)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(MmpdeError::Params(format!("tau = {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Nodal Hessians of a P1 field by local least-squares quadratic fits.
///
/// Each vertex uses itself and its first ring; the second ring is added when that gives fewer
/// than six points or a badly conditioned fit.
pub fn recover_hessian(mesh: &TriMesh, values: &[f64], exec: Execution) -> Result<Vec<SymTensor2>, MmpdeError> {
    mesh.check_nodal(values, 1)?;
    exec.map(mesh.num_vertices(), |j| {
        let ring1 = stencil(mesh, j, 1);
        if ring1.len() >= 6 {
            if let Some(h) = fit_quadratic(mesh, values, j, &ring1) {
                return Ok(h);
            }
        }
        fit_quadratic(mesh, values, j, &stencil(mesh, j, 2)).ok_or(MmpdeError::RankDeficient { vertex: j })
    })
    .into_iter()
    .collect()
}

fn stencil(mesh: &TriMesh, j: usize, rings: usize) -> Vec<usize> {
    let mut pts = vec![j];
    let mut frontier = vec![j];
    for _ in 0..rings {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in mesh.neighbors(v) {
                if !pts.contains(&w) {
                    pts.push(w);
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    pts
}

fn fit_quadratic(mesh: &TriMesh, values: &[f64], j: usize, pts: &[usize]) -> Option<SymTensor2> {
    let origin = *mesh.vertex(j);
    let scale = pts.iter().map(|&v| (mesh.vertex(v) - origin).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), 6, |r, c| {
        let q = (mesh.vertex(pts[r]) - origin) / scale;
        match c {
            0 => 1.0,
            1 => q.x,
            2 => q.y,
            3 => q.x * q.x,
            4 => q.x * q.y,
            _ => q.y * q.y,
        }
    });
    let b = DVector::from_iterator(pts.len(), pts.iter().map(|&v| values[v]));
    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > LS_COND_LIMIT {
        return None;
    }
    let qr = a.qr();
    let c = qr.r().solve_upper_triangular(&(qr.q().transpose() * b))?;
    let s2 = scale * scale;
    Some(SymTensor2::new(2.0 * c[3] / s2, 2.0 * c[5] / s2, c[4] / s2))
}

/// Vertex and element metric tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    pub vertex: Vec<SymTensor2>,
    pub element: Vec<SymTensor2>,
}

/// `det(I + |H|)^{-1/6} (I + |H|)`.
pub fn metric_tensor(h: &SymTensor2) -> SymTensor2 {
    let m = SymTensor2::IDENTITY + h.map_eigen(f64::abs);
    m.scale(m.det().powf(-1.0 / 6.0))
}

/// Metric from nodal Hessians, smoothed by `sweeps` rounds of patch averaging, with element
/// values the arithmetic mean of their vertices.
pub fn metric_from_hessian(mesh: &TriMesh, hessians: &[SymTensor2], sweeps: usize) -> MetricField {
    let mut vertex: Vec<SymTensor2> = hessians.iter().map(metric_tensor).collect();
    for _ in 0..sweeps {
        vertex = (0..mesh.num_vertices())
            .map(|j| {
                let nb = mesh.neighbors(j);
                let sum = nb.iter().fold(vertex[j], |acc, &v| acc + vertex[v]);
                sum.scale(1.0 / (nb.len() + 1) as f64)
            })
            .collect();
    }
    let element = (0..mesh.num_elements())
        .map(|k| {
            let [a, b, c] = mesh.element(k);
            (vertex[a] + vertex[b] + vertex[c]).scale(1.0 / 3.0)
        })
        .collect();
    MetricField { vertex, element }
}

/// Metric of a nodal scalar field on `mesh`.
pub fn metric_for_field(
    mesh: &TriMesh,
    values: &[f64],
    params: &MmpdeParams,
    exec: Execution,
) -> Result<MetricField, MmpdeError> {
    Ok(metric_from_hessian(mesh, &recover_hessian(mesh, values, exec)?, params.smoothing))
}

struct ElementGeometry {
    area: f64,
    e_inv: Matrix2<f64>,
}

fn physical_geometry(mesh: &TriMesh, exec: Execution) -> Result<Vec<ElementGeometry>, MmpdeError> {
    exec.map(mesh.num_elements(), |k| {
        let e = mesh.edge_matrix(k);
        let area = 0.5 * e.det();
        match e.inverse() {
            Some(e_inv) if area > 0.0 => Ok(ElementGeometry { area, e_inv }),
            _ => Err(MmpdeError::Degenerate { element: k, which: "physical" }),
        }
    })
    .into_iter()
    .collect()
}

fn edge_matrix_of(xi: &[Point], tri: [usize; 3]) -> Matrix2<f64> {
    let (a, b) = (xi[tri[1]] - xi[tri[0]], xi[tri[2]] - xi[tri[0]]);
    Matrix2::new(a.x, b.x, a.y, b.y)
}

/// `G` and the local velocities `-dG/dxi_i` (i = 0, 1, 2) of one element; `None` when the
/// computational element is inverted or flat.
fn element_terms(
    geo: &ElementGeometry,
    e_hat: &Matrix2<f64>,
    metric: &SymTensor2,
    params: &MmpdeParams,
    with_velocity: bool,
) -> Option<(f64, [Point; 3])> {
    let (theta, p) = (params.theta, params.p);
    let j = e_hat * geo.e_inv;
    let det_j = j.determinant();
    if !(det_j > 0.0) {
        return None;
    }
    let det_m = metric.det();
    let sqrt_det_m = det_m.sqrt();
    let m_inv = metric.inverse()?.to_matrix();
    let tr = (j * m_inv * j.transpose()).trace();
    let two_p = 2f64.powf(p);
    let g = theta * sqrt_det_m * tr.powf(p) + (1.0 - 2.0 * theta) * two_p * sqrt_det_m * (det_j / sqrt_det_m).powf(p);
    if !with_velocity {
        return Some((g, [Point::zeros(); 3]));
    }
    let dg_dj = m_inv * j.transpose() * (2.0 * p * theta * sqrt_det_m * tr.powf(p - 1.0));
    let dg_ddet = p * (1.0 - 2.0 * theta) * two_p * det_m.powf(0.5 * (1.0 - p)) * det_j.powf(p - 1.0);
    let e_hat_inv = e_hat.try_inverse()?;
    let rows = -(geo.e_inv * dg_dj) - e_hat_inv * (dg_ddet * det_j);
    let v1 = Point::new(rows[(0, 0)], rows[(0, 1)]);
    let v2 = Point::new(rows[(1, 0)], rows[(1, 1)]);
    Some((g, [-v1 - v2, v1, v2]))
}

/// Meshing functional of computational coordinates `xi` over the fixed physical mesh.
pub fn mesh_energy(
    physical: &TriMesh,
    xi: &[Point],
    metric: &MetricField,
    params: &MmpdeParams,
) -> Result<f64, MmpdeError> {
    let geo = physical_geometry(physical, Execution::Serial)?;
    energy_with(physical, &geo, xi, metric, params)
}

fn energy_with(
    physical: &TriMesh,
    geo: &[ElementGeometry],
    xi: &[Point],
    metric: &MetricField,
    params: &MmpdeParams,
) -> Result<f64, MmpdeError> {
    let mut total = 0.0;
    for (k, g) in geo.iter().enumerate() {
        let e_hat = edge_matrix_of(xi, physical.element(k));
        let (gk, _) = element_terms(g, &e_hat, &metric.element[k], params, false)
            .ok_or(MmpdeError::Degenerate { element: k, which: "computational" })?;
        total += g.area * gk;
    }
    Ok(total)
}

/// Nodal velocities `d xi_j / dt = (P_j / tau) sum_K |K| v_j^K`, with boundary vertices restricted
/// to slide along their segment and corners fixed.
pub fn nodal_velocities(
    physical: &TriMesh,
    xi: &[Point],
    metric: &MetricField,
    params: &MmpdeParams,
    exec: Execution,
) -> Result<Vec<Point>, MmpdeError> {
    let geo = physical_geometry(physical, exec)?;
    velocities_with(physical, &geo, xi, metric, params, exec)
}

fn velocities_with(
    physical: &TriMesh,
    geo: &[ElementGeometry],
    xi: &[Point],
    metric: &MetricField,
    params: &MmpdeParams,
    exec: Execution,
) -> Result<Vec<Point>, MmpdeError> {
    let locals = exec.map(physical.num_elements(), |k| {
        let e_hat = edge_matrix_of(xi, physical.element(k));
        element_terms(&geo[k], &e_hat, &metric.element[k], params, true)
            .map(|(_, v)| v.map(|v| v * geo[k].area))
            .ok_or(MmpdeError::Degenerate { element: k, which: "computational" })
    });
    let mut vel = vec![Point::zeros(); physical.num_vertices()];
    for (k, v) in locals.into_iter().enumerate() {
        for (&a, va) in physical.element(k).iter().zip(v?) {
            vel[a] += va;
        }
    }
    for (j, v) in vel.iter_mut().enumerate() {
        let pj = metric.vertex[j].det().powf(0.5 * (params.p - 1.0));
        *v *= pj / params.tau;
        *v = constrain(physical, j, *v);
    }
    Ok(vel)
}

fn constrain(mesh: &TriMesh, j: usize, v: Point) -> Point {
    match mesh.tag(j) {
        BoundaryTag::Interior => v,
        BoundaryTag::Edge(s) => {
            let t = mesh.segments()[s].tangent();
            t * t.dot(&v)
        }
        BoundaryTag::Corner(_) => Point::zeros(),
    }
}

fn snap(mesh: &TriMesh, j: usize, p: Point, reference: &Point) -> Point {
    match mesh.tag(j) {
        BoundaryTag::Interior => p,
        BoundaryTag::Edge(s) => mesh.segments()[s].project(&p),
        BoundaryTag::Corner(_) => *reference,
    }
}

/// Coefficient of variation of `|K| sqrt(det M_K)`; zero for a perfectly equidistributed mesh.
pub fn equidistribution_cv(mesh: &TriMesh, metric: &MetricField) -> f64 {
    let w: Vec<f64> = (0..mesh.num_elements()).map(|k| mesh.signed_area(k) * metric.element[k].det().sqrt()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Diagnostics of one [`move_mesh`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MoveReport {
    /// `I_h` at the start and after every accepted step.
    pub energy_history: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Smallest computational element area over all accepted states.
    pub min_computational_area: f64,
    pub min_area: f64,
    pub max_area: f64,
    /// Equidistribution CV of the physical mesh the metric was computed on.
    pub cv_before: f64,
}

/// One mesh-movement step: integrates the MMPDE for `xi` from the reference mesh over
/// `[0, tau]` with `physical` fixed, then returns the image of the reference vertices.
pub fn move_mesh(
    physical: &TriMesh,
    metric: &MetricField,
    reference: &TriMesh,
    params: &MmpdeParams,
    exec: Execution,
) -> Result<(TriMesh, MoveReport), MmpdeError> {
    params.validate()?;
    assert!(physical.shares_connectivity(reference), "meshes must share connectivity");
    let geo = physical_geometry(physical, exec)?;
    let mut xi: Vec<Point> = reference.vertices().to_vec();
    let mut energy = energy_with(physical, &geo, &xi, metric, params)?;
    let mut report = MoveReport {
        energy_history: vec![energy],
        min_computational_area: reference.min_area(),
        cv_before: equidistribution_cv(physical, metric),
        ..Default::default()
    };

    let horizon = params.tau;
    let h_min = (0..reference.num_elements()).map(|k| reference.signed_area(k).sqrt()).fold(f64::INFINITY, f64::min);
    let mut t = 0.0;
    let mut dt = horizon / 20.0;
    let mut vel = velocities_with(physical, &geo, &xi, metric, params, exec)?;
    while t < horizon * (1.0 - 1e-12) {
        let vmax = vel.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if vmax * (horizon - t) <= 1e-13 * h_min {
            break;
        }
        // keep single steps well below the local element size
        dt = dt.min(horizon - t).min(0.25 * h_min / vmax);
        let mut halvings = 0;
        let mut inverted = false;
        let accepted = loop {
            let trial: Vec<Point> = xi
                .iter()
                .zip(&vel)
                .enumerate()
                .map(|(j, (x, v))| snap(reference, j, x + v * dt, &reference.vertices()[j]))
                .collect();
            match energy_with(physical, &geo, &trial, metric, params) {
                Ok(e) if e <= energy => break Some((trial, e)),
                Ok(_) => inverted = false,
                Err(_) => inverted = true,
            }
            report.rejected_steps += 1;
            halvings += 1;
            dt *= 0.5;
            if halvings >= MAX_HALVINGS {
                break None;
            }
        };
        let Some((trial, e)) = accepted else {
            if inverted {
                return Err(MmpdeError::Inversion);
            }
            debug!("mesh movement stationary at t = {t:.3e}");
            break;
        };
        t += dt;
        xi = trial;
        energy = e;
        report.accepted_steps += 1;
        report.energy_history.push(energy);
        let min_c = (0..reference.num_elements())
            .map(|k| 0.5 * edge_matrix_of(&xi, reference.element(k)).determinant())
            .fold(f64::INFINITY, f64::min);
        report.min_computational_area = report.min_computational_area.min(min_c);
        if halvings == 0 {
            dt *= 1.2;
        }
        vel = velocities_with(physical, &geo, &xi, metric, params, exec)?;
    }

    let computational = reference.with_vertices(xi)?;
    let coords: Vec<f64> = physical.vertices().iter().flat_map(|p| [p.x, p.y]).collect();
    let mapped = computational.interpolate_linear(&coords, 2, reference.vertices())?;
    let new_vertices: Vec<Point> = (0..physical.num_vertices())
        .map(|j| snap(physical, j, Point::new(mapped[2 * j], mapped[2 * j + 1]), physical.vertex(j)))
        .collect();
    let moved = physical.with_vertices(new_vertices)?;
    if let Err(e) = moved.validate() {
        warn!("mapped mesh is invalid: {e}");
        return Err(MmpdeError::Inversion);
    }
    report.min_area = moved.min_area();
    report.max_area = (0..moved.num_elements()).map(|k| moved.signed_area(k)).fold(0.0, f64::max);
    Ok((moved, report))
}

/// Smooth circular layer of width 0.04 around radius 0.3 centred at (0.5, 0.5); values in [0, 1].
pub fn tanh_layer(p: &Point) -> f64 {
    let r = (p - Point::new(0.5, 0.5)).norm();
    0.5 * (1.0 + ((r - 0.3) / 0.04).tanh())
}
