//! Newton's method with a finite-difference Jacobian.
//!
//! Columns whose row patterns do not overlap are perturbed together (greedy distance-2 colouring
//! of the Jacobian pattern), so one residual evaluation fills a whole colour group. Every entry is
//! bitwise identical to the one-column-at-a-time difference quotient.

use log::{debug, info};
use thiserror::Error;

use crate::elasticity::MaterialModel;
use crate::fem::{self, BoundaryConditions, Constraints, CsrMatrix, FemError};
use crate::mesh::TriMesh;
use crate::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum NewtonError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("residual is not finite")]
    NonFinite,
}

/// A square nonlinear system `R(u) = 0`.
pub trait NonlinearSystem: Sync {
    fn num_dofs(&self) -> usize;

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>, NewtonError>;

    /// Jacobian sparsity pattern (values ignored).
    fn pattern(&self) -> CsrMatrix;

    /// Dofs held at their current value; their Jacobian rows and columns become identity.
    fn is_fixed(&self, _dof: usize) -> bool {
        false
    }

    /// Norm used for the difference between consecutive iterates.
    fn diff_norm(&self, du: &[f64]) -> f64 {
        du.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// FD step for dof value `x`: `sqrt(eps) (1 + |x|)`, rounded so `x + h` is exact.
pub fn fd_step(x: f64) -> f64 {
    let h = f64::EPSILON.sqrt() * (1.0 + x.abs());
    (x + h) - x
}

/// Greedy colouring of the columns of `pattern` such that no row holds two columns of one colour.
pub fn color_columns(pattern: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = pattern.dim();
    let mut col_rows = vec![Vec::new(); n];
    for i in 0..n {
        for &j in pattern.row(i).0 {
            col_rows[j].push(i);
        }
    }
    let mut color = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut forbidden = Vec::new();
    for j in 0..n {
        forbidden.clear();
        for &i in &col_rows[j] {
            for &c in pattern.row(i).0 {
                if color[c] != usize::MAX {
                    forbidden.push(color[c]);
                }
            }
        }
        forbidden.sort_unstable();
        forbidden.dedup();
        let mut pick = 0;
        for &f in &forbidden {
            if f == pick {
                pick += 1;
            } else if f > pick {
                break;
            }
        }
        color[j] = pick;
        if pick == groups.len() {
            groups.push(Vec::new());
        }
        groups[pick].push(j);
    }
    groups
}

/// Colour-grouped forward-difference Jacobian at `u`, given `r0 = R(u)`.
pub fn fd_jacobian<S: NonlinearSystem>(
    system: &S,
    u: &[f64],
    r0: &[f64],
    exec: Execution,
) -> Result<CsrMatrix, NewtonError> {
    let mut jac = system.pattern();
    let groups: Vec<Vec<usize>> = color_columns(&jac)
        .into_iter()
        .map(|g| g.into_iter().filter(|&j| !system.is_fixed(j)).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    let perturbed = exec.map(groups.len(), |c| {
        let mut up = u.to_vec();
        for &j in &groups[c] {
            up[j] += fd_step(u[j]);
        }
        system.residual(&up)
    });

    let n = jac.dim();
    let mut col_rows = vec![Vec::new(); n];
    for i in 0..n {
        for &j in jac.row(i).0 {
            col_rows[j].push(i);
        }
    }
    for (group, rp) in groups.iter().zip(perturbed) {
        let rp = rp?;
        for &j in group {
            let h = fd_step(u[j]);
            for &i in &col_rows[j] {
                jac.set(i, j, (rp[i] - r0[i]) / h);
            }
        }
    }
    for j in 0..n {
        if system.is_fixed(j) {
            for &i in &col_rows[j] {
                jac.set(i, j, 0.0);
            }
            for &c in jac.row(j).0.to_vec().iter() {
                jac.set(j, c, if c == j { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(jac)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSettings {
    pub tol_diff: f64,
    pub max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol_diff: 1e-8, max_iter: 50 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonReport {
    pub converged: bool,
    pub iterations: usize,
    /// Norm of `u_{k+1} - u_k` for every iteration taken.
    pub diff_history: Vec<f64>,
    /// Euclidean norm of the residual at the returned iterate.
    pub final_residual_norm: f64,
    /// Why the iteration stopped early, if it did.
    pub failure: Option<String>,
}

/// Plain Newton: Jacobian rebuilt every iteration, no damping. Never errors; failures are
/// recorded in the report together with the iterate reached.
pub fn newton_solve<S: NonlinearSystem>(
    system: &S,
    u0: &[f64],
    settings: &NewtonSettings,
    exec: Execution,
) -> (Vec<f64>, NewtonReport) {
    let mut u = u0.to_vec();
    let mut report = NewtonReport::default();
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut r = match checked_residual(system, &u) {
        Ok(r) => r,
        Err(e) => {
            report.failure = Some(e.to_string());
            report.final_residual_norm = f64::NAN;
            return (u, report);
        }
    };
    while report.iterations < settings.max_iter {
        let step = fd_jacobian(system, &u, &r, exec)
            .map_err(|e| e.to_string())
            .and_then(|jac| fem::solve_linear(&jac, &r).map_err(|e| format!("singular Jacobian: {e}")));
        let du = match step {
            Ok(du) => du,
            Err(msg) => {
                report.failure = Some(msg);
                break;
            }
        };
        for (x, d) in u.iter_mut().zip(&du) {
            *x -= d;
        }
        let diff = system.diff_norm(&du);
        report.iterations += 1;
        report.diff_history.push(diff);
        debug!("newton iteration {}: diff {diff:.3e}", report.iterations);
        r = match checked_residual(system, &u) {
            Ok(r) => r,
            Err(e) => {
                report.failure = Some(e.to_string());
                report.final_residual_norm = f64::NAN;
                return (u, report);
            }
        };
        if !diff.is_finite() {
            report.failure = Some("update is not finite".into());
            break;
        }
        if diff <= settings.tol_diff {
            report.converged = true;
            break;
        }
    }
    report.final_residual_norm = norm(&r);
    if !report.converged {
        info!(
            "newton stopped after {} iterations without convergence (last diff {:?})",
            report.iterations,
            report.diff_history.last()
        );
    }
    (u, report)
}

fn checked_residual<S: NonlinearSystem>(system: &S, u: &[f64]) -> Result<Vec<f64>, NewtonError> {
    let r = system.residual(u)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(NewtonError::NonFinite);
    }
    Ok(r)
}

/// The displacement equilibrium problem at fixed damage `d`.
pub struct DisplacementSystem<'a> {
    pub mesh: &'a TriMesh,
    pub d: &'a [f64],
    pub material: &'a MaterialModel,
    pub bc: &'a BoundaryConditions,
    pub constraints: &'a Constraints,
    pub exec: Execution,
    mass: Vec<f64>,
}

impl<'a> DisplacementSystem<'a> {
    pub fn new(
        mesh: &'a TriMesh,
        d: &'a [f64],
        material: &'a MaterialModel,
        bc: &'a BoundaryConditions,
        constraints: &'a Constraints,
        exec: Execution,
    ) -> Self {
        Self { mesh, d, material, bc, constraints, exec, mass: mesh.lumped_mass() }
    }
}

impl NonlinearSystem for DisplacementSystem<'_> {
    fn num_dofs(&self) -> usize {
        2 * self.mesh.num_vertices()
    }

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>, NewtonError> {
        // colour groups already run in parallel; keep each evaluation serial
        Ok(fem::displacement_residual(self.mesh, u, self.d, self.material, self.bc, self.constraints, Execution::Serial)?)
    }

    fn pattern(&self) -> CsrMatrix {
        fem::displacement_pattern(self.mesh)
    }

    fn is_fixed(&self, dof: usize) -> bool {
        self.constraints.is_fixed(dof)
    }

    /// Discrete L2 norm with the lumped mass.
    fn diff_norm(&self, du: &[f64]) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(j, m)| m * (du[2 * j] * du[2 * j] + du[2 * j + 1] * du[2 * j + 1]))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Cubic;

    impl NonlinearSystem for Cubic {
        fn num_dofs(&self) -> usize {
            1
        }
        fn residual(&self, u: &[f64]) -> Result<Vec<f64>, NewtonError> {
            Ok(vec![u[0].powi(3) - 8.0])
        }
        fn pattern(&self) -> CsrMatrix {
            CsrMatrix::identity(1)
        }
    }

    #[test]
    fn cubic_derivative() {
        let r0 = Cubic.residual(&[2.0]).unwrap();
        let j = fd_jacobian(&Cubic, &[2.0], &r0, Execution::Serial).unwrap();
        assert!((j.get(0, 0) - 12.0).abs() < 1e-5, "{}", j.get(0, 0));
    }

    #[test]
    fn cubic_root() {
        let (u, report) = newton_solve(&Cubic, &[3.0], &NewtonSettings::default(), Execution::Serial);
        assert!(report.converged);
        assert!((u[0] - 2.0).abs() < 1e-12);
        assert_eq!(report.diff_history.len(), report.iterations);
    }

    #[test]
    fn colouring_separates_overlapping_columns() {
        let rows = vec![vec![0, 1], vec![0, 1, 2], vec![1, 2, 3], vec![2, 3]];
        let a = CsrMatrix::from_rows(rows.clone());
        let groups = color_columns(&a);
        for g in &groups {
            for r in &rows {
                assert!(g.iter().filter(|c| r.contains(c)).count() <= 1);
            }
        }
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), 4);
    }
}
