//! Staggered quasi-static load stepping and the benchmark problems.
//!
//! One load step from `U^n` to `U^{n+1}`:
//!
//! 1. for `k = 1..=kk`: interpolate `H^n` onto the current mesh, solve for `d`, and (if `k < kk`)
//!    move the mesh towards the metric of `d`;
//! 2. solve the displacement equations by Newton's method on the final mesh;
//! 3. `H^{n+1} = max(Psi^+(u^{n+1}), H~)`.

use std::f64::consts::PI;

use log::{debug, info};
use thiserror::Error;

use crate::elasticity::{self, MaterialError, MaterialModel, Method, Regularization};
use crate::fem::{self, BoundaryConditions, Component, FemError};
use crate::mesh::{side, CrossGrid, MeshError, Rect, TriMesh};
use crate::mmpde::{self, MmpdeError, MmpdeParams, MoveReport};
use crate::newton::{self, DisplacementSystem, NewtonReport, NewtonSettings};
use crate::{Execution, Point};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mmpde(#[from] MmpdeError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("crack {index} leaves the domain")]
    CrackOutside { index: usize },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Straight initial crack given by centre, length and polar angle (degrees from the x axis).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crack {
    pub center: [f64; 2],
    pub length: f64,
    pub angle_deg: f64,
}

impl Crack {
    pub fn endpoints(&self) -> [Point; 2] {
        let c = Point::new(self.center[0], self.center[1]);
        let a = self.angle_deg * PI / 180.0;
        let half = Point::new(a.cos(), a.sin()) * (0.5 * self.length);
        [c - half, c + half]
    }

    pub fn distance(&self, p: &Point) -> f64 {
        let [a, b] = self.endpoints();
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (a + ab * t)).norm()
    }
}

/// Piecewise-constant load increments.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct LoadSchedule {
    pub stages: Vec<(f64, usize)>,
}

impl LoadSchedule {
    pub fn new(stages: Vec<(f64, usize)>) -> Self {
        Self { stages }
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        match self.stages.iter().find(|(du, _)| !(*du > 0.0) || !du.is_finite()) {
            Some((du, _)) => Err(DriverError::Invalid(format!("load increment {du} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.1).sum()
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.stages.iter().flat_map(|&(du, n)| std::iter::repeat_n(du, n))
    }

    pub fn truncated(&self, max_steps: usize) -> Self {
        let mut left = max_steps;
        let stages = self
            .stages
            .iter()
            .filter_map(|&(du, n)| {
                let take = n.min(left);
                left -= take;
                (take > 0).then_some((du, take))
            })
            .collect();
        Self { stages }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Tension,
    Shear,
    TwoCrack,
    FiveCrack,
    TenCrack,
    Custom,
}

impl PresetName {
    pub const BENCHMARKS: [PresetName; 5] =
        [PresetName::Tension, PresetName::Shear, PresetName::TwoCrack, PresetName::FiveCrack, PresetName::TenCrack];

    pub fn name(self) -> &'static str {
        match self {
            PresetName::Tension => "tension",
            PresetName::Shear => "shear",
            PresetName::TwoCrack => "two_crack",
            PresetName::FiveCrack => "five_crack",
            PresetName::TenCrack => "ten_crack",
            PresetName::Custom => "custom",
        }
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PresetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [PresetName::Custom].into_iter().chain(Self::BENCHMARKS).find(|p| p.name() == s).ok_or_else(|| {
            format!("unknown preset '{s}' (expected tension, shear, two_crack, five_crack, ten_crack or custom)")
        })
    }
}

/// Geometry, material, loading and discretization of one simulation.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub name: PresetName,
    pub domain: Rect,
    pub cracks: Vec<Crack>,
    /// Top-edge displacement direction; the other top component and the bottom edge are fixed.
    pub pull: Component,
    pub material: MaterialModel,
    /// Cells per side of the initial cross-split grid.
    pub m: usize,
    pub schedule: LoadSchedule,
}

pub const BENCH_LAMBDA: f64 = 121.15;
pub const BENCH_MU: f64 = 80.77;
pub const BENCH_G_C: f64 = 2.7e-3;

fn benchmark_material(g_c: f64, l: f64) -> MaterialModel {
    MaterialModel {
        lambda: BENCH_LAMBDA,
        mu: BENCH_MU,
        g_c,
        l,
        k_l: 0.0,
        regularization: Regularization::new(Method::SonicPoint, 1e-3),
    }
}

fn crack(x: f64, y: f64, length: f64, angle_deg: f64) -> Crack {
    Crack { center: [x, y], length, angle_deg }
}

impl Problem {
    /// Benchmark definitions. `coarse` gives the desk-scale variant (m = 21, l = 0.015 mm, at most
    /// 200 load steps).
    pub fn preset(name: PresetName, coarse: bool) -> Result<Self, DriverError> {
        let unit = Rect::new(0.0, 1.0, 0.0, 1.0);
        let plate = Rect::new(-1.0, 1.0, -1.0, 1.0);
        // single edge notch: horizontal slit from the left edge to the centre
        let notch = vec![crack(0.25, 0.5, 0.5, 0.0)];
        let mut p = match name {
            PresetName::Tension => Problem {
                name,
                domain: unit,
                cracks: notch,
                pull: Component::Y,
                material: benchmark_material(BENCH_G_C, 0.0075),
                m: 41,
                schedule: LoadSchedule::new(vec![(1e-5, 500), (1e-6, 1500)]),
            },
            PresetName::Shear => Problem {
                name,
                domain: unit,
                cracks: notch,
                pull: Component::X,
                material: benchmark_material(BENCH_G_C, 0.0075),
                m: 41,
                schedule: LoadSchedule::new(vec![(1e-5, 1500)]),
            },
            PresetName::TwoCrack => Problem {
                name,
                domain: plate,
                cracks: vec![crack(-0.2, 0.0, 0.6, 9.0), crack(0.46, 0.0, 0.8, 65.0)],
                pull: Component::Y,
                material: benchmark_material(BENCH_G_C, 0.00375),
                m: 50,
                schedule: LoadSchedule::new(vec![(1e-4, 200)]),
            },
            PresetName::FiveCrack => Problem {
                name,
                domain: plate,
                cracks: vec![
                    crack(-0.6, 0.3, 0.3, 30.0),
                    crack(0.0, 0.5, 0.35, 45.0),
                    crack(0.6, 0.5, 0.35, 17.0),
                    crack(-0.5, -0.4, 0.5, 28.6),
                    crack(0.5, -0.2, 0.5, 9.0),
                ],
                pull: Component::Y,
                material: benchmark_material(2.7e-4, 0.00375),
                m: 50,
                schedule: LoadSchedule::new(vec![(1e-4, 200)]),
            },
            PresetName::TenCrack => {
                let centers = [
                    (-0.5, 0.8),
                    (0.2, 0.8),
                    (-0.3, 0.3),
                    (0.5, 0.5),
                    (0.0, 0.0),
                    (-0.7, -0.2),
                    (-0.5, -0.5),
                    (-0.1, -0.8),
                    (0.5, -0.75),
                    (0.7, -0.2),
                ];
                let angles = [40.0, 45.0, 109.0, 132.0, 143.0, 40.0, 45.0, 120.0, 40.0, 115.0];
                Problem {
                    name,
                    domain: plate,
                    cracks: centers.iter().zip(angles).map(|(&(x, y), a)| crack(x, y, 0.1, a)).collect(),
                    pull: Component::Y,
                    material: benchmark_material(2.7e-4, 0.00375),
                    m: 100,
                    schedule: LoadSchedule::new(vec![(1e-4, 250)]),
                }
            }
            PresetName::Custom => {
                return Err(DriverError::Invalid("the custom problem has no preset definition".into()));
            }
        };
        if coarse {
            p.m = 21;
            p.material.l = 0.015;
            p.schedule = match name {
                PresetName::Tension => LoadSchedule::new(vec![(1e-4, 40), (2e-5, 160)]),
                PresetName::Shear => LoadSchedule::new(vec![(2e-4, 60), (5e-5, 140)]),
                _ => p.schedule.truncated(200),
            };
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        self.material.validate()?;
        self.schedule.validate()?;
        if self.m == 0 {
            return Err(DriverError::Invalid("m must be at least 1".into()));
        }
        let d = &self.domain;
        if !(d.x1 > d.x0 && d.y1 > d.y0) {
            return Err(DriverError::Invalid("domain must have positive extent".into()));
        }
        for (index, c) in self.cracks.iter().enumerate() {
            if !(c.length > 0.0) || c.endpoints().iter().any(|p| !d.contains(p, 1e-12)) {
                return Err(DriverError::CrackOutside { index });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> CrossGrid {
        CrossGrid::new(self.m, self.domain)
    }

    pub fn initial_mesh(&self) -> TriMesh {
        TriMesh::structured(self.grid())
    }

    pub fn boundary_conditions(&self) -> BoundaryConditions {
        BoundaryConditions::clamped_bottom_pulled_top(self.pull)
    }

    /// Load component reported for this problem.
    pub fn reported_component(&self) -> Component {
        self.pull
    }
}

/// Seed history field: `H_seed max(0, 1 - dist / w_j)` per crack, summed, with
/// `H_seed = 1e3 g_c / (4 l)` and `w = 2 l`.
pub fn init_cracks(mesh: &TriMesh, cracks: &[Crack], mat: &MaterialModel) -> Result<Vec<f64>, DriverError> {
    let bbox = bounding_rect(mesh);
    for (index, c) in cracks.iter().enumerate() {
        if !(c.length > 0.0) || c.endpoints().iter().any(|p| !bbox.contains(p, 1e-12)) {
            return Err(DriverError::CrackOutside { index });
        }
    }
    let (seed, w) = (1e3 * mat.g_c / (4.0 * mat.l), 2.0 * mat.l);
    Ok(mesh
        .vertices()
        .iter()
        .map(|p| cracks.iter().map(|c| seed * (1.0 - c.distance(p) / w).max(0.0)).sum())
        .collect())
}

fn bounding_rect(mesh: &TriMesh) -> Rect {
    let (mut r, v) = (Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), mesh.vertices());
    for p in v {
        r.x0 = r.x0.min(p.x);
        r.x1 = r.x1.max(p.x);
        r.y0 = r.y0.min(p.y);
        r.y1 = r.y1.max(p.y);
    }
    r
}

/// Solver knobs of the staggered procedure.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Inner d/mesh iterations per load step; the mesh moves `kk - 1` times.
    pub kk: usize,
    /// Disables mesh movement entirely (fixed-mesh runs).
    pub moving_mesh: bool,
    pub mmpde: MmpdeParams,
    pub newton: NewtonSettings,
    pub exec: Execution,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            kk: 5,
            moving_mesh: true,
            mmpde: MmpdeParams::default(),
            newton: NewtonSettings::default(),
            exec: Execution::default(),
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<(), DriverError> {
        if self.kk == 0 {
            return Err(DriverError::Invalid("kk must be at least 1".into()));
        }
        self.mmpde.validate()?;
        if !(self.newton.tol_diff > 0.0) || self.newton.max_iter == 0 {
            return Err(DriverError::Invalid("newton needs tol_diff > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Fields at `t^n`, all living on `mesh`.
#[derive(Clone, Debug)]
pub struct SimulationState {
    pub step: usize,
    pub load: f64,
    pub mesh: TriMesh,
    /// Initial mesh; never modified.
    pub reference: TriMesh,
    pub d: Vec<f64>,
    pub u: Vec<f64>,
    pub h: Vec<f64>,
}

impl SimulationState {
    /// Uniform mesh, seeded history, `u = 0`, and the phase field of the seed.
    pub fn initial(problem: &Problem, settings: &Settings) -> Result<Self, DriverError> {
        problem.validate()?;
        settings.validate()?;
        let mesh = problem.initial_mesh();
        let h = init_cracks(&mesh, &problem.cracks, &problem.material)?;
        let d = fem::assemble_phase_field(&mesh, &h, &problem.material, settings.exec)?.solve()?;
        let u = vec![0.0; 2 * mesh.num_vertices()];
        Ok(Self { step: 0, load: 0.0, reference: mesh.clone(), mesh, d, u, h })
    }
}

/// Diagnostics of one load step.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub newton: NewtonReport,
    /// Old history interpolated onto the final mesh of the step.
    pub h_tilde: Vec<f64>,
    pub moves: Vec<MoveReport>,
    /// Resultant on the top edge after the step.
    pub force: Point,
}

/// Advances `state` by one load increment.
pub fn staggered_step(
    state: &SimulationState,
    increment: f64,
    problem: &Problem,
    settings: &Settings,
) -> Result<(SimulationState, StepReport), DriverError> {
    let mat = &problem.material;
    let exec = settings.exec;
    let load = state.load + increment;

    let mut mesh = state.mesh.clone();
    let mut moves = Vec::new();
    let (mut d, mut h_tilde) = (Vec::new(), Vec::new());
    for k in 1..=settings.kk {
        h_tilde = transfer(&state.mesh, &state.h, 1, &mesh)?;
        d = fem::assemble_phase_field(&mesh, &h_tilde, mat, exec)?.solve()?;
        if k < settings.kk && settings.moving_mesh {
            let metric = mmpde::metric_for_field(&mesh, &d, &settings.mmpde, exec)?;
            let (moved, report) = mmpde::move_mesh(&mesh, &metric, &state.reference, &settings.mmpde, exec)?;
            mesh = moved;
            moves.push(report);
        }
    }

    let bc = problem.boundary_conditions();
    let constraints = bc.constraints(&mesh, load)?;
    let mut u0 = transfer(&state.mesh, &state.u, 2, &mesh)?;
    constraints.impose(&mut u0);
    let system = DisplacementSystem::new(&mesh, &d, mat, &bc, &constraints, exec);
    let (u, report) = newton::newton_solve(&system, &u0, &settings.newton, exec);
    debug!("step {}: newton {} iterations, converged {}", state.step + 1, report.iterations, report.converged);

    let psi = fem::nodal_psi_plus(&mesh, &u, mat, exec)?;
    let h = elasticity::history_update(&psi, &h_tilde)?;
    let force = fem::load_vector(&mesh, &u, &d, mat, side::TOP)?;
    let next = SimulationState { step: state.step + 1, load, mesh, reference: state.reference.clone(), d, u, h };
    Ok((next, StepReport { newton: report, h_tilde, moves, force }))
}

/// Nodal field transfer between meshes of one simulation (identity when nothing moved).
fn transfer(from: &TriMesh, values: &[f64], components: usize, to: &TriMesh) -> Result<Vec<f64>, DriverError> {
    if from.vertices() == to.vertices() {
        return Ok(values.to_vec());
    }
    Ok(from.interpolate_linear(values, components, to.vertices())?)
}

/// Load-deflection record of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadPoint {
    pub step: usize,
    pub load: f64,
    pub force: Point,
}

/// Receives run results as they are produced.
pub trait Observer {
    fn initial(&mut self, _state: &SimulationState) -> Result<(), DriverError> {
        Ok(())
    }

    fn step(&mut self, _state: &SimulationState, _report: &StepReport, _snapshot: bool) -> Result<(), DriverError> {
        Ok(())
    }
}

impl Observer for () {}

/// Summary of a completed or halted run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_state: SimulationState,
    pub load_deflection: Vec<LoadPoint>,
    pub newton_iterations: Vec<usize>,
    /// Step at which Newton failed; the run stops there.
    pub halted_at: Option<usize>,
}

/// Steps after which a snapshot is due: every `every` steps, and whenever `d` dropped by more
/// than 0.05 somewhere.
pub const SNAPSHOT_DROP: f64 = 0.05;

/// Executes the load schedule (optionally truncated to `max_steps`).
pub fn run(
    problem: &Problem,
    settings: &Settings,
    max_steps: Option<usize>,
    snapshot_every: usize,
    observer: &mut dyn Observer,
) -> Result<RunOutcome, DriverError> {
    let mut state = SimulationState::initial(problem, settings)?;
    observer.initial(&state)?;
    let schedule = match max_steps {
        Some(n) => problem.schedule.truncated(n),
        None => problem.schedule.clone(),
    };
    let mut outcome = RunOutcome {
        final_state: state.clone(),
        load_deflection: Vec::new(),
        newton_iterations: Vec::new(),
        halted_at: None,
    };
    for du in schedule.increments() {
        let (next, report) = staggered_step(&state, du, problem, settings)?;
        let d_old = transfer(&state.mesh, &state.d, 1, &next.mesh)?;
        let drop = d_old.iter().zip(&next.d).map(|(a, b)| a - b).fold(0.0, f64::max);
        let snapshot = (snapshot_every > 0 && next.step % snapshot_every == 0) || drop > SNAPSHOT_DROP;
        outcome.load_deflection.push(LoadPoint { step: next.step, load: next.load, force: report.force });
        outcome.newton_iterations.push(report.newton.iterations);
        observer.step(&next, &report, snapshot)?;
        let failed = !report.newton.converged;
        state = next;
        if failed {
            info!("newton failed at step {}; stopping the run", state.step);
            outcome.halted_at = Some(state.step);
            break;
        }
    }
    outcome.final_state = state;
    Ok(outcome)
}

/// Newton history of the first load step of `problem` with increment `increment`, as used by the
/// regularization study.
pub fn first_step_newton(problem: &Problem, settings: &Settings, increment: f64) -> Result<NewtonReport, DriverError> {
    let state = SimulationState::initial(problem, settings)?;
    Ok(staggered_step(&state, increment, problem, settings)?.1.newton)
}

/// Desk-scale problem of the regularization study: coarse tension, `k_l = 0`.
pub fn study_problem(regularization: Regularization) -> Problem {
    let mut p = Problem::preset(PresetName::Tension, true).expect("tension preset");
    p.material.k_l = 0.0;
    p.material.regularization = regularization;
    p
}

/// First-step increment of the regularization study (mm).
pub const STUDY_INCREMENT: f64 = 1e-5;
