//! Run configuration, CSV and legacy VTK output.
//!
//! The configuration is TOML with flat sections. Every key is optional; missing values come from
//! the named preset, and a `custom` problem must supply geometry, material and schedule itself.
//!
//! ```toml
//! preset = "tension"
//! coarse = true
//!
//! [regularization]
//! method = "exp_convolution"
//! alpha = 4e-4
//!
//! [output]
//! max_steps = 20
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{Crack, DriverError, LoadSchedule, Observer, PresetName, Problem, Settings, SimulationState, StepReport};
use crate::elasticity::{MaterialModel, Method, Regularization};
use crate::fem::Component;
use crate::mesh::{Rect, TriMesh};
use crate::mmpde::MmpdeParams;
use crate::newton::{NewtonReport, NewtonSettings};
use crate::Execution;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot emit config: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("{0}")]
    Invalid(#[from] DriverError),
    #[error("custom problem is missing `{0}`")]
    Missing(&'static str),
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

// ---------------------------------------------------------------------------------------------
// configuration

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<PresetName>,
    coarse: Option<bool>,
    domain: Option<RawDomain>,
    material: Option<RawMaterial>,
    regularization: Option<RawRegularization>,
    mesh: Option<RawMesh>,
    schedule: Option<RawSchedule>,
    solver: Option<RawSolver>,
    mmpde: Option<RawMmpde>,
    newton: Option<RawNewton>,
    output: Option<RawOutput>,
    crack: Option<Vec<Crack>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    x0: Option<f64>,
    x1: Option<f64>,
    y0: Option<f64>,
    y1: Option<f64>,
    pull: Option<Component>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    lambda: Option<f64>,
    mu: Option<f64>,
    g_c: Option<f64>,
    l: Option<f64>,
    k_l: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegularization {
    method: Option<Method>,
    alpha: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    m: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    /// `[[increment, count], ...]`
    stages: Option<Vec<(f64, usize)>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    kk: Option<usize>,
    moving_mesh: Option<bool>,
    execution: Option<Execution>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMmpde {
    theta: Option<f64>,
    p: Option<f64>,
    tau: Option<f64>,
    smoothing: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNewton {
    tol_diff: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    snapshot_every: Option<usize>,
    max_steps: Option<usize>,
}

/// Output options of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    /// VTK cadence in steps (0 disables the periodic snapshots).
    pub snapshot_every: usize,
    /// Truncates the schedule.
    pub max_steps: Option<usize>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: None, snapshot_every: 10, max_steps: None }
    }
}

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub settings: Settings,
    pub output: OutputSettings,
}

impl RunConfig {
    pub fn from_preset(name: PresetName, coarse: bool) -> Result<Self, ConfigError> {
        Ok(Self { problem: Problem::preset(name, coarse)?, settings: Settings::default(), output: OutputSettings::default() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem.validate()?;
        self.settings.validate()?;
        Ok(())
    }
}

/// Parses and resolves a configuration. Without a `preset` key the problem is `tension`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let name = raw.preset.unwrap_or(PresetName::Tension);
    let coarse = raw.coarse.unwrap_or(false);
    let mut problem = match name {
        PresetName::Custom => custom_base(&raw)?,
        _ => Problem::preset(name, coarse)?,
    };
    let mut settings = Settings::default();
    let mut output = OutputSettings::default();

    if let Some(d) = &raw.domain {
        let r = &mut problem.domain;
        set(&mut r.x0, d.x0);
        set(&mut r.x1, d.x1);
        set(&mut r.y0, d.y0);
        set(&mut r.y1, d.y1);
        set(&mut problem.pull, d.pull);
    }
    if let Some(c) = &raw.crack {
        problem.cracks = c.clone();
    }
    if let Some(m) = &raw.material {
        let mat = &mut problem.material;
        set(&mut mat.lambda, m.lambda);
        set(&mut mat.mu, m.mu);
        set(&mut mat.g_c, m.g_c);
        set(&mut mat.l, m.l);
        set(&mut mat.k_l, m.k_l);
    }
    if let Some(r) = &raw.regularization {
        let reg = &mut problem.material.regularization;
        set(&mut reg.method, r.method);
        set(&mut reg.alpha, r.alpha);
        if r.method == Some(Method::None) && r.alpha.is_none() {
            reg.alpha = 0.0;
        }
    }
    if let Some(m) = raw.mesh.as_ref().and_then(|m| m.m) {
        problem.m = m;
    }
    if let Some(s) = raw.schedule.as_ref().and_then(|s| s.stages.clone()) {
        problem.schedule = LoadSchedule::new(s);
    }
    if let Some(s) = &raw.solver {
        set(&mut settings.kk, s.kk);
        set(&mut settings.moving_mesh, s.moving_mesh);
        set(&mut settings.exec, s.execution);
    }
    if let Some(m) = &raw.mmpde {
        let p = &mut settings.mmpde;
        set(&mut p.theta, m.theta);
        set(&mut p.p, m.p);
        set(&mut p.tau, m.tau);
        set(&mut p.smoothing, m.smoothing);
    }
    if let Some(n) = &raw.newton {
        set(&mut settings.newton.tol_diff, n.tol_diff);
        set(&mut settings.newton.max_iter, n.max_iter);
    }
    if let Some(o) = &raw.output {
        if o.dir.is_some() {
            output.dir = o.dir.clone();
        }
        set(&mut output.snapshot_every, o.snapshot_every);
        if o.max_steps.is_some() {
            output.max_steps = o.max_steps;
        }
    }
    let config = RunConfig { problem, settings, output };
    config.validate()?;
    Ok(config)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// The custom problem starts from the unit square pulled in y with the benchmark material; the
/// geometry-defining keys are required.
fn custom_base(raw: &RawConfig) -> Result<Problem, ConfigError> {
    let domain = raw.domain.as_ref().ok_or(ConfigError::Missing("domain"))?;
    let r = Rect::new(
        domain.x0.ok_or(ConfigError::Missing("domain.x0"))?,
        domain.x1.ok_or(ConfigError::Missing("domain.x1"))?,
        domain.y0.ok_or(ConfigError::Missing("domain.y0"))?,
        domain.y1.ok_or(ConfigError::Missing("domain.y1"))?,
    );
    let m = raw.mesh.as_ref().and_then(|m| m.m).ok_or(ConfigError::Missing("mesh.m"))?;
    let stages = raw.schedule.as_ref().and_then(|s| s.stages.clone()).ok_or(ConfigError::Missing("schedule.stages"))?;
    let mut base = Problem::preset(PresetName::Tension, false)?;
    base.name = PresetName::Custom;
    base.domain = r;
    base.cracks = Vec::new();
    base.m = m;
    base.schedule = LoadSchedule::new(stages);
    Ok(base)
}

/// Writes a resolved configuration with every key explicit; parsing it gives `config` back.
pub fn emit_config(config: &RunConfig) -> Result<String, ConfigError> {
    let p = &config.problem;
    let s = &config.settings;
    let mat: &MaterialModel = &p.material;
    let reg: &Regularization = &mat.regularization;
    let mm: &MmpdeParams = &s.mmpde;
    let nw: &NewtonSettings = &s.newton;
    let raw = RawConfig {
        preset: Some(p.name),
        coarse: Some(false),
        domain: Some(RawDomain {
            x0: Some(p.domain.x0),
            x1: Some(p.domain.x1),
            y0: Some(p.domain.y0),
            y1: Some(p.domain.y1),
            pull: Some(p.pull),
        }),
        material: Some(RawMaterial {
            lambda: Some(mat.lambda),
            mu: Some(mat.mu),
            g_c: Some(mat.g_c),
            l: Some(mat.l),
            k_l: Some(mat.k_l),
        }),
        regularization: Some(RawRegularization { method: Some(reg.method), alpha: Some(reg.alpha) }),
        mesh: Some(RawMesh { m: Some(p.m) }),
        schedule: Some(RawSchedule { stages: Some(p.schedule.stages.clone()) }),
        solver: Some(RawSolver { kk: Some(s.kk), moving_mesh: Some(s.moving_mesh), execution: Some(s.exec) }),
        mmpde: Some(RawMmpde { theta: Some(mm.theta), p: Some(mm.p), tau: Some(mm.tau), smoothing: Some(mm.smoothing) }),
        newton: Some(RawNewton { tol_diff: Some(nw.tol_diff), max_iter: Some(nw.max_iter) }),
        output: Some(RawOutput {
            dir: config.output.dir.clone(),
            snapshot_every: Some(config.output.snapshot_every),
            max_steps: config.output.max_steps,
        }),
        crack: Some(p.cracks.clone()),
    };
    Ok(toml::to_string(&raw)?)
}

// ---------------------------------------------------------------------------------------------
// files

/// Float format used in every output file: 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `contents` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    let err = |source| OutputError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub const LOAD_DEFLECTION_HEADER: &str = "step,U_mm,F_x_kN,F_y_kN";
pub const NEWTON_HEADER: &str = "iter,diff_L2";
pub const QUALITY_HEADER: &str = "step,min_area_mm2,max_area_mm2,min_diameter_mm,max_diameter_mm,newton_iterations,converged";

pub fn newton_csv(report: &NewtonReport) -> String {
    let mut s = format!("{NEWTON_HEADER}\n");
    for (i, diff) in report.diff_history.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_float(*diff));
    }
    s
}

/// Legacy ASCII VTK (version 3.0) unstructured grid with nodal `d`, `u` and `H`.
pub fn vtk_string(mesh: &TriMesh, d: &[f64], u: &[f64], h: &[f64], title: &str) -> String {
    let (nv, ne) = (mesh.num_vertices(), mesh.num_elements());
    let mut s = format!("# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS {nv} double\n");
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} 0", fmt_float(p.x), fmt_float(p.y));
    }
    let _ = writeln!(s, "CELLS {ne} {}", 4 * ne);
    for [a, b, c] in mesh.elements() {
        let _ = writeln!(s, "3 {a} {b} {c}");
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("5\n");
    }
    let _ = write!(s, "POINT_DATA {nv}\nSCALARS d double 1\nLOOKUP_TABLE default\n");
    for v in d {
        let _ = writeln!(s, "{}", fmt_float(*v));
    }
    s.push_str("VECTORS u double\n");
    for j in 0..nv {
        let _ = writeln!(s, "{} {} 0", fmt_float(u[2 * j]), fmt_float(u[2 * j + 1]));
    }
    s.push_str("SCALARS H double 1\nLOOKUP_TABLE default\n");
    for v in h {
        let _ = writeln!(s, "{}", fmt_float(*v));
    }
    s
}

fn quality_row(step: usize, mesh: &TriMesh, report: Option<&NewtonReport>) -> String {
    let areas: Vec<f64> = (0..mesh.num_elements()).map(|k| mesh.signed_area(k)).collect();
    let diams: Vec<f64> = (0..mesh.num_elements()).map(|k| mesh.element_diameter(k)).collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{step},{},{},{},{},{},{}\n",
        fmt_float(min(&areas)),
        fmt_float(max(&areas)),
        fmt_float(min(&diams)),
        fmt_float(max(&diams)),
        report.map_or(0, |r| r.iterations),
        report.is_none_or(|r| r.converged),
    )
}

/// Observer writing the run artifacts into one directory.
///
/// Files: `resolved_config.toml`, `load_deflection.csv`, `quality.csv`, `newton_step<k>.csv` per
/// step and `mesh_<step>.vtk` snapshots (always including step 0). CSVs are rewritten atomically
/// after every step, so an interrupted run leaves consistent files behind.
pub struct OutputWriter {
    dir: PathBuf,
    load_deflection: String,
    quality: String,
}

impl OutputWriter {
    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self, OutputError> {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
        write_atomic(&dir.join("resolved_config.toml"), emit_config(config)?.as_bytes())?;
        let w = Self {
            dir: dir.to_path_buf(),
            load_deflection: format!("{LOAD_DEFLECTION_HEADER}\n"),
            quality: format!("{QUALITY_HEADER}\n"),
        };
        w.flush()?;
        Ok(w)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn flush(&self) -> Result<(), OutputError> {
        write_atomic(&self.dir.join("load_deflection.csv"), self.load_deflection.as_bytes())?;
        write_atomic(&self.dir.join("quality.csv"), self.quality.as_bytes())
    }

    fn snapshot(&self, state: &SimulationState) -> Result<(), OutputError> {
        let title = format!("mmfrac step {} U {}", state.step, fmt_float(state.load));
        let vtk = vtk_string(&state.mesh, &state.d, &state.u, &state.h, &title);
        write_atomic(&self.dir.join(format!("mesh_{:05}.vtk", state.step)), vtk.as_bytes())
    }
}

fn to_driver(e: OutputError) -> DriverError {
    DriverError::Invalid(e.to_string())
}

impl Observer for OutputWriter {
    fn initial(&mut self, state: &SimulationState) -> Result<(), DriverError> {
        self.quality.push_str(&quality_row(0, &state.mesh, None));
        self.flush().and_then(|_| self.snapshot(state)).map_err(to_driver)
    }

    fn step(&mut self, state: &SimulationState, report: &StepReport, snapshot: bool) -> Result<(), DriverError> {
        let f = report.force;
        let _ = writeln!(
            self.load_deflection,
            "{},{},{},{}",
            state.step,
            fmt_float(state.load),
            fmt_float(f.x),
            fmt_float(f.y)
        );
        self.quality.push_str(&quality_row(state.step, &state.mesh, Some(&report.newton)));
        let newton = self.dir.join(format!("newton_step{}.csv", state.step));
        write_atomic(&newton, newton_csv(&report.newton).as_bytes()).map_err(to_driver)?;
        self.flush().map_err(to_driver)?;
        // keep the last state of a failed run
        if snapshot || !report.newton.converged {
            self.snapshot(state).map_err(to_driver)?;
        }
        Ok(())
    }
}
