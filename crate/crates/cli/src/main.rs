use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use mmfrac::driver::{self, PresetName};
use mmfrac::elasticity::{Method, Regularization};
use mmfrac::io::{self, OutputWriter, RunConfig};
use mmfrac::mesh::{CrossGrid, Rect, TriMesh};
use mmfrac::mmpde::{self, MmpdeParams};
use mmfrac::Execution;

/// Moving-mesh phase-field fracture simulations.
#[derive(Parser)]
#[command(name = "mmfrac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark preset.
    Bench {
        preset: PresetName,
        /// Desk-scale variant: m = 21, l = 0.015 mm, at most 200 steps.
        #[arg(long)]
        coarse: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Newton histories of the first tension step for a list of alpha values.
    SweepAlpha {
        #[arg(long)]
        method: Method,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "sweep_alpha")]
        out: PathBuf,
    },
    /// Move a uniform mesh towards a tanh layer and write both meshes.
    MeshDemo {
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value = "mesh_demo")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = io::parse_config(&text)?;
            if out.is_some() {
                cfg.output.dir = out;
            }
            simulate(cfg)
        }
        Command::Bench { preset, coarse, out, max_steps } => {
            if preset == PresetName::Custom {
                bail!("`custom` is not a benchmark; use `run --config`");
            }
            let mut cfg = RunConfig::from_preset(preset, coarse)?;
            cfg.output.dir = Some(out.unwrap_or_else(|| PathBuf::from(format!("{preset}_out"))));
            cfg.output.max_steps = max_steps;
            simulate(cfg)
        }
        Command::SweepAlpha { method, values, out } => sweep_alpha(method, &values, &out),
        Command::MeshDemo { m, out } => mesh_demo(m, &out),
    }
}

fn simulate(cfg: RunConfig) -> Result<()> {
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from(format!("{}_out", cfg.problem.name)));
    let mut writer = OutputWriter::create(&dir, &cfg)?;
    let outcome = driver::run(&cfg.problem, &cfg.settings, cfg.output.max_steps, cfg.output.snapshot_every, &mut writer)?;
    let component = cfg.problem.reported_component();
    let peak = outcome
        .load_deflection
        .iter()
        .map(|p| match component {
            mmfrac::fem::Component::X => p.force.x,
            mmfrac::fem::Component::Y => p.force.y,
        })
        .fold(f64::NEG_INFINITY, f64::max);
    info!("{} steps written to {}; peak reported force {peak:.6} kN", outcome.load_deflection.len(), dir.display());
    if let Some(step) = outcome.halted_at {
        info!("newton did not converge at step {step}; the run stopped there");
    }
    Ok(())
}

fn sweep_alpha(method: Method, values: &[f64], out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let settings = driver::Settings::default();
    for &alpha in values {
        let reg = Regularization::new(method, alpha);
        reg.validate()?;
        let problem = driver::study_problem(reg);
        let report = driver::first_step_newton(&problem, &settings, driver::STUDY_INCREMENT)?;
        let path = out.join(format!("newton_{method}_alpha{alpha:e}.csv"));
        io::write_atomic(&path, io::newton_csv(&report).as_bytes())?;
        // non-convergence is a result of the study, not an error
        println!(
            "{method} alpha={alpha:e}: converged={} iterations={} last_diff={:.3e}",
            report.converged,
            report.iterations,
            report.diff_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn mesh_demo(m: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mesh = TriMesh::structured(CrossGrid::new(m, Rect::new(0.0, 1.0, 0.0, 1.0)));
    let params = MmpdeParams::default();
    let field = |mesh: &TriMesh| mesh.vertices().iter().map(mmpde::tanh_layer).collect::<Vec<_>>();
    let metric = mmpde::metric_for_field(&mesh, &field(&mesh), &params, Execution::default())?;
    let (moved, report) = mmpde::move_mesh(&mesh, &metric, &mesh, &params, Execution::default())?;
    let moved_metric = mmpde::metric_for_field(&moved, &field(&moved), &params, Execution::default())?;
    for (name, mesh) in [("uniform", &mesh), ("moved", &moved)] {
        let values = field(mesh);
        let zeros = vec![0.0; 2 * mesh.num_vertices()];
        let vtk = io::vtk_string(mesh, &values, &zeros, &values, &format!("tanh layer {name}"));
        io::write_atomic(&out.join(format!("{name}.vtk")), vtk.as_bytes())?;
    }
    println!(
        "accepted {} steps ({} rejected); I_h {:.6e} -> {:.6e}; CV {:.4} -> {:.4}; min area {:.3e}",
        report.accepted_steps,
        report.rejected_steps,
        report.energy_history.first().copied().unwrap_or(f64::NAN),
        report.energy_history.last().copied().unwrap_or(f64::NAN),
        mmpde::equidistribution_cv(&mesh, &metric),
        mmpde::equidistribution_cv(&moved, &moved_metric),
        report.min_area
    );
    Ok(())
}
