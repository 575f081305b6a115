//! Serial vs parallel timings of the data-parallel kernels on the desk-scale tension mesh.
//!
//! `cargo bench -p mmfrac --bench kernels`; with `--no-default-features` both variants run serially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mmfrac::driver::{PresetName, Problem, Settings, SimulationState};
use mmfrac::fem::{self, Constraints};
use mmfrac::mmpde::{self, MmpdeParams};
use mmfrac::newton::{self, DisplacementSystem, NonlinearSystem};
use mmfrac::Execution;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn kernels(c: &mut Criterion) {
    let problem = Problem::preset(PresetName::Tension, true).unwrap();
    let state = SimulationState::initial(&problem, &Settings::default()).unwrap();
    let mesh = &state.mesh;
    let mat = &problem.material;
    let bc = problem.boundary_conditions();
    let constraints = bc.constraints(mesh, 1e-3).unwrap();
    let mut u = vec![0.0; 2 * mesh.num_vertices()];
    constraints.impose(&mut u);
    // a smooth nonzero field so the split has both parts
    for (j, p) in mesh.vertices().iter().enumerate() {
        u[2 * j] += 1e-4 * (3.0 * p.y).sin();
    }
    let params = MmpdeParams::default();
    let metric = mmpde::metric_for_field(mesh, &state.d, &params, Execution::Serial).unwrap();
    let xi = state.reference.vertices().to_vec();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("phase_field_assembly", name), &exec, |b, &e| {
            b.iter(|| fem::assemble_phase_field(mesh, black_box(&state.h), mat, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("displacement_residual", name), &exec, |b, &e| {
            b.iter(|| fem::displacement_residual(mesh, black_box(&u), &state.d, mat, &bc, &Constraints::none(u.len()), e).unwrap())
        });
        let system = DisplacementSystem::new(mesh, &state.d, mat, &bc, &constraints, exec);
        let r0 = system.residual(&u).unwrap();
        group.bench_with_input(BenchmarkId::new("fd_jacobian", name), &exec, |b, &e| {
            b.iter(|| newton::fd_jacobian(&system, black_box(&u), &r0, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hessian_recovery", name), &exec, |b, &e| {
            b.iter(|| mmpde::recover_hessian(mesh, black_box(&state.d), e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mesh_velocities", name), &exec, |b, &e| {
            b.iter(|| mmpde::nodal_velocities(mesh, black_box(&xi), &metric, &params, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
