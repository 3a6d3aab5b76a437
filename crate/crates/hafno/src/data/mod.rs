//! Benchmark data generation: seeded coefficient/initial-condition samplers,
//! independent numerical reference solvers, and the dataset container with
//! its on-disk format.

pub mod dataset;
pub mod elliptic;
pub mod grf;
pub mod ns;

pub use dataset::{
    add_noise, build_dataset, downsample_field, read_dataset, spec_from_manifest, write_dataset,
    BenchmarkSpec, Dataset, DatasetSpec, Direction, Manifest, Sample, DATASET_MAGIC,
    DATASET_VERSION, GENERATOR_VERSION, SOLVER_TOL,
};
pub use elliptic::{
    gen_trig_coefficient, solve_elliptic_fd, trig_coefficient_with, trig_frequencies,
    unit_forcing, SolveStats, TRIG_OCTAVES,
};
pub use grf::{neumann_mode_coefficient, sample_grf_neumann, sample_grf_twophase, sample_w0_periodic};
pub use ns::{enstrophy, solve_ns_vorticity, NsSpec};
