pub mod dynamics;
pub mod error;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod kernels;
pub mod potential;
pub mod propagator;
pub mod scattering;
pub mod uniqueness;

pub use dynamics::{
    energy, evolve, evolve_with, fock_term, hartree_potential, hartree_term, nonlinearity,
    EvolveOptions, EvolveReport, Model, OrbitalSet, StepSample,
};
pub use error::{Error, Result};
pub use grid::{
    dilate, make_band_limited_profile, make_grid, modulate, Field, Grid, ProbeSpec, Representation,
};
pub use inversion::{
    fourier_to_potential, picard_diagnostic, reconstruct, singular_system, Method,
    PicardDiagnostic, PotentialEstimate, ReconstructionResult, Regularization, SingularSystem,
};
pub use kernels::{
    density_spectrum, forward_map, kernel_g, kernel_h, kernel_hf, lambda_grid, pair_spectrum,
    KernelKind, KernelMatrix, TimeQuadrature, XiGrid, XiShell,
};
pub use potential::{
    PotentialFamily, PotentialMetadata, PotentialSpec, RealizedPotential, ZeroMode,
};
pub use propagator::{free_propagate, galilean_check, PropagationPlan};
pub use scattering::{
    forward_scatter, high_velocity_sweep, pairing, probe_state, reference_limit,
    remainder_decomposition, small_amplitude_sweep, Decomposition, ScatterOptions, ScatterOutcome,
    ScatterRun, SweepSetup,
};
pub use uniqueness::{
    build_disjoint_probes, distinguish, localization_window, verify_g1_orthogonality, verify_g2_support, Verdict,
    WindowSpec,
};
