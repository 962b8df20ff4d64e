//! Structure-preserving parametric finite element solver for anisotropic
//! surface diffusion of closed curves in 2D and closed surfaces in 3D.
//!
//! The solver evolves an oriented simplicial surface under the fourth-order
//! flow `V_n = Δ_Γ μ`, where the chemical potential `μ` is induced by an
//! anisotropic surface energy density `γ(n)`. A per-simplex surface energy
//! matrix built from `γ`, its Cahn-Hoffman vector `ξ` and a stabilizing
//! function `k(n)` yields a time discretization that conserves the enclosed
//! volume exactly (up to solver tolerance) and dissipates the total energy
//! unconditionally once `k(n)` dominates the minimal stabilizing function
//! `k0(n)`.
//!
//! Module map:
//! - [`mesh`]: oriented simplicial curves/surfaces and their discrete
//!   geometric primitives (direction vectors, areas, normals, mass-lumped
//!   inner products, surface gradients, volume, energy), plus OFF and
//!   POLYLINE2D I/O.
//! - [`anisotropy`]: energy density families, one-homogeneous extensions,
//!   Cahn-Hoffman vectors, stability margins and the surface energy matrix.
//! - [`stabilizer`]: the minimal stabilizing function `k0(n)` via positive
//!   semi-definite feasibility over sampled rotations, the brute-force trace
//!   oracle, and interpolation tables on the circle/sphere.
//! - [`scheme`]: the semi-implicit time step, Newton resolution of the
//!   averaged-normal nonlinearity, and the flow driver.
//! - [`harness`]: mesh generators, the manifold-distance error metric and
//!   the convergence / conservation / iteration-count experiment protocols.
//! - [`cli`]: config parsing and command dispatch for the `surfdiff` binary.

pub mod anisotropy;
pub mod cli;
pub mod config;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod rng;
pub mod scheme;
pub mod stabilizer;

pub use anisotropy::AnisotropyModel;
pub use mesh::SimplexSurface;
pub use scheme::FlowState;
pub use stabilizer::StabilizerField;

/// Top-level error type aggregating all module failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Anisotropy(#[from] anisotropy::AnisotropyError),
    #[error(transparent)]
    Stabilizer(#[from] stabilizer::StabilizerError),
    #[error(transparent)]
    Scheme(#[from] scheme::SchemeError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
