//! Galerkin boundary element assembly and solvers for the 3D Laplace and
//! Helmholtz equations.
//!
//! Panel-pair integrals use Sauter–Schwab quadrature, far-field blocks are
//! compressed with Green cross approximation into a hierarchical matrix,
//! and assembly runs through a batched work-list scheduler with pluggable
//! backends. Everything numerical is generic over [`scalar::Real`]; the
//! aliases below fix the scalar type.

pub mod cluster;
pub mod dense;
pub mod error;
pub mod gca;
pub mod h2;
pub mod kernels;
pub mod mesh;
pub mod quadrature;
pub mod reference;
pub mod scalar;
pub mod scheduler;
pub mod solver;
pub mod vec3;

pub use error::{Error, Result};
pub use scalar::{Complex, Real};

pub type SurfaceMesh64 = mesh::SurfaceMesh<f64>;
pub type SurfaceMesh32 = mesh::SurfaceMesh<f32>;
pub type KernelSpec64 = kernels::KernelSpec<f64>;
pub type KernelSpec32 = kernels::KernelSpec<f32>;
pub type ClusterTree64 = cluster::ClusterTree<f64>;
pub type ClusterTree32 = cluster::ClusterTree<f32>;
pub type GcaSetup64 = h2::GcaSetup<f64>;
pub type GcaSetup32 = h2::GcaSetup<f32>;
pub type GCAMatrix64 = h2::GCAMatrix<f64>;
pub type GCAMatrix32 = h2::GCAMatrix<f32>;
pub type Matrix64 = dense::Matrix<f64>;
pub type Matrix32 = dense::Matrix<f32>;
pub type C64 = Complex<f64>;
pub type C32 = Complex<f32>;
