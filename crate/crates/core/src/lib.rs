//! Earliest-activation-site localization on triangulated manifolds.
//!
//! The crate wires together a forward ECG model (anisotropic eikonal
//! activation, traveling-wave transmembrane potential, lead-field ECG) with
//! Gaussian-process Bayesian optimization whose kernels are built from
//! Laplace–Beltrami eigenfunctions of the surface mesh. Both a single-fidelity
//! and a two-fidelity (autoregressive) surrogate are provided.
//!
//! Module map:
//!
//! - [`mesh`]: simplicial meshes, I/O, synthetic geometry, nearest-node
//!   queries and decimation.
//! - [`fem`]: P1 stiffness/mass assembly and the truncated eigenbasis.
//! - [`eikonal`]: Fast Iterative Method solver for activation maps.
//! - [`ecg`]: action potential, lead fields, ECG synthesis and loss.
//! - [`gp`]: manifold Gaussian processes, single and multi-fidelity.
//! - [`bo`]: Bayesian optimization loops with LCB acquisition.
//! - [`experiment`]: configuration, artifacts and the experiment commands
//!   used by the CLI.

pub mod bo;
pub mod ecg;
pub mod eikonal;
mod error;
pub mod experiment;
pub mod fem;
pub mod gp;
pub mod mesh;
pub mod optim;

pub use error::{Error, Result};
pub use mesh::{NodeId, SimplicialMesh};
