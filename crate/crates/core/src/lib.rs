//! Symplectic multiscale integration for Hamiltonian systems whose stiff
//! potential is quadratic in the fast variables with a stiffness matrix that
//! varies slowly with the slow variables:
//!
//! ```text
//! H(q, p) = ½|p|² + V(q) + (1/2ε) q_fastᵀ K(q_slow) q_fast
//! ```
//!
//! One coarse step composes a slow drift/kick with the exact (or
//! symplectically approximated) fast flow. The fast flow and the induced
//! slow-momentum drift are encoded by the blocks `(F₂, G₂,ᵢ, F₃)` of a block
//! upper-triangular matrix exponential, computed here by symplectic
//! scaling-and-squaring of a velocity-Verlet seed ([`expm`]) or by iterative
//! low-rank updates of the previous step's seed ([`iterative`]).
//!
//! Crate layout:
//!
//! - [`phase`]: states, systems, the canonical symplectic form, energy.
//! - [`expm`]: Verlet seed and block squaring.
//! - [`iterative`]: slowly-varying exponential updates and derivative machinery.
//! - [`oracles`]: diagonalization, Taylor squaring, closed-form 1-D flow, fine Verlet.
//! - [`integrator`]: the coarse-step composition, backends, trajectories.
//! - [`diagnostics`]: residuals, Jacobians, invariants, convergence and resonance studies.
//! - [`scenarios`]: the benchmark Hamiltonians.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod diagnostics;
pub mod error;
pub mod expm;
pub mod integrator;
pub mod iterative;
pub mod linalg;
pub mod oracles;
pub mod phase;
pub mod scenarios;

pub use error::{Error, Result};
pub use expm::{
    square_triple, symplectic_expm, verlet_seed, BlockGenerator, ExpTriple, VerletSeed,
};
pub use integrator::{simulate, step, Backend, Stepper, StepperConfig, Trajectory};
pub use phase::{energy, PhaseState, QuasiQuadraticSystem, Stiffness, SymplecticForm};
pub use scenarios::{Scenario, ScenarioKind};
