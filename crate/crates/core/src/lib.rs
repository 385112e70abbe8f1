//! Simulator and verification laboratory for a qubus-mediated two-qubit
//! phase gate built from conditional rotations and unconditional
//! displacements of a continuous-variable bus mode.
//!
//! Two independent backends cover every construction:
//!
//! - an exact backend ([`phase_space`], [`hybrid`]) that tracks the closed
//!   normal-form algebra `e^{iφ} D(β) R(θ)` of all gate primitives, and
//! - a truncated Fock-space backend ([`fock`]) that builds dense matrices
//!   for the same primitives by exponentiating their generators, serving
//!   as a brute-force numerical oracle.
//!
//! [`gate`] assembles the gate sequences themselves (four conditional
//! displacements, their simulation by conditional rotations, classical
//! drive pulses and a solved eight-pulse schedule), and [`loss`] adds the
//! beam-splitter photon-loss channel plus the quantitative gate metrics.

pub mod density;
pub mod fock;
pub mod gate;
pub mod hybrid;
pub mod loss;
pub mod phase_space;

pub use density::QubitDensityMatrix;
pub use gate::{GateParams, GateSequence, Primitive, TwoQubitTarget};
pub use hybrid::{Bitstring, ConditionalBusOp, HybridState};
pub use phase_space::{BusOp, CoherentBranch, PhaseSpacePath};
