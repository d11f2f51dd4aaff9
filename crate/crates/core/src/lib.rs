//! Fine-grained Kubo–Martin–Schwinger (KMS) diagnostics for SU(2)-symmetric
//! qubit rings.
//!
//! The crate is organised bottom-up:
//!
//! * [`su2`]: half-integer quantum numbers, Clebsch–Gordan coefficients and
//!   the ratio functions used to move correlators between `(m, q)` labels.
//! * [`spin_system`]: fixed-magnetization bases and operator builders for the
//!   nearest/next-nearest-neighbour Heisenberg ring.
//! * [`spectral`]: dense sector diagonalization with sharp spin labels,
//!   eigenstate selection and the on-disk eigensystem cache.
//! * [`tensor_ops`]: spherical tensor operators, ladder commutators and
//!   Wigner–Eckart reduced elements.
//! * [`correlators`]: fine-grained correlators in eigenstates and in the
//!   modified non-Abelian thermal state, log-ratios and finite-size
//!   diagnostics.
//! * [`thermo`]: closed-form thermodynamics of the modified non-Abelian
//!   thermal state and the anomalous-scaling functions.

pub mod correlators;
pub mod math;
pub mod spectral;
pub mod spin_system;
pub mod su2;
pub mod tensor_ops;
pub mod thermo;

mod error;

pub use error::Error;
pub use su2::HalfInt;

pub type Result<T, E = Error> = std::result::Result<T, E>;
