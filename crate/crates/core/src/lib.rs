//! Reflection-positivity quantization of a lattice Gaussian Euclidean field.
//!
//! The crate discretizes space-time as a finite time interval times a spatial
//! torus, realizes the free field through its covariance `(-Δ + m²)⁻¹`, builds
//! the physical Hilbert space as the quotient of positive-time polynomial
//! vectors by the null space of the reflection-positive form, and then checks
//! numerically the hypotheses and conclusions that the quantized theory is
//! expected to satisfy: the transfer-matrix Hamiltonian and momentum, energy
//! bounds on the time-zero field, analyticity of heat-kernel regularized
//! fields, and density of vectors generated from a bounded region.
//!
//! Module map, in dependency order:
//!
//! * [`lattice`]: geometry, reflection, shifts, discrete Sobolev norms.
//! * [`gaussian`]: covariance, characteristic functional, Wick moments.
//! * [`rp_quantize`]: reflection-positive Gram, null-space quotient, quantization map.
//! * [`dynamics`]: transfer matrix, Hamiltonian, momentum, field operators.
//! * [`heatkernel`]: regularized fields, derivative bounds, complex-time continuation.
//! * [`density`]: region-generated spans, rank gaps and orthogonal witnesses.
//! * [`cli`]: configuration, orchestration and report emission.

pub mod cli;
pub mod density;
pub mod dynamics;
mod error;
pub mod gaussian;
pub mod heatkernel;
pub mod lattice;
pub mod linalg;
pub mod rp_quantize;

pub use error::{Error, Result};

/// Complex scalar used for all quotient-space matrices.
pub type C64 = nalgebra::Complex<f64>;
