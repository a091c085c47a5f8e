//! Numerical spectral toolkit for spike-layer concentration problems.
//!
//! The singularly perturbed Neumann problem `-eps^2 Δu + u = u^p` develops
//! solutions that concentrate, as `eps -> 0`, along low-dimensional sets with
//! a fixed transverse profile. This crate computes the desk-scale spectral
//! machinery behind that phenomenon:
//!
//! * [`ground_state`]: the radial transverse profile `w0` and the quadrature
//!   constants `C0`, `C1` derived from it.
//! * [`fiber_spectrum`]: the alpha-parametrized eigenvalue branches eta,
//!   sigma, tau of the linearization, the resonance threshold `alpha_bar`,
//!   and the Dirichlet-truncated variants.
//! * [`geometry`]: analytic spectra of model submanifolds (circle, flat
//!   torus), Weyl-law diagnostics, and inversion in the Jacobi eigenbasis.
//! * [`model_operator`]: assembly of the model linearized-operator spectrum
//!   at fixed eps, Morse-index asymptotics, resonance-gap statistics, the
//!   invertible-eps sweep, and eigenvalue flow in eps.
//! * [`corrector`]: the first-order corrector `w1` on a half-plane grid,
//!   metric/Laplacian expansion coefficients, and projection identities.
//!
//! Everything is deterministic given its inputs. The `parallel` feature
//! (default on) runs the embarrassingly parallel sweeps on a rayon pool; with
//! the feature off the same code paths run sequentially.

pub mod corrector;
pub mod fiber_spectrum;
pub mod geometry;
pub mod ground_state;
pub mod io;
pub mod linalg;
pub mod model_operator;
mod par;
pub mod quad;
