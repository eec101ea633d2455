//! Solver library for time-harmonic scalar wave fields at the junction of two
//! semi-infinite open dielectric waveguides.
//!
//! The plane is split at the line x₁ = 0 into two half-planes, each filled with
//! a bi-infinite waveguide described by a compactly supported transverse
//! potential q(x₂). The transmission problem across the interface is reduced to
//! a second-kind system of boundary integral equations for a pair of densities
//! (σ, τ) living on the interface. Because the physical densities decay only
//! algebraically along the real line, the interface is complexified: the
//! equations are solved on a totally real contour t + iψ(t) on which outgoing
//! kernels, data, and densities all decay exponentially, so the contour can be
//! truncated with an error that decays exponentially in the truncation depth.
//!
//! Module map:
//! - [`geometry`] — potentials, admissible contours, truncation, panels
//! - [`specfun`] — α*(ξ) dispersion branch, outgoing Hankel functions, complex
//!   distance, error function
//! - [`modes`] — transverse eigenproblem: guided-mode frequencies and profiles
//! - [`greens`] — bi-infinite waveguide Green's function G = G₀ + w via Fourier
//!   synthesis of cached transverse resolvents
//! - [`kernels`] — interface difference kernels k_D, k_C on the complexified
//!   contour with far-field asymptotics diagnostics
//! - [`bie`] — Nyström assembly, dense solve, density extension
//! - [`potentials`] — incident fields, boundary data, layer potentials, total
//!   fields
//! - [`quad`], [`jet`], [`linalg`] — shared numerical machinery

pub mod bie;
pub mod geometry;
pub mod greens;
pub mod jet;
pub mod kernels;
pub mod linalg;
pub mod modes;
pub mod potentials;
pub mod quad;
pub mod specfun;

pub use num_complex::Complex64 as C64;

/// Convenience constructor for `Complex64`.
#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
