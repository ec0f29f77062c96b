//! Numerical toolkit for a pair of weakly coupled oscillators, each near a
//! saddle-node-on-invariant-circle bifurcation, on the 2-torus.
//!
//! The crate provides:
//!
//! * torus/cover geometry and concrete vector-field families ([`geometry`],
//!   [`field`]);
//! * adaptive integration with dense output and section events
//!   ([`integrate`]);
//! * equilibrium finding and linear classification ([`equilibria`]);
//! * closed-form and numerically continued bifurcation curves of the reduced
//!   parameter plane ([`curves`]);
//! * homology directions, global cross-sections, rotation numbers and regime
//!   classification ([`rotation`]);
//! * the strip transit map and its closed-form approximation ([`transit`]);
//! * saddle separatrix tracing, heteroclinic detection, tartan and
//!   invariant-circle verification, and expansion-cone checks
//!   ([`separatrix`]);
//! * attractor classification and parameter-plane scan/render engines
//!   ([`attractor`], [`scan`], [`render`]).

pub mod attractor;
pub mod curves;
pub mod equilibria;
pub mod field;
pub mod geometry;
pub mod integrate;
pub mod io;
pub mod render;
pub mod rotation;
pub mod scan;
pub mod separatrix;
pub mod transit;

pub use field::FieldSpec;
pub use geometry::{CoverPoint, TorusGeometry};
