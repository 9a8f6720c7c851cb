//! Simulation and linear stability analysis of the two-phase Stefan problem with surface
//! tension near a steady circle inside a disk container.
//!
//! Modules build on each other in the order
//! [`spectral`] → [`geometry`] → [`pullback`] / [`heat`] → [`stefan`] → [`eigen`].

// `!(x > 0.0)` guards deliberately reject NaN; indexed loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod eigen;
pub mod error;
pub mod geometry;
pub mod heat;
pub mod pullback;
pub mod spectral;
pub mod stefan;
pub mod verify;

pub use error::{Result, StefanError};
