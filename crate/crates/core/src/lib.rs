//! Guiding-center reduction of charged-particle dynamics in strong magnetic
//! fields: usual and canonical full-orbit models, cylindrical velocity
//! coordinates, a Darboux chart built by characteristics, a first-order Lie
//! transform, and the reduced guiding-center system.

pub mod ad;
pub mod cylindrical;
pub mod darboux;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod lie;
pub mod linalg;
pub mod poisson;
pub mod quadrature;
pub mod reduced;
pub mod scenario;

pub use error::{Error, Result};
