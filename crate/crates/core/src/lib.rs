//! Data-driven analysis and controller synthesis for discrete-time LPV
//! systems with affine scheduling dependence.


pub mod bench;
pub mod data;
pub mod ddrep;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod par;
pub mod synthesis;
pub mod system;
pub mod verify;

pub use error::{Error, Result};
