//! Quantitative photoacoustic tomography with multiple illuminations:
//! a discrete radiative transfer / acoustic forward model and
//! reconstruction algorithms that either solve the transport equation at
//! every step or treat it as a penalty.

pub mod acoustic;
pub mod counters;
pub mod error;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod optim_mull;
pub mod optim_standard;
pub mod regularizers;
pub mod rte;
pub mod scattering;
pub mod trace;

pub use error::{QpatError, Result};
