//! Coded-aperture design and ADMM-unrolled reconstruction for compressive
//! spectral image fusion of a CASSI arm and an MCFA arm.

pub mod admm;
pub mod cube;
pub mod design;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod phantom;

pub use cube::{Cube, GeometryConfig, SpectralCube};
pub use error::{Error, Result};
