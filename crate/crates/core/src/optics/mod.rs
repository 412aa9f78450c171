//! Optical layers: coded apertures, dispersion, sensing operators and noise.

pub mod aperture;
pub mod dispersion;
pub mod measurement;
pub mod noise;
pub mod operator;

pub use aperture::{realize_aperture, sigmoid, Activation, ApertureWeights, Arm};
pub use dispersion::{DispersionConfig, DispersionModel};
pub use measurement::Measurement;
pub use noise::{add_awgn, stream_seed, NoiseConfig, Snr};
pub use operator::{constant_operator, FusionOperator};
