//! Fixtures shared by the benchmarks.

use specfuse_core::admm::{ConvDenoiser, ProximalSpec, StageParams};
use specfuse_core::cube::GeometryConfig;
use specfuse_core::design::Model;
use specfuse_core::optics::{Activation, ApertureWeights, Arm, DispersionModel, FusionOperator};
use specfuse_core::phantom::{make_phantom, PhantomKind};
use specfuse_core::{Cube, SpectralCube};

/// Operator with random sigmoid apertures over an `m × m × l` cube, d_s = d_λ = 2.
pub fn operator(m: usize, l: usize, seed: u64) -> FusionOperator {
    let g = GeometryConfig::new(2, 2).unwrap();
    let cassi = ApertureWeights::random(Arm::Cassi, m / 2, m / 2, 1, 1.0, 10.0, Activation::Sigmoid, seed).unwrap();
    let mcfa = ApertureWeights::random(Arm::Mcfa, m, m, l / 2, 1.0, 10.0, Activation::Sigmoid, seed + 1).unwrap();
    FusionOperator::new((m, m, l), g, cassi, mcfa, DispersionModel::default_for(l), false).unwrap()
}

pub fn phantom(m: usize, l: usize, seed: u64) -> SpectralCube {
    make_phantom(PhantomKind::RandomSmooth, m, m, l, seed).unwrap()
}

pub fn denoiser(l: usize, hidden: usize, seed: u64) -> ConvDenoiser {
    ConvDenoiser::new_random(l, hidden, seed).unwrap()
}

pub fn model(m: usize, l: usize, stages: usize, hidden: usize) -> Model {
    let stages = (0..stages)
        .map(|k| StageParams::initial(ProximalSpec::ConvDenoiser(denoiser(l, hidden, 100 + k as u64))).unwrap())
        .collect();
    Model::new(operator(m, l, 1), stages).unwrap()
}

pub fn cube(m: usize, l: usize, seed: u64) -> Cube {
    phantom(m, l, seed).into_inner()
}
