#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specfuse_core::optics::{Activation, ApertureWeights, Arm, DispersionModel, FusionOperator, Measurement};
use specfuse_core::{Cube, GeometryConfig};

pub fn random_cube(dims: (usize, usize, usize), seed: u64, lo: f64, hi: f64) -> Cube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Cube::from_fn(dims.0, dims.1, dims.2, |_, _, _| rng.random_range(lo..hi))
}

pub fn random_operator(dims: (usize, usize, usize), d_s: usize, d_lambda: usize, gamma: f64, dispersion: bool, seed: u64) -> FusionOperator {
    let (m, n, l) = dims;
    let geometry = GeometryConfig::new(d_s, d_lambda).unwrap();
    let cassi = ApertureWeights::random(Arm::Cassi, m / d_s, n / d_s, 1, 1.0, gamma, Activation::Sigmoid, seed).unwrap();
    let mcfa = ApertureWeights::random(Arm::Mcfa, m, n, l / d_lambda, 1.0, gamma, Activation::Sigmoid, seed + 1).unwrap();
    let disp = if dispersion { DispersionModel::default_for(l) } else { DispersionModel::Disabled };
    FusionOperator::new(dims, geometry, cassi, mcfa, disp, false).unwrap()
}

/// Columns are images of the standard basis.
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn assemble(cols: usize, rows: usize, mut apply: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let mut a = vec![0.0; rows * cols];
        let mut e = vec![0.0; cols];
        for j in 0..cols {
            e[j] = 1.0;
            let col = apply(&e);
            assert_eq!(col.len(), rows);
            for i in 0..rows {
                a[i * cols + j] = col[i];
            }
            e[j] = 0.0;
        }
        Self { rows, cols, a }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.a[i * self.cols + j] * x[j]).sum()).collect()
    }

    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.a[i * self.cols + j] * y[i]).sum()).collect()
    }
}

pub fn dense_cassi(op: &FusionOperator) -> Dense {
    let (m, n, l) = op.cube_dims();
    let (r, c) = op.cassi_shape();
    Dense::assemble(m * n * l, r * c, |x| op.cassi_forward(&Cube::new(m, n, l, x.to_vec()).unwrap()).unwrap().data().to_vec())
}

pub fn dense_mcfa(op: &FusionOperator) -> Dense {
    let (m, n, l) = op.cube_dims();
    let (r, c) = op.mcfa_shape();
    Dense::assemble(m * n * l, r * c, |x| op.mcfa_forward(&Cube::new(m, n, l, x.to_vec()).unwrap()).unwrap().data().to_vec())
}

pub fn random_measurement(arm: Arm, shape: (usize, usize), seed: u64) -> Measurement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Measurement::new(arm, shape.0, shape.1, (0..shape.0 * shape.1).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error with an absolute floor for near-zero components.
pub fn rel_err(fd: f64, an: f64, floor: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(floor)
}
