//! Spectral cube storage and the fixed sum-decimation operators.
//!
//! Voxels are stored band-major planar: all pixels of band 0 (row-major),
//! then band 1, and so on. Every operator in the crate uses this order.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real M×N×L array in band-major planar order.
///
/// This is the working type for estimates, duals and gradients, so values
/// may be negative. [`SpectralCube`] adds the radiance invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
}

impl Cube {
    pub fn new(rows: usize, cols: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::dim(format!("cube dims must be >= 1, got {rows}x{cols}x{bands}")));
        }
        if data.len() != rows * cols * bands {
            return Err(Error::dim(format!(
                "cube {rows}x{cols}x{bands} needs {} values, got {}",
                rows * cols * bands,
                data.len()
            )));
        }
        Ok(Self { rows, cols, bands, data })
    }

    pub fn zeros(rows: usize, cols: usize, bands: usize) -> Self {
        Self::filled(rows, cols, bands, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, bands: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0 && bands > 0, "cube dims must be >= 1");
        Self { rows, cols, bands, data: vec![value; rows * cols * bands] }
    }

    pub fn zeros_like(other: &Cube) -> Self {
        Self::zeros(other.rows, other.cols, other.bands)
    }

    pub fn from_fn(rows: usize, cols: usize, bands: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut cube = Self::zeros(rows, cols, bands);
        for b in 0..bands {
            for i in 0..rows {
                for j in 0..cols {
                    let k = cube.index(i, j, b);
                    cube.data[k] = f(i, j, b);
                }
            }
        }
        cube
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn bands(&self) -> usize {
        self.bands
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols && band < self.bands);
        band * self.rows * self.cols + row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[self.index(row, col, band)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: f64) {
        let k = self.index(row, col, band);
        self.data[k] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let p = self.plane();
        &self.data[band * p..(band + 1) * p]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[band * p..(band + 1) * p]
    }

    /// Spectral signature of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(row, col, b)).collect()
    }

    pub fn same_shape(&self, other: &Cube) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &Cube, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Cube) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Cube {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Cube) {
        debug_assert!(self.same_shape(x));
        self.data.iter_mut().zip(&x.data).for_each(|(s, v)| *s += a * v);
    }

    pub fn add(&self, other: &Cube) -> Cube {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Cube) -> Cube {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Cube {
        Cube { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn max_abs_diff(&self, other: &Cube) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A cube that satisfies the radiance invariants: finite, in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube(Cube);

impl SpectralCube {
    pub fn new(cube: Cube) -> Result<Self> {
        if let Some((k, v)) = cube.data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidValue(format!("voxel {k} = {v} is outside [0, 1]")));
        }
        Ok(Self(cube))
    }

    pub fn from_data(rows: usize, cols: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Cube::new(rows, cols, bands, data)?)
    }

    /// Clamps to `[0, 1]` and replaces non-finite values with zero.
    pub fn clamped(cube: &Cube) -> Self {
        Self(cube.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }))
    }

    pub fn cube(&self) -> &Cube {
        &self.0
    }

    pub fn into_inner(self) -> Cube {
        self.0
    }
}

impl Deref for SpectralCube {
    type Target = Cube;

    fn deref(&self) -> &Cube {
        &self.0
    }
}

impl AsRef<Cube> for SpectralCube {
    fn as_ref(&self) -> &Cube {
        &self.0
    }
}

/// Integer up-scaling factors between the target cube and each arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub d_s: usize,
    pub d_lambda: usize,
}

impl GeometryConfig {
    pub fn new(d_s: usize, d_lambda: usize) -> Result<Self> {
        let g = Self { d_s, d_lambda };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_lambda == 0 {
            return Err(Error::Config(format!(
                "decimation factors must be >= 1, got d_s={} d_lambda={}",
                self.d_s, self.d_lambda
            )));
        }
        Ok(())
    }

    /// Checks divisibility against cube dims `(rows, cols, bands)`.
    pub fn check_dims(&self, rows: usize, cols: usize, bands: usize) -> Result<()> {
        self.validate()?;
        if rows % self.d_s != 0 || cols % self.d_s != 0 {
            return Err(Error::dim(format!("d_s={} does not divide {rows}x{cols}", self.d_s)));
        }
        if bands % self.d_lambda != 0 {
            return Err(Error::dim(format!("d_lambda={} does not divide {bands} bands", self.d_lambda)));
        }
        Ok(())
    }
}

/// Which decimator an adjoint call refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decimation {
    Spatial(usize),
    Spectral(usize),
}

fn check_spatial(cube: &Cube, d_s: usize) -> Result<()> {
    if d_s == 0 || cube.rows % d_s != 0 || cube.cols % d_s != 0 {
        return Err(Error::dim(format!("d_s={d_s} does not divide {}x{}", cube.rows, cube.cols)));
    }
    Ok(())
}

fn check_spectral(cube: &Cube, d_lambda: usize) -> Result<()> {
    if d_lambda == 0 || cube.bands % d_lambda != 0 {
        return Err(Error::dim(format!("d_lambda={d_lambda} does not divide {} bands", cube.bands)));
    }
    Ok(())
}

/// Block-sum over `d_s × d_s` spatial blocks.
pub fn spatial_decimate(cube: &Cube, d_s: usize) -> Result<Cube> {
    check_spatial(cube, d_s)?;
    let (rows, cols) = (cube.rows / d_s, cube.cols / d_s);
    let mut out = Cube::zeros(rows, cols, cube.bands);
    for b in 0..cube.bands {
        for i in 0..cube.rows {
            for j in 0..cube.cols {
                let k = out.index(i / d_s, j / d_s, b);
                out.data[k] += cube.get(i, j, b);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`spatial_decimate`]: replicate each voxel into its block.
pub fn spatial_decimate_adjoint(cube: &Cube, d_s: usize) -> Result<Cube> {
    if d_s == 0 {
        return Err(Error::dim("d_s must be >= 1"));
    }
    Ok(Cube::from_fn(cube.rows * d_s, cube.cols * d_s, cube.bands, |i, j, b| cube.get(i / d_s, j / d_s, b)))
}

/// Sum of each run of `d_lambda` consecutive bands.
pub fn spectral_decimate(cube: &Cube, d_lambda: usize) -> Result<Cube> {
    check_spectral(cube, d_lambda)?;
    let mut out = Cube::zeros(cube.rows, cube.cols, cube.bands / d_lambda);
    let p = cube.plane();
    for b in 0..cube.bands {
        let dst = &mut out.data[(b / d_lambda) * p..(b / d_lambda + 1) * p];
        for (d, s) in dst.iter_mut().zip(cube.band(b)) {
            *d += s;
        }
    }
    Ok(out)
}

/// Adjoint of [`spectral_decimate`]: copy each reduced band into its group.
pub fn spectral_decimate_adjoint(cube: &Cube, d_lambda: usize) -> Result<Cube> {
    if d_lambda == 0 {
        return Err(Error::dim("d_lambda must be >= 1"));
    }
    let mut out = Cube::zeros(cube.rows, cube.cols, cube.bands * d_lambda);
    for b in 0..out.bands {
        out.band_mut(b).copy_from_slice(cube.band(b / d_lambda));
    }
    Ok(out)
}

pub fn decimate_adjoint(cube: &Cube, which: Decimation) -> Result<Cube> {
    match which {
        Decimation::Spatial(d) => spatial_decimate_adjoint(cube, d),
        Decimation::Spectral(d) => spectral_decimate_adjoint(cube, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(rng: &mut ChaCha8Rng, r: usize, c: usize, b: usize) -> Cube {
        Cube::from_fn(r, c, b, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn band_major_layout() {
        let c = Cube::from_fn(2, 3, 2, |i, j, b| (100 * b + 10 * i + j) as f64);
        assert_eq!(c.data()[..6], [0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(c.data()[6], 100.0);
    }

    #[test]
    fn spatial_decimate_hand_sum() {
        let c = Cube::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = spatial_decimate(&c, 2).unwrap();
        assert_eq!(d.dims(), (1, 1, 1));
        assert_eq!(d.data(), &[10.0]);
    }

    #[test]
    fn spectral_decimate_hand_sum() {
        let c = Cube::new(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = spectral_decimate(&c, 2).unwrap();
        assert_eq!(d.data(), &[3.0, 7.0]);
    }

    #[test]
    fn unit_factors_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cube(&mut rng, 4, 6, 3);
        assert_eq!(spatial_decimate(&c, 1).unwrap(), c);
        assert_eq!(spectral_decimate(&c, 1).unwrap(), c);
        assert_eq!(decimate_adjoint(&c, Decimation::Spatial(1)).unwrap(), c);
        assert_eq!(decimate_adjoint(&c, Decimation::Spectral(1)).unwrap(), c);
    }

    #[test]
    fn spatial_adjoint_replicates() {
        let c = Cube::new(1, 1, 1, vec![5.0]).unwrap();
        let up = spatial_decimate_adjoint(&c, 2).unwrap();
        assert_eq!(up.dims(), (2, 2, 1));
        assert!(up.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn non_divisible_dims_rejected() {
        let c = Cube::zeros(3, 4, 3);
        assert!(matches!(spatial_decimate(&c, 2), Err(Error::Dimension(_))));
        assert!(matches!(spectral_decimate(&c, 2), Err(Error::Dimension(_))));
        assert!(GeometryConfig::new(2, 2).unwrap().check_dims(4, 4, 3).is_err());
        assert!(GeometryConfig::new(0, 1).is_err());
    }

    #[test]
    fn decimation_conserves_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cube(&mut rng, 8, 8, 4);
        let s = c.sum();
        assert!((spatial_decimate(&c, 4).unwrap().sum() - s).abs() < 1e-12);
        assert!((spectral_decimate(&c, 2).unwrap().sum() - s).abs() < 1e-12);
    }

    #[test]
    fn adjoint_dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_cube(&mut rng, 8, 4, 6);
            let ys = random_cube(&mut rng, 4, 2, 6);
            let lhs = spatial_decimate(&x, 2).unwrap().dot(&ys);
            let rhs = x.dot(&spatial_decimate_adjoint(&ys, 2).unwrap());
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1e-12));

            let yl = random_cube(&mut rng, 8, 4, 2);
            let lhs = spectral_decimate(&x, 3).unwrap().dot(&yl);
            let rhs = x.dot(&spectral_decimate_adjoint(&yl, 3).unwrap());
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()).max(1e-12));
        }
    }

    #[test]
    fn spectral_cube_rejects_out_of_range() {
        assert!(SpectralCube::from_data(1, 1, 2, vec![0.5, -0.1]).is_err());
        assert!(SpectralCube::from_data(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(SpectralCube::from_data(1, 1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(SpectralCube::from_data(1, 1, 2, vec![0.0, 1.0]).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn decimators_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_cube(&mut rng, 4, 4, 4);
            let y = random_cube(&mut rng, 4, 4, 4);
            let mut comb = x.scaled(a);
            comb.axpy(b, &y);
            for op in [
                |c: &Cube| spatial_decimate(c, 2).unwrap(),
                |c: &Cube| spectral_decimate(c, 2).unwrap(),
            ] {
                let lhs = op(&comb);
                let mut rhs = op(&x).scaled(a);
                rhs.axpy(b, &op(&y));
                let scale = lhs.norm().max(1.0);
                proptest::prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6 * scale);
            }
        }
    }
}
