//! Detector images.
//!
//! `SMEA v1` file: magic "SMEA", one arm byte (0 = CASSI, 1 = MCFA), rows and
//! cols as u32 LE, then `rows·cols` f32 LE values row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{dim_u32, put_f32, put_u32, read_file, write_file, Reader};
use crate::optics::aperture::Arm;

pub const MEASUREMENT_MAGIC: [u8; 4] = *b"SMEA";

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    rows: usize,
    cols: usize,
    arm: Arm,
    data: Vec<f64>,
}

impl Measurement {
    pub fn new(arm: Arm, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!("measurement {rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, arm, data })
    }

    pub fn zeros(arm: Arm, rows: usize, cols: usize) -> Self {
        Self { rows, cols, arm, data: vec![0.0; rows * cols] }
    }

    pub fn zeros_like(other: &Measurement) -> Self {
        Self::zeros(other.arm, other.rows, other.cols)
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn same_shape(&self, other: &Measurement) -> bool {
        self.arm == other.arm && self.shape() == other.shape()
    }

    pub fn dot(&self, other: &Measurement) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Measurement) {
        debug_assert!(self.same_shape(x));
        self.data.iter_mut().zip(&x.data).for_each(|(s, v)| *s += a * v);
    }

    pub fn sub(&self, other: &Measurement) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(13 + 4 * self.data.len());
        out.extend_from_slice(&MEASUREMENT_MAGIC);
        out.push(self.arm.tag());
        put_u32(&mut out, dim_u32(self.rows, "rows")?);
        put_u32(&mut out, dim_u32(self.cols, "cols")?);
        for &v in &self.data {
            put_f32(&mut out, v as f32);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(&MEASUREMENT_MAGIC)?;
        let tag = r.u8("arm tag")?;
        let arm = Arm::from_tag(tag).ok_or_else(|| Error::format(4, format!("unknown arm tag {tag}")))?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::format(5, "header dims overflow"))?;
        let data = r.f32_vec(count, "value")?.into_iter().map(f64::from).collect();
        r.finish()?;
        Self::new(arm, rows, cols, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smea_round_trip() {
        let m = Measurement::new(Arm::Cassi, 2, 3, vec![0.0, 1.5, -2.0, 3.25, 4.0, 0.125]).unwrap();
        let bytes = m.encode().unwrap();
        assert_eq!(bytes.len(), 13 + 24);
        assert_eq!(Measurement::decode(&bytes).unwrap(), m);
        assert!(Measurement::decode(&bytes[..20]).is_err());
    }

    #[test]
    fn shape_checked() {
        assert!(Measurement::new(Arm::Mcfa, 2, 2, vec![0.0; 3]).is_err());
    }
}
