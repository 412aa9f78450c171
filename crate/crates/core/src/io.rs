//! Little-endian binary formats.
//!
//! `SCUB v1` cube file:
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 0..4       | magic `53 43 55 42` ("SCUB")              |
//! | 4..16      | `m`, `n`, `l` as u32 LE                   |
//! | 16..       | `m·n·l` f32 LE voxels, band-major planar  |
//!
//! No padding, no footer.

use std::fs;
use std::path::Path;

use crate::cube::{Cube, SpectralCube};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: [u8; 4] = *b"SCUB";

/// Cursor over a byte buffer that reports offsets in its errors.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4, "magic")?;
        if got != magic {
            return Err(Error::format(0, format!("bad magic {got:02x?}, expected {magic:02x?}")));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads an f32 and rejects NaN/inf, naming its offset.
    pub(crate) fn finite_f32(&mut self, what: &str) -> Result<f32> {
        let at = self.pos;
        let b = self.bytes(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite {what}: {v}")));
        }
        Ok(v)
    }

    pub(crate) fn f32_vec(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        if self.remaining() < count * 4 {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {} bytes, {} left", count * 4, self.remaining()),
            ));
        }
        (0..count).map(|_| self.finite_f32(what)).collect()
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::dim(format!("{what} = {v} does not fit in u32")))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_cube(cube: &Cube) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * cube.len());
    out.extend_from_slice(&CUBE_MAGIC);
    put_u32(&mut out, dim_u32(cube.rows(), "m")?);
    put_u32(&mut out, dim_u32(cube.cols(), "n")?);
    put_u32(&mut out, dim_u32(cube.bands(), "l")?);
    for &v in cube.data() {
        put_f32(&mut out, v as f32);
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<SpectralCube> {
    let mut r = Reader::new(bytes);
    r.magic(&CUBE_MAGIC)?;
    let m = r.u32("m")? as usize;
    let n = r.u32("n")? as usize;
    let l = r.u32("l")? as usize;
    if m == 0 || n == 0 || l == 0 {
        return Err(Error::format(4, format!("zero dimension in header {m}x{n}x{l}")));
    }
    let count = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(l))
        .ok_or_else(|| Error::format(4, "header dims overflow"))?;
    let start = r.offset();
    let values = r.f32_vec(count, "voxel")?;
    r.finish()?;
    if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| **v < 0.0 || **v > 1.0) {
        return Err(Error::format(start + 4 * k, format!("voxel value {v} outside [0, 1]")));
    }
    SpectralCube::from_data(m, n, l, values.into_iter().map(f64::from).collect())
}

/// Reads a `SCUB v1` file.
pub fn load_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    decode_cube(&read_file(path.as_ref())?)
}

/// Writes a `SCUB v1` file. Values are narrowed to f32.
pub fn save_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_cube(cube)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(m: u32, n: u32, l: u32) -> Vec<u8> {
        let mut b = CUBE_MAGIC.to_vec();
        for v in [m, n, l] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn constant_payload_loads() {
        let mut b = header(4, 4, 3);
        for _ in 0..48 {
            b.extend_from_slice(&0.5f32.to_le_bytes());
        }
        let c = decode_cube(&b).unwrap();
        assert_eq!(c.dims(), (4, 4, 3));
        assert!(c.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let mut b = header(4, 4, 3);
        for _ in 0..47 {
            b.extend_from_slice(&0.5f32.to_le_bytes());
        }
        match decode_cube(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut b = header(1, 1, 1);
        b[0] = b'X';
        b.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(decode_cube(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn non_finite_names_offset() {
        let mut b = header(1, 1, 2);
        b.extend_from_slice(&0.25f32.to_le_bytes());
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        match decode_cube(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn negative_voxel_rejected() {
        let mut b = header(1, 1, 1);
        b.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert!(matches!(decode_cube(&b), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn minimal_cube_is_header_plus_one_float() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.scub");
        let c = SpectralCube::from_data(1, 1, 1, vec![0.0]).unwrap();
        save_cube(&c, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // 4 magic + 12 header + 4 payload
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], &[0x53, 0x43, 0x55, 0x42]);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let c = SpectralCube::from_data(1, 1, 1, vec![0.0]).unwrap();
        let err = save_cube(&c, "/nonexistent-dir/sub/x.scub").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
