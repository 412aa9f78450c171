//! High-order dispersion: each sheared voxel spreads over up to three
//! neighboring detector columns with simplex weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum DispersionModel {
    /// Pure shear: each voxel lands on a single column.
    Disabled,
    /// One weight triple per band.
    PerBand(Vec<[f64; 3]>),
    /// One weight triple per decimated source voxel `(row, col, band)`,
    /// band-major planar.
    PerVoxel {
        rows: usize,
        cols: usize,
        bands: usize,
        q: Vec<[f64; 3]>,
    },
}

fn check_simplex(q: &[f64; 3], at: usize) -> Result<()> {
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) || (q.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidValue(format!("dispersion weights {q:?} at entry {at} are not on the simplex")));
    }
    Ok(())
}

impl DispersionModel {
    pub fn default_for(bands: usize) -> Self {
        DispersionModel::PerBand(vec![DEFAULT_TAPS; bands])
    }

    pub fn per_band(q: Vec<[f64; 3]>) -> Result<Self> {
        for (k, t) in q.iter().enumerate() {
            check_simplex(t, k)?;
        }
        Ok(DispersionModel::PerBand(q))
    }

    pub fn per_voxel(rows: usize, cols: usize, bands: usize, q: Vec<[f64; 3]>) -> Result<Self> {
        if q.len() != rows * cols * bands {
            return Err(Error::dim(format!("per-voxel dispersion needs {} entries, got {}", rows * cols * bands, q.len())));
        }
        for (k, t) in q.iter().enumerate() {
            check_simplex(t, k)?;
        }
        Ok(DispersionModel::PerVoxel { rows, cols, bands, q })
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self, DispersionModel::Disabled)
    }

    /// Checks the table against the decimated cube dims.
    pub fn check_dims(&self, rows: usize, cols: usize, bands: usize) -> Result<()> {
        match self {
            DispersionModel::Disabled => Ok(()),
            DispersionModel::PerBand(q) if q.len() == bands => Ok(()),
            DispersionModel::PerBand(q) => Err(Error::dim(format!("dispersion table has {} bands, cube has {bands}", q.len()))),
            DispersionModel::PerVoxel { rows: r, cols: c, bands: b, .. } if (*r, *c, *b) == (rows, cols, bands) => Ok(()),
            DispersionModel::PerVoxel { rows: r, cols: c, bands: b, .. } => Err(Error::dim(format!(
                "dispersion table is {r}x{c}x{b}, decimated cube is {rows}x{cols}x{bands}"
            ))),
        }
    }

    /// Weights for the source voxel `(row, col, band)` of the decimated cube.
    #[inline]
    pub fn taps(&self, row: usize, col: usize, band: usize) -> [f64; 3] {
        match self {
            DispersionModel::Disabled => [1.0, 0.0, 0.0],
            DispersionModel::PerBand(q) => q[band],
            DispersionModel::PerVoxel { rows, cols, q, .. } => q[band * rows * cols + row * cols + col],
        }
    }

    /// Number of columns a voxel can reach.
    pub fn spread(&self) -> usize {
        if self.is_enabled() {
            3
        } else {
            1
        }
    }
}

/// Serializable form used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub enabled: bool,
    /// Per-band triples; `None` means [`DEFAULT_TAPS`] for every band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_band: Option<Vec<[f64; 3]>>,
    /// Full per-voxel table over the decimated cube, band-major planar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_voxel: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub truncate_detector: bool,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self { enabled: true, per_band: None, per_voxel: None, truncate_detector: false }
    }
}

impl DispersionConfig {
    pub fn build(&self, rows: usize, cols: usize, bands: usize) -> Result<DispersionModel> {
        if !self.enabled {
            return Ok(DispersionModel::Disabled);
        }
        match (&self.per_band, &self.per_voxel) {
            (Some(_), Some(_)) => Err(Error::Config("dispersion: give per_band or per_voxel, not both".into())),
            (Some(q), None) => {
                let m = DispersionModel::per_band(q.clone())?;
                m.check_dims(rows, cols, bands)?;
                Ok(m)
            }
            (None, Some(q)) => DispersionModel::per_voxel(rows, cols, bands, q.clone()),
            (None, None) => Ok(DispersionModel::default_for(bands)),
        }
    }
}
