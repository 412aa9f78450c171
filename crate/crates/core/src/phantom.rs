//! Synthetic scenes with known ground truth, and dataset splitting.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{Cube, SpectralCube};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhantomKind {
    #[serde(rename = "gradient")]
    Gradient,
    #[serde(rename = "checker-spectra")]
    CheckerSpectra,
    #[serde(rename = "random-smooth")]
    RandomSmooth,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "checker-spectra" => Ok(Self::CheckerSpectra),
            "random-smooth" => Ok(Self::RandomSmooth),
            other => Err(Error::Config(format!("unknown phantom kind `{other}`"))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gradient => "gradient",
            Self::CheckerSpectra => "checker-spectra",
            Self::RandomSmooth => "random-smooth",
        })
    }
}

/// The two signatures used by the checker phantom, sampled at band centers.
pub fn checker_signatures(bands: usize) -> (Vec<f64>, Vec<f64>) {
    let x = |b: usize| (b as f64 + 0.5) / bands as f64;
    let a = (0..bands).map(|b| 0.15 + 0.7 * x(b) * x(b)).collect();
    let c = (0..bands).map(|b| 0.85 - 0.5 * x(b)).collect();
    (a, c)
}

pub fn make_phantom(kind: PhantomKind, rows: usize, cols: usize, bands: usize, seed: u64) -> Result<SpectralCube> {
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(Error::dim(format!("phantom dims must be >= 1, got {rows}x{cols}x{bands}")));
    }
    let cube = match kind {
        PhantomKind::Gradient => {
            let denom = (rows + cols + bands) as f64 - 3.0;
            Cube::from_fn(rows, cols, bands, |i, j, b| if denom > 0.0 { (i + j + b) as f64 / denom } else { 0.0 })
        }
        PhantomKind::CheckerSpectra => {
            let (sa, sb) = checker_signatures(bands);
            let block = (rows.min(cols) / 4).max(1);
            let flip = seed % 2 == 1;
            Cube::from_fn(rows, cols, bands, |i, j, b| {
                let odd = ((i / block) + (j / block)) % 2 == 1;
                if odd ^ flip {
                    sb[b]
                } else {
                    sa[b]
                }
            })
        }
        PhantomKind::RandomSmooth => random_smooth(rows, cols, bands, seed),
    };
    SpectralCube::new(cube)
}

/// Gaussian blobs, each carrying a smooth spectrum, over a smooth background.
fn random_smooth(rows: usize, cols: usize, bands: usize, seed: u64) -> Cube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = |b: usize| (b as f64 + 0.5) / bands as f64;
    let spectrum = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let center: f64 = rng.random_range(0.0..1.0);
        let width: f64 = rng.random_range(0.25..0.8);
        let tilt: f64 = rng.random_range(-0.3..0.3);
        (0..bands)
            .map(|b| {
                let t = (x(b) - center) / width;
                (0.3 + 0.7 * (-t * t).exp() + tilt * (x(b) - 0.5)).max(0.05)
            })
            .collect()
    };

    let bg_level: f64 = rng.random_range(0.05..0.2);
    let bg = spectrum(&mut rng);
    let bg_slope: (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));

    let n_blobs = rng.random_range(3..=5);
    let blobs: Vec<_> = (0..n_blobs)
        .map(|_| {
            let ci = rng.random_range(0.0..rows as f64);
            let cj = rng.random_range(0.0..cols as f64);
            let s = rng.random_range(0.12..0.3) * rows.max(cols) as f64;
            let amp: f64 = rng.random_range(0.4..1.0);
            (ci, cj, s.max(0.5), amp, spectrum(&mut rng))
        })
        .collect();

    let mut cube = Cube::from_fn(rows, cols, bands, |i, j, b| {
        let (u, v) = (i as f64 / rows as f64 - 0.5, j as f64 / cols as f64 - 0.5);
        let mut val = bg_level * bg[b] * (1.0 + bg_slope.0 * u + bg_slope.1 * v);
        for (ci, cj, s, amp, spec) in &blobs {
            let d2 = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / (2.0 * s * s);
            val += amp * spec[b] * (-d2).exp();
        }
        val.max(0.0)
    });
    let peak = cube.data().iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        cube.scale(0.95 / peak);
    }
    cube
}

/// Disjoint train/validation/test identifier lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Shuffles `ids` with `seed` and cuts it into three consecutive parts;
    /// the test part takes whatever is left.
    pub fn new(ids: &[String], n_train: usize, n_validation: usize, seed: u64) -> Result<Self> {
        if n_train + n_validation > ids.len() {
            return Err(Error::Config(format!(
                "split asks for {n_train}+{n_validation} items from a set of {}",
                ids.len()
            )));
        }
        let unique: HashSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Config("duplicate identifiers in dataset".into()));
        }
        let mut shuffled = ids.to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = shuffled.split_off(n_train + n_validation);
        let validation = shuffled.split_off(n_train);
        Ok(Self { train: shuffled, validation, test })
    }

    /// Split with no shuffling.
    pub fn ordered(ids: &[String], n_train: usize, n_validation: usize) -> Result<Self> {
        if n_train + n_validation > ids.len() {
            return Err(Error::Config(format!(
                "split asks for {n_train}+{n_validation} items from a set of {}",
                ids.len()
            )));
        }
        Ok(Self {
            train: ids[..n_train].to_vec(),
            validation: ids[n_train..n_train + n_validation].to_vec(),
            test: ids[n_train + n_validation..].to_vec(),
        })
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train.iter().chain(&self.validation).chain(&self.test).all(|id| seen.insert(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_closed_form() {
        for seed in [0, 7, 99] {
            let c = make_phantom(PhantomKind::Gradient, 4, 4, 2, seed).unwrap();
            for b in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        let expected = (i + j + b) as f64 / 7.0;
                        assert!((c.get(i, j, b) - expected).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_cube() {
        for kind in [PhantomKind::Gradient, PhantomKind::CheckerSpectra, PhantomKind::RandomSmooth] {
            let a = make_phantom(kind, 9, 7, 5, 42).unwrap();
            let b = make_phantom(kind, 9, 7, 5, 42).unwrap();
            assert_eq!(a, b);
        }
        let a = make_phantom(PhantomKind::RandomSmooth, 8, 8, 4, 1).unwrap();
        let b = make_phantom(PhantomKind::RandomSmooth, 8, 8, 4, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn checker_has_two_signatures() {
        let c = make_phantom(PhantomKind::CheckerSpectra, 8, 8, 4, 0).unwrap();
        let mut sigs: Vec<Vec<u64>> = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                let s: Vec<u64> = c.pixel(i, j).iter().map(|v| v.to_bits()).collect();
                if !sigs.contains(&s) {
                    sigs.push(s);
                }
            }
        }
        assert_eq!(sigs.len(), 2);
    }

    #[test]
    fn values_in_unit_range() {
        for seed in 0..20 {
            let c = make_phantom(PhantomKind::RandomSmooth, 16, 16, 4, seed).unwrap();
            assert!(c.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("zebra".parse::<PhantomKind>().is_err());
        assert_eq!("checker-spectra".parse::<PhantomKind>().unwrap(), PhantomKind::CheckerSpectra);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let ids: Vec<String> = (0..20).map(|i| format!("p{i}")).collect();
        let s = DatasetSplit::new(&ids, 12, 4, 5).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (12, 4, 4));
        assert!(s.is_disjoint());
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
        all.sort();
        let mut want = ids.clone();
        want.sort();
        assert_eq!(all, want);
        assert!(DatasetSplit::new(&ids, 18, 4, 5).is_err());
    }
}
