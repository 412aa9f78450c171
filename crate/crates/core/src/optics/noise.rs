//! Additive white Gaussian noise at a target SNR.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optics::measurement::Measurement;

/// Signal-to-noise ratio in dB, or no noise at all.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Db(f64),
    None,
}

impl Snr {
    pub fn is_none(&self) -> bool {
        matches!(self, Snr::None)
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("inf") {
            return Ok(Snr::None);
        }
        let db: f64 = s.parse().map_err(|_| Error::Config(format!("bad SNR `{s}`; expected dB or `none`")))?;
        if !db.is_finite() {
            return Err(Error::Config(format!("bad SNR `{s}`")));
        }
        Ok(Snr::Db(db))
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Db(db) => write!(f, "{db}"),
            Snr::None => f.write_str("none"),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Db(db) => s.serialize_f64(*db),
            Snr::None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(db) if db.is_finite() => Ok(Snr::Db(db)),
            Raw::Num(db) => Err(serde::de::Error::custom(format!("bad SNR {db}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Noise standard deviation for `g` at `snr_db`, using mean signal power.
pub fn noise_sigma(g: &Measurement, snr_db: f64) -> Result<f64> {
    let power = g.norm_sq() / g.len() as f64;
    if power == 0.0 || g.is_empty() {
        return Err(Error::InvalidValue("SNR is undefined for an all-zero measurement".into()));
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// Adds zero-mean Gaussian noise with variance `mean(g²) / 10^(snr/10)`.
///
/// The underlying standard-normal draw depends only on `seed`, so two SNRs
/// with the same seed see scaled copies of one noise realization.
pub fn add_awgn(g: &Measurement, snr: Snr, seed: u64) -> Result<Measurement> {
    let snr_db = match snr {
        Snr::None => return Ok(g.clone()),
        Snr::Db(db) => db,
    };
    let sigma = noise_sigma(g, snr_db)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = g.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(out)
}

/// Noise level plus the base seed from which per-measurement streams derive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub snr_db: Snr,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self { snr_db: Snr::None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if let Snr::Db(db) = self.snr_db {
            if !db.is_finite() {
                return Err(Error::Config(format!("bad SNR {db}")));
            }
        }
        Ok(())
    }

    /// Noisy copy of `g` drawn from the stream `(seed, a, b)`. An all-zero
    /// measurement has no defined SNR and is returned unchanged.
    pub fn apply(&self, g: &Measurement, a: u64, b: u64) -> Result<Measurement> {
        if g.norm_sq() == 0.0 {
            return Ok(g.clone());
        }
        add_awgn(g, self.snr_db, stream_seed(self.seed, a, b))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for stream `(a, b)` of `base`.
pub fn stream_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ a) ^ b.rotate_left(17))
}
