//! Checkpoint directory layout:
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `cassi.aptr`    | CASSI aperture weights (APTR v1)                     |
//! | `mcfa.aptr`     | MCFA aperture weights (APTR v1)                      |
//! | `stages.bin`    | per stage: `ln λ, ln ρ, ln α` as f32 LE, proximal    |
//! |                 | tag u8, payload length u32 LE, payload bytes         |
//! | `manifest.json` | epoch, γ, μ_b, experiment config and its SHA-256     |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::{ProximalKind, ProximalSpec, StageParams};
use crate::error::{Error, Result};
use crate::io::{put_f32, put_u32, read_file, write_file, Reader};
use crate::optics::ApertureWeights;

pub const CASSI_FILE: &str = "cassi.aptr";
pub const MCFA_FILE: &str = "mcfa.aptr";
pub const STAGES_FILE: &str = "stages.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub epoch: usize,
    pub gamma: f64,
    pub mu_b: f64,
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(epoch: usize, gamma: f64, mu_b: f64, config: serde_json::Value) -> Self {
        let config_hash = config_hash(&config);
        Self { epoch, gamma, mu_b, config_hash, config }
    }
}

/// SHA-256 of the compact JSON text (object keys are sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

pub fn encode_stages(stages: &[StageParams]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in stages {
        for r in s.raw {
            put_f32(&mut out, r as f32);
        }
        out.push(s.prox.kind().tag());
        let payload = s.prox.encode_payload();
        put_u32(&mut out, payload.len() as u32);
        out.extend_from_slice(&payload);
    }
    out
}

pub fn decode_stages(bytes: &[u8]) -> Result<Vec<StageParams>> {
    let mut r = Reader::new(bytes);
    let mut stages = Vec::new();
    while r.remaining() > 0 {
        let raw = [f64::from(r.finite_f32("ln lambda")?), f64::from(r.finite_f32("ln rho")?), f64::from(r.finite_f32("ln alpha")?)];
        let at = r.offset();
        let tag = r.u8("proximal tag")?;
        let kind = ProximalKind::from_tag(tag).ok_or_else(|| Error::format(at, format!("unknown proximal tag {tag}")))?;
        let len = r.u32("payload length")? as usize;
        if r.remaining() < len {
            return Err(Error::format(r.offset(), format!("truncated proximal payload: need {len} bytes, {} left", r.remaining())));
        }
        let prox = ProximalSpec::decode_payload(kind, &mut r, len)?;
        stages.push(StageParams { raw, prox });
    }
    if stages.is_empty() {
        return Err(Error::format(0, "stage file holds no stages"));
    }
    Ok(stages)
}

/// Everything a checkpoint holds; the operator is rebuilt by the caller from
/// the manifest's config.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub cassi: ApertureWeights,
    pub mcfa: ApertureWeights,
    pub stages: Vec<StageParams>,
    pub manifest: Manifest,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.cassi.save(dir.join(CASSI_FILE))?;
        self.mcfa.save(dir.join(MCFA_FILE))?;
        write_file(&dir.join(STAGES_FILE), &encode_stages(&self.stages))?;
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = read_file(&manifest_path)?;
        let manifest: Manifest = serde_json::from_slice(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
        if config_hash(&manifest.config) != manifest.config_hash {
            return Err(Error::Config(format!("{}: config hash mismatch", manifest_path.display())));
        }
        Ok(Self {
            cassi: ApertureWeights::load(dir.join(CASSI_FILE))?,
            mcfa: ApertureWeights::load(dir.join(MCFA_FILE))?,
            stages: decode_stages(&read_file(&dir.join(STAGES_FILE))?)?,
            manifest,
        })
    }
}
