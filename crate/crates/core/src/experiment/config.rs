//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::{ConvDenoiser, ProximalSpec, StageParams};
use crate::cube::{GeometryConfig, SpectralCube};
use crate::design::{Model, SchedulesConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{load_cube, read_file};
use crate::metrics::LossConfig;
use crate::optics::{stream_seed, Activation, ApertureWeights, Arm, DispersionConfig, FusionOperator, NoiseConfig};
use crate::phantom::{make_phantom, DatasetSplit, PhantomKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProximalConfig {
    SoftThresholdDct { tau: f64 },
    TvChambolle { weight: f64, iterations: usize },
    ConvDenoiser { hidden: usize, seed: u64 },
}

impl ProximalConfig {
    /// Proximal operator of stage `k` (zero-based).
    pub fn build(&self, bands: usize, k: usize) -> Result<ProximalSpec> {
        let spec = match self {
            Self::SoftThresholdDct { tau } => ProximalSpec::SoftThresholdDct { tau: *tau },
            Self::TvChambolle { weight, iterations } => ProximalSpec::TvChambolle { weight: *weight, iterations: *iterations },
            Self::ConvDenoiser { hidden, seed } => {
                ProximalSpec::ConvDenoiser(ConvDenoiser::new_random(bands, *hidden, stream_seed(*seed, k as u64, 0))?)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, Self::TvChambolle { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApertureConfig {
    #[serde(default)]
    pub activation: Activation,
    /// Trainable arms start from `U[-a, a]` (`0.5 + U[-a, a]` for identity).
    pub init_range: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub validation: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    /// SCUB files, relative paths resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cubes: Vec<PathBuf>,
    pub split: SplitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub dispersion: DispersionConfig,
    pub noise: NoiseConfig,
    pub stages: usize,
    pub proximal: ProximalConfig,
    pub schedules: SchedulesConfig,
    pub aperture: ApertureConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationConfig>,
}

/// Labelled cubes of one split.
pub type Cubes = Vec<(String, SpectralCube)>;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Cubes,
    pub validation: Cubes,
    pub test: Cubes,
}

impl Dataset {
    pub fn cubes(part: &Cubes) -> Vec<SpectralCube> {
        part.iter().map(|(_, c)| c.clone()).collect()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Checks every field that does not need the dataset on disk.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.noise.validate()?;
        if self.stages == 0 {
            return Err(Error::Config("stages must be >= 1".into()));
        }
        if let ProximalConfig::ConvDenoiser { hidden: 0, .. } = self.proximal {
            return Err(Error::Config("proximal.hidden must be >= 1".into()));
        }
        self.proximal.build(1, 0).map(|_| ())?;
        self.schedules.validate()?;
        if !(self.aperture.init_range.is_finite() && self.aperture.init_range >= 0.0) {
            return Err(Error::Config(format!("aperture.init_range must be >= 0, got {}", self.aperture.init_range)));
        }
        self.loss.validate()?;
        self.train.validate()?;
        match (&self.data.phantom, self.data.cubes.is_empty()) {
            (Some(_), false) => return Err(Error::Config("data: give either phantom or cubes, not both".into())),
            (None, true) => return Err(Error::Config("data: phantom or cubes is required".into())),
            _ => {}
        }
        let count = match &self.data.phantom {
            Some(p) => {
                if p.count == 0 {
                    return Err(Error::Config("data.phantom.count must be >= 1".into()));
                }
                self.check_dims(p.rows, p.cols, p.bands)?;
                p.count
            }
            None => self.data.cubes.len(),
        };
        let s = &self.data.split;
        if s.train == 0 {
            return Err(Error::Config("data.split.train must be >= 1".into()));
        }
        if s.train + s.validation > count {
            return Err(Error::Config(format!("data.split asks for {}+{} of {count} cubes", s.train, s.validation)));
        }
        if let Some(a) = &self.ablation {
            if a.seeds.is_empty() {
                return Err(Error::Config("ablation.seeds must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Rejects proximal kinds without a backward pass.
    pub fn check_trainable(&self) -> Result<()> {
        if !self.proximal.is_trainable() {
            return Err(Error::Config("tv_chambolle is inference-only; training needs soft_threshold_dct or conv_denoiser".into()));
        }
        Ok(())
    }

    /// Geometry, dispersion and loss constraints for an `m × n × l` cube.
    pub fn check_dims(&self, m: usize, n: usize, l: usize) -> Result<()> {
        self.geometry.check_dims(m, n, l)?;
        self.dispersion.build(m / self.geometry.d_s, n / self.geometry.d_s, l)?;
        self.loss.check_image(m, n)
    }

    /// The same experiment with model and training seeds derived from `seed`.
    /// Data and noise seeds are kept so every seed sees the same benchmark.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = stream_seed(seed, 1, 0);
        c.aperture.seed = stream_seed(seed, 2, 0);
        if let ProximalConfig::ConvDenoiser { seed: s, .. } = &mut c.proximal {
            *s = stream_seed(seed, 3, 0);
        }
        c
    }

    pub fn dataset(&self, base_dir: &Path) -> Result<Dataset> {
        let mut items: Cubes = Vec::new();
        if let Some(p) = &self.data.phantom {
            for i in 0..p.count {
                let cube = make_phantom(p.kind, p.rows, p.cols, p.bands, stream_seed(p.seed, i as u64, 0))?;
                items.push((format!("phantom_{i}"), cube));
            }
        } else {
            for path in &self.data.cubes {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                items.push((path.display().to_string(), load_cube(&full)?));
            }
        }
        let dims = items[0].1.dims();
        if let Some((id, c)) = items.iter().find(|(_, c)| c.dims() != dims) {
            return Err(Error::dim(format!("cube {id} is {:?}, expected {dims:?}", c.dims())));
        }
        self.check_dims(dims.0, dims.1, dims.2)?;
        let ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
        let split = DatasetSplit::new(&ids, self.data.split.train, self.data.split.validation, self.data.split.seed)?;
        let pick = |names: &[String]| -> Cubes {
            names.iter().map(|n| items.iter().find(|(id, _)| id == n).expect("split ids come from items").clone()).collect()
        };
        Ok(Dataset { train: pick(&split.train), validation: pick(&split.validation), test: pick(&split.test) })
    }

    /// Initial apertures: trainable arms from `U[-a, a]`, frozen arms as random
    /// binary codes.
    pub fn initial_aperture(&self, arm: Arm, dims: (usize, usize, usize), trainable: bool, gamma: f64) -> Result<ApertureWeights> {
        let (r, c, b) = dims;
        let act = self.aperture.activation;
        let seed = stream_seed(self.aperture.seed, arm.tag() as u64, 0);
        if trainable {
            return ApertureWeights::random(arm, r, c, b, self.aperture.init_range, gamma, act, seed);
        }
        let (lo, hi) = match act {
            Activation::Sigmoid => (-1.0, 1.0),
            Activation::Identity => (0.0, 1.0),
        };
        let coin = ApertureWeights::random(arm, r, c, b, 1.0, gamma, Activation::Sigmoid, seed)?;
        let w = coin.weights().iter().map(|&v| if v >= 0.0 { hi } else { lo }).collect();
        Ok(ApertureWeights::new(arm, r, c, b, w, gamma)?.with_activation(act))
    }

    pub fn operator(&self, dims: (usize, usize, usize), cassi: ApertureWeights, mcfa: ApertureWeights) -> Result<FusionOperator> {
        let (m, n, l) = dims;
        let d_s = self.geometry.d_s;
        let dispersion = self.dispersion.build(m / d_s, n / d_s, l)?;
        FusionOperator::new(dims, self.geometry, cassi, mcfa, dispersion, self.dispersion.truncate_detector)
    }

    /// Untrained model with γ at its final scheduled value.
    pub fn initial_model(&self, dims: (usize, usize, usize)) -> Result<Model> {
        let (m, n, l) = dims;
        self.check_dims(m, n, l)?;
        let gamma = self.schedules.gamma_at(self.train.epochs);
        let d_s = self.geometry.d_s;
        let cassi = self.initial_aperture(Arm::Cassi, (m / d_s, n / d_s, 1), self.train.train_cassi, gamma)?;
        let mcfa = self.initial_aperture(Arm::Mcfa, (m, n, l / self.geometry.d_lambda), self.train.train_mcfa, gamma)?;
        let op = self.operator(dims, cassi, mcfa)?;
        let stages = (0..self.stages).map(|k| StageParams::initial(self.proximal.build(l, k)?)).collect::<Result<Vec<_>>>()?;
        Model::new(op, stages)
    }
}
