//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored; lists are
//! comma-separated. Recognized keys (defaults in brackets):
//!
//! ```text
//! model              bayespcn | gpcn-offline | gpcn-online | mhn | identity   [bayespcn]
//! dims               sensory,...,top widths                                   [48,64,64,64]
//! activation         relu | gelu                                              [gelu]
//! particles          number of particles                                      [1]
//! sigma_x2           observation variance                                     [1e-4]
//! sigma_w2           prior weight variance                                    [1]
//! sequence_length    items written before reading (T)                         [64]
//! corruption         white_noise | dropout | mask                             [dropout]
//! corruption_param   noise sigma ([0,1] pixel scale) or blacked-out fraction  [0.25]
//! forget_beta        diffusion strength                                       [0]
//! forget_every       writes between forgets; `none` disables                  [none]
//! icm_iterations     read ICM iterations                                      [30]
//! steps_per_phase    Adam steps per read phase                                [500]
//! read_lr            read learning rate                                       [0.01]
//! write_steps        Adam steps for write activation fits                     [500]
//! write_lr           write learning rate                                      [0.01]
//! seeds              list of run seeds                                        [0]
//! data               synthetic | cifar10:<path> | raw:<path>                  [synthetic]
//! data_seed          synthetic data seed; defaults to the run seed
//! synthetic_rank     basis rank of synthetic data, 0 = i.i.d. uniform         [8]
//! image_shape        channels,height,width                                    [3,4,4]
//! accuracy_threshold MSE below which a recall is correct                      [0.01]
//! gpcn_weight_lr     GPCN weight learning rate                                [1e-3]
//! gpcn_offline_iters GPCN offline weight iterations                           [4000]
//! gpcn_sigma_x2      GPCN observation variance at read                        [1]
//! mhn_beta           MHN inverse temperature                                  [10000]
//! mhn_lr             MHN recall learning rate                                 [1]
//! mhn_steps          MHN recall steps; defaults by query kind
//! ```

use std::path::{Path, PathBuf};

use crate::activation::Activation;
use crate::baselines::{gpcn, mhn};
use crate::bench::corrupt::{CorruptionKind, CorruptionSpec};
use crate::bench::metrics::DEFAULT_ACCURACY_THRESHOLD;
use crate::error::{MemoryError, Result};
use crate::memory::ReadConfig;
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    BayesPcn,
    GpcnOffline,
    GpcnOnline,
    Mhn,
    Identity,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BayesPcn => "bayespcn",
            Self::GpcnOffline => "gpcn-offline",
            Self::GpcnOnline => "gpcn-online",
            Self::Mhn => "mhn",
            Self::Identity => "identity",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bayespcn" => Ok(Self::BayesPcn),
            "gpcn-offline" => Ok(Self::GpcnOffline),
            "gpcn-online" => Ok(Self::GpcnOnline),
            "mhn" => Ok(Self::Mhn),
            "identity" => Ok(Self::Identity),
            other => Err(MemoryError::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Synthetic { rank: usize, image_shape: (usize, usize, usize), seed: Option<u64> },
    Cifar10(PathBuf),
    RawTensor { path: PathBuf, image_shape: Option<(usize, usize, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub particles: usize,
    pub sigma_x2: f64,
    pub sigma_w2: f64,
    pub sequence_length: usize,
    /// The seed field is replaced per item during a run.
    pub corruption: CorruptionSpec,
    pub forget_beta: f64,
    pub forget_every: Option<usize>,
    pub read: ReadConfig,
    pub write: OptimizerConfig,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    pub accuracy_threshold: f64,
    pub gpcn_weight_lr: f64,
    pub gpcn_offline_iters: usize,
    pub gpcn_sigma_x2: f64,
    pub mhn_beta: f64,
    pub mhn_lr: f64,
    pub mhn_steps: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::BayesPcn,
            dims: vec![48, 64, 64, 64],
            activation: Activation::Gelu,
            particles: 1,
            sigma_x2: 1e-4,
            sigma_w2: 1.0,
            sequence_length: 64,
            corruption: CorruptionSpec { kind: CorruptionKind::Dropout, param: 0.25, seed: 0 },
            forget_beta: 0.0,
            forget_every: None,
            read: ReadConfig::default(),
            write: OptimizerConfig::default(),
            seeds: vec![0],
            data: DataSpec::Synthetic { rank: 8, image_shape: (3, 4, 4), seed: None },
            accuracy_threshold: DEFAULT_ACCURACY_THRESHOLD,
            gpcn_weight_lr: gpcn::DEFAULT_WEIGHT_LR,
            gpcn_offline_iters: gpcn::DEFAULT_OFFLINE_ITERS,
            gpcn_sigma_x2: 1.0,
            mhn_beta: mhn::DEFAULT_BETA,
            mhn_lr: mhn::DEFAULT_LEARNING_RATE,
            mhn_steps: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MemoryError::InvalidArgument(format!("bad value '{value}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_shape(key: &str, value: &str) -> Result<(usize, usize, usize)> {
    match parse_list::<usize>(key, value)?.as_slice() {
        &[c, h, w] => Ok((c, h, w)),
        _ => Err(MemoryError::InvalidArgument(format!("'{key}' needs channels,height,width"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let base = path.as_ref().parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative data paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut data: Option<String> = None;
        let mut rank = 8usize;
        let mut image_shape: Option<(usize, usize, usize)> = None;
        let mut data_seed: Option<u64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MemoryError::InvalidArgument(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => cfg.model = value.parse()?,
                "dims" => cfg.dims = parse_list(key, value)?,
                "activation" => cfg.activation = value.parse().map_err(MemoryError::InvalidArgument)?,
                "particles" => cfg.particles = parse_value(key, value)?,
                "sigma_x2" => cfg.sigma_x2 = parse_value(key, value)?,
                "sigma_w2" => cfg.sigma_w2 = parse_value(key, value)?,
                "sequence_length" => cfg.sequence_length = parse_value(key, value)?,
                "corruption" => cfg.corruption.kind = value.parse()?,
                "corruption_param" => cfg.corruption.param = parse_value(key, value)?,
                "forget_beta" => cfg.forget_beta = parse_value(key, value)?,
                "forget_every" => {
                    cfg.forget_every = match value {
                        "none" | "" => None,
                        v => Some(parse_value(key, v)?),
                    }
                }
                "icm_iterations" => cfg.read.icm_iterations = parse_value(key, value)?,
                "steps_per_phase" => cfg.read.steps_per_phase = parse_value(key, value)?,
                "read_lr" => cfg.read.optimizer.learning_rate = parse_value(key, value)?,
                "write_steps" => cfg.write.steps = parse_value(key, value)?,
                "write_lr" => cfg.write.learning_rate = parse_value(key, value)?,
                "seeds" => cfg.seeds = parse_list(key, value)?,
                "data" => data = Some(value.to_string()),
                "data_seed" => data_seed = Some(parse_value(key, value)?),
                "synthetic_rank" => rank = parse_value(key, value)?,
                "image_shape" => image_shape = Some(parse_shape(key, value)?),
                "accuracy_threshold" => cfg.accuracy_threshold = parse_value(key, value)?,
                "gpcn_weight_lr" => cfg.gpcn_weight_lr = parse_value(key, value)?,
                "gpcn_offline_iters" => cfg.gpcn_offline_iters = parse_value(key, value)?,
                "gpcn_sigma_x2" => cfg.gpcn_sigma_x2 = parse_value(key, value)?,
                "mhn_beta" => cfg.mhn_beta = parse_value(key, value)?,
                "mhn_lr" => cfg.mhn_lr = parse_value(key, value)?,
                "mhn_steps" => cfg.mhn_steps = Some(parse_value(key, value)?),
                other => {
                    return Err(MemoryError::InvalidArgument(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.data = match data.as_deref() {
            None | Some("synthetic") => DataSpec::Synthetic {
                rank,
                image_shape: image_shape.unwrap_or((3, 4, 4)),
                seed: data_seed,
            },
            Some(spec) => match spec.split_once(':') {
                Some(("cifar10", p)) => DataSpec::Cifar10(base_dir.join(p)),
                Some(("raw", p)) => DataSpec::RawTensor { path: base_dir.join(p), image_shape },
                _ => return Err(MemoryError::InvalidArgument(format!("bad data source '{spec}'"))),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MemoryError::InvalidArgument(m.to_string()));
        if self.sequence_length == 0 {
            return bad("sequence_length must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed required");
        }
        if self.forget_every == Some(0) {
            return bad("forget_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.forget_beta) {
            return bad("forget_beta must lie in [0, 1]");
        }
        if self.read.icm_iterations == 0 || self.read.steps_per_phase == 0 {
            return bad("read budgets must be positive");
        }
        CorruptionSpec::new(self.corruption.kind, self.corruption.param, 0).map(|_| ())
    }
}
