//! Query corruptions. Images are channel-major: entry `c*H*W + r*W + col`.

use ndarray::Array1;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MemoryError, Result};

/// Value written into blacked-out entries.
pub const BLACK: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Additive Gaussian noise; `param` is sigma on the `[0, 1]` pixel scale.
    WhiteNoise,
    /// Blacks out a random `param` fraction of pixel sites across all channels.
    Dropout,
    /// Blacks out the rightmost `ceil(param * width)` columns.
    Mask,
}

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::WhiteNoise => "white_noise",
            Self::Dropout => "dropout",
            Self::Mask => "mask",
        }
    }

    /// Spatial corruptions are read hetero-associatively with the untouched entries as key.
    pub fn is_hetero(self) -> bool {
        !matches!(self, Self::WhiteNoise)
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "white_noise" | "noise" => Ok(Self::WhiteNoise),
            "dropout" => Ok(Self::Dropout),
            "mask" => Ok(Self::Mask),
            other => Err(MemoryError::InvalidArgument(format!("unknown corruption '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub param: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub values: Array1<f64>,
    /// `true` on untouched entries; present for spatial corruptions only.
    pub known_mask: Option<Vec<bool>>,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, param: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind, param, seed };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.param >= 0.0 && self.param.is_finite()) {
            return Err(MemoryError::InvalidArgument(format!(
                "corruption parameter must be non-negative, got {}",
                self.param
            )));
        }
        if self.kind.is_hetero() && self.param > 1.0 {
            return Err(MemoryError::InvalidArgument(format!(
                "blacked-out fraction must be at most 1, got {}",
                self.param
            )));
        }
        Ok(())
    }

    /// The same corruption with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    pub fn apply(&self, x: &Array1<f64>, image_shape: Option<(usize, usize, usize)>) -> Result<Corrupted> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        if self.kind == CorruptionKind::WhiteNoise {
            let noise = Normal::new(0.0, 2.0 * self.param)
                .map_err(|e| MemoryError::InvalidArgument(e.to_string()))?;
            let values = x.mapv(|v| v + noise.sample(&mut rng));
            return Ok(Corrupted { values, known_mask: None });
        }
        let (c, h, w) = image_shape.ok_or_else(|| {
            MemoryError::InvalidArgument(format!("{} corruption needs an image shape", self.kind.name()))
        })?;
        if c * h * w != x.len() {
            return Err(MemoryError::Shape(format!(
                "image shape {c}x{h}x{w} does not match vector length {}",
                x.len()
            )));
        }
        let sites: Vec<(usize, usize)> = match self.kind {
            CorruptionKind::Dropout => {
                let n = ((self.param * (h * w) as f64).round() as usize).min(h * w);
                index::sample(&mut rng, h * w, n)
                    .into_iter()
                    .map(|s| (s / w, s % w))
                    .collect()
            }
            CorruptionKind::Mask => {
                let cols = ((self.param * w as f64).ceil() as usize).min(w);
                (0..h).flat_map(|r| (w - cols..w).map(move |col| (r, col))).collect()
            }
            CorruptionKind::WhiteNoise => unreachable!(),
        };
        let mut values = x.clone();
        let mut known = vec![true; x.len()];
        for (r, col) in sites {
            for ch in 0..c {
                let i = ch * h * w + r * w + col;
                values[i] = BLACK;
                known[i] = false;
            }
        }
        Ok(Corrupted { values, known_mask: Some(known) })
    }
}
