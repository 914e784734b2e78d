//! Sequential-write / corrupted-read experiment runner.
//!
//! Per seed: write the first `T` items one at a time (forgetting on schedule),
//! then corrupt every stored item and read it back. White noise is read
//! auto-associatively; dropout and mask are read hetero-associatively with the
//! untouched entries as key. Reads run in parallel over the frozen model.

use std::io::Write;
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;

use crate::baselines::gpcn::GpcnModel;
use crate::baselines::mhn::MhnMemory;
use crate::bench::config::{DataSpec, ExperimentConfig, ModelKind};
use crate::bench::data::{self, Dataset};
use crate::bench::metrics::mse;
use crate::error::{MemoryError, Result};
use crate::memory::Query;
use crate::model::{MemoryConfig, MemoryState, NetworkShape};

pub const CSV_HEADER: [&str; 10] = [
    "seed",
    "model",
    "task",
    "T",
    "item_index",
    "batch_index",
    "mse",
    "correct",
    "cumulative_mean_mse",
    "elapsed_ms",
];

/// Number of reporting batches a sequence is split into.
pub const REPORT_BATCHES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub item_index: usize,
    pub batch_index: usize,
    /// NaN when the item's write or read failed.
    pub mse: f64,
    pub correct: bool,
    /// Mean of the finite MSEs of items `0..=item_index`.
    pub cumulative_mean_mse: f64,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub model: ModelKind,
    pub task: String,
    pub sequence_length: usize,
    pub items: Vec<ItemResult>,
    /// Mean MSE per batch of `max(1, T / 16)` consecutive items, oldest first.
    pub batch_mse: Vec<f64>,
    pub overall_mse: f64,
    pub accuracy: f64,
    pub write_ms: f64,
}

impl RunResult {
    /// Mean of the finite per-item MSEs in `range`.
    pub fn mean_mse(&self, range: std::ops::Range<usize>) -> f64 {
        finite_mean(self.items[range].iter().map(|i| i.mse))
    }

    pub fn errors(&self) -> impl Iterator<Item = (usize, &str)> {
        self.items.iter().filter_map(|i| i.error.as_deref().map(|e| (i.item_index, e)))
    }
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Decorrelated per-item seed.
fn item_seed(seed: u64, item: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(item as u64))
}

pub fn load_dataset(spec: &DataSpec, count: usize, seed: u64) -> Result<Dataset> {
    match spec {
        DataSpec::Synthetic { rank, image_shape, seed: data_seed } => {
            data::synthetic(count, *image_shape, *rank, data_seed.unwrap_or(seed))
        }
        DataSpec::Cifar10(path) => data::load_cifar10(path),
        DataSpec::RawTensor { path, image_shape } => {
            let mut d = data::load_raw_tensor(path)?;
            if let Some(shape) = image_shape {
                d = Dataset::new(d.vectors, d.source, Some(*shape))?;
            }
            Ok(d)
        }
    }
}

enum Trained {
    Bayes(MemoryState),
    Gpcn(GpcnModel),
    Mhn(MhnMemory),
    Identity,
}

impl Trained {
    fn recall(&self, cfg: &ExperimentConfig, query: &Query) -> Result<Array1<f64>> {
        match self {
            Self::Bayes(m) => m.read(query, &cfg.read),
            Self::Gpcn(g) => g.read(query, &cfg.read),
            Self::Mhn(m) => {
                let steps = cfg.mhn_steps.unwrap_or_else(|| MhnMemory::default_steps(query));
                m.recall(query, steps, cfg.mhn_lr)
            }
            Self::Identity => Ok(query.values.clone()),
        }
    }
}

/// Writes `items` in order; per-item failures are returned, not raised.
fn train(cfg: &ExperimentConfig, seed: u64, items: &[Array1<f64>]) -> Result<(Trained, Vec<Option<String>>)> {
    let shape = NetworkShape::new(cfg.dims.clone(), cfg.activation)?;
    let mut errors = vec![None; items.len()];
    let trained = match cfg.model {
        ModelKind::BayesPcn => {
            let mut mc = MemoryConfig::new(cfg.dims.clone(), cfg.activation)?;
            mc.particles = cfg.particles;
            mc.sigma_x2 = cfg.sigma_x2;
            mc.sigma_w2 = cfg.sigma_w2;
            mc.seed = seed;
            let mut m = MemoryState::new(&mc)?;
            for (i, x) in items.iter().enumerate() {
                if let Err(e) = m.write(x, &cfg.write) {
                    errors[i] = Some(e.to_string());
                }
                if let Some(every) = cfg.forget_every {
                    if (i + 1) % every == 0 {
                        m.forget(cfg.forget_beta)?;
                    }
                }
            }
            Trained::Bayes(m)
        }
        ModelKind::GpcnOnline => {
            let mut g = GpcnModel::new(shape, seed);
            g.sigma_x2 = cfg.gpcn_sigma_x2;
            for (i, x) in items.iter().enumerate() {
                if let Err(e) = g.write_online(x, &cfg.write, cfg.gpcn_weight_lr) {
                    errors[i] = Some(e.to_string());
                }
            }
            Trained::Gpcn(g)
        }
        ModelKind::GpcnOffline => {
            let mut g = GpcnModel::new(shape, seed);
            g.sigma_x2 = cfg.gpcn_sigma_x2;
            g.write_offline(items, &cfg.write, cfg.gpcn_offline_iters, cfg.gpcn_weight_lr)?;
            Trained::Gpcn(g)
        }
        ModelKind::Mhn => {
            let mut m = MhnMemory::new(shape.sensory_dim(), cfg.mhn_beta);
            for (i, x) in items.iter().enumerate() {
                if let Err(e) = m.store(x) {
                    errors[i] = Some(e.to_string());
                }
            }
            Trained::Mhn(m)
        }
        ModelKind::Identity => Trained::Identity,
    };
    Ok((trained, errors))
}

/// One run for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let t = cfg.sequence_length;
    let dataset = load_dataset(&cfg.data, t, seed)?;
    if dataset.len() < t {
        return Err(MemoryError::InvalidArgument(format!(
            "dataset holds {} items, sequence_length is {t}",
            dataset.len()
        )));
    }
    if dataset.dim() != cfg.dims[0] {
        return Err(MemoryError::Shape(format!(
            "dataset vectors have length {}, sensory width is {}",
            dataset.dim(),
            cfg.dims[0]
        )));
    }
    let items = &dataset.vectors[..t];

    let start = Instant::now();
    let (trained, write_errors) = train(cfg, seed, items)?;
    let write_ms = start.elapsed().as_secs_f64() * 1e3;

    let batch_len = (t / REPORT_BATCHES).max(1);
    let reads: Vec<(std::result::Result<f64, String>, f64)> = items
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let begin = Instant::now();
            let outcome = (|| {
                let spec = cfg.corruption.reseeded(item_seed(seed, i));
                let corrupted = spec.apply(x, dataset.image_shape)?;
                let query = Query { values: corrupted.values, known_mask: corrupted.known_mask };
                mse(x, &trained.recall(cfg, &query)?)
            })()
            .map_err(|e| e.to_string());
            (outcome, begin.elapsed().as_secs_f64() * 1e3)
        })
        .collect();

    let mut results = Vec::with_capacity(t);
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, ((outcome, elapsed_ms), write_error)) in reads.into_iter().zip(write_errors).enumerate() {
        let (value, read_error) = match outcome {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e)),
        };
        let error = match (write_error, read_error) {
            (Some(w), Some(r)) => Some(format!("write: {w}; read: {r}")),
            (Some(w), None) => Some(format!("write: {w}")),
            (None, Some(r)) => Some(format!("read: {r}")),
            (None, None) => None,
        };
        if value.is_finite() {
            sum += value;
            n += 1;
        }
        results.push(ItemResult {
            item_index: i,
            batch_index: i / batch_len,
            mse: value,
            correct: value < cfg.accuracy_threshold,
            cumulative_mean_mse: if n == 0 { f64::NAN } else { sum / n as f64 },
            elapsed_ms,
            error,
        });
    }

    let batches = (t + batch_len - 1) / batch_len;
    let batch_mse = (0..batches)
        .map(|b| finite_mean(results[b * batch_len..((b + 1) * batch_len).min(t)].iter().map(|r| r.mse)))
        .collect();
    let accuracy = results.iter().filter(|r| r.correct).count() as f64 / t as f64;
    Ok(RunResult {
        seed,
        model: cfg.model,
        task: cfg.corruption.kind.name().to_string(),
        sequence_length: t,
        overall_mse: finite_mean(results.iter().map(|r| r.mse)),
        items: results,
        batch_mse,
        accuracy,
        write_ms,
    })
}

/// Runs every configured seed in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect()
}

/// Emits one CSV row per item, in seed then item order.
pub fn write_csv<W: Write>(out: W, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for run in runs {
        for item in &run.items {
            w.write_record([
                run.seed.to_string(),
                run.model.name().to_string(),
                run.task.clone(),
                run.sequence_length.to_string(),
                item.item_index.to_string(),
                item.batch_index.to_string(),
                item.mse.to_string(),
                u8::from(item.correct).to_string(),
                item.cumulative_mean_mse.to_string(),
                format!("{:.3}", item.elapsed_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
