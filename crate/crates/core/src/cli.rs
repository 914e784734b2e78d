//! Command-line driver. `run` returns the process exit code: 0 on success,
//! 1 on usage errors, 2 on data or format errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::config::ExperimentConfig;
use crate::bench::corrupt::{CorruptionKind, CorruptionSpec};
use crate::bench::data::{self, Dataset};
use crate::bench::experiment;
use crate::bench::metrics::mse;
use crate::error::{MemoryError, Result};
use crate::memory::{Query, ReadConfig};
use crate::model::{MemoryConfig, MemoryState};
use crate::optim::OptimizerConfig;
use crate::persist;
use crate::Activation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bayespcn", version, about = "Bayesian predictive coding associative memory")]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty memory file.
    Init(InitArgs),
    /// Write dataset items into a memory, in order.
    Write(WriteArgs),
    /// Corrupt query items, recall them, and report MSE against the originals.
    Read(ReadArgs),
    /// Diffuse a memory toward its prior.
    Forget {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        beta: f64,
    },
    /// Draw ancestral samples into a raw tensor file.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark experiment and emit CSV.
    Bench {
        /// Experiment configuration (flat `key = value` file).
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a memory file's header.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Layer widths from sensory to top, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "48,64,64,64")]
    pub dims: Vec<usize>,
    #[arg(long, default_value = "gelu")]
    pub activation: String,
    #[arg(long, default_value_t = 1)]
    pub particles: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub sigma_x2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_w2: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DataFormat {
    Raw,
    Cifar10,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "raw")]
    pub format: DataFormat,
    /// Use only the first N items.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image layout channels,height,width for raw tensors.
    #[arg(long, value_delimiter = ',')]
    pub image_shape: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct WriteArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Forget strength applied on the schedule.
    #[arg(long, default_value_t = 0.0)]
    pub forget_beta: f64,
    /// Forget after every N writes.
    #[arg(long)]
    pub forget_every: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub write_steps: usize,
    /// Save here instead of overwriting the input model.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReadArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "white_noise")]
    pub corruption: String,
    /// Noise sigma on the [0, 1] pixel scale, or blacked-out fraction.
    #[arg(long, default_value_t = 0.0)]
    pub param: f64,
    #[arg(long, default_value_t = 30)]
    pub icm_iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub steps_per_phase: usize,
    /// Write recalled vectors to this raw tensor file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &MemoryError) -> i32 {
    match e {
        MemoryError::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let mut d = match args.format {
        DataFormat::Raw => data::load_raw_tensor(&args.data)?,
        DataFormat::Cifar10 => data::load_cifar10(&args.data)?,
    };
    if let Some(shape) = &args.image_shape {
        let &[c, h, w] = shape.as_slice() else {
            return Err(MemoryError::InvalidArgument("--image-shape needs channels,height,width".into()));
        };
        d = Dataset::new(d.vectors, d.source, Some((c, h, w)))?;
    }
    if let Some(n) = args.count {
        if n == 0 || n > d.len() {
            return Err(MemoryError::InvalidArgument(format!(
                "--count {n} outside 1..={}",
                d.len()
            )));
        }
        d.vectors.truncate(n);
    }
    Ok(d)
}

fn check_dim(m: &MemoryState, d: &Dataset) -> Result<()> {
    if d.dim() != m.shape.sensory_dim() {
        return Err(MemoryError::Shape(format!(
            "data vectors have length {}, memory expects {}",
            d.dim(),
            m.shape.sensory_dim()
        )));
    }
    Ok(())
}

fn save(m: &MemoryState, path: &Path) -> Result<()> {
    persist::save_memory(m, path)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Init(a) => {
            let activation: Activation = a.activation.parse().map_err(MemoryError::InvalidArgument)?;
            let mut cfg = MemoryConfig::new(a.dims.clone(), activation)
                .map_err(|e| MemoryError::InvalidArgument(e.to_string()))?;
            cfg.particles = a.particles;
            cfg.sigma_x2 = a.sigma_x2;
            cfg.sigma_w2 = a.sigma_w2;
            cfg.seed = cli.seed;
            save(&MemoryState::new(&cfg)?, &a.out)
        }
        Command::Write(a) => {
            if a.forget_every == Some(0) {
                return Err(MemoryError::InvalidArgument("--forget-every must be positive".into()));
            }
            let mut m = persist::load_memory(&a.model)?;
            let d = load_data(&a.data)?;
            check_dim(&m, &d)?;
            let cfg = OptimizerConfig::default().with_steps(a.write_steps);
            for (i, x) in d.vectors.iter().enumerate() {
                let report = m.write(x, &cfg)?;
                if !report.degenerate.is_empty() {
                    writeln!(out, "item {i}: degenerate particles {:?}", report.degenerate)?;
                }
                if let Some(every) = a.forget_every {
                    if (i + 1) % every == 0 {
                        m.forget(a.forget_beta)?;
                    }
                }
            }
            writeln!(out, "wrote {} item(s); write_count {}", d.len(), m.write_count)?;
            save(&m, a.out.as_deref().unwrap_or(&a.model))
        }
        Command::Read(a) => {
            let m = persist::load_memory(&a.model)?;
            let d = load_data(&a.data)?;
            check_dim(&m, &d)?;
            let kind: CorruptionKind = a.corruption.parse()?;
            let rc = ReadConfig {
                icm_iterations: a.icm_iterations,
                steps_per_phase: a.steps_per_phase,
                ..Default::default()
            };
            let mut recalls: Vec<Array1<f64>> = Vec::with_capacity(d.len());
            let mut total = 0.0;
            for (i, x) in d.vectors.iter().enumerate() {
                let spec = CorruptionSpec::new(kind, a.param, cli.seed.wrapping_add(i as u64))?;
                let c = spec.apply(x, d.image_shape)?;
                let r = m.read(&Query { values: c.values, known_mask: c.known_mask }, &rc)?;
                let e = mse(x, &r)?;
                total += e;
                writeln!(out, "item {i} mse {e:.6e}")?;
                recalls.push(r);
            }
            writeln!(out, "mean mse {:.6e}", total / d.len() as f64)?;
            if let Some(path) = &a.out {
                data::save_raw_tensor(path, &recalls)?;
            }
            Ok(())
        }
        Command::Forget { model, beta } => {
            let mut m = persist::load_memory(model)?;
            m.forget(*beta)?;
            save(&m, model)
        }
        Command::Sample { model, count, out: path } => {
            if *count == 0 {
                return Err(MemoryError::InvalidArgument("--count must be positive".into()));
            }
            let m = persist::load_memory(model)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let mix = m.mixture();
            let samples: Vec<Array1<f64>> = (0..*count).map(|_| mix.ancestral_sample(&mut rng)).collect();
            data::save_raw_tensor(path, &samples)?;
            writeln!(out, "sampled {count} vector(s)")?;
            Ok(())
        }
        Command::Bench { config, out: path } => {
            let cfg = ExperimentConfig::from_file(config)?;
            let runs = experiment::run_experiment(&cfg)?;
            match path {
                Some(p) => experiment::write_csv(std::fs::File::create(p)?, &runs)?,
                None => experiment::write_csv(&mut *out, &runs)?,
            }
            Ok(())
        }
        Command::Inspect { model } => {
            let mut f = std::io::BufReader::new(std::fs::File::open(model)?);
            let h = persist::read_header(&mut f)?;
            writeln!(out, "format_version {}", h.version)?;
            writeln!(out, "activation {}", h.shape.activation.name())?;
            let dims: Vec<String> = h.shape.dims.iter().map(ToString::to_string).collect();
            writeln!(out, "dims {}", dims.join(","))?;
            writeln!(out, "particles {}", h.particles)?;
            writeln!(out, "write_count {}", h.write_count)?;
            writeln!(out, "seed {}", h.rng_seed)?;
            writeln!(out, "sigma_x2 {}", h.sigma_x2)?;
            writeln!(out, "sigma_w2 {}", h.sigma_w2)?;
            Ok(())
        }
    }
}
