//! Datasets: CIFAR-10 binary batches, a small raw float tensor format, and a
//! seeded synthetic generator. All vectors live in `[-1, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MemoryError, Result};

pub const CIFAR10_RECORD_BYTES: usize = 3073;
pub const CIFAR10_SHAPE: (usize, usize, usize) = (3, 32, 32);
pub const RAW_TENSOR_MAGIC: &[u8; 4] = b"BPTD";
pub const RAW_TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Cifar10Binary,
    RawTensor,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vectors: Vec<Array1<f64>>,
    pub source: DataSource,
    /// `(channels, height, width)`, channel-major layout, when the vectors are images.
    pub image_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn new(
        vectors: Vec<Array1<f64>>,
        source: DataSource,
        image_shape: Option<(usize, usize, usize)>,
    ) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(MemoryError::Format("dataset is empty".into()));
        };
        let dim = first.len();
        if let Some((c, h, w)) = image_shape {
            if c * h * w != dim {
                return Err(MemoryError::Shape(format!(
                    "image shape {c}x{h}x{w} does not match vector length {dim}"
                )));
            }
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(MemoryError::Shape(format!("vector {i} has length {}, expected {dim}", v.len())));
            }
            if let Some(bad) = v.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                return Err(MemoryError::Format(format!("vector {i} has value {bad} outside [-1, 1]")));
            }
        }
        Ok(Self { vectors, source, image_shape })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }
}

/// Reads a CIFAR-10 binary batch: 1 label byte then 3072 channel-major pixel
/// bytes per record. Pixels map `u -> 2u/255 - 1`; labels are dropped.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_cifar10(&bytes)
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(MemoryError::Format("CIFAR-10 file holds no records".into()));
    }
    if bytes.len() % CIFAR10_RECORD_BYTES != 0 {
        return Err(MemoryError::Format(format!(
            "CIFAR-10 file length {} is not a multiple of {CIFAR10_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let vectors = bytes
        .chunks_exact(CIFAR10_RECORD_BYTES)
        .map(|rec| rec[1..].iter().map(|&u| 2.0 * f64::from(u) / 255.0 - 1.0).collect())
        .collect();
    Dataset::new(vectors, DataSource::Cifar10Binary, Some(CIFAR10_SHAPE))
}

/// Reads the raw tensor format: `"BPTD"`, u32 version, u32 count, u32 dim,
/// then `count * dim` little-endian f32 values, row-major.
pub fn load_raw_tensor(path: impl AsRef<Path>) -> Result<Dataset> {
    read_raw_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn read_raw_tensor<R: Read>(r: &mut R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RAW_TENSOR_MAGIC {
        return Err(MemoryError::Format("raw tensor file has wrong magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != RAW_TENSOR_VERSION {
        return Err(MemoryError::Format(format!("unsupported raw tensor version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if count == 0 || dim == 0 {
        return Err(MemoryError::Format("raw tensor file is empty".into()));
    }
    let mut row = vec![0f32; dim];
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_f32_into::<LittleEndian>(&mut row).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => MemoryError::Format("raw tensor file is truncated".into()),
            _ => MemoryError::Io(e),
        })?;
        vectors.push(row.iter().map(|&v| f64::from(v)).collect());
    }
    Dataset::new(vectors, DataSource::RawTensor, None)
}

pub fn save_raw_tensor(path: impl AsRef<Path>, vectors: &[Array1<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw_tensor(&mut w, vectors)?;
    w.flush()?;
    Ok(())
}

/// Values are narrowed to f32.
pub fn write_raw_tensor<W: Write>(w: &mut W, vectors: &[Array1<f64>]) -> Result<()> {
    let dim = vectors.first().map_or(0, |v| v.len());
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(MemoryError::Shape("raw tensor rows differ in length".into()));
    }
    w.write_all(RAW_TENSOR_MAGIC)?;
    w.write_u32::<LittleEndian>(RAW_TENSOR_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(vectors.len())?)?;
    w.write_u32::<LittleEndian>(to_u32(dim)?)?;
    for v in vectors {
        for &x in v {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
    }
    Ok(())
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| MemoryError::Format(format!("{n} does not fit the u32 header field")))
}

/// Seeded synthetic images.
///
/// With `rank > 0` each vector is `tanh(c B)` for a shared random basis
/// `B` (`rank x dim`, entries `U(-1, 1)`) and per-item coefficients
/// `c ~ U(-1, 1) / sqrt(rank)`, giving correlated, image-like data. With
/// `rank == 0` entries are i.i.d. `U(-1, 1)`.
pub fn synthetic(
    count: usize,
    image_shape: (usize, usize, usize),
    rank: usize,
    seed: u64,
) -> Result<Dataset> {
    let (c, h, w) = image_shape;
    let dim = c * h * w;
    if count == 0 || dim == 0 {
        return Err(MemoryError::InvalidArgument("synthetic dataset needs count > 0 and dim > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = if rank == 0 {
        (0..count)
            .map(|_| Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)))
            .collect()
    } else {
        let basis = Array2::from_shape_fn((rank, dim), |_| rng.random_range(-1.0..1.0));
        let scale = (rank as f64).sqrt();
        (0..count)
            .map(|_| {
                let coef = Array1::from_shape_fn(rank, |_| rng.random_range(-1.0..1.0) / scale);
                coef.dot(&basis).mapv(f64::tanh)
            })
            .collect()
    };
    Dataset::new(vectors, DataSource::Synthetic, Some(image_shape))
}
