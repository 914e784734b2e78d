//! Binary model files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "BPCN"  u32 version  u32 activation (0 = relu, 1 = gelu)
//! u32 n_dims  u32 dims[n_dims]  u32 particles
//! u64 write_count  u64 rng_seed  f64 sigma_x2  f64 sigma_w2
//! per particle: per hidden layer: f64 R[d_out*d_in] row-major, f64 U[d_out*d_out] row-major
//!               f64 mu[d_top]  f64 s  f64 log_weight
//! ```
//!
//! Priors are not stored: they are regenerated from the seed on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::activation::Activation;
use crate::error::{MemoryError, Result};
use crate::gaussian::{HiddenLayerPosterior, TopLayerPosterior};
use crate::model::{init_priors, MemoryState, NetworkShape, Particle};

pub const MAGIC: &[u8; 4] = b"BPCN";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any single header count, to reject garbage before allocating.
const MAX_COUNT: u32 = 1 << 24;

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Gelu => 1,
    }
}

fn activation_from_code(code: u32) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Gelu),
        c => Err(MemoryError::Format(format!("unknown activation code {c}"))),
    }
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| MemoryError::Format(format!("{n} does not fit the u32 header field")))
}

/// Header fields of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub shape: NetworkShape,
    pub particles: usize,
    pub write_count: u64,
    pub rng_seed: u64,
    pub sigma_x2: f64,
    pub sigma_w2: f64,
}

pub fn save_memory(m: &MemoryState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_memory(m, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<MemoryState> {
    read_memory(&mut BufReader::new(File::open(path)?))
}

pub fn write_memory<W: Write>(m: &MemoryState, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(activation_code(m.shape.activation))?;
    w.write_u32::<LittleEndian>(to_u32(m.shape.dims.len())?)?;
    for &d in &m.shape.dims {
        w.write_u32::<LittleEndian>(to_u32(d)?)?;
    }
    w.write_u32::<LittleEndian>(to_u32(m.particles.len())?)?;
    w.write_u64::<LittleEndian>(m.write_count)?;
    w.write_u64::<LittleEndian>(m.rng_seed)?;
    w.write_f64::<LittleEndian>(m.sigma_x2)?;
    w.write_f64::<LittleEndian>(m.sigma_w2)?;
    for p in &m.particles {
        for layer in &p.layers {
            for &v in layer.mean.iter().chain(layer.row_cov.iter()) {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        for &v in &p.top.mean {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_f64::<LittleEndian>(p.top.var)?;
        w.write_f64::<LittleEndian>(p.log_weight)?;
    }
    Ok(())
}

fn eof_as_format(e: std::io::Error) -> MemoryError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        MemoryError::Format("model file is truncated".into())
    } else {
        MemoryError::Io(e)
    }
}

fn read_count<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    if v > MAX_COUNT {
        return Err(MemoryError::Format(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<ModelHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != MAGIC {
        return Err(MemoryError::Format("not a model file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof_as_format)?;
    if version != FORMAT_VERSION {
        return Err(MemoryError::Format(format!(
            "unsupported model format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let activation = activation_from_code(r.read_u32::<LittleEndian>().map_err(eof_as_format)?)?;
    let n_dims = read_count(r, "layer count")?;
    let dims = (0..n_dims)
        .map(|_| read_count(r, "layer width"))
        .collect::<Result<Vec<_>>>()?;
    let shape = NetworkShape::new(dims, activation).map_err(|e| MemoryError::Format(e.to_string()))?;
    let particles = read_count(r, "particle count")?;
    if particles == 0 {
        return Err(MemoryError::Format("model file has no particles".into()));
    }
    Ok(ModelHeader {
        version,
        shape,
        particles,
        write_count: r.read_u64::<LittleEndian>().map_err(eof_as_format)?,
        rng_seed: r.read_u64::<LittleEndian>().map_err(eof_as_format)?,
        sigma_x2: r.read_f64::<LittleEndian>().map_err(eof_as_format)?,
        sigma_w2: r.read_f64::<LittleEndian>().map_err(eof_as_format)?,
    })
}

fn read_values<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v).map_err(eof_as_format)?;
    Ok(v)
}

pub fn read_memory<R: Read>(r: &mut R) -> Result<MemoryState> {
    let h = read_header(r)?;
    let dims = &h.shape.dims;
    let mut particles = Vec::with_capacity(h.particles);
    for _ in 0..h.particles {
        let mut layers = Vec::with_capacity(h.shape.depth());
        for l in 0..h.shape.depth() {
            let (d_out, d_in) = (dims[l + 1], dims[l]);
            let mean = Array2::from_shape_vec((d_out, d_in), read_values(r, d_out * d_in)?)
                .expect("length matches shape");
            let row_cov = Array2::from_shape_vec((d_out, d_out), read_values(r, d_out * d_out)?)
                .expect("length matches shape");
            layers.push(HiddenLayerPosterior { mean, row_cov });
        }
        let mean = Array1::from(read_values(r, h.shape.top_dim())?);
        let var = r.read_f64::<LittleEndian>().map_err(eof_as_format)?;
        let log_weight = r.read_f64::<LittleEndian>().map_err(eof_as_format)?;
        particles.push(Particle { layers, top: TopLayerPosterior { mean, var }, log_weight });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(MemoryError::Format("trailing bytes after model payload".into()));
    }
    Ok(MemoryState {
        priors: init_priors(&h.shape, h.particles, h.sigma_w2, h.rng_seed),
        shape: h.shape,
        particles,
        sigma_x2: h.sigma_x2,
        sigma_w2: h.sigma_w2,
        rng_seed: h.rng_seed,
        write_count: h.write_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MemoryConfig;
    use crate::optim::OptimizerConfig;
    use ndarray::array;

    fn memory() -> MemoryState {
        let mut cfg = MemoryConfig::new(vec![4, 3, 2], Activation::Gelu).unwrap();
        cfg.particles = 2;
        cfg.seed = 11;
        MemoryState::new(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = memory();
        m.write(&array![0.1, -0.4, 0.7, 0.2], &OptimizerConfig::default().with_steps(20)).unwrap();
        let mut buf = Vec::new();
        write_memory(&m, &mut buf).unwrap();
        let back = read_memory(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_memory(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut buf = Vec::new();
        write_memory(&memory(), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_memory(&mut bad.as_slice()), Err(MemoryError::Format(_))));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_memory(&mut bad.as_slice()), Err(MemoryError::Format(_))));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_memory(&mut &short[..]), Err(MemoryError::Format(_))));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_memory(&mut long.as_slice()), Err(MemoryError::Format(_))));
    }
}
