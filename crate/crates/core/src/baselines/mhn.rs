//! Modern Hopfield network recall by gradient ascent on the softmax-mixture
//! log density `log p(q) = logsumexp_j(beta q.K_j) - beta/2 |q|^2 + const`.

use ndarray::{Array1, Array2};

use crate::error::{ensure_finite, MemoryError, Result};
use crate::gaussian::{log_sum_exp, TopLayerPosterior};
use crate::memory::Query;
use crate::model::{MemoryState, NetworkShape, Particle};
use crate::optim::{Adam, OptimizerConfig};
use crate::Activation;

pub const DEFAULT_BETA: f64 = 10_000.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;
pub const DEFAULT_AUTO_STEPS: usize = 500;
pub const DEFAULT_HETERO_STEPS: usize = 30 * 500;

#[derive(Debug, Clone, PartialEq)]
pub struct MhnMemory {
    dim: usize,
    keys: Vec<Array1<f64>>,
    pub beta: f64,
}

impl MhnMemory {
    pub fn new(dim: usize, beta: f64) -> Self {
        Self { dim, keys: Vec::new(), beta }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[Array1<f64>] {
        &self.keys
    }

    /// Stored rows as an `N x d` matrix.
    pub fn key_matrix(&self) -> Array2<f64> {
        let mut k = Array2::zeros((self.keys.len(), self.dim));
        for (mut row, key) in k.rows_mut().into_iter().zip(&self.keys) {
            row.assign(key);
        }
        k
    }

    pub fn store(&mut self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(MemoryError::Shape(format!(
                "MHN stores vectors of length {}, got {}",
                self.dim,
                x.len()
            )));
        }
        ensure_finite(x.iter(), "mhn_store")?;
        self.keys.push(x.clone());
        Ok(())
    }

    /// Softmax responsibilities `softmax_j(beta q.K_j)`, computed in log space.
    pub fn responsibilities(&self, q: &Array1<f64>) -> Result<Vec<f64>> {
        let logits: Vec<f64> = self.keys.iter().map(|k| self.beta * q.dot(k)).collect();
        let lse = log_sum_exp(&logits)?;
        Ok(logits.into_iter().map(|l| (l - lse).exp()).collect())
    }

    /// `sum_j softmax(beta q K^T)_j beta (K_j - q)`.
    pub fn grad_log_density(&self, q: &Array1<f64>) -> Result<Array1<f64>> {
        if self.keys.is_empty() {
            return Err(MemoryError::InvalidArgument("MHN recall on empty memory".into()));
        }
        let resp = self.responsibilities(q)?;
        let mut g = Array1::zeros(self.dim);
        for (r, k) in resp.iter().zip(&self.keys) {
            if *r > 0.0 {
                g.scaled_add(r * self.beta, &(k - q));
            }
        }
        Ok(g)
    }

    /// Adam ascent on `log p(q)` from the query; key entries stay clamped.
    pub fn recall(&self, query: &Query, steps: usize, lr: f64) -> Result<Array1<f64>> {
        if query.values.len() != self.dim {
            return Err(MemoryError::Shape(format!(
                "query has length {}, MHN expects {}",
                query.values.len(),
                self.dim
            )));
        }
        let cfg = OptimizerConfig::default().with_learning_rate(lr).with_steps(steps);
        let mut adam = Adam::new(cfg, [self.dim]);
        let mut q = vec![query.values.clone()];
        for _ in 0..steps {
            let mut g = self.grad_log_density(&q[0])?;
            if let Some(known) = &query.known_mask {
                for (gi, &k) in g.iter_mut().zip(known) {
                    if k {
                        *gi = 0.0;
                    }
                }
            }
            adam.ascend_step(&mut q, std::slice::from_ref(&g));
        }
        Ok(q.swap_remove(0))
    }

    /// Default step budget for the query kind.
    pub fn default_steps(query: &Query) -> usize {
        if query.known_mask.is_some() {
            DEFAULT_HETERO_STEPS
        } else {
            DEFAULT_AUTO_STEPS
        }
    }

    /// Equivalent top-layer-only particle mixture: particle `j` has mean `K_j`,
    /// zero weight variance, observation variance `1 / beta`, and log weight
    /// `beta/2 |K_j|^2` normalized over the stored rows.
    pub fn to_mixture_memory(&self) -> Result<MemoryState> {
        if self.keys.is_empty() {
            return Err(MemoryError::InvalidArgument("empty MHN has no mixture form".into()));
        }
        let raw: Vec<f64> = self.keys.iter().map(|k| 0.5 * self.beta * k.dot(k)).collect();
        let norm = log_sum_exp(&raw)?;
        let particles: Vec<Particle> = self
            .keys
            .iter()
            .zip(&raw)
            .map(|(k, w)| Particle {
                layers: Vec::new(),
                top: TopLayerPosterior { mean: k.clone(), var: 0.0 },
                log_weight: w - norm,
            })
            .collect();
        let priors = particles.iter().map(Particle::belief).collect();
        Ok(MemoryState {
            shape: NetworkShape::new(vec![self.dim], Activation::Relu)?,
            particles,
            priors,
            sigma_x2: 1.0 / self.beta,
            sigma_w2: 1.0,
            rng_seed: 0,
            write_count: self.keys.len() as u64,
        })
    }
}

/// Index of the stored row with the largest dot product with `q` (first on ties).
pub fn argmax_dot(keys: &[Array1<f64>], q: &Array1<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, k) in keys.iter().enumerate() {
        let d = q.dot(k);
        if best.map_or(true, |(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}
