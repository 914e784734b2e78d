//! Hierarchical generative network over activations.
//!
//! Layer `l < L` predicts `x^l` from `z = f(x^{l+1})` through a weight matrix
//! with a matrix-normal belief; the top layer `x^L` is predicted by a bias
//! vector. With the weights marginalized out, each particle gives a closed-form
//! log density over the full activation stack, and the memory is a weighted
//! mixture of those densities.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{MemoryError, Result};
use crate::gaussian::{isotropic_log_density, log_sum_exp, HiddenLayerPosterior, TopLayerPosterior};

/// Layer widths `[d_0, ..., d_L]` bottom-up plus the shared activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkShape {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl NetworkShape {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(MemoryError::InvalidArgument(format!(
                "layer widths must be non-empty and positive, got {dims:?}"
            )));
        }
        Ok(Self { dims, activation })
    }

    /// Index of the top layer (`L`). Zero for a top-layer-only model.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn sensory_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn top_dim(&self) -> usize {
        self.dims[self.depth()]
    }
}

/// Full-network weight belief: hidden layers bottom-up plus the top bias.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBelief {
    pub layers: Vec<HiddenLayerPosterior>,
    pub top: TopLayerPosterior,
}

/// One mixture component with its log importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub layers: Vec<HiddenLayerPosterior>,
    pub top: TopLayerPosterior,
    pub log_weight: f64,
}

impl Particle {
    pub fn from_belief(belief: WeightBelief, log_weight: f64) -> Self {
        Self {
            layers: belief.layers,
            top: belief.top,
            log_weight,
        }
    }

    pub fn belief(&self) -> WeightBelief {
        WeightBelief {
            layers: self.layers.clone(),
            top: self.top.clone(),
        }
    }
}

/// Neuron values `[x^0, ..., x^L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    pub x: Vec<Array1<f64>>,
}

impl ActivationStack {
    pub fn zeros(shape: &NetworkShape) -> Self {
        Self {
            x: shape.dims.iter().map(|&d| Array1::zeros(d)).collect(),
        }
    }

    /// Sensory layer set to `x0`, hidden layers zero.
    pub fn with_sensory(shape: &NetworkShape, x0: &Array1<f64>) -> Self {
        let mut s = Self::zeros(shape);
        s.x[0] = x0.clone();
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.x.iter().map(|v| v.dot(v)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.iter().all(|e| e.is_finite()))
    }
}

/// Which activation entries are free to move. Clamped entries receive zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMask {
    pub free: Vec<Vec<bool>>,
}

impl ActivationMask {
    /// Sensory entries set by `x0_free`, hidden layers all free or all clamped.
    pub fn new(shape: &NetworkShape, x0_free: Vec<bool>, hidden_free: bool) -> Self {
        let mut free = Vec::with_capacity(shape.dims.len());
        free.push(x0_free);
        free.extend(shape.dims[1..].iter().map(|&d| vec![hidden_free; d]));
        Self { free }
    }

    pub fn all(shape: &NetworkShape, value: bool) -> Self {
        Self::new(shape, vec![value; shape.sensory_dim()], value)
    }

    pub fn apply(&self, g: &mut ActivationStack) {
        for (gl, ml) in g.x.iter_mut().zip(&self.free) {
            for (v, &f) in gl.iter_mut().zip(ml) {
                if !f {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn any_free(&self) -> bool {
        self.free.iter().flatten().any(|&f| f)
    }
}

fn check_stack(shape: &NetworkShape, a: &ActivationStack) -> Result<()> {
    if a.x.len() != shape.dims.len() || a.x.iter().zip(&shape.dims).any(|(v, &d)| v.len() != d) {
        return Err(MemoryError::Shape(format!(
            "activation stack does not match widths {:?}",
            shape.dims
        )));
    }
    Ok(())
}

/// Log density of the activations under one particle with weights marginalized.
pub fn particle_log_joint(
    shape: &NetworkShape,
    p: &Particle,
    a: &ActivationStack,
    sigma_x2: f64,
) -> Result<f64> {
    evaluate_particle(shape, p, a, sigma_x2, false).map(|(lp, _)| lp)
}

/// Log density and its gradient w.r.t. every activation entry for one particle.
pub fn particle_log_joint_and_grad(
    shape: &NetworkShape,
    p: &Particle,
    a: &ActivationStack,
    sigma_x2: f64,
) -> Result<(f64, ActivationStack)> {
    let (lp, g) = evaluate_particle(shape, p, a, sigma_x2, true)?;
    Ok((lp, g.expect("gradient requested")))
}

fn evaluate_particle(
    shape: &NetworkShape,
    p: &Particle,
    a: &ActivationStack,
    sigma_x2: f64,
    with_grad: bool,
) -> Result<(f64, Option<ActivationStack>)> {
    check_stack(shape, a)?;
    let depth = shape.depth();
    if p.layers.len() != depth {
        return Err(MemoryError::Shape(format!(
            "particle has {} hidden layers, network expects {}",
            p.layers.len(),
            depth
        )));
    }
    let act = shape.activation;
    let mut grad = with_grad.then(|| ActivationStack::zeros(shape));

    // Top layer: N(x^L; mu, (sigma_x2 + s) I).
    let x_top = &a.x[depth];
    let v_top = sigma_x2 + p.top.var;
    if !(v_top > 0.0) {
        return Err(MemoryError::NonFinite(format!("top predictive variance {v_top}")));
    }
    let e_top = x_top - &p.top.mean;
    let mut lp = isotropic_log_density(e_top.dot(&e_top), x_top.len(), v_top);
    if let Some(g) = grad.as_mut() {
        g.x[depth].scaled_add(-1.0 / v_top, &e_top);
    }

    for (l, layer) in p.layers.iter().enumerate() {
        let above = &a.x[l + 1];
        let z = act.apply(above.view());
        let k = layer.row_cov.dot(&z);
        let v = sigma_x2 + z.dot(&k);
        if !(v > 0.0) {
            return Err(MemoryError::NonFinite(format!("layer {l} predictive variance {v}")));
        }
        let e = &a.x[l] - &z.dot(&layer.mean);
        let sq = e.dot(&e);
        let d_in = e.len() as f64;
        lp += isotropic_log_density(sq, e.len(), v);

        if let Some(g) = grad.as_mut() {
            // Predicted layer: residual channel.
            g.x[l].scaled_add(-1.0 / v, &e);
            // Predicting layer: residual through zR plus the variance channel through zUz^T.
            let dlp_dv = -0.5 * d_in / v + 0.5 * sq / (v * v);
            let mut gz = layer.mean.dot(&e) / v;
            gz.scaled_add(2.0 * dlp_dv, &k);
            let fprime = act.grad(above.view());
            g.x[l + 1].zip_mut_with(&(gz * fprime), |acc, &d| *acc += d);
        }
    }

    if !lp.is_finite() {
        return Err(MemoryError::NonFinite("particle log joint".into()));
    }
    Ok((lp, grad))
}

/// Borrowed view of a weighted particle mixture and its observation noise.
#[derive(Debug, Clone, Copy)]
pub struct Mixture<'a> {
    pub shape: &'a NetworkShape,
    pub particles: &'a [Particle],
    pub sigma_x2: f64,
}

impl<'a> Mixture<'a> {
    pub fn new(shape: &'a NetworkShape, particles: &'a [Particle], sigma_x2: f64) -> Self {
        Self { shape, particles, sigma_x2 }
    }

    /// `log sum_n w_n p_n(x^0, h)`.
    pub fn log_joint(&self, a: &ActivationStack) -> Result<f64> {
        let terms = self
            .particles
            .par_iter()
            .map(|p| Ok(p.log_weight + particle_log_joint(self.shape, p, a, self.sigma_x2)?))
            .collect::<Result<Vec<f64>>>()?;
        log_sum_exp(&terms)
    }

    /// Mixture log density and its gradient, with clamped entries zeroed.
    ///
    /// The gradient is the responsibility-weighted sum of per-particle
    /// gradients, responsibilities being `softmax_n(log w_n + log p_n)`.
    pub fn log_joint_and_grad(
        &self,
        a: &ActivationStack,
        mask: Option<&ActivationMask>,
    ) -> Result<(f64, ActivationStack)> {
        let per_particle = if self.particles.len() == 1 {
            let p = &self.particles[0];
            vec![particle_log_joint_and_grad(self.shape, p, a, self.sigma_x2)
                .map(|(lp, g)| (p.log_weight + lp, g))?]
        } else {
            self.particles
                .par_iter()
                .map(|p| {
                    particle_log_joint_and_grad(self.shape, p, a, self.sigma_x2)
                        .map(|(lp, g)| (p.log_weight + lp, g))
                })
                .collect::<Result<Vec<_>>>()?
        };

        let terms: Vec<f64> = per_particle.iter().map(|(t, _)| *t).collect();
        let total = log_sum_exp(&terms)?;
        if !total.is_finite() {
            return Err(MemoryError::NonFinite("mixture log joint".into()));
        }

        let mut grad = ActivationStack::zeros(self.shape);
        for (t, g) in &per_particle {
            let r = (t - total).exp();
            if r == 0.0 {
                continue;
            }
            for (acc, gl) in grad.x.iter_mut().zip(&g.x) {
                acc.scaled_add(r, gl);
            }
        }
        if let Some(m) = mask {
            m.apply(&mut grad);
        }
        Ok((total, grad))
    }

    pub fn grad(&self, a: &ActivationStack, mask: Option<&ActivationMask>) -> Result<ActivationStack> {
        self.log_joint_and_grad(a, mask).map(|(_, g)| g)
    }

    /// Index of the particle with the largest weight (first on ties).
    pub fn heaviest(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.log_weight > self.particles[best].log_weight {
                best = i;
            }
        }
        best
    }

    /// Ancestral sample of `x^0` with weights fixed at their posterior means.
    pub fn ancestral_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let n = pick_particle(self.particles, rng.random::<f64>());
        let p = &self.particles[n];
        let noise_sd = self.sigma_x2.sqrt();
        let mut x: Array1<f64> = p
            .top
            .mean
            .mapv(|m| m + noise_sd * gauss(rng));
        for layer in p.layers.iter().rev() {
            let z = self.shape.activation.apply(x.view());
            x = z.dot(&layer.mean);
            x.mapv_inplace(|m| m + noise_sd * gauss(rng));
        }
        x
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn pick_particle(particles: &[Particle], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in particles.iter().enumerate() {
        acc += p.log_weight.exp();
        if u < acc {
            return i;
        }
    }
    particles
        .iter()
        .rposition(|p| p.log_weight > f64::NEG_INFINITY)
        .unwrap_or(0)
}

/// Kaiming-initialized weight belief: every mean entry of the layer fed by
/// `z^{l+1}` is drawn from `N(0, 2 / d_{l+1})`, the top bias from
/// `N(0, 2 / d_L)`, and all covariances set to `sigma_w2 I`.
pub fn init_belief<R: Rng + ?Sized>(shape: &NetworkShape, sigma_w2: f64, rng: &mut R) -> WeightBelief {
    let layers = (0..shape.depth())
        .map(|l| {
            let d_out = shape.dims[l + 1];
            let d_in = shape.dims[l];
            let sd = (2.0 / d_out as f64).sqrt();
            let mean = Array2::from_shape_simple_fn((d_out, d_in), || {
                sd * gauss(rng)
            });
            HiddenLayerPosterior::with_isotropic_cov(mean, sigma_w2)
        })
        .collect();
    let d_top = shape.top_dim();
    let sd = (2.0 / d_top as f64).sqrt();
    let top = TopLayerPosterior {
        mean: Array1::from_shape_simple_fn(d_top, || sd * gauss(rng)),
        var: sigma_w2,
    };
    WeightBelief { layers, top }
}

/// Hyperparameters that define an empty memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    pub shape: NetworkShape,
    pub particles: usize,
    pub sigma_x2: f64,
    pub sigma_w2: f64,
    pub seed: u64,
}

impl MemoryConfig {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Result<Self> {
        Ok(Self {
            shape: NetworkShape::new(dims, activation)?,
            particles: 1,
            sigma_x2: 1e-4,
            sigma_w2: 1.0,
            seed: 0,
        })
    }
}

/// A weighted mixture of particles plus the priors they diffuse toward.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub shape: NetworkShape,
    pub particles: Vec<Particle>,
    /// One prior per particle: its own Kaiming draw with `sigma_w2` covariances.
    pub priors: Vec<WeightBelief>,
    pub sigma_x2: f64,
    pub sigma_w2: f64,
    pub rng_seed: u64,
    pub write_count: u64,
}

impl MemoryState {
    /// Empty memory with `N` uniformly weighted Kaiming-initialized particles.
    pub fn new(cfg: &MemoryConfig) -> Result<Self> {
        if cfg.particles == 0 {
            return Err(MemoryError::InvalidArgument("at least one particle required".into()));
        }
        for (name, v) in [("sigma_x2", cfg.sigma_x2), ("sigma_w2", cfg.sigma_w2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MemoryError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let priors = init_priors(&cfg.shape, cfg.particles, cfg.sigma_w2, cfg.seed);
        let log_w = -(cfg.particles as f64).ln();
        let particles = priors
            .iter()
            .map(|b| Particle::from_belief(b.clone(), log_w))
            .collect();
        Ok(Self {
            shape: cfg.shape.clone(),
            particles,
            priors,
            sigma_x2: cfg.sigma_x2,
            sigma_w2: cfg.sigma_w2,
            rng_seed: cfg.seed,
            write_count: 0,
        })
    }

    pub fn config(&self) -> MemoryConfig {
        MemoryConfig {
            shape: self.shape.clone(),
            particles: self.particles.len(),
            sigma_x2: self.sigma_x2,
            sigma_w2: self.sigma_w2,
            seed: self.rng_seed,
        }
    }

    pub fn mixture(&self) -> Mixture<'_> {
        Mixture::new(&self.shape, &self.particles, self.sigma_x2)
    }

    pub fn log_joint(&self, a: &ActivationStack) -> Result<f64> {
        self.mixture().log_joint(a)
    }
}

/// Deterministic per-particle priors for a seed; particles are drawn in index order.
pub fn init_priors(shape: &NetworkShape, n: usize, sigma_w2: f64, seed: u64) -> Vec<WeightBelief> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| init_belief(shape, sigma_w2, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_memory(dims: Vec<usize>, n: usize, seed: u64) -> MemoryState {
        let mut cfg = MemoryConfig::new(dims, Activation::Gelu).unwrap();
        cfg.particles = n;
        cfg.sigma_x2 = 0.3;
        cfg.seed = seed;
        MemoryState::new(&cfg).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = toy_memory(vec![5, 4, 3], 3, 11);
        let b = toy_memory(vec![5, 4, 3], 3, 11);
        assert_eq!(a, b);
        let c = toy_memory(vec![5, 4, 3], 3, 12);
        assert_ne!(a.particles, c.particles);
        for p in &a.particles {
            assert!((p.log_weight + 3f64.ln()).abs() < 1e-15);
            for l in &p.layers {
                for i in 0..l.d_out() {
                    assert_eq!(l.row_cov[[i, i]], 1.0);
                }
            }
        }
    }

    #[test]
    fn kaiming_variance() {
        let m = toy_memory(vec![256, 256], 1, 3);
        let r = &m.particles[0].layers[0].mean;
        let n = r.len() as f64;
        let mean = r.sum() / n;
        let var = r.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0);
        let target = 2.0 / 256.0;
        assert!((var - target).abs() < 0.1 * target, "var {var}");
    }

    #[test]
    fn depth_zero_log_joint_is_top_density() {
        let m = toy_memory(vec![4], 1, 1);
        let a = ActivationStack { x: vec![array![0.1, 0.2, -0.3, 0.4]] };
        let p = &m.particles[0];
        let lp = particle_log_joint(&m.shape, p, &a, m.sigma_x2).unwrap();
        let direct =
            crate::gaussian::top_predictive_log_density(&p.top, a.x[0].view(), m.sigma_x2).unwrap();
        assert_eq!(lp, direct);
    }

    #[test]
    fn singleton_mixture_equals_particle() {
        let m = toy_memory(vec![4, 3, 2], 1, 5);
        let a = ActivationStack { x: vec![array![0.1, 0.2, -0.3, 0.4], array![1.0, -1.0, 0.5], array![0.3, 0.3]] };
        let lp = particle_log_joint(&m.shape, &m.particles[0], &a, m.sigma_x2).unwrap();
        assert!((m.log_joint(&a).unwrap() - lp).abs() < 1e-12);
    }

    #[test]
    fn identical_particles_collapse() {
        let mut m = toy_memory(vec![4, 3, 2], 1, 5);
        let mut p = m.particles[0].clone();
        p.log_weight = 0.5f64.ln();
        m.particles = vec![p.clone(), p];
        let a = ActivationStack { x: vec![array![0.1, 0.2, -0.3, 0.4], array![1.0, -1.0, 0.5], array![0.3, 0.3]] };
        let lp = particle_log_joint(&m.shape, &m.particles[0], &a, m.sigma_x2).unwrap();
        assert!((m.log_joint(&a).unwrap() - lp).abs() < 1e-12);
    }

    #[test]
    fn mask_zeroes_clamped_entries() {
        let m = toy_memory(vec![4, 3], 2, 8);
        let a = ActivationStack { x: vec![array![0.1, 0.2, -0.3, 0.4], array![1.0, -1.0, 0.5]] };
        let mask = ActivationMask::new(&m.shape, vec![true, false, true, false], false);
        let g = m.mixture().grad(&a, Some(&mask)).unwrap();
        assert_eq!(g.x[0][1], 0.0);
        assert_eq!(g.x[0][3], 0.0);
        assert!(g.x[1].iter().all(|&v| v == 0.0));
        assert!(g.x[0][0] != 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = toy_memory(vec![4, 3], 1, 8);
        let a = ActivationStack { x: vec![array![0.1, 0.2], array![1.0, -1.0, 0.5]] };
        assert!(m.log_joint(&a).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = toy_memory(vec![4, 3, 2], 3, 2);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(m.mixture().ancestral_sample(&mut r1), m.mixture().ancestral_sample(&mut r2));
    }

    #[test]
    fn noiseless_sample_is_mean_rollout() {
        let mut m = toy_memory(vec![4, 3, 2], 1, 2);
        m.sigma_x2 = 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = m.mixture().ancestral_sample(&mut rng);
        let p = &m.particles[0];
        let act = m.shape.activation;
        let x1 = act.apply(p.top.mean.view()).dot(&p.layers[1].mean);
        let x0 = act.apply(x1.view()).dot(&p.layers[0].mean);
        for (a, b) in s.iter().zip(x0.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
